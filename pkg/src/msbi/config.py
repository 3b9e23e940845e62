"""Experiment configuration: strict JSON in, validated dataclasses out.

Unknown keys are rejected everywhere, inner configs validate on
construction, and cross-references (summary width vs flow conditioning,
model shapes vs network inputs) are checked before any work starts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .flow import CouplingFlowConfig
from .mmd import KernelSpec, default_scales
from .models import MODEL_FAMILIES, GenerativeModel, build_model
from .summary import DeepSetConfig, MlpConfig, summary_config_from_dict
from .train import TrainConfig

__all__ = ["ExperimentConfig", "load_config", "apply_overrides", "default_config_dict"]


@dataclass(frozen=True)
class ExperimentConfig:
    model: GenerativeModel
    summary: DeepSetConfig | MlpConfig
    flow: CouplingFlowConfig
    train: TrainConfig
    kernel: KernelSpec
    alpha: float = 0.05
    n_replicates: int = 300
    validation_size: int = 1000
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.n_replicates < 100:
            raise ValueError(f"n_replicates must be >= 100, got {self.n_replicates}")
        if self.validation_size < 2:
            raise ValueError(f"validation_size must be >= 2, got {self.validation_size}")
        if self.summary.input_dim != self.model.row_dim:
            raise ValueError(
                f"summary input_dim {self.summary.input_dim} does not match "
                f"model row dimension {self.model.row_dim}"
            )
        if self.flow.cond_dim != self.summary.output_dim:
            raise ValueError(
                f"flow cond_dim {self.flow.cond_dim} does not match summary "
                f"output_dim {self.summary.output_dim}"
            )
        if self.flow.theta_dim != self.model.theta_dim:
            raise ValueError(
                f"flow theta_dim {self.flow.theta_dim} does not match model "
                f"parameter dimension {self.model.theta_dim}"
            )
        kind_ok = (self.model.data_kind == "set") == isinstance(self.summary, DeepSetConfig)
        if not kind_ok:
            raise ValueError(
                f"model data kind {self.model.data_kind!r} needs a "
                f"{'deepset' if self.model.data_kind == 'set' else 'mlp'} summary network"
            )

    def to_dict(self) -> dict:
        model_dict = {"family": self.model.name}
        for f in dataclasses.fields(self.model):
            value = getattr(self.model, f.name)
            model_dict[f.name] = list(value) if isinstance(value, tuple) else value
        return {
            "model": model_dict,
            "summary": self.summary.to_dict(),
            "flow": self.flow.to_dict(),
            "train": self.train.to_dict(),
            "mmd": {
                "kernel": self.kernel.to_dict(),
                "alpha": self.alpha,
                "n_replicates": self.n_replicates,
                "validation_size": self.validation_size,
            },
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def _tupleize(value):
    if isinstance(value, list):
        return tuple(_tupleize(v) for v in value)
    return value


def _build_model(data: dict) -> GenerativeModel:
    data = dict(data)
    family = data.pop("family", None)
    if family not in MODEL_FAMILIES:
        raise ValueError(f"model.family must be one of {sorted(MODEL_FAMILIES)}, got {family!r}")
    fields = {k: _tupleize(v) for k, v in data.items()}
    try:
        return build_model(family, **fields)
    except TypeError as err:
        raise ValueError(f"invalid model config for {family!r}: {err}") from None


def config_from_dict(data: dict) -> ExperimentConfig:
    allowed = {"model", "summary", "flow", "train", "mmd", "seed", "out_dir"}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "model" not in data:
        raise ValueError("config requires a 'model' section")
    model = _build_model(data["model"])
    defaults = default_config_dict(model.name)
    summary = summary_config_from_dict(data.get("summary", defaults["summary"]))
    flow_dict = dict(defaults["flow"])
    flow_dict.update(data.get("flow", {}))
    flow = CouplingFlowConfig.from_dict(flow_dict)
    train = TrainConfig.from_dict(data.get("train", {}))
    mmd_section = dict(data.get("mmd", {}))
    mmd_allowed = {"kernel", "alpha", "n_replicates", "validation_size"}
    mmd_unknown = set(mmd_section) - mmd_allowed
    if mmd_unknown:
        raise ValueError(f"unknown mmd config keys: {sorted(mmd_unknown)}")
    if "kernel" in mmd_section:
        kernel = KernelSpec.from_dict(mmd_section["kernel"])
    else:
        kernel = KernelSpec(family="gaussian_sum", scales=default_scales(summary.output_dim))
    return ExperimentConfig(
        model=model,
        summary=summary,
        flow=flow,
        train=train,
        kernel=kernel,
        alpha=float(mmd_section.get("alpha", 0.05)),
        n_replicates=int(mmd_section.get("n_replicates", 300)),
        validation_size=int(mmd_section.get("validation_size", 1000)),
        seed=int(data.get("seed", 0)),
        out_dir=data.get("out_dir"),
    )


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"config root must be a JSON object, got {type(raw).__name__}")
    if overrides:
        raw = apply_overrides(raw, overrides)
    return config_from_dict(raw)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` assignments; values parse as JSON when possible."""
    out = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must look like path.key=value, got {item!r}")
        dotted, raw_value = item.split("=", 1)
        keys = dotted.split(".")
        if not all(keys):
            raise ValueError(f"bad override path {dotted!r}")
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        target = out
        for key in keys[:-1]:
            target = target.setdefault(key, {})
            if not isinstance(target, dict):
                raise ValueError(f"override path {dotted!r} crosses a non-object value")
        target[keys[-1]] = value
    return out


_SUMMARY_DEFAULTS = {
    "gaussian2d": {"arch": "deepset", "input_dim": 2, "output_dim": 2},
    "mvn_niw": {"arch": "deepset", "input_dim": 5, "output_dim": 40},
    "cancer_stromal": {"arch": "mlp", "input_dim": 5, "output_dim": 4, "hidden": [64, 64, 64]},
    "ddm": {"arch": "deepset", "input_dim": 4, "output_dim": 10},
}

_THETA_DIMS = {"gaussian2d": 2, "mvn_niw": 20, "cancer_stromal": 3, "ddm": 5}


def default_config_dict(family: str) -> dict:
    """A complete, runnable config skeleton for one model family."""
    if family not in _SUMMARY_DEFAULTS:
        raise ValueError(f"unknown model family {family!r}")
    summary = dict(_SUMMARY_DEFAULTS[family])
    return {
        "model": {"family": family},
        "summary": summary,
        "flow": {"theta_dim": _THETA_DIMS[family], "cond_dim": summary["output_dim"]},
        "train": {},
        "mmd": {},
        "seed": 0,
        "out_dir": None,
    }
