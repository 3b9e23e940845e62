"""Summary networks: permutation-invariant deep sets and plain MLPs.

Forward passes are written against the autodiff ops, so the same code path
serves training (parameters as tape nodes) and inference (plain arrays).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .rng import RngState
from .tensorio import read_tensor, write_tensor

__all__ = [
    "DeepSetConfig",
    "MlpConfig",
    "FeatureStandardizer",
    "glorot_uniform",
    "init_summary_params",
    "deepset_forward",
    "mlp_forward",
    "summarize",
    "summary_config_from_dict",
]

_ACTIVATIONS = {"tanh": ad.tanh, "softplus": ad.softplus}


@dataclass(frozen=True)
class DeepSetConfig:
    """Shared per-row MLP, order-canonical mean pooling, post-pool MLP, linear out."""

    input_dim: int
    output_dim: int
    equivariant_layers: tuple[int, ...] = (64, 64)
    post_pool_layers: tuple[int, ...] = (64,)
    activation: str = "tanh"

    def __post_init__(self):
        _validate_common(self)
        object.__setattr__(self, "equivariant_layers", tuple(int(w) for w in self.equivariant_layers))
        object.__setattr__(self, "post_pool_layers", tuple(int(w) for w in self.post_pool_layers))

    def to_dict(self) -> dict:
        return {
            "arch": "deepset",
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "equivariant_layers": list(self.equivariant_layers),
            "post_pool_layers": list(self.post_pool_layers),
            "activation": self.activation,
        }


@dataclass(frozen=True)
class MlpConfig:
    """Plain feed-forward map for fixed-length feature vectors."""

    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = (64, 64, 64)
    activation: str = "tanh"

    def __post_init__(self):
        _validate_common(self)
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))

    def to_dict(self) -> dict:
        return {
            "arch": "mlp",
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
        }


def _validate_common(cfg) -> None:
    if cfg.input_dim < 1:
        raise ValueError(f"input_dim must be >= 1, got {cfg.input_dim}")
    if cfg.output_dim < 1:
        raise ValueError(f"output_dim must be >= 1, got {cfg.output_dim}")
    if cfg.activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {cfg.activation!r}; expected {list(_ACTIVATIONS)}")


def summary_config_from_dict(data: dict) -> DeepSetConfig | MlpConfig:
    data = dict(data)
    arch = data.pop("arch", "deepset")
    if arch == "deepset":
        allowed = {"input_dim", "output_dim", "equivariant_layers", "post_pool_layers", "activation"}
        _reject_unknown(data, allowed, "summary")
        return DeepSetConfig(
            input_dim=data["input_dim"],
            output_dim=data["output_dim"],
            equivariant_layers=tuple(data.get("equivariant_layers", (64, 64))),
            post_pool_layers=tuple(data.get("post_pool_layers", (64,))),
            activation=data.get("activation", "tanh"),
        )
    if arch == "mlp":
        allowed = {"input_dim", "output_dim", "hidden", "activation"}
        _reject_unknown(data, allowed, "summary")
        return MlpConfig(
            input_dim=data["input_dim"],
            output_dim=data["output_dim"],
            hidden=tuple(data.get("hidden", (64, 64, 64))),
            activation=data.get("activation", "tanh"),
        )
    raise ValueError(f"unknown summary architecture {arch!r}")


def _reject_unknown(data: dict, allowed: set, where: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown {where} config keys: {sorted(unknown)}")


def glorot_uniform(rng: RngState, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return (2.0 * rng.random((fan_in, fan_out)) - 1.0) * limit


def _init_affine_chain(store, prefix: str, widths: list[int], rng: RngState) -> None:
    for i in range(len(widths) - 1):
        layer_rng = rng.substream("layer", i)
        store.add(f"{prefix}.w{i}", glorot_uniform(layer_rng, widths[i], widths[i + 1]))
        store.add(f"{prefix}.b{i}", np.zeros(widths[i + 1]))


def init_summary_params(store, cfg: DeepSetConfig | MlpConfig, rng: RngState, prefix: str = "summary") -> None:
    """Glorot-uniform weights, zero biases, registered under ``prefix``."""
    if isinstance(cfg, DeepSetConfig):
        eq_widths = [cfg.input_dim, *cfg.equivariant_layers]
        _init_affine_chain(store, f"{prefix}.eq", eq_widths, rng.substream("equivariant"))
        post_widths = [eq_widths[-1], *cfg.post_pool_layers, cfg.output_dim]
        _init_affine_chain(store, f"{prefix}.post", post_widths, rng.substream("post"))
    else:
        widths = [cfg.input_dim, *cfg.hidden, cfg.output_dim]
        _init_affine_chain(store, f"{prefix}.net", widths, rng.substream("net"))


def _affine_chain(params, prefix: str, x, n_layers: int, activation, activate_last: bool):
    h = x
    for i in range(n_layers):
        h = ad.matmul(h, params[f"{prefix}.w{i}"]) + params[f"{prefix}.b{i}"]
        if activate_last or i + 1 < n_layers:
            h = activation(h)
    return h


def deepset_forward(params, datasets, cfg: DeepSetConfig, prefix: str = "summary"):
    """Summaries for a batch of datasets, shape (B, K, d) -> (B, S).

    Exactly permutation invariant: the per-row map is shared and pooling
    sums the row features in sorted order, so any row permutation of a
    dataset produces a bitwise identical summary.
    """
    x = datasets if isinstance(datasets, ad.Node) else np.asarray(datasets, dtype=np.float64)
    shape = ad.value_of(x).shape
    if len(shape) != 3 or shape[2] != cfg.input_dim:
        raise ValueError(
            f"expected datasets of shape (B, K, {cfg.input_dim}), got {shape}"
        )
    b, k, d = shape
    if k < 1:
        raise ValueError("datasets must contain at least one row")
    activation = _ACTIVATIONS[cfg.activation]

    h = ad.reshape(x, (b * k, d))
    h = _affine_chain(params, f"{prefix}.eq", h, len(cfg.equivariant_layers), activation, True)
    width = cfg.equivariant_layers[-1] if cfg.equivariant_layers else d
    h = ad.reshape(h, (b, k, width))
    pooled = ad.sorted_mean(h, axis=1)
    n_post = len(cfg.post_pool_layers) + 1
    out = _affine_chain(params, f"{prefix}.post", pooled, n_post, activation, False)
    return out


def mlp_forward(params, features, cfg: MlpConfig, prefix: str = "summary"):
    """Summaries for a batch of feature vectors, shape (B, F) -> (B, S)."""
    shape = ad.value_of(features).shape
    if len(shape) != 2 or shape[1] != cfg.input_dim:
        raise ValueError(f"expected features of shape (B, {cfg.input_dim}), got {shape}")
    activation = _ACTIVATIONS[cfg.activation]
    return _affine_chain(params, f"{prefix}.net", features, len(cfg.hidden) + 1, activation, False)


@dataclass(frozen=True)
class FeatureStandardizer:
    """Per-feature z-scoring with statistics frozen at training time."""

    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray, sd_floor: float = 1e-8) -> "FeatureStandardizer":
        features = np.asarray(features, dtype=np.float64)
        return cls(
            mean=features.mean(axis=0),
            sd=np.maximum(features.std(axis=0), sd_floor),
        )

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.sd

    def save(self, path: str | Path) -> None:
        write_tensor(path, np.stack([self.mean, self.sd]))

    @classmethod
    def load(cls, path: str | Path) -> "FeatureStandardizer":
        stacked = read_tensor(path)
        return cls(mean=stacked[0], sd=stacked[1])


def summarize(params, cfg, data, standardizer: FeatureStandardizer | None = None, prefix: str = "summary"):
    """Dispatch to the architecture matching ``cfg``; standardize features first."""
    if isinstance(cfg, DeepSetConfig):
        return deepset_forward(params, data, cfg, prefix)
    if standardizer is not None:
        data = standardizer.apply(data)
    return mlp_forward(params, data, cfg, prefix)
