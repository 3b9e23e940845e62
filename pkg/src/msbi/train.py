"""Online training of the summary network and posterior flow.

Every step simulates a fresh batch from the prior predictive, so there is no
epoch bookkeeping: the objective is the amortized negative log posterior
density plus an optional kernel penalty that pulls the summary distribution
toward a unit Gaussian. The penalty's reference draws are resampled every
step and never enter the tape, so its gradient reaches the summary network
only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParamStore, Tape
from .flow import CouplingFlowConfig, FlowNumericsError, flow_forward, flow_inverse, init_flow_params, log_prob
from .mmd import KernelSpec, mmd
from .rng import RngState
from .summary import (
    DeepSetConfig,
    FeatureStandardizer,
    MlpConfig,
    init_summary_params,
    summarize,
)
from .tensorio import write_csv

__all__ = [
    "TrainConfig",
    "TrainResult",
    "AdamState",
    "NonFiniteLossError",
    "TrainingAbortError",
    "adam_step",
    "step_learning_rate",
    "pairwise_sq_dists",
    "kernel_mean",
    "gaussian_reference_penalty",
    "augmented_loss",
    "train_online",
    "validation_summaries",
]

TRAIN_LOG_HEADER = ["step", "loss", "nll", "mmd_term", "grad_norm"]
VAL_LOG_HEADER = ["step", "val_summary_mmd", "flow_round_trip"]


class NonFiniteLossError(ArithmeticError):
    """Loss evaluated to a non-finite value; carries the offending batch row."""

    def __init__(self, batch_index: int | None, detail: str):
        self.batch_index = batch_index
        where = f" (batch row {batch_index})" if batch_index is not None else ""
        super().__init__(f"non-finite loss{where}: {detail}")


class TrainingAbortError(RuntimeError):
    """Raised after the configured number of consecutive failed step attempts."""

    def __init__(self, step: int, attempts: int, last_error: Exception):
        self.step = step
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(
            f"aborting at step {step}: {attempts} consecutive failed attempts; last: {last_error}"
        )


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_schedule: str = "cosine"
    mmd_weight: float = 1.0
    kernel: KernelSpec | None = None
    checkpoint_every: int = 2000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_attempts: int = 3
    val_batch: int = 256
    standardizer_pilot: int = 512

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"lr_schedule must be 'cosine' or 'constant', got {self.lr_schedule!r}")
        if self.mmd_weight < 0:
            raise ValueError(f"mmd_weight must be >= 0, got {self.mmd_weight}")
        if self.checkpoint_every < 0:
            raise ValueError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        for name in ("adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if not self.adam_eps > 0:
            raise ValueError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be >= 1, got {self.max_attempts}")

    def to_dict(self) -> dict:
        out = {
            "steps": self.steps,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lr_schedule": self.lr_schedule,
            "mmd_weight": self.mmd_weight,
            "checkpoint_every": self.checkpoint_every,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "max_attempts": self.max_attempts,
            "val_batch": self.val_batch,
            "standardizer_pilot": self.standardizer_pilot,
        }
        if self.kernel is not None:
            out["kernel"] = self.kernel.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        allowed = {
            "steps", "batch_size", "learning_rate", "lr_schedule", "mmd_weight",
            "kernel", "checkpoint_every", "adam_beta1", "adam_beta2", "adam_eps",
            "max_attempts", "val_batch", "standardizer_pilot",
        }
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        data = dict(data)
        if data.get("kernel") is not None:
            data["kernel"] = KernelSpec.from_dict(data["kernel"])
        return cls(**data)


# -- optimizer ------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), t=0)


def adam_step(
    flat: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update on the flat parameter vector."""
    flat = np.asarray(flat, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if flat.shape != grads.shape:
        raise ValueError(f"parameter/gradient shapes differ: {flat.shape} vs {grads.shape}")
    if not np.all(np.isfinite(grads)):
        raise ArithmeticError("non-finite gradients passed to adam_step")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_flat = flat - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return new_flat, AdamState(m=m, v=v, t=t)


def step_learning_rate(cfg: TrainConfig, step: int) -> float:
    """Learning rate for one step under the configured schedule.

    Constant-rate Adam leaves the late iterates orbiting the optimum at a
    noise scale set by the rate itself, which shows up as posterior
    miscalibration; the cosine schedule anneals that noise away.
    """
    if cfg.lr_schedule == "constant" or cfg.steps <= 1:
        return cfg.learning_rate
    return 0.5 * cfg.learning_rate * (1.0 + math.cos(math.pi * step / (cfg.steps - 1)))


# -- tape-side kernel penalty ---------------------------------------------


def pairwise_sq_dists(x, y):
    """Squared Euclidean distances between row sets; works on nodes or arrays."""
    x_sq = ad.reduce_sum(x * x, axis=1, keepdims=True)
    y_sq = ad.reshape(ad.reduce_sum(y * y, axis=1), (1, ad.value_of(y).shape[0]))
    cross = ad.matmul(x, ad.transpose2d(y))
    d2 = x_sq + y_sq - 2.0 * cross
    # Rounding can push tiny true distances below zero; the kernels assume >= 0.
    if isinstance(d2, Node):
        return d2
    return np.maximum(d2, 0.0)


def kernel_mean(x, y, kernel: KernelSpec):
    """Mean kernel value over all row pairs, diagonals included."""
    d2 = pairwise_sq_dists(x, y)
    total = None
    for scale in kernel.scales:
        if kernel.family == "gaussian_sum":
            term = ad.exp(d2 * (-0.5 / (scale * scale)))
        else:
            term = (scale * scale) / (d2 + scale * scale)
        total = term if total is None else total + term
    return ad.reduce_mean(total)


def gaussian_reference_penalty(summaries, reference: np.ndarray, kernel: KernelSpec):
    """Biased squared-MMD between summaries and fixed unit-Gaussian draws.

    The reference draws stay plain arrays, so on a tape the gradient reaches
    the summary rows only.
    """
    reference = np.asarray(reference, dtype=np.float64)
    k_xx = kernel_mean(summaries, summaries, kernel)
    k_yy = float(ad.value_of(kernel_mean(reference, reference, kernel)))
    k_xy = kernel_mean(summaries, reference, kernel)
    return k_xx + k_yy - 2.0 * k_xy


# -- loss ------------------------------------------------------------------


def augmented_loss(
    params,
    summary_cfg,
    flow_cfg: CouplingFlowConfig,
    theta_raw: np.ndarray,
    x_batch: np.ndarray,
    transform,
    gamma: float,
    kernel: KernelSpec | None = None,
    reference: np.ndarray | None = None,
    standardizer: FeatureStandardizer | None = None,
):
    """Mean posterior NLL plus ``gamma`` times the summary-space penalty.

    Returns ``(loss, parts)`` where parts holds float diagnostics. ``params``
    may hold tape nodes (training) or plain arrays (evaluation).
    """
    theta_raw = np.asarray(theta_raw, dtype=np.float64)
    w = transform.to_unconstrained(theta_raw)
    jac = transform.log_det_jacobian(theta_raw)
    z = summarize(params, summary_cfg, x_batch, standardizer)
    flow_lp = log_prob(params, w, z, flow_cfg)
    log_q = flow_lp + jac
    log_q_values = ad.value_of(log_q)
    bad = np.nonzero(~np.isfinite(log_q_values))[0]
    if bad.size:
        raise NonFiniteLossError(int(bad[0]), "posterior log density is not finite")
    nll = -ad.reduce_mean(log_q)
    parts = {"nll": float(ad.value_of(nll)), "mmd2": 0.0}
    loss = nll
    if gamma != 0.0:
        if kernel is None or reference is None:
            raise ValueError("gamma != 0 requires a kernel and reference draws")
        penalty = gaussian_reference_penalty(z, reference, kernel)
        parts["mmd2"] = float(ad.value_of(penalty))
        loss = loss + gamma * penalty
    if not np.isfinite(float(ad.value_of(loss))):
        raise NonFiniteLossError(None, "total loss is not finite")
    return loss, parts


# -- training loop ---------------------------------------------------------


@dataclass
class TrainResult:
    params: ParamStore
    standardizer: FeatureStandardizer | None
    train_log: np.ndarray
    val_log: np.ndarray


def _default_kernel(output_dim: int) -> KernelSpec:
    from .mmd import default_scales

    return KernelSpec(family="gaussian_sum", scales=default_scales(output_dim))


def fit_standardizer(model, count: int, rng: RngState) -> FeatureStandardizer:
    thetas = model.sample_prior(rng.substream("prior"), count)
    xs = model.simulate_batch(rng.substream("data"), thetas)
    return FeatureStandardizer.fit(xs)


def init_params(summary_cfg, flow_cfg: CouplingFlowConfig, rng: RngState) -> ParamStore:
    store = ParamStore()
    init_summary_params(store, summary_cfg, rng.substream("init", "summary"))
    init_flow_params(store, flow_cfg, rng.substream("init", "flow"))
    return store


def train_online(
    model,
    summary_cfg,
    flow_cfg: CouplingFlowConfig,
    train_cfg: TrainConfig,
    rng: RngState,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Simulate, summarize, and fit online for ``train_cfg.steps`` steps.

    A step that produces a non-finite loss or gradient is retried with fresh
    simulations; ``max_attempts`` consecutive failures abort the run. With
    ``out_dir`` set, checkpoints and CSV logs are written there.
    """
    kernel = train_cfg.kernel or _default_kernel(summary_cfg.output_dim)
    store = init_params(summary_cfg, flow_cfg, rng)
    standardizer = None
    if isinstance(summary_cfg, MlpConfig):
        standardizer = fit_standardizer(model, train_cfg.standardizer_pilot, rng.substream("standardizer"))
    adam = AdamState.zeros(store.size)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    train_rows: list[tuple] = []
    val_rows: list[tuple] = []
    s_dim = summary_cfg.output_dim

    def record_validation(step: int) -> None:
        val_rng = rng.substream("val", step)
        thetas = model.sample_prior(val_rng.substream("prior"), train_cfg.val_batch)
        xs = model.simulate_batch(val_rng.substream("data"), thetas)
        z = ad.value_of(summarize(store, summary_cfg, xs, standardizer))
        ref = val_rng.substream("ref").standard_normal((train_cfg.val_batch, s_dim))
        val_mmd = mmd(z, ref, kernel)
        w = model.transform.to_unconstrained(thetas)
        u, _ = flow_forward(store, w, z, flow_cfg)
        w_back, _ = flow_inverse(store, ad.value_of(u), z, flow_cfg)
        round_trip = float(np.max(np.abs(ad.value_of(w_back) - w))) if w.size else 0.0
        val_rows.append((float(step), val_mmd, round_trip))

    def checkpoint(step: int, final: bool) -> None:
        if out_path is None:
            return
        name = "checkpoint" if final else f"checkpoint_step_{step:06d}"
        store.save(out_path / name)

    for step in range(train_cfg.steps):
        lr = step_learning_rate(train_cfg, step)
        last_error: Exception | None = None
        for attempt in range(train_cfg.max_attempts):
            batch_rng = rng.substream("batch", step, attempt)
            thetas = model.sample_prior(batch_rng.substream("prior"), train_cfg.batch_size)
            xs = model.simulate_batch(batch_rng.substream("data"), thetas)
            reference = None
            if train_cfg.mmd_weight != 0.0:
                reference = rng.substream("mmdref", step, attempt).standard_normal(
                    (train_cfg.batch_size, s_dim)
                )
            tape = Tape()
            nodes = store.as_nodes(tape)
            try:
                loss, parts = augmented_loss(
                    nodes, summary_cfg, flow_cfg, thetas, xs, model.transform,
                    train_cfg.mmd_weight, kernel, reference, standardizer,
                )
                ad.backward(loss)
                grads = store.grads_flat(nodes)
                if not np.all(np.isfinite(grads)):
                    raise NonFiniteLossError(None, "non-finite gradient")
            except (NonFiniteLossError, FlowNumericsError) as err:
                last_error = err
                continue
            flat, adam = adam_step(
                store.flat(), grads, adam, lr,
                train_cfg.adam_beta1, train_cfg.adam_beta2, train_cfg.adam_eps,
            )
            store.set_flat(flat)
            train_rows.append(
                (
                    float(step),
                    float(ad.value_of(loss)),
                    parts["nll"],
                    train_cfg.mmd_weight * parts["mmd2"],
                    float(np.linalg.norm(grads)),
                )
            )
            break
        else:
            raise TrainingAbortError(step, train_cfg.max_attempts, last_error)
        if train_cfg.checkpoint_every and (step + 1) % train_cfg.checkpoint_every == 0:
            record_validation(step + 1)
            checkpoint(step + 1, final=False)

    if train_cfg.steps > 0 and (
        not train_cfg.checkpoint_every or train_cfg.steps % train_cfg.checkpoint_every
    ):
        record_validation(train_cfg.steps)
    checkpoint(train_cfg.steps, final=True)

    train_log = np.asarray(train_rows, dtype=np.float64).reshape(-1, 5)
    val_log = np.asarray(val_rows, dtype=np.float64).reshape(-1, 3)
    if out_path is not None:
        write_csv(out_path / "train_log.csv", train_log, TRAIN_LOG_HEADER)
        write_csv(out_path / "val_log.csv", val_log, VAL_LOG_HEADER)
        if standardizer is not None:
            standardizer.save(out_path / "standardizer.msbi")
    return TrainResult(params=store, standardizer=standardizer, train_log=train_log, val_log=val_log)


def validation_summaries(
    store: ParamStore,
    summary_cfg,
    model,
    count: int,
    rng: RngState,
    standardizer: FeatureStandardizer | None = None,
    batch_size: int = 256,
) -> np.ndarray:
    """Summaries of ``count`` fresh prior-predictive datasets, shape (count, S)."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    thetas = model.sample_prior(rng.substream("prior"), count)
    xs = model.simulate_batch(rng.substream("data"), thetas)
    chunks = []
    for start in range(0, count, batch_size):
        chunk = xs[start : start + batch_size]
        chunks.append(ad.value_of(summarize(store, summary_cfg, chunk, standardizer)))
    return np.concatenate(chunks, axis=0)
