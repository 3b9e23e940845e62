"""Conditional affine coupling flow over transformed parameters.

Each layer permutes its input with a fixed seeded permutation, passes the
first half (plus the conditioning vector) through a small MLP that emits a
scale and shift for the second half, and clamps the log-scale through a
saturating tanh so no single layer can explode or collapse a coordinate.
The final affine of every subnet starts at zero, so a freshly initialized
flow is the identity map with zero log-determinant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .rng import RngState
from .summary import glorot_uniform

__all__ = [
    "CouplingFlowConfig",
    "FlowNumericsError",
    "init_flow_params",
    "flow_forward",
    "flow_inverse",
    "log_prob",
    "sample",
]

_LOG_2PI = math.log(2.0 * math.pi)


class FlowNumericsError(ArithmeticError):
    def __init__(self, layer: int, direction: str):
        self.layer = layer
        self.direction = direction
        super().__init__(f"non-finite activations in coupling layer {layer} ({direction})")


@dataclass(frozen=True)
class CouplingFlowConfig:
    theta_dim: int
    cond_dim: int
    n_layers: int = 6
    subnet_hidden: tuple[int, ...] = (64, 64)
    scale_clamp: float = 1.9
    permutation_seed: int = 7
    activation: str = "tanh"

    def __post_init__(self):
        if self.theta_dim < 1:
            raise ValueError(f"theta_dim must be >= 1, got {self.theta_dim}")
        if self.cond_dim < 1:
            raise ValueError(f"cond_dim must be >= 1, got {self.cond_dim}")
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if not self.scale_clamp > 0:
            raise ValueError(f"scale_clamp must be positive, got {self.scale_clamp}")
        if self.activation not in ("tanh", "softplus"):
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "subnet_hidden", tuple(int(w) for w in self.subnet_hidden))
        perm_rng = RngState(self.permutation_seed).substream("flow-permutations")
        perms = tuple(
            tuple(int(p) for p in perm_rng.substream("layer", i).permutation(self.theta_dim))
            for i in range(self.n_layers)
        )
        object.__setattr__(self, "permutations", perms)

    @property
    def split(self) -> tuple[int, int]:
        """Sizes (passive, transformed) of the coupling split."""
        d_a = self.theta_dim // 2
        return d_a, self.theta_dim - d_a

    def to_dict(self) -> dict:
        return {
            "theta_dim": self.theta_dim,
            "cond_dim": self.cond_dim,
            "n_layers": self.n_layers,
            "subnet_hidden": list(self.subnet_hidden),
            "scale_clamp": self.scale_clamp,
            "permutation_seed": self.permutation_seed,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CouplingFlowConfig":
        allowed = {
            "theta_dim", "cond_dim", "n_layers", "subnet_hidden",
            "scale_clamp", "permutation_seed", "activation",
        }
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown flow config keys: {sorted(unknown)}")
        data = dict(data)
        if "subnet_hidden" in data:
            data["subnet_hidden"] = tuple(data["subnet_hidden"])
        return cls(**data)


def _subnet_widths(cfg: CouplingFlowConfig) -> list[int]:
    d_a, d_b = cfg.split
    return [d_a + cfg.cond_dim, *cfg.subnet_hidden, 2 * d_b]


def init_flow_params(store, cfg: CouplingFlowConfig, rng: RngState, prefix: str = "flow") -> None:
    """Glorot hidden layers; the output affine is zeroed so the flow starts as identity."""
    widths = _subnet_widths(cfg)
    for layer in range(cfg.n_layers):
        layer_rng = rng.substream("layer", layer)
        last = len(widths) - 2
        for i in range(len(widths) - 1):
            if i == last:
                w = np.zeros((widths[i], widths[i + 1]))
            else:
                w = glorot_uniform(layer_rng.substream("affine", i), widths[i], widths[i + 1])
            store.add(f"{prefix}.l{layer}.w{i}", w)
            store.add(f"{prefix}.l{layer}.b{i}", np.zeros(widths[i + 1]))


def _subnet(params, h, cfg: CouplingFlowConfig, layer: int, prefix: str):
    activation = ad.tanh if cfg.activation == "tanh" else ad.softplus
    n_affine = len(cfg.subnet_hidden) + 1
    for i in range(n_affine):
        h = ad.matmul(h, params[f"{prefix}.l{layer}.w{i}"]) + params[f"{prefix}.l{layer}.b{i}"]
        if i + 1 < n_affine:
            h = activation(h)
    return h


def _scale_shift(params, x_a, cond, cfg: CouplingFlowConfig, layer: int, prefix: str, d_b: int):
    h = ad.concat([x_a, cond], axis=1) if x_a is not None else cond
    raw = _subnet(params, h, cfg, layer, prefix)
    s_raw = ad.slice_cols(raw, 0, d_b)
    t = ad.slice_cols(raw, d_b, 2 * d_b)
    s = ad.tanh(s_raw / cfg.scale_clamp) * cfg.scale_clamp
    return s, t


def _check_finite(x, layer: int, direction: str) -> None:
    if not np.all(np.isfinite(ad.value_of(x))):
        raise FlowNumericsError(layer, direction)


def _validate_inputs(theta, cond, cfg: CouplingFlowConfig, name: str):
    tv, cv = ad.value_of(theta), ad.value_of(cond)
    if tv.ndim != 2 or tv.shape[1] != cfg.theta_dim:
        raise ValueError(f"{name} must have shape (B, {cfg.theta_dim}), got {tv.shape}")
    if cv.ndim != 2 or cv.shape[1] != cfg.cond_dim:
        raise ValueError(f"conditioning must have shape (B, {cfg.cond_dim}), got {cv.shape}")
    if tv.shape[0] != cv.shape[0]:
        raise ValueError(f"batch sizes differ: {tv.shape[0]} vs {cv.shape[0]}")


def flow_forward(params, theta, cond, cfg: CouplingFlowConfig, prefix: str = "flow"):
    """Map parameters to base space; returns (u, log_det) with log_det shape (B,)."""
    _validate_inputs(theta, cond, cfg, "theta")
    d_a, d_b = cfg.split
    x = theta
    log_det = None
    for layer in range(cfg.n_layers):
        x = ad.gather_cols(x, cfg.permutations[layer])
        if d_a > 0:
            x_a = ad.slice_cols(x, 0, d_a)
            x_b = ad.slice_cols(x, d_a, cfg.theta_dim)
        else:
            x_a, x_b = None, x
        s, t = _scale_shift(params, x_a, cond, cfg, layer, prefix, d_b)
        y_b = x_b * ad.exp(s) + t
        x = ad.concat([x_a, y_b], axis=1) if x_a is not None else y_b
        _check_finite(x, layer, "forward")
        contrib = ad.reduce_sum(s, axis=1)
        log_det = contrib if log_det is None else log_det + contrib
    return x, log_det


def _inverse_permutation(perm: tuple) -> np.ndarray:
    inv = np.empty(len(perm), dtype=np.intp)
    inv[np.asarray(perm, dtype=np.intp)] = np.arange(len(perm), dtype=np.intp)
    return inv


def flow_inverse(params, u, cond, cfg: CouplingFlowConfig, prefix: str = "flow"):
    """Exact inverse of :func:`flow_forward`; returns (theta, log_det) of the inverse map."""
    _validate_inputs(u, cond, cfg, "u")
    d_a, d_b = cfg.split
    y = u
    log_det = None
    for layer in reversed(range(cfg.n_layers)):
        if d_a > 0:
            y_a = ad.slice_cols(y, 0, d_a)
            y_b = ad.slice_cols(y, d_a, cfg.theta_dim)
        else:
            y_a, y_b = None, y
        s, t = _scale_shift(params, y_a, cond, cfg, layer, prefix, d_b)
        x_b = (y_b - t) * ad.exp(-1.0 * s)
        y = ad.concat([y_a, x_b], axis=1) if y_a is not None else x_b
        y = ad.gather_cols(y, _inverse_permutation(cfg.permutations[layer]))
        _check_finite(y, layer, "inverse")
        contrib = ad.reduce_sum(s, axis=1)
        log_det = contrib if log_det is None else log_det + contrib
    return y, -log_det


def log_prob(params, theta, cond, cfg: CouplingFlowConfig, prefix: str = "flow"):
    """Per-row log density under the flow with a standard normal base, shape (B,)."""
    u, log_det = flow_forward(params, theta, cond, cfg, prefix)
    quad = ad.reduce_sum(u * u, axis=1)
    return -0.5 * quad - 0.5 * cfg.theta_dim * _LOG_2PI + log_det


def sample(params, cond, n_draws: int, rng: RngState, cfg: CouplingFlowConfig, prefix: str = "flow") -> np.ndarray:
    """Draw ``n_draws`` parameter vectors conditioned on a single summary vector."""
    cond = np.asarray(cond, dtype=np.float64)
    if cond.ndim == 1:
        cond = np.broadcast_to(cond, (n_draws, cond.shape[0]))
    if cond.shape != (n_draws, cfg.cond_dim):
        raise ValueError(f"conditioning must broadcast to ({n_draws}, {cfg.cond_dim}), got {cond.shape}")
    u = rng.standard_normal((n_draws, cfg.theta_dim))
    theta, _ = flow_inverse(params, u, cond, cfg, prefix)
    return ad.value_of(theta)
