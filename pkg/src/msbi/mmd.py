"""Maximum mean discrepancy estimation and the resampled two-sample test.

The squared-MMD estimator is the biased V-statistic (diagonal terms kept),
which is defined for singleton sets and never negative after clamping
floating-point roundoff.  The test's null distribution is estimated by
resampling model summaries, and the reported MMD is the square root, the
convention used everywhere a value is plotted or compared.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import RngState
from .tensorio import write_csv

__all__ = [
    "KernelSpec",
    "default_scales",
    "kernel_eval",
    "kernel_matrix",
    "mmd_squared_biased",
    "mmd",
    "null_distribution",
    "critical_value",
    "MmdReport",
    "hypothesis_test",
    "power_estimate",
    "bootstrap_mmd",
]

_FAMILIES = ("gaussian_sum", "imq_sum")


@dataclass(frozen=True)
class KernelSpec:
    """Sum-of-kernels specification over a ladder of bandwidths."""

    family: str = "gaussian_sum"
    scales: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected {_FAMILIES}")
        scales = tuple(float(s) for s in self.scales)
        if not scales or any(s <= 0 for s in scales):
            raise ValueError(f"kernel scales must be positive, got {self.scales}")
        object.__setattr__(self, "scales", scales)

    def to_dict(self) -> dict:
        return {"family": self.family, "scales": list(self.scales)}

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        return cls(family=data["family"], scales=tuple(data["scales"]))


def default_scales(dim: int) -> tuple[float, ...]:
    """Bandwidth ladder {0.5, 1, 2, 4, 8} * sqrt(dim / 2)."""
    if dim < 1:
        raise ValueError(f"dimension must be >= 1, got {dim}")
    base = math.sqrt(dim / 2.0)
    return tuple(base * m for m in (0.5, 1.0, 2.0, 4.0, 8.0))


def _as_matrix(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty (n, d) array, got shape {x.shape}")
    return x


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a2 = np.sum(a * a, axis=1)[:, None]
    b2 = np.sum(b * b, axis=1)[None, :]
    d2 = a2 + b2 - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def _kernel_from_sq(d2: np.ndarray, spec: KernelSpec) -> np.ndarray:
    out = np.zeros_like(d2)
    if spec.family == "gaussian_sum":
        for s in spec.scales:
            out += np.exp(-d2 / (2.0 * s * s))
    else:
        for s in spec.scales:
            s2 = s * s
            out += s2 / (s2 + d2)
    return out


def kernel_matrix(a: np.ndarray, b: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Cross kernel matrix K[i, j] = kappa(a_i, b_j)."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return _kernel_from_sq(_sq_dists(a, b), spec)


def kernel_eval(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    """Kernel value for a single pair of vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"x and y must be equal-length vectors, got {x.shape}, {y.shape}")
    return float(kernel_matrix(x[None, :], y[None, :], spec)[0, 0])


def mmd_squared_biased(a: np.ndarray, b: np.ndarray, spec: KernelSpec) -> float:
    """Biased (V-statistic) squared MMD; valid for sets as small as one point."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    # The cross matrix is summed in a canonical operand order so that
    # swapping the arguments returns the bitwise-identical value.
    if (b.shape[0], b.tobytes()) < (a.shape[0], a.tobytes()):
        a, b = b, a
    value = (
        _kernel_from_sq(_sq_dists(a, a), spec).mean()
        + _kernel_from_sq(_sq_dists(b, b), spec).mean()
        - 2.0 * _kernel_from_sq(_sq_dists(a, b), spec).mean()
    )
    return max(value, 0.0)


def mmd(a: np.ndarray, b: np.ndarray, spec: KernelSpec) -> float:
    """Square root of the biased squared-MMD estimate."""
    return math.sqrt(mmd_squared_biased(a, b, spec))


class _GramResampler:
    """Precomputed kernel matrix over a pool, for fast resampled MMD values."""

    def __init__(self, pool: np.ndarray, spec: KernelSpec):
        self.gram = _kernel_from_sq(_sq_dists(pool, pool), spec)

    def mmd_of(self, idx_a: np.ndarray, idx_b: np.ndarray) -> float:
        g = self.gram
        value = (
            g[np.ix_(idx_a, idx_a)].mean()
            + g[np.ix_(idx_b, idx_b)].mean()
            - 2.0 * g[np.ix_(idx_a, idx_b)].mean()
        )
        return math.sqrt(max(value, 0.0))


def null_distribution(
    rng: RngState,
    model_summaries: np.ndarray,
    n_observed: int,
    spec: KernelSpec,
    n_replicates: int = 300,
) -> np.ndarray:
    """Sorted null MMD sample under "observed data come from the model".

    Each replicate draws, with replacement from ``model_summaries``, one set
    of the pool's size and one of size ``n_observed``, mirroring the sizes
    used for the real test statistic.
    """
    model_summaries = _as_matrix(model_summaries, "model_summaries")
    m = model_summaries.shape[0]
    if not 1 <= n_observed <= m:
        raise ValueError(f"n_observed must be in [1, {m}], got {n_observed}")
    if n_replicates < 100:
        raise ValueError(f"need at least 100 replicates, got {n_replicates}")
    resampler = _GramResampler(model_summaries, spec)
    values = np.empty(n_replicates)
    for r in range(n_replicates):
        idx_a = rng.integers(0, m, size=m)
        idx_b = rng.integers(0, m, size=n_observed)
        values[r] = resampler.mmd_of(idx_a, idx_b)
    values.sort()
    return values


def _critical_from_null(null_sorted: np.ndarray, alpha: float) -> float:
    """Empirical (1 - alpha) critical value consistent with the add-one p-value.

    With m* = ceil(alpha * (B + 1)) - 2, rejecting when mmd exceeds the
    (B - m*)-th smallest null value is equivalent to p_value < alpha for
    p_value = (1 + #{null >= mmd}) / (1 + B).
    """
    b = len(null_sorted)
    m_star = math.ceil(alpha * (b + 1)) - 2
    if m_star < 0:
        return float("inf")
    m_star = min(m_star, b - 1)
    return float(null_sorted[b - m_star - 1])


def critical_value(null_sample: np.ndarray, alpha: float) -> float:
    """Rejection threshold implied by a null sample at level ``alpha``."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    null_sorted = np.sort(np.asarray(null_sample, dtype=np.float64))
    if null_sorted.size == 0:
        raise ValueError("need at least one null replicate")
    return _critical_from_null(null_sorted, alpha)


@dataclass
class MmdReport:
    """Outcome of one two-sample MMD test, JSON-serializable."""

    mmd: float
    critical_value: float
    p_value: float
    reject: bool
    alpha: float
    n_observed: int
    n_model: int
    n_replicates: int
    kernel: KernelSpec
    null_sample: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "mmd": self.mmd,
            "critical_value": self.critical_value,
            "p_value": self.p_value,
            "reject": self.reject,
            "alpha": self.alpha,
            "n_observed": self.n_observed,
            "n_model": self.n_model,
            "n_replicates": self.n_replicates,
            "kernel": self.kernel.to_dict(),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    def save_null_csv(self, path: str | Path) -> None:
        if self.null_sample is None:
            raise ValueError("report carries no null sample")
        write_csv(path, self.null_sample, header=["null_mmd"])


def hypothesis_test(
    observed_summaries: np.ndarray,
    model_summaries: np.ndarray,
    spec: KernelSpec,
    alpha: float,
    rng: RngState,
    n_replicates: int = 300,
    null_sample: np.ndarray | None = None,
) -> MmdReport:
    """Two-sample MMD test of observed summaries against model summaries.

    A precomputed ``null_sample`` (from :func:`null_distribution` with the
    same pool, ``n_observed`` and kernel) may be supplied to skip the
    resampling step when many tests share one model pool.
    """
    observed = _as_matrix(observed_summaries, "observed_summaries")
    model = _as_matrix(model_summaries, "model_summaries")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    statistic = mmd(observed, model, spec)
    if null_sample is None:
        null_sample = null_distribution(rng, model, observed.shape[0], spec, n_replicates)
    else:
        null_sample = np.sort(np.asarray(null_sample, dtype=np.float64))
    b = len(null_sample)
    critical = _critical_from_null(null_sample, alpha)
    p_value = (1.0 + float(np.sum(null_sample >= statistic))) / (1.0 + b)
    return MmdReport(
        mmd=statistic,
        critical_value=critical,
        p_value=p_value,
        reject=bool(statistic > critical),
        alpha=alpha,
        n_observed=observed.shape[0],
        n_model=model.shape[0],
        n_replicates=b,
        kernel=spec,
        null_sample=null_sample,
    )


def power_estimate(alternative_mmds: np.ndarray, critical_value: float) -> float:
    """Fraction of alternative-hypothesis MMD values beyond the critical value."""
    alternative_mmds = np.asarray(alternative_mmds, dtype=np.float64)
    if alternative_mmds.size == 0:
        raise ValueError("need at least one alternative MMD value")
    return float(np.mean(alternative_mmds > critical_value))


def bootstrap_mmd(
    rng: RngState,
    model_summaries: np.ndarray,
    observed_summaries: np.ndarray,
    n_observed: int,
    spec: KernelSpec,
    n_replicates: int = 100,
) -> np.ndarray:
    """Bootstrap MMD values for few-observation regimes.

    Each replicate resamples the full model pool and ``n_observed`` rows of
    the observed summaries, both with replacement, and records the MMD.
    """
    model = _as_matrix(model_summaries, "model_summaries")
    observed = _as_matrix(observed_summaries, "observed_summaries")
    if model.shape[1] != observed.shape[1]:
        raise ValueError(f"dimension mismatch: {model.shape} vs {observed.shape}")
    m, n = model.shape[0], observed.shape[0]
    if not 1 <= n_observed <= n:
        raise ValueError(f"n_observed must be in [1, {n}], got {n_observed}")
    if n_replicates < 1:
        raise ValueError(f"n_replicates must be >= 1, got {n_replicates}")
    resampler = _GramResampler(np.vstack([model, observed]), spec)
    values = np.empty(n_replicates)
    for r in range(n_replicates):
        idx_a = rng.integers(0, m, size=m)
        idx_b = m + rng.integers(0, n, size=n_observed)
        values[r] = resampler.mmd_of(idx_a, idx_b)
    return values
