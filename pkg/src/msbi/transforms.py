"""Bijections between native parameter vectors and the flow's unconstrained space.

Densities learned in the transformed space pull back to the native space, so
each transform reports the log absolute Jacobian determinant of the native ->
unconstrained map alongside the map itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import cholesky

__all__ = [
    "IdentityTransform",
    "LogTransform",
    "CholeskyLogTransform",
    "vech",
    "unvech",
    "transform_from_dict",
]


def vech(a: np.ndarray) -> np.ndarray:
    """Row-major stacking of the lower triangle, diagonal included."""
    a = np.asarray(a, dtype=np.float64)
    d = a.shape[0]
    idx = np.tril_indices(d)
    return a[idx]


def unvech(v: np.ndarray, d: int) -> np.ndarray:
    """Symmetric matrix whose lower triangle is ``v`` in row-major order."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (d * (d + 1) // 2,):
        raise ValueError(f"expected {d * (d + 1) // 2} entries for dimension {d}, got {v.shape}")
    out = np.zeros((d, d))
    out[np.tril_indices(d)] = v
    return out + np.tril(out, -1).T


@dataclass(frozen=True)
class IdentityTransform:
    """No-op for parameters already living on all of R^D."""

    def to_unconstrained(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(theta, dtype=np.float64)

    def from_unconstrained(self, w: np.ndarray) -> np.ndarray:
        return np.asarray(w, dtype=np.float64)

    def log_det_jacobian(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        return np.zeros(theta.shape[0])

    def to_dict(self) -> dict:
        return {"kind": "identity"}


@dataclass(frozen=True)
class LogTransform:
    """Componentwise log for positive parameters (rates, scales)."""

    def to_unconstrained(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if np.any(theta <= 0):
            raise ValueError("log transform requires strictly positive parameters")
        return np.log(theta)

    def from_unconstrained(self, w: np.ndarray) -> np.ndarray:
        return np.exp(np.asarray(w, dtype=np.float64))

    def log_det_jacobian(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if np.any(theta <= 0):
            raise ValueError("log transform requires strictly positive parameters")
        return -np.log(theta).sum(axis=1)

    def to_dict(self) -> dict:
        return {"kind": "log"}


@dataclass(frozen=True)
class CholeskyLogTransform:
    """Mean-and-covariance vectors mapped through a log-diagonal Cholesky factor.

    The native layout is ``concat(mean, vech(cov))`` with the covariance
    block required to be positive definite; the unconstrained layout is
    ``concat(mean, packed L)`` where the factor's diagonal is stored in log
    and the strict lower triangle verbatim, both row-major.
    """

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")

    @property
    def theta_dim(self) -> int:
        return self.dim + self.dim * (self.dim + 1) // 2

    def _split(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != self.theta_dim:
            raise ValueError(f"expected shape (n, {self.theta_dim}), got {rows.shape}")
        return rows[:, : self.dim], rows[:, self.dim :]

    def to_unconstrained(self, theta: np.ndarray) -> np.ndarray:
        mean, cov_vech = self._split(theta)
        out = np.empty_like(np.asarray(theta, dtype=np.float64))
        out[:, : self.dim] = mean
        diag_idx = _vech_diag_indices(self.dim)
        for r in range(mean.shape[0]):
            factor = cholesky(unvech(cov_vech[r], self.dim))
            packed = vech(factor)
            packed[diag_idx] = np.log(packed[diag_idx])
            out[r, self.dim :] = packed
        return out

    def from_unconstrained(self, w: np.ndarray) -> np.ndarray:
        mean, packed = self._split(w)
        out = np.empty((mean.shape[0], self.theta_dim))
        out[:, : self.dim] = mean
        diag_idx = _vech_diag_indices(self.dim)
        for r in range(mean.shape[0]):
            entries = packed[r].copy()
            entries[diag_idx] = np.exp(entries[diag_idx])
            factor = unvech_lower(entries, self.dim)
            out[r, self.dim :] = vech(factor @ factor.T)
        return out

    def log_det_jacobian(self, theta: np.ndarray) -> np.ndarray:
        _, cov_vech = self._split(theta)
        n = cov_vech.shape[0]
        out = np.empty(n)
        weights = np.arange(self.dim, 0, -1) + 1.0
        for r in range(n):
            factor = cholesky(unvech(cov_vech[r], self.dim))
            out[r] = -self.dim * math.log(2.0) - float(weights @ np.log(np.diag(factor)))
        return out

    def to_dict(self) -> dict:
        return {"kind": "cholesky_log", "dim": self.dim}


def unvech_lower(v: np.ndarray, d: int) -> np.ndarray:
    """Lower-triangular matrix from row-major packed entries (no mirroring)."""
    out = np.zeros((d, d))
    out[np.tril_indices(d)] = np.asarray(v, dtype=np.float64)
    return out


def _vech_diag_indices(d: int) -> np.ndarray:
    rows, cols = np.tril_indices(d)
    return np.nonzero(rows == cols)[0]


def transform_from_dict(data: dict):
    kind = data.get("kind")
    if kind == "identity":
        return IdentityTransform()
    if kind == "log":
        return LogTransform()
    if kind == "cholesky_log":
        return CholeskyLogTransform(dim=int(data["dim"]))
    raise ValueError(f"unknown transform kind {kind!r}")
