"""Dense linear algebra helpers: Cholesky factorization and PCA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["NotPositiveDefiniteError", "cholesky", "PcaResult", "pca"]


class NotPositiveDefiniteError(ValueError):
    """Raised when a matrix has no Cholesky factor; carries the pivot index."""

    def __init__(self, pivot: int, value: float):
        self.pivot = pivot
        self.value = value
        super().__init__(
            f"matrix is not positive definite: pivot {pivot} is {value:.6g} <= 0"
        )


def cholesky(a: np.ndarray, sym_tol: float = 1e-10) -> np.ndarray:
    """Lower-triangular factor L with L @ L.T == a.

    ``a`` must be square and symmetric within ``sym_tol``.  A non-positive
    pivot raises :class:`NotPositiveDefiniteError` naming the failing index.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cholesky requires a square matrix, got shape {a.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > sym_tol:
        raise ValueError(f"matrix is not symmetric within {sym_tol}")

    n = a.shape[0]
    lower = np.zeros((n, n))
    for j in range(n):
        d = a[j, j] - lower[j, :j] @ lower[j, :j]
        if d <= 0.0:
            raise NotPositiveDefiniteError(j, d)
        lower[j, j] = np.sqrt(d)
        if j + 1 < n:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


@dataclass(frozen=True)
class PcaResult:
    """Principal components (rows), explained variance ratios, column means."""

    components: np.ndarray
    explained_variance_ratio: np.ndarray
    means: np.ndarray

    def transform(self, data: np.ndarray) -> np.ndarray:
        return (np.asarray(data, dtype=np.float64) - self.means) @ self.components.T

    def inverse_transform(self, scores: np.ndarray) -> np.ndarray:
        return np.asarray(scores, dtype=np.float64) @ self.components + self.means


def pca(data: np.ndarray, k: int) -> PcaResult:
    """Top-``k`` principal components of ``data`` (rows are observations).

    Ratios are eigenvalues of the sample covariance divided by its trace,
    so with ``k == d`` they sum to one.  Component signs are fixed so the
    largest-magnitude entry of each component is positive.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"pca requires a 2-d array, got shape {data.shape}")
    n, d = data.shape
    if n < 2:
        raise ValueError(f"pca requires at least 2 rows, got {n}")
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")

    means = data.mean(axis=0)
    centered = data - means
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    components = eigvecs[:, order].T[:k].copy()

    for row in components:
        anchor = np.argmax(np.abs(row))
        if row[anchor] < 0:
            row *= -1.0

    total = eigvals.sum()
    if total > 0:
        ratios = eigvals[:k] / total
    else:
        ratios = np.zeros(k)
    return PcaResult(components=components, explained_variance_ratio=ratios, means=means)
