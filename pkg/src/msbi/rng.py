"""Seeded randomness: one counter-based generator, many derived substreams.

Everything stochastic in this package draws from an :class:`RngState`.  The
underlying bit generator is numpy's Philox4x64-10, a counter-based generator
with a published algorithm and cross-platform stream stability.  Substreams
are derived by hashing ``(seed, path)``, so parallel or out-of-order use
never shares mutable state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RngState",
    "Gaussian",
    "Beta",
    "Gamma",
    "StudentT",
    "Poisson",
    "Uniform",
    "sample_scalar",
    "sample_mvn",
    "sample_niw",
]

_MAX_SEED = 2**64


def _derive_key(seed: int, path: tuple) -> int:
    """Map (seed, substream path) to a 128-bit Philox key via SHA-256."""
    token = "\x1f".join(str(part) for part in (seed, *path))
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


class RngState:
    """Deterministic random stream with hierarchical substream derivation.

    The same ``seed`` and substream path produce bit-identical draws on
    every platform and in every run.  ``substream`` derives an independent
    child stream from the parent seed plus a path of labels; it never
    advances or shares the parent's state.
    """

    def __init__(self, seed: int, _path: tuple = ()):
        seed = int(seed)
        if not 0 <= seed < _MAX_SEED:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.path = _path
        self._gen = np.random.Generator(np.random.Philox(key=_derive_key(seed, _path)))

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, path={self.path!r})"

    def substream(self, *path) -> "RngState":
        """Child stream keyed by ``path`` labels (strings or integers)."""
        if not path:
            raise ValueError("substream requires at least one label")
        return RngState(self.seed, self.path + tuple(path))

    # -- primitive draws -------------------------------------------------

    def standard_normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def random(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def gamma_shape(self, shape, size=None) -> np.ndarray:
        """Gamma draws with unit scale; ``shape`` may be an array."""
        return self._gen.standard_gamma(shape, size)

    def poisson(self, lam, size=None) -> np.ndarray:
        return self._gen.poisson(lam, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=False)


# -- scalar distributions -----------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"gaussian sigma must be > 0, got {self.sigma}")

    def sample(self, rng: RngState, n: int) -> np.ndarray:
        return self.mu + self.sigma * rng.standard_normal(n)


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"beta parameters must be > 0, got ({self.a}, {self.b})")

    def sample(self, rng: RngState, n: int) -> np.ndarray:
        # Two-gamma composition: G(a) / (G(a) + G(b)).
        g = rng.gamma_shape(np.array([self.a, self.b]), size=(n, 2))
        return g[:, 0] / (g[:, 0] + g[:, 1])


@dataclass(frozen=True)
class Gamma:
    """Gamma distribution parameterized by shape and rate (mean = shape/rate)."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError(
                f"gamma parameters must be > 0, got ({self.shape}, {self.rate})"
            )

    def sample(self, rng: RngState, n: int) -> np.ndarray:
        return rng.gamma_shape(self.shape, n) / self.rate


@dataclass(frozen=True)
class StudentT:
    df: float
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.df > 0:
            raise ValueError(f"student-t df must be > 0, got {self.df}")
        if not self.scale > 0:
            raise ValueError(f"student-t scale must be > 0, got {self.scale}")

    def sample(self, rng: RngState, n: int) -> np.ndarray:
        # Gaussian over sqrt(chi2_df / df); chi2_df = 2 * Gamma(df / 2).
        z = rng.standard_normal(n)
        chi2 = 2.0 * rng.gamma_shape(self.df / 2.0, n)
        return self.loc + self.scale * z / np.sqrt(chi2 / self.df)


@dataclass(frozen=True)
class Poisson:
    lam: float

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"poisson rate must be >= 0, got {self.lam}")

    def sample(self, rng: RngState, n: int) -> np.ndarray:
        return rng.poisson(self.lam, n).astype(np.float64)


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"uniform requires lo < hi, got ({self.lo}, {self.hi})")

    def sample(self, rng: RngState, n: int) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random(n)


ScalarDistribution = Gaussian | Beta | Gamma | StudentT | Poisson | Uniform


def sample_scalar(rng: RngState, dist: ScalarDistribution, n: int) -> np.ndarray:
    """Draw ``n`` scalars from one of the supported distributions."""
    if n < 0:
        raise ValueError(f"sample count must be >= 0, got {n}")
    return dist.sample(rng, n)


# -- multivariate samplers ------------------------------------------------


def sample_mvn(rng: RngState, mean: np.ndarray, chol_cov: np.ndarray, n: int) -> np.ndarray:
    """Multivariate normal draws given a lower-triangular covariance factor.

    Returns an ``(n, d)`` array ``mean + z @ chol_cov.T`` with standard
    normal ``z``; a zero factor reproduces the mean exactly.
    """
    mean = np.asarray(mean, dtype=np.float64)
    chol_cov = np.asarray(chol_cov, dtype=np.float64)
    d = mean.shape[0]
    if mean.ndim != 1:
        raise ValueError(f"mean must be a vector, got shape {mean.shape}")
    if chol_cov.shape != (d, d):
        raise ValueError(
            f"chol_cov shape {chol_cov.shape} does not match mean dimension {d}"
        )
    if np.any(np.triu(chol_cov, k=1) != 0.0):
        raise ValueError("chol_cov must be lower-triangular")
    z = rng.standard_normal((n, d))
    return mean + z @ chol_cov.T


def sample_niw(
    rng: RngState,
    mu0: np.ndarray,
    lam0: float,
    psi0: np.ndarray,
    nu0: float,
) -> tuple[np.ndarray, np.ndarray]:
    """One draw (mu, sigma) from a normal-inverse-Wishart distribution.

    ``sigma`` is drawn from an inverse-Wishart with scale ``psi0`` and
    ``nu0`` degrees of freedom via the Bartlett factorization, then
    ``mu ~ N(mu0, sigma / lam0)``.
    """
    from .linalg import cholesky

    mu0 = np.asarray(mu0, dtype=np.float64)
    psi0 = np.asarray(psi0, dtype=np.float64)
    d = mu0.shape[0]
    if psi0.shape != (d, d):
        raise ValueError(f"psi0 shape {psi0.shape} does not match dimension {d}")
    if not lam0 > 0:
        raise ValueError(f"lam0 must be > 0, got {lam0}")
    if not nu0 > d - 1:
        raise ValueError(f"nu0 must exceed d - 1 = {d - 1}, got {nu0}")

    l_psi = cholesky(psi0)
    # Bartlett factor of a Wishart(I, nu0) draw: chi-square diagonal,
    # standard normal strict lower triangle.
    df = nu0 - np.arange(d)
    diag = np.sqrt(2.0 * rng.gamma_shape(df / 2.0))
    a = np.zeros((d, d))
    a[np.diag_indices(d)] = diag
    lower = np.tril_indices(d, k=-1)
    a[lower] = rng.standard_normal(d * (d - 1) // 2)

    from scipy.linalg import solve_triangular

    # sigma = (l_psi a^{-T}) (l_psi a^{-T})^T is inverse-Wishart(psi0, nu0).
    r = solve_triangular(a, l_psi.T, lower=True)
    sigma = r.T @ r
    z = rng.standard_normal(d)
    mu = mu0 + (r.T @ z) / np.sqrt(lam0)
    return mu, sigma
