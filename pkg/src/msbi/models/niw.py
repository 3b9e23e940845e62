"""Multivariate normal model with a normal-inverse-Wishart prior.

The parameter vector packs the mean and the lower triangle of the
covariance, ``concat(mu, vech(sigma))``, so a 5-dimensional data space has a
20-dimensional parameter space. The posterior stays in the same family, and
its marginal means are available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..linalg import cholesky
from ..rng import RngState, sample_mvn, sample_niw
from ..transforms import CholeskyLogTransform, unvech, vech
from .base import GenerativeModel
from .gaussian import beta_replacement_noise

__all__ = ["NiwModel", "NiwPosterior", "niw_posterior_update"]


def niw_posterior_update(
    x: np.ndarray, mu0: np.ndarray, lam0: float, psi0: np.ndarray, nu0: float
) -> tuple[np.ndarray, float, np.ndarray, float]:
    """Conjugate update; returns (mu_k, lam_k, psi_k, nu_k)."""
    x = np.asarray(x, dtype=np.float64)
    mu0 = np.asarray(mu0, dtype=np.float64)
    psi0 = np.asarray(psi0, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != mu0.shape[0]:
        raise ValueError(f"expected (K, {mu0.shape[0]}) data, got {x.shape}")
    k = x.shape[0]
    if k == 0:
        return mu0.copy(), float(lam0), psi0.copy(), float(nu0)
    xbar = x.mean(axis=0)
    centered = x - xbar
    scatter = centered.T @ centered
    shift = xbar - mu0
    mu_k = (lam0 * mu0 + k * xbar) / (lam0 + k)
    lam_k = lam0 + k
    nu_k = nu0 + k
    psi_k = psi0 + scatter + (lam0 * k / (lam0 + k)) * np.outer(shift, shift)
    return mu_k, float(lam_k), psi_k, float(nu_k)


@dataclass(frozen=True)
class NiwPosterior:
    mu: np.ndarray
    lam: float
    psi: np.ndarray
    nu: float

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def mean_theta(self) -> np.ndarray:
        """Posterior means of mean and covariance, packed like the prior draws."""
        d = self.dim
        if not self.nu > d + 1:
            raise ValueError(f"mean of the covariance needs nu > {d + 1}, got {self.nu}")
        return np.concatenate([self.mu, vech(self.psi / (self.nu - d - 1))])

    def sample(self, rng: RngState, n: int) -> np.ndarray:
        rows = np.empty((n, self.dim + self.dim * (self.dim + 1) // 2))
        for i in range(n):
            mu, sigma = sample_niw(rng.substream("draw", i), self.mu, self.lam, self.psi, self.nu)
            rows[i] = np.concatenate([mu, vech(sigma)])
        return rows


@dataclass(frozen=True)
class NiwModel(GenerativeModel):
    dim: int = 5
    dataset_size: int = 50
    prior_mean: float | tuple = 0.0
    prior_precision_scale: float = 5.0
    prior_df: float = 10.0
    prior_scale: float = 1.0
    tail_df: float | None = None
    noise_mix: float = 0.0
    beta_a: float = 2.0
    beta_b: float = 5.0
    beta_scale: float = 3.0

    KNOBS = ("prior_mean", "prior_scale", "tail_df", "noise_mix")

    name = "mvn_niw"
    data_kind = "set"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        mean = self.prior_mean
        if np.isscalar(mean):
            mean = (float(mean),) * self.dim
        mean = tuple(float(v) for v in np.asarray(mean, dtype=np.float64).ravel())
        if len(mean) != self.dim:
            raise ValueError(f"prior_mean must be a scalar or {self.dim}-vector")
        object.__setattr__(self, "prior_mean", mean)
        if self.dataset_size < 1:
            raise ValueError(f"dataset_size must be >= 1, got {self.dataset_size}")
        if not self.prior_precision_scale > 0:
            raise ValueError(f"prior_precision_scale must be > 0, got {self.prior_precision_scale}")
        if not self.prior_df > self.dim - 1:
            raise ValueError(f"prior_df must exceed dim - 1, got {self.prior_df}")
        if not self.prior_scale > 0:
            raise ValueError(f"prior_scale must be > 0, got {self.prior_scale}")
        if self.tail_df is not None and not self.tail_df > 0:
            raise ValueError(f"tail_df must be positive or None, got {self.tail_df}")
        if not 0.0 <= self.noise_mix <= 1.0:
            raise ValueError(f"noise_mix must lie in [0, 1], got {self.noise_mix}")

    @property
    def theta_dim(self) -> int:
        return self.dim + self.dim * (self.dim + 1) // 2

    @property
    def theta_names(self) -> tuple[str, ...]:
        means = tuple(f"mu_{i}" for i in range(self.dim))
        rows, cols = np.tril_indices(self.dim)
        covs = tuple(f"sigma_{i}{j}" for i, j in zip(rows, cols))
        return means + covs

    @property
    def row_dim(self) -> int:
        return self.dim

    @property
    def transform(self) -> CholeskyLogTransform:
        return CholeskyLogTransform(self.dim)

    def _psi0(self) -> np.ndarray:
        return self.prior_scale * np.eye(self.dim)

    def sample_prior(self, rng: RngState, n: int) -> np.ndarray:
        mu0 = np.asarray(self.prior_mean)
        rows = np.empty((n, self.theta_dim))
        for i in range(n):
            mu, sigma = sample_niw(
                rng.substream("draw", i), mu0, self.prior_precision_scale, self._psi0(), self.prior_df
            )
            rows[i] = np.concatenate([mu, vech(sigma)])
        return rows

    def simulate(self, rng: RngState, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        mu = theta[: self.dim]
        sigma = unvech(theta[self.dim :], self.dim)
        factor = cholesky(sigma)
        k = self.dataset_size
        if self.tail_df is None:
            x = sample_mvn(rng, mu, factor, k)
        else:
            z = rng.standard_normal((k, self.dim))
            chi2 = 2.0 * rng.gamma_shape(self.tail_df / 2.0, k)
            x = mu + (z @ factor.T) / np.sqrt(chi2 / self.tail_df)[:, None]
        if self.noise_mix > 0.0:
            x = beta_replacement_noise(rng, x, self.noise_mix, self.beta_a, self.beta_b, self.beta_scale)
        return x

    def analytic_posterior(self, x: np.ndarray) -> NiwPosterior:
        mu_k, lam_k, psi_k, nu_k = niw_posterior_update(
            np.asarray(x, dtype=np.float64),
            np.asarray(self.prior_mean),
            self.prior_precision_scale,
            self._psi0(),
            self.prior_df,
        )
        return NiwPosterior(mu=mu_k, lam=lam_k, psi=psi_k, nu=nu_k)
