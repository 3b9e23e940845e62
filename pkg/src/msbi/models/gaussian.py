"""Two-dimensional Gaussian location model with a conjugate posterior.

The training model draws a location from an isotropic Gaussian prior and
observes K isotropic Gaussian points around it. Knobs shift the prior mean,
rescale the prior and simulator variances, and mix in replacement noise
drawn from a scaled Beta(2, 5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import Beta, RngState
from ..transforms import IdentityTransform
from .base import GenerativeModel

__all__ = [
    "GaussianLocationModel",
    "GaussianPosterior",
    "beta_replacement_noise",
    "pair_datasets",
    "pair_mean_summary",
    "sorted_pairs",
]


def beta_replacement_noise(
    rng: RngState, x: np.ndarray, rate: float, a: float, b: float, scale: float
) -> np.ndarray:
    """Replace each row of ``x`` with prob. ``rate`` by iid scaled Beta draws.

    The replacement value is ``scale * Beta(a, b)`` per coordinate, so its
    support is [0, scale]. Draw order is fixed: row mask first, then the
    replacement block for every row.
    """
    k, d = x.shape
    mask = rng.random(k) < rate
    replacements = scale * Beta(a, b).sample(rng, k * d).reshape(k, d)
    out = x.copy()
    out[mask] = replacements[mask]
    return out


@dataclass(frozen=True)
class GaussianPosterior:
    """Isotropic-Gaussian posterior over the location."""

    mean: np.ndarray
    cov: np.ndarray

    def mean_theta(self) -> np.ndarray:
        return np.asarray(self.mean, dtype=np.float64)

    def sd_theta(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def sample(self, rng: RngState, n: int) -> np.ndarray:
        z = rng.standard_normal((n, self.mean.shape[0]))
        return self.mean + z * np.sqrt(np.diag(self.cov))


@dataclass(frozen=True)
class GaussianLocationModel(GenerativeModel):
    dataset_size: int = 100
    prior_mean: tuple[float, float] = (0.0, 0.0)
    prior_var: float = 1.0
    sim_var: float = 1.0
    noise_mix: float = 0.0
    beta_a: float = 2.0
    beta_b: float = 5.0
    beta_scale: float = 3.0

    KNOBS = ("prior_mean", "prior_var", "sim_var", "noise_mix")

    name = "gaussian2d"
    theta_dim = 2
    theta_names = ("loc_x", "loc_y")
    data_kind = "set"
    row_dim = 2
    transform = IdentityTransform()

    def __post_init__(self):
        mean = self.prior_mean
        if np.isscalar(mean):
            mean = (float(mean), float(mean))
        mean = tuple(float(v) for v in np.asarray(mean, dtype=np.float64).ravel())
        if len(mean) != 2:
            raise ValueError(f"prior_mean must be a scalar or 2-vector, got {self.prior_mean!r}")
        object.__setattr__(self, "prior_mean", mean)
        if self.dataset_size < 1:
            raise ValueError(f"dataset_size must be >= 1, got {self.dataset_size}")
        if not self.prior_var > 0:
            raise ValueError(f"prior_var must be > 0, got {self.prior_var}")
        if not self.sim_var > 0:
            raise ValueError(f"sim_var must be > 0, got {self.sim_var}")
        if not 0.0 <= self.noise_mix <= 1.0:
            raise ValueError(f"noise_mix must lie in [0, 1], got {self.noise_mix}")
        if not self.beta_scale > 0:
            raise ValueError(f"beta_scale must be > 0, got {self.beta_scale}")

    def sample_prior(self, rng: RngState, n: int) -> np.ndarray:
        z = rng.standard_normal((n, 2))
        return np.asarray(self.prior_mean) + np.sqrt(self.prior_var) * z

    def simulate(self, rng: RngState, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        z = rng.standard_normal((self.dataset_size, 2))
        x = theta + np.sqrt(self.sim_var) * z
        if self.noise_mix > 0.0:
            x = beta_replacement_noise(rng, x, self.noise_mix, self.beta_a, self.beta_b, self.beta_scale)
        return x

    def analytic_posterior(self, x: np.ndarray) -> GaussianPosterior:
        """Conjugate posterior under this model's own prior and simulator scales."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != 2:
            raise ValueError(f"expected a (K, 2) dataset, got {x.shape}")
        k = x.shape[0]
        if k == 0:
            return GaussianPosterior(
                mean=np.asarray(self.prior_mean, dtype=np.float64),
                cov=self.prior_var * np.eye(2),
            )
        precision = 1.0 / self.prior_var + k / self.sim_var
        cov = np.eye(2) / precision
        mean = (np.asarray(self.prior_mean) / self.prior_var + k * x.mean(axis=0) / self.sim_var) / precision
        return GaussianPosterior(mean=mean, cov=cov)


# -- two-point counterexample ----------------------------------------------


def pair_datasets(rng: RngState, n: int, variances: tuple[float, float]) -> np.ndarray:
    """``n`` two-observation datasets with zero mean and the given variances.

    With variances (2, 2) and (1, 3) the average of the pair is standard
    normal under both processes, so any summary that only sees the average
    cannot separate them even though the joint laws differ.
    """
    v1, v2 = variances
    if not (v1 > 0 and v2 > 0):
        raise ValueError(f"variances must be positive, got {variances}")
    z = rng.standard_normal((n, 2))
    return z * np.sqrt(np.asarray([v1, v2]))


def pair_mean_summary(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).mean(axis=1, keepdims=True)


def sorted_pairs(x: np.ndarray) -> np.ndarray:
    return np.sort(np.asarray(x, dtype=np.float64), axis=1)
