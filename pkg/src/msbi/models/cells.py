"""Marked point process of cancer and stromal cells in the unit square.

Stromal cells and unobserved parent cells are homogeneous Poisson fields;
each parent spawns a Poisson number of daughter cancer cells placed with a
small isotropic scatter and kept inside the square by rejection. Necrosis
strikes each parent independently and removes every cancer cell within a
fixed radius of the struck parent. The observable is a short feature vector
rather than the raw point pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import RngState
from ..transforms import LogTransform
from .base import GenerativeModel

__all__ = ["CellField", "CellFieldModel"]

_MAX_REJECTION_ROUNDS = 10000


@dataclass(frozen=True)
class CellField:
    """One realized field, kept around for corner checks on the mechanism."""

    stromal: np.ndarray
    parents: np.ndarray
    cancer: np.ndarray
    pre_necrosis_count: int


@dataclass(frozen=True)
class CellFieldModel(GenerativeModel):
    necrosis_prob: float = 0.0
    daughter_sd: float = 0.02
    necrosis_radius: float = 0.1
    distance_sample: int = 50
    stromal_prior: tuple[float, float] = (25.0, 0.03)
    parent_prior: tuple[float, float] = (45.0, 3.0)
    daughter_prior: tuple[float, float] = (5.0, 0.5)

    KNOBS = ("necrosis_prob",)

    name = "cancer_stromal"
    theta_dim = 3
    theta_names = ("stromal_rate", "parent_rate", "daughter_rate")
    data_kind = "features"
    row_dim = 5
    transform = LogTransform()

    def __post_init__(self):
        if not 0.0 <= self.necrosis_prob <= 1.0:
            raise ValueError(f"necrosis_prob must lie in [0, 1], got {self.necrosis_prob}")
        if not self.daughter_sd > 0:
            raise ValueError(f"daughter_sd must be > 0, got {self.daughter_sd}")
        if not self.necrosis_radius >= 0:
            raise ValueError(f"necrosis_radius must be >= 0, got {self.necrosis_radius}")
        if self.distance_sample < 1:
            raise ValueError(f"distance_sample must be >= 1, got {self.distance_sample}")
        for field_name in ("stromal_prior", "parent_prior", "daughter_prior"):
            shape, rate = getattr(self, field_name)
            if not (shape > 0 and rate > 0):
                raise ValueError(f"{field_name} must have positive shape and rate")

    def sample_prior(self, rng: RngState, n: int) -> np.ndarray:
        out = np.empty((n, 3))
        priors = (self.stromal_prior, self.parent_prior, self.daughter_prior)
        for j, (shape, rate) in enumerate(priors):
            out[:, j] = rng.substream("rate", j).gamma_shape(shape, n) / rate
        return out

    def sample_field(self, rng: RngState, theta: np.ndarray) -> CellField:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (3,) or np.any(theta <= 0):
            raise ValueError(f"theta must be three positive rates, got {theta}")
        stromal_rate, parent_rate, daughter_rate = theta
        n_stromal = int(rng.poisson(stromal_rate))
        stromal = rng.random((n_stromal, 2))
        n_parents = int(rng.poisson(parent_rate))
        parents = rng.random((n_parents, 2))
        counts = rng.poisson(daughter_rate, n_parents) if n_parents else np.zeros(0, dtype=np.int64)
        total = int(counts.sum())
        origins = np.repeat(parents, counts, axis=0) if n_parents else np.zeros((0, 2))
        cancer = origins + self.daughter_sd * rng.standard_normal((total, 2))
        for _ in range(_MAX_REJECTION_ROUNDS):
            outside = np.nonzero(np.any((cancer < 0.0) | (cancer > 1.0), axis=1))[0]
            if not outside.size:
                break
            cancer[outside] = origins[outside] + self.daughter_sd * rng.standard_normal((outside.size, 2))
        else:
            cancer = np.clip(cancer, 0.0, 1.0)
        pre_count = total
        if self.necrosis_prob > 0.0 and n_parents and total:
            struck = rng.random(n_parents) < self.necrosis_prob
            centers = parents[struck]
            if centers.size:
                d2 = ((cancer[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
                keep = d2.min(axis=1) > self.necrosis_radius**2
                cancer = cancer[keep]
        return CellField(stromal=stromal, parents=parents, cancer=cancer, pre_necrosis_count=pre_count)

    def features(self, rng: RngState, field: CellField) -> np.ndarray:
        """(cancer count, stromal count, mean and max stromal-to-cancer distance, validity)."""
        n_cancer = field.cancer.shape[0]
        n_stromal = field.stromal.shape[0]
        if n_cancer == 0 or n_stromal == 0:
            return np.array([float(n_cancer), float(n_stromal), 0.0, 0.0, 0.0])
        m = min(self.distance_sample, n_stromal)
        idx = rng.choice_without_replacement(n_stromal, m)
        subset = field.stromal[idx]
        d2 = ((subset[:, None, :] - field.cancer[None, :, :]) ** 2).sum(axis=2)
        nearest = np.sqrt(d2.min(axis=1))
        return np.array([float(n_cancer), float(n_stromal), nearest.mean(), nearest.max(), 1.0])

    def simulate(self, rng: RngState, theta: np.ndarray) -> np.ndarray:
        field = self.sample_field(rng, theta)
        return self.features(rng, field)
