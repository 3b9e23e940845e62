"""Shared interface for the generative models."""

from __future__ import annotations

import abc
import dataclasses

import numpy as np

from ..rng import RngState

__all__ = ["GenerativeModel"]


class GenerativeModel(abc.ABC):
    """A prior plus simulator, with named misspecification knobs.

    Concrete models are frozen dataclasses whose knob fields double as the
    configuration surface: the class defaults are the training model, and a
    variant is produced by replacing knob values. Simulation is a pure
    function of the stream passed in, so dataset ``i`` of a batch reads the
    ``("dataset", i)`` substream regardless of batch composition.
    """

    KNOBS: tuple[str, ...] = ()

    @property
    @abc.abstractmethod
    def name(self) -> str: ...

    @property
    @abc.abstractmethod
    def theta_dim(self) -> int: ...

    @property
    @abc.abstractmethod
    def theta_names(self) -> tuple[str, ...]: ...

    @property
    @abc.abstractmethod
    def data_kind(self) -> str:
        """``"set"`` for exchangeable K x d datasets, ``"features"`` for vectors."""

    @property
    @abc.abstractmethod
    def row_dim(self) -> int: ...

    @property
    @abc.abstractmethod
    def transform(self):
        """Bijection used to put this model's parameters on R^D for the flow."""

    @abc.abstractmethod
    def sample_prior(self, rng: RngState, n: int) -> np.ndarray:
        """``n`` parameter vectors in the native parameterization, shape (n, D)."""

    @abc.abstractmethod
    def simulate(self, rng: RngState, theta: np.ndarray) -> np.ndarray:
        """One dataset for one parameter vector."""

    def simulate_batch(self, rng: RngState, thetas: np.ndarray) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=np.float64)
        return np.stack(
            [self.simulate(rng.substream("dataset", i), theta) for i, theta in enumerate(thetas)]
        )

    def analytic_posterior(self, x: np.ndarray):
        """Conjugate posterior for one dataset, or None when intractable."""
        return None

    def knob_values(self) -> dict:
        return {k: getattr(self, k) for k in self.KNOBS}

    def with_knobs(self, **knobs) -> "GenerativeModel":
        unknown = set(knobs) - set(self.KNOBS)
        if unknown:
            raise ValueError(f"unknown knobs for {self.name}: {sorted(unknown)}")
        return dataclasses.replace(self, **knobs)

    def well_specified(self) -> "GenerativeModel":
        """The training configuration: every knob reset to its class default."""
        defaults = {
            f.name: f.default
            for f in dataclasses.fields(self)
            if f.name in self.KNOBS and f.default is not dataclasses.MISSING
        }
        return dataclasses.replace(self, **defaults)
