"""Generative models with misspecification knobs and conjugate oracles."""

from .base import GenerativeModel
from .cells import CellField, CellFieldModel
from .ddm import DriftDiffusionModel, contaminate_reaction_times
from .gaussian import GaussianLocationModel, GaussianPosterior
from .niw import NiwModel, NiwPosterior, niw_posterior_update

__all__ = [
    "GenerativeModel",
    "GaussianLocationModel",
    "GaussianPosterior",
    "NiwModel",
    "NiwPosterior",
    "niw_posterior_update",
    "CellField",
    "CellFieldModel",
    "DriftDiffusionModel",
    "contaminate_reaction_times",
    "MODEL_FAMILIES",
    "build_model",
]

MODEL_FAMILIES = {
    "gaussian2d": GaussianLocationModel,
    "mvn_niw": NiwModel,
    "cancer_stromal": CellFieldModel,
    "ddm": DriftDiffusionModel,
}


def build_model(family: str, **fields) -> GenerativeModel:
    """Instantiate a model family by name with field overrides."""
    try:
        cls = MODEL_FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown model family {family!r}; expected {sorted(MODEL_FAMILIES)}") from None
    return cls(**fields)
