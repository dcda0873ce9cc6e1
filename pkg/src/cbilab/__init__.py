"""Numerical laboratory for critical multi-type CBI processes and their diffusion limit."""

from .coefficients import DerivedCoefficients, derive
from .model import AtomMeasure, ModelSpec, ValidatedModel, load_model, validate
from .moments import classify, mean_asymptote, mean_at
from .spectral import SpectralSummary, perron

__all__ = [
    "AtomMeasure",
    "DerivedCoefficients",
    "ModelSpec",
    "SpectralSummary",
    "ValidatedModel",
    "classify",
    "derive",
    "load_model",
    "mean_asymptote",
    "mean_at",
    "perron",
    "validate",
]
__version__ = "0.1.0"
