"""Bayesian covariance structure models for nested, interval-censored event times."""

from .config import PRESETS, Priors, RunConfig, load_config, preset
from .covariance import CovarianceParams, eigenvalues, inverse_coefficients, is_positive_definite, quadratic_form
from .exceptions import (
    BCSMError,
    EmptyIntervalError,
    ImproperPosteriorError,
    LayoutError,
    NotPositiveDefiniteError,
    NumericalError,
    OracleCapError,
    SingularPosteriorError,
    UnsupportedLayoutError,
    ValidationError,
)
from .layout import NestedLayout, build_incidence, derive_sizes
from .splines import SplineSpec, ispline_basis
from .survival import BCSMSurvivalRegressor, PosteriorDraws, SurvivalData, summarize

__version__ = "0.1.0"

__all__ = [
    "BCSMError", "BCSMSurvivalRegressor", "CovarianceParams", "EmptyIntervalError",
    "ImproperPosteriorError", "LayoutError", "NestedLayout", "NotPositiveDefiniteError",
    "NumericalError", "OracleCapError", "PRESETS", "PosteriorDraws", "Priors", "RunConfig",
    "SingularPosteriorError", "SplineSpec", "SurvivalData", "UnsupportedLayoutError",
    "ValidationError", "build_incidence", "derive_sizes", "eigenvalues", "inverse_coefficients",
    "is_positive_definite", "ispline_basis", "load_config", "preset", "quadratic_form", "summarize",
]
