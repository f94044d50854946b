"""Monotone I-spline basis for the baseline transformation.

An I-spline of degree ``d`` is the running integral of a normalized B-spline
of order ``d``; each basis function rises from 0 to 1 across its support, so
every nonnegative combination is nondecreasing.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline

from .exceptions import ValidationError

__all__ = ["SplineSpec", "ispline_basis", "default_knots"]


def default_knots(L, R, n_knots=20):
    """Equidistant knots between the smallest positive and largest finite endpoint."""
    ends = np.concatenate([np.asarray(L, dtype=float), np.asarray(R, dtype=float)])
    ends = ends[np.isfinite(ends) & (ends > 0)]
    if ends.size == 0:
        raise ValidationError("no positive finite interval endpoints to place knots")
    lo, hi = ends.min(), ends.max()
    if not hi > lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, int(n_knots))


@dataclass(frozen=True)
class SplineSpec:
    """Knots and degree of an I-spline basis.

    Parameters
    ----------
    knots : sequence of float
        Distinct, strictly increasing knots (boundary knots included).  The
        boundary knots are repeated ``degree - 1`` times internally.
    degree : int, default 4
    """

    knots: tuple
    degree: int = 4

    def __post_init__(self):
        k = tuple(float(v) for v in np.atleast_1d(self.knots))
        object.__setattr__(self, "knots", k)
        if len(k) < 2:
            raise ValidationError("at least two distinct knots are required")
        if np.any(np.diff(k) <= 0):
            raise ValidationError("knots must be strictly increasing")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValidationError(f"degree must be a positive integer, got {self.degree}")
        object.__setattr__(self, "degree", int(self.degree))

    @classmethod
    def from_data(cls, L, R, n_knots=20, degree=4):
        return cls(tuple(default_knots(L, R, n_knots)), degree)

    @property
    def full_knots(self):
        d = self.degree
        k = np.asarray(self.knots)
        return np.concatenate([np.full(d - 1, k[0]), k, np.full(d - 1, k[-1])])

    @property
    def n_basis(self):
        """Number ``K`` of monotone basis functions (excluding the intercept)."""
        return len(self.knots) + self.degree - 2

    @cached_property
    def _integral(self):
        K = self.n_basis
        anti = BSpline(self.full_knots, np.eye(K), self.degree - 1, extrapolate=False).antiderivative()
        total = anti(self.knots[-1])
        return anti, total

    def to_dict(self):
        return {"knots": list(self.knots), "degree": self.degree}


def ispline_basis(spec, t, intercept=True):
    """Evaluate the basis ``(1, B_1(t), ..., B_K(t))``.

    Parameters
    ----------
    spec : SplineSpec
    t : array_like
        Nonnegative times; ``inf`` is allowed and evaluates to the right
        saturation value 1.
    intercept : bool, default True
        Prepend the constant column.

    Returns
    -------
    ndarray of shape (len(t), K + 1) (or ``(K,)`` columns without intercept)
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(np.isnan(t)) or np.any(t < 0):
        raise ValidationError("spline arguments must be nonnegative")
    anti, total = spec._integral
    tc = np.clip(t, spec.knots[0], spec.knots[-1])
    B = anti(tc) / total
    B = np.clip(np.nan_to_num(B, nan=0.0), 0.0, 1.0)
    # exact saturation outside each function's support
    fk = spec.full_knots
    d = spec.degree
    idx = np.arange(spec.n_basis)
    B = np.where(tc[:, None] <= fk[idx][None, :], 0.0, B)
    B = np.where(tc[:, None] >= fk[idx + d][None, :], 1.0, B)
    if intercept:
        B = np.column_stack([np.ones(t.size), B])
    return B
