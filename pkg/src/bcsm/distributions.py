"""Densities and samplers for the non-standard distributions of the sampler.

Every sampler takes the random generator explicitly so that a run is fully
determined by its seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, special, stats

from .exceptions import ImproperPosteriorError, SingularPosteriorError, ValidationError, EmptyIntervalError

__all__ = [
    "ShiftedInverseGamma",
    "sample_shifted_ig",
    "TruncatedNormal",
    "sample_truncated_normal",
    "truncnorm_rvs",
    "sample_gamma",
    "sample_normal",
    "sample_mvn_diag",
    "sample_mvn_precision",
    "TAIL_SWITCH",
]

# standardized bound beyond which the exponential-proposal tail sampler is used
TAIL_SWITCH = 5.0


@dataclass(frozen=True)
class ShiftedInverseGamma:
    """Inverse gamma translated left by ``sigma``.

    If ``Y ~ InvGamma(a, b)`` then ``X = Y - sigma`` has density
    ``b^a / Gamma(a) (x + sigma)^{-(a+1)} exp(-b / (x + sigma))`` on
    ``(-sigma, inf)``.  ``a = 0`` or ``b = 0`` encodes an improper prior;
    such objects can be combined with data but not sampled.

    Parameters
    ----------
    a : float
        Shape, ``>= 0``.
    b : float
        Scale, ``>= 0``.
    sigma : float, default 0
        Shift, ``>= 0``.
    """

    a: float
    b: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.a < 0 or self.b < 0 or self.sigma < 0:
            raise ValidationError(f"invalid shifted inverse gamma ({self.a}, {self.b}, {self.sigma})")

    @property
    def proper(self):
        return self.a > 0 and self.b > 0

    def _frozen(self):
        if not self.proper:
            raise ImproperPosteriorError(
                f"shifted inverse gamma with a={self.a}, b={self.b} is improper"
            )
        return stats.invgamma(self.a, loc=-self.sigma, scale=self.b)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        y = x + self.sigma
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (
                self.a * np.log(self.b)
                - special.gammaln(self.a)
                - (self.a + 1) * np.log(y)
                - self.b / y
            )
        return np.where(y > 0, out, -np.inf)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        return self._frozen().cdf(x)

    def mean(self):
        if self.a <= 1:
            return np.inf
        return self.b / (self.a - 1) - self.sigma

    def rvs(self, rng, size=None):
        return sample_shifted_ig(self, rng, size)


def sample_shifted_ig(d, rng, size=None):
    """Draw from a :class:`ShiftedInverseGamma`.

    Raises
    ------
    ImproperPosteriorError
        If the shape or scale is not strictly positive.
    """
    if not d.proper:
        raise ImproperPosteriorError(
            f"cannot sample shifted inverse gamma with a={d.a}, b={d.b}; "
            "the data do not make the posterior proper"
        )
    return d.b / rng.gamma(d.a, 1.0, size) - d.sigma


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal distribution restricted to ``(lo, hi]``."""

    mean: float
    sd: float
    lo: float = -np.inf
    hi: float = np.inf

    def __post_init__(self):
        if not self.sd > 0:
            raise ValidationError(f"sd must be positive, got {self.sd}")
        if not self.lo < self.hi:
            raise EmptyIntervalError(f"empty truncation interval ({self.lo}, {self.hi}]")

    def cdf(self, x):
        a = (self.lo - self.mean) / self.sd
        b = (self.hi - self.mean) / self.sd
        return stats.truncnorm(a, b, loc=self.mean, scale=self.sd).cdf(x)

    def expected_value(self):
        a = (self.lo - self.mean) / self.sd
        b = (self.hi - self.mean) / self.sd
        return float(stats.truncnorm(a, b, loc=self.mean, scale=self.sd).mean())


def _upper_tail(a, b, rng):
    """Standard normal restricted to ``(a, b]`` with ``a > 0``, by rejection."""
    out = np.empty(a.shape)
    todo = np.arange(a.size)
    while todo.size:
        aa, bb = a[todo], b[todo]
        narrow = aa * (bb - aa) < 1.0
        lam = 0.5 * (aa + np.sqrt(aa * aa + 4.0))
        x_exp = aa + rng.standard_exponential(todo.size) / lam
        x_uni = aa + rng.random(todo.size) * np.where(np.isfinite(bb), bb - aa, 0.0)
        x = np.where(narrow, x_uni, x_exp)
        log_acc = np.where(narrow, 0.5 * (aa * aa - x * x), -0.5 * (x - lam) ** 2)
        ok = (np.log(rng.random(todo.size)) <= log_acc) & (x <= bb)
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def truncnorm_rvs(mean, sd, lo, hi, rng):
    """Vectorized truncated normal draws on ``(lo, hi]``.

    Inverse-CDF sampling is used when the interval reaches within
    ``TAIL_SWITCH`` standard deviations of the mean; intervals entirely in a
    farther tail use exponential-proposal rejection (uniform proposals for
    very narrow tail intervals).
    """
    mean, sd, lo, hi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mean, sd, lo, hi)))
    shape = mean.shape
    mean, sd, lo, hi = (v.ravel() for v in (mean, sd, lo, hi))
    if np.any(~(lo < hi)):
        raise EmptyIntervalError("empty truncation interval (lo >= hi)")
    if np.any(~(sd > 0)):
        raise ValidationError("sd must be positive")
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    # reflect so that intervals lying in the lower tail become upper-tail ones
    flip = b < 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    z = np.empty(a.size)
    tail = a2 > TAIL_SWITCH
    if np.any(tail):
        z[tail] = _upper_tail(a2[tail], b2[tail], rng)
    c = ~tail
    if np.any(c):
        u = rng.random(int(c.sum()))
        ac, bc = a2[c], b2[c]
        # work on the side of the distribution with better relative precision
        pa, pb = special.ndtr(-ac), special.ndtr(-bc)
        zc = -special.ndtri(pa - u * (pa - pb))
        z[c] = np.clip(zc, ac, bc)
    z = np.where(flip, -z, z)
    x = mean + sd * z
    x = np.minimum(np.maximum(x, np.nextafter(lo, np.inf)), hi)
    return x.reshape(shape)


def sample_truncated_normal(spec, rng, size=None):
    """Draw from a :class:`TruncatedNormal`; every draw lies in ``(lo, hi]``."""
    n = 1 if size is None else size
    x = truncnorm_rvs(
        np.full(n, spec.mean), np.full(n, spec.sd), np.full(n, spec.lo), np.full(n, spec.hi), rng
    )
    return float(x[0]) if size is None else x


def sample_gamma(a, b, rng, size=None):
    """Gamma draw with shape ``a`` and *rate* ``b`` (mean ``a / b``)."""
    if not (a > 0 and b > 0):
        raise ImproperPosteriorError(f"gamma parameters must be positive, got shape={a}, rate={b}")
    return rng.gamma(a, 1.0 / b, size)


def sample_normal(mean, sd, rng, size=None):
    return mean + sd * rng.standard_normal(size)


def sample_mvn_diag(mean, var, rng):
    """Independent normal draws with the given means and variances."""
    mean = np.asarray(mean, dtype=float)
    return mean + np.sqrt(np.asarray(var, dtype=float)) * rng.standard_normal(mean.shape)


def sample_mvn_precision(linear, precision, rng):
    """Draw ``N(P^{-1} r, P^{-1})`` given precision ``P`` and linear term ``r``.

    Returns
    -------
    draw, mean : ndarray

    Raises
    ------
    SingularPosteriorError
        If ``P`` is not positive definite.
    """
    precision = np.atleast_2d(np.asarray(precision, dtype=float))
    linear = np.atleast_1d(np.asarray(linear, dtype=float))
    try:
        chol = linalg.cholesky(precision, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularPosteriorError("posterior precision matrix is not positive definite") from exc
    mean = linalg.cho_solve((chol, True), linear)
    z = rng.standard_normal(mean.shape[0])
    draw = mean + linalg.solve_triangular(chol.T, z, lower=False)
    return draw, mean
