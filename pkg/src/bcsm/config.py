"""Prior hyperparameters, run configuration and named presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .exceptions import ValidationError
from .layout import NestedLayout

__all__ = ["Priors", "RunConfig", "PRESETS", "preset", "load_config"]


@dataclass(frozen=True)
class Priors:
    """Hyperparameters of the survival model.

    Zero values encode improper priors: a flat prior for ``beta`` when
    ``Lambda0 = 0`` and for ``gamma_1`` when ``v0 = 0``, ``p(eta) ~ 1/eta``
    when ``alpha_eta = beta_eta = 0``, and ``p(y) ~ 1/y`` for the shifted
    covariance parameters when their shape and scale are zero.

    Attributes
    ----------
    beta0 : float or sequence
        Prior mean of the covariate effects.
    Lambda0 : float or sequence
        Prior precision of the covariate effects; a scalar or a vector is
        taken as a diagonal matrix.
    m0, v0 : float
        Prior mean and precision of the spline intercept.
    alpha_eta, beta_eta : float
        Gamma (shape, rate) prior of the spline shrinkage rate.
    alpha_tau1, beta_tau1, alpha_tau2, beta_tau2 : float
        Shifted inverse gamma (shape, scale) priors of the covariance
        parameters.
    """

    beta0: float | tuple = 0.0
    Lambda0: float | tuple = 0.0
    m0: float = 0.0
    v0: float = 0.0
    alpha_eta: float = 0.0
    beta_eta: float = 0.0
    alpha_tau1: float = 0.0
    beta_tau1: float = 0.0
    alpha_tau2: float = 0.0
    beta_tau2: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, (list, np.ndarray)):
                object.__setattr__(self, f.name, tuple(float(v) for v in val))
                val = getattr(self, f.name)
            arr = np.atleast_1d(np.asarray(val, dtype=float))
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"prior hyperparameter {f.name} must be finite")
            if f.name not in ("beta0", "m0") and np.any(arr < 0):
                raise ValidationError(f"prior hyperparameter {f.name} must be >= 0, got {val}")

    def beta_prior(self, p):
        """Prior mean vector and precision matrix for ``p`` covariates."""
        b0 = np.broadcast_to(np.asarray(self.beta0, dtype=float), (p,)).copy()
        lam = np.asarray(self.Lambda0, dtype=float)
        if lam.ndim == 2:
            if lam.shape != (p, p):
                raise ValidationError(f"Lambda0 has shape {lam.shape}, expected ({p}, {p})")
            L0 = lam.copy()
        else:
            L0 = np.diag(np.broadcast_to(lam, (p,)).astype(float))
        return b0, L0

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a survival fit.

    Attributes
    ----------
    layout : dict or None
        Serialized :class:`NestedLayout`; inferred from the data when None.
    degree, n_knots : int
        I-spline degree and number of distinct knots (equidistant between
        the smallest positive and the largest finite interval endpoint).
    knots : sequence of float, optional
        Explicit distinct knots; overrides ``n_knots``.
    priors : Priors
    burn_in, min_draws, max_draws : int
        Burn-in sweeps, minimum and maximum retained draws.
    target_ess : float
        Sampling continues until every non-spline parameter reaches this
        effective sample size (or ``max_draws`` is hit).
    check_every : int
        Interval (in draws) between stopping-rule checks.
    geweke_window : int or None
        When set, the burn-in is extended in blocks of this size until all
        Geweke z-scores of the non-spline parameters are below 3 in absolute
        value (at most ``max_burn_in`` sweeps).
    chains : int
    seed : int
    incidence_scale : {"sd", "variance"}
        Denominator of the marginal incidence curve: ``sqrt(1+tau1+tau2)``
        (``"sd"``) or the literal ``1+tau1+tau2`` (``"variance"``).
    exclude_after_death : bool
        Treat records flagged ``excluded`` as missing.
    tau1_update : {"augmented", "marginal"}
        Full conditional of ``tau_1`` (see
        :class:`~bcsm.survival.BCSMSurvivalRegressor`).
    oracle_cap : int
        Largest dimension the dense test oracle will materialize.
    check_invariants : bool
    """

    layout: dict | None = None
    degree: int = 4
    n_knots: int = 20
    knots: tuple | None = None
    priors: Priors = field(default_factory=Priors)
    burn_in: int = 3000
    min_draws: int = 6000
    max_draws: int = 60000
    target_ess: float = 100.0
    check_every: int = 1000
    geweke_window: int | None = None
    max_burn_in: int = 20000
    chains: int = 1
    seed: int = 0
    incidence_scale: str = "sd"
    exclude_after_death: bool = False
    tau1_update: str = "augmented"
    oracle_cap: int = 512
    check_invariants: bool = False

    def __post_init__(self):
        if isinstance(self.priors, dict):
            object.__setattr__(self, "priors", Priors(**self.priors))
        if self.knots is not None:
            object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
        for name in ("degree", "n_knots", "burn_in", "min_draws", "max_draws", "check_every",
                     "chains", "oracle_cap"):
            val = getattr(self, name)
            low = 0 if name == "burn_in" else 1
            if int(val) != val or val < low:
                raise ValidationError(f"{name} must be an integer >= {low}, got {val}")
        if self.max_draws < self.min_draws:
            raise ValidationError("max_draws must be >= min_draws")
        if self.target_ess < 0:
            raise ValidationError("target_ess must be >= 0")
        if self.incidence_scale not in ("sd", "variance"):
            raise ValidationError(f"incidence_scale must be 'sd' or 'variance', got {self.incidence_scale!r}")
        if self.tau1_update not in ("marginal", "augmented"):
            raise ValidationError(f"tau1_update must be 'marginal' or 'augmented', got {self.tau1_update!r}")
        if self.layout is not None:
            NestedLayout.from_dict(self.layout)

    def to_dict(self):
        out = asdict(self)
        out["priors"] = self.priors.to_dict()
        out["knots"] = None if self.knots is None else list(self.knots)
        return out

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"preset"}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        base = preset(d["preset"]) if "preset" in d else cls()
        kwargs = {k: v for k, v in d.items() if k != "preset"}
        if "priors" in kwargs:
            pri = dict(base.priors.to_dict())
            pri.update(kwargs["priors"])
            kwargs["priors"] = Priors(**pri)
        return replace(base, **kwargs)

    def with_updates(self, **kwargs):
        return replace(self, **kwargs)


PRESETS = {
    # improper priors everywhere
    "study1": dict(),
    "study2": dict(priors=Priors(alpha_tau2=0.001, beta_tau2=0.001)),
    "bioresort": dict(
        priors=Priors(alpha_tau2=0.001, beta_tau2=0.001),
        target_ess=600.0,
        geweke_window=500,
        max_draws=200000,
    ),
}


def preset(name):
    """Return the :class:`RunConfig` of a named preset."""
    try:
        return RunConfig(**PRESETS[name])
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_config(path):
    """Read a JSON run configuration (optionally naming a ``preset``)."""
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(d)
