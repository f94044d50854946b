"""Synthetic interval-censored nested event-time data and replication studies."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import special

from .diagnostics import hpd_interval, recovery_stats, trimmed_sd
from .exceptions import BCSMError, ValidationError
from .helmert import sample_structured_normal
from .layout import NestedLayout
from .splines import SplineSpec, ispline_basis

__all__ = ["ScenarioSpec", "SCENARIOS", "scenario", "scenario_grid", "generate", "tau1_lower", "run_study",
           "calibrate_baseline", "RECOVERY_LEVELS"]

RECOVERY_LEVELS = (0.6, 0.7, 0.8, 0.9, 0.95, 0.99)


@dataclass(frozen=True)
class ScenarioSpec:
    """Design of a simulation scenario.

    Attributes
    ----------
    n2 : int
        Number of groups.
    group_size : dict
        ``{"law": "poisson", "mean": 5, "min": 2, "max": 10}`` (truncated
        Poisson) or ``{"law": "fixed", "size": 200}``.
    n0 : int
        Event types per subject.
    tau2 : float
    tau1 : float or None
        Fixed ``tau_1``; when None it is drawn uniformly on
        ``[tau1L, tau1L + 0.5]`` with ``tau1L = -1/n0 + max(0, -max(n1) tau2)``.
    n_normal, n_bernoulli : int
        Subject-level covariates: standard normal and Bernoulli(0.5).
    beta : sequence of float, optional
        Fixed covariate effects; drawn uniformly on [-1, 1] when None.
    step, horizon : float
        Measurement grid: intervals are ``[k step, (k+1) step)`` on
        ``[0, horizon]``; later times are right censored at the horizon.
    censor_fraction : float
        Fraction of records additionally made left or right censored at
        random (half each).
    baseline : dict
        ``{"kind": "dirichlet", "low": -6, "high": 9, "n_knots": 10, "degree": 4}``
        draws a fresh baseline per replication; ``{"kind": "calibrated",
        "incidence": 0.035, "rise": 1.5, "n_knots": 10, "degree": 4}`` fixes
        a baseline whose one-year any-event incidence at ``tau = 0`` matches
        ``incidence``.
    replications : int
    seed : int
    infeasible : {"resample", "error"}
        What to do when the realized group sizes put ``tau`` outside the
        positive-definite region.
    """

    name: str = "custom"
    n2: int = 50
    group_size: dict = field(default_factory=lambda: {"law": "poisson", "mean": 5, "min": 2, "max": 10})
    n0: int = 5
    tau2: float = 0.2
    tau1: float | None = None
    n_normal: int = 3
    n_bernoulli: int = 2
    beta: tuple | None = None
    step: float = 0.1
    horizon: float = 30.0
    censor_fraction: float = 0.01
    baseline: dict = field(default_factory=lambda: {"kind": "dirichlet", "low": -6.0, "high": 9.0,
                                                    "n_knots": 10, "degree": 4})
    replications: int = 50
    seed: int = 0
    infeasible: str = "resample"

    def __post_init__(self):
        if self.n2 < 1 or self.n0 < 2:
            raise ValidationError("need n2 >= 1 groups and n0 >= 2 event types")
        law = self.group_size.get("law")
        if law not in ("poisson", "fixed"):
            raise ValidationError(f"unknown group-size law {law!r}")
        if not 0 <= self.censor_fraction <= 1:
            raise ValidationError("censor_fraction must lie in [0, 1]")
        if self.baseline.get("kind") not in ("dirichlet", "calibrated"):
            raise ValidationError(f"unknown baseline kind {self.baseline.get('kind')!r}")
        if self.infeasible not in ("resample", "error"):
            raise ValidationError("infeasible must be 'resample' or 'error'")
        if self.beta is not None:
            object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
            if len(self.beta) != self.n_normal + self.n_bernoulli:
                raise ValidationError("beta length must equal the number of covariates")

    @property
    def p(self):
        return self.n_normal + self.n_bernoulli

    def to_dict(self):
        d = asdict(self)
        d["beta"] = None if self.beta is None else list(self.beta)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        base = scenario(d.pop("preset")) if "preset" in d else cls()
        return replace(base, **d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


SCENARIOS = {
    # many groups, unbalanced group sizes (desk scale: 50 groups)
    "study1": dict(name="study1", n2=50, n0=5, tau2=0.2, tau1=None, step=0.1, horizon=30.0,
                   censor_fraction=0.01, replications=50),
    # few large groups and rare events (desk scale: 200 subjects per group)
    "study2": dict(name="study2", n2=3, group_size={"law": "fixed", "size": 200}, n0=3, tau2=0.0,
                   tau1=0.4, step=1.0, horizon=365.0, censor_fraction=0.0,
                   baseline={"kind": "calibrated", "incidence": 0.035, "rise": 1.5, "n_knots": 10,
                             "degree": 4},
                   replications=10),
}

FIT_PRESETS = {"study1": "study1", "study2": "study2"}


def scenario(name, **overrides):
    """Named scenario preset with optional field overrides."""
    try:
        return replace(ScenarioSpec(**SCENARIOS[name]), **overrides)
    except KeyError:
        raise ValidationError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


def scenario_grid(d):
    """Expand a scenario document whose ``tau2`` may be a list into one spec per value.

    ``d`` may name a ``preset``; remaining keys override its fields.
    """
    d = dict(d)
    t2 = d.pop("tau2", None)
    values = [None] if t2 is None else (list(t2) if isinstance(t2, (list, tuple)) else [t2])
    specs = []
    for v in values:
        dd = dict(d) if v is None else {**d, "tau2": float(v)}
        try:
            specs.append(ScenarioSpec.from_dict(dd))
        except TypeError as exc:
            raise ValidationError(f"invalid scenario: {exc}") from None
    return specs


def tau1_lower(n0, n1_max, tau2):
    """Lower end of the ``tau_1`` sampling interval that keeps ``Sigma`` positive definite."""
    return -1.0 / n0 + max(0.0, -n1_max * tau2)


def _group_sizes(spec, rng):
    gs = spec.group_size
    if gs["law"] == "fixed":
        return np.full(spec.n2, int(gs["size"]))
    lo, hi = int(gs.get("min", 1)), int(gs.get("max", 10**9))
    out = np.empty(spec.n2, dtype=int)
    for i in range(spec.n2):
        while True:
            k = rng.poisson(gs["mean"])
            if lo <= k <= hi:
                out[i] = k
                break
    return out


def _baseline_spec(spec):
    b = spec.baseline
    knots = np.linspace(0.0, spec.horizon, int(b.get("n_knots", 10)))
    return SplineSpec(tuple(knots), int(b.get("degree", 4)))


def _calibrated_gamma(spec, offset):
    b = spec.baseline
    bspec = _baseline_spec(spec)
    K = bspec.n_basis
    w = np.exp(-np.arange(K) / 5.0)
    w = b.get("rise", 1.5) * w / w.sum()
    return bspec, np.concatenate([[offset], w])


def calibrate_baseline(spec):
    """Intercept of the calibrated baseline.

    Chooses ``h(0)`` so that the marginal incidence curve at ``tau = 0`` and
    covariates 0, ``Phi(h(t))``, equals ``baseline["incidence"]`` at the
    horizon.  This is the univariate incidence shared by every event type.
    """
    bspec, g0 = _calibrated_gamma(spec, 0.0)
    h_end = float((ispline_basis(bspec, [spec.horizon]) @ g0)[0])
    return float(special.ndtri(spec.baseline["incidence"])) - h_end


def _invert_baseline(bspec, gamma, target, t_max, tol):
    """Smallest ``t`` in ``[0, t_max]`` with ``h(t) >= target`` by vectorized bisection."""
    lo = np.zeros(target.size)
    hi = np.full(target.size, float(t_max))
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        up = ispline_basis(bspec, mid) @ gamma >= target
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    return 0.5 * (lo + hi)


def generate(spec, rng, calibrated_offset=None):
    """Simulate one data set.

    Returns
    -------
    data : pandas.DataFrame
        Records in the CSV schema ``group_id, subject_id, event_type, left,
        right, x1..xp``.
    truth : dict
        ``beta``, ``tau1``, ``tau2``, group sizes and the true baseline.
    """
    n0 = spec.n0
    for attempt in range(1000):
        sizes = _group_sizes(spec, rng)
        if spec.tau1 is None:
            low = tau1_lower(n0, sizes.max(), spec.tau2)
            tau1 = float(rng.uniform(low, low + 0.5))
        else:
            tau1 = float(spec.tau1)
        v1 = 1.0 + n0 * tau1
        ok = v1 > 0 and v1 + n0 * sizes.max() * spec.tau2 > 0 and v1 + n0 * sizes.min() * spec.tau2 > 0
        if ok:
            break
        if spec.infeasible == "error":
            raise ValidationError(
                f"tau = (1, {tau1}, {spec.tau2}) violates the positive-definiteness bound "
                f"tau2 > -(1 + n0 tau1)/(n0 max n1) = {-v1 / (n0 * sizes.max()):.6g}"
            )
    else:
        raise ValidationError("could not draw a feasible design for this tau grid point")
    tau = np.array([1.0, tau1, spec.tau2])
    p = spec.p
    beta = np.asarray(spec.beta, dtype=float) if spec.beta is not None else rng.uniform(-1, 1, p)
    n_subj = int(sizes.sum())
    Xs = np.column_stack([rng.standard_normal((n_subj, spec.n_normal)),
                          rng.binomial(1, 0.5, (n_subj, spec.n_bernoulli)).astype(float)])
    X = np.repeat(Xs, n0, axis=0)
    E = np.concatenate([
        sample_structured_normal(NestedLayout((n0, int(n1)), require_identifiable=False), tau, rng)
        for n1 in sizes
    ])
    b = spec.baseline
    if b["kind"] == "dirichlet":
        bspec = _baseline_spec(spec)
        w = rng.dirichlet(np.ones(bspec.n_basis))
        gamma = np.concatenate([[b["low"]], (b["high"] - b["low"]) * w])
    else:
        offset = calibrate_baseline(spec) if calibrated_offset is None else calibrated_offset
        bspec, gamma = _calibrated_gamma(spec, offset)
    target = -X @ beta + E  # h(T)
    h_lo = float((ispline_basis(bspec, [0.0]) @ gamma)[0])
    h_hi = float((ispline_basis(bspec, [spec.horizon]) @ gamma)[0])
    T = _invert_baseline(bspec, gamma, np.clip(target, h_lo, h_hi), spec.horizon, 1e-9 * spec.step)
    T = np.where(target <= h_lo, 0.0, T)
    after = target > h_hi
    k = np.floor(T / spec.step)
    left = k * spec.step
    right = (k + 1) * spec.step
    left = np.where(after, spec.horizon, left)
    right = np.where(after, np.inf, right)
    # events at or beyond the horizon grid point are right censored there
    beyond = (~after) & (right > spec.horizon + 1e-12)
    left = np.where(beyond, np.minimum(left, spec.horizon), left)
    right = np.where(beyond, np.inf, right)
    left = np.where(left < spec.step * 1e-9, 0.0, left)
    n = left.size
    if spec.censor_fraction > 0:
        pick = rng.random(n) < spec.censor_fraction
        to_left = pick & (rng.random(n) < 0.5) & np.isfinite(right)
        to_right = pick & ~to_left & (left > 0)
        left = np.where(to_left, 0.0, left)
        right = np.where(to_right, np.inf, right)
    groups = np.repeat(np.arange(spec.n2), sizes * n0)
    subjects = np.repeat(np.arange(n_subj), n0)
    events = np.tile(np.arange(1, n0 + 1), n_subj)
    df = pd.DataFrame({"group_id": groups, "subject_id": subjects, "event_type": events,
                       "left": left, "right": right})
    for c in range(p):
        df[f"x{c + 1}"] = X[:, c]
    truth = {
        "beta": beta.tolist(), "tau1": tau1, "tau2": float(spec.tau2), "group_sizes": sizes.tolist(),
        "baseline_knots": list(bspec.knots), "baseline_degree": bspec.degree,
        "baseline_gamma": gamma.tolist(), "event_time": T.tolist(),
    }
    return df, truth


def _replication_summary(est, levels):
    d = est.draws_
    out = {}
    for j, name in enumerate(d.names):
        if name.startswith("gamma_") or name == "eta":
            continue
        x = d.merged()[:, j]
        out[name] = {"median": float(np.median(x)), "sd": trimmed_sd(x),
                     "hpd": {lev: hpd_interval(x, lev) for lev in levels}}
    return out


def _one_replication(spec, r, fit_params, levels, offset):
    from .survival import BCSMSurvivalRegressor

    seq = np.random.SeedSequence([spec.seed, r])
    data_seed, fit_seed = seq.spawn(2)
    rng = np.random.default_rng(data_seed)
    df, truth = generate(spec, rng, offset)
    t0 = time.perf_counter()
    try:
        est = BCSMSurvivalRegressor(**fit_params, random_state=int(fit_seed.generate_state(1)[0]))
        est.fit(df)
        summ = _replication_summary(est, levels)
        d = est.draws_
        extra = {"p_tau2_positive": float(np.mean(d["tau2"] > 0)), "n_draws": d.n_draws,
                 "converged": bool(all(est.converged_)), "violations": est.violations_,
                 "init_method": est.init_method_}
        err = None
    except BCSMError as exc:
        summ, extra, err = None, {}, f"{type(exc).__name__}: {exc}"
    t_true = {f"beta_x{c + 1}": b for c, b in enumerate(truth["beta"])}
    t_true.update(tau1=truth["tau1"], tau2=truth["tau2"])
    return {"replication": r, "truth": t_true, "summary": summ, "error": err,
            "seconds": time.perf_counter() - t0, **extra}


def run_study(spec, fit_params=None, n_jobs=1, levels=RECOVERY_LEVELS, replications=None):
    """Fit every replication of a scenario and aggregate recovery statistics.

    Parameters
    ----------
    spec : ScenarioSpec
    fit_params : dict, optional
        Keyword arguments of :class:`~bcsm.survival.BCSMSurvivalRegressor`.
    n_jobs : int
        Parallel replications.
    replications : int, optional
        Overrides ``spec.replications``.

    Returns
    -------
    dict
        ``replications`` (per-replication records, failed fits carry an
        ``error`` message), ``table`` (recovery statistics per parameter,
        see :func:`~bcsm.diagnostics.recovery_stats`) and ``beta_table``
        (the same averaged over the covariate effects).
    """
    fit_params = dict(fit_params or {})
    n_rep = spec.replications if replications is None else int(replications)
    offset = calibrate_baseline(spec) if spec.baseline["kind"] == "calibrated" else None
    reps = Parallel(n_jobs=n_jobs)(
        delayed(_one_replication)(spec, r, fit_params, levels, offset) for r in range(n_rep)
    ) if n_jobs != 1 else [_one_replication(spec, r, fit_params, levels, offset) for r in range(n_rep)]
    ok = [r for r in reps if r["summary"] is not None]
    out = {"scenario": spec.to_dict(), "replications": reps, "n_failed": len(reps) - len(ok)}
    if ok:
        table = recovery_stats([r["summary"] for r in ok], [r["truth"] for r in ok], levels)
        out["table"] = table
        beta_rows = table.loc[[i for i in table.index if i.startswith("beta_")]]
        rest = table.loc[[i for i in table.index if not i.startswith("beta_")]]
        if len(beta_rows):
            beta_mean = beta_rows.mean(axis=0).to_frame("beta").T
            out["beta_table"] = pd.concat([beta_mean, rest])
    return out
