"""Linear transformation model for interval-censored nested event times.

Every subject ``j`` of group ``i`` contributes ``n0`` event times ``T_ijk``
observed only through an interval ``[L, R)``.  The model is
``h(T_ijk) = -x_ijk' beta + E_ijk`` with a monotone I-spline baseline ``h``
and a two-way nested covariance for the errors ``E_i``: ``tau_1`` is shared by
the events of one subject and ``tau_2`` by all events of one group; the
observation-level variance is fixed at 1.

Inference augments each interval with a latent score
``Z_ijk ~ N(h(s_ijk) + x_ijk' beta, Sigma_i)`` restricted to an interval
``Omega_ijk`` (see :func:`omega_bounds`).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import optimize, sparse, special
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from .config import Priors
from .diagnostics import effective_sample_size, geweke, trace_stats
from .exceptions import EmptyIntervalError, LayoutError, ValidationError
from .gibbs import (
    ChainState,
    DesignGrams,
    augment_group_mean,
    sample_eta,
    sample_gamma_coeffs,
    sample_latent_sweep,
    sample_mvn_precision,
    two_way_tau_step,
)
from .layout import NestedLayout
from .splines import SplineSpec, default_knots, ispline_basis

__all__ = [
    "IntervalRecord",
    "SurvivalData",
    "omega_bounds",
    "initialize_ml",
    "BCSMSurvivalRegressor",
    "PosteriorDraws",
    "summarize",
    "incidence_curve",
]

INTERIOR, LEFT, RIGHT, FREE = 0, 1, 2, 3


@dataclass(frozen=True)
class IntervalRecord:
    """One observed event interval.

    ``left = 0`` encodes left censoring and ``right = inf`` right censoring.
    ``excluded`` records (for instance events after death) are treated as
    missing.
    """

    group_id: object
    subject_id: object
    event_type: int
    left: float
    right: float
    x: tuple = ()
    excluded: bool = False

    def __post_init__(self):
        if not self.left >= 0:
            raise ValidationError(f"left endpoint must be >= 0, got {self.left}")
        if not self.right > self.left:
            raise ValidationError(f"interval [{self.left}, {self.right}) is empty")

    @property
    def kind(self):
        if self.excluded:
            return FREE
        if self.left == 0:
            return FREE if np.isinf(self.right) else LEFT
        return RIGHT if np.isinf(self.right) else INTERIOR

    @property
    def s(self):
        """Time at which the baseline enters the latent mean."""
        if self.left > 0:
            return self.left
        return self.right if np.isfinite(self.right) else 0.0


def omega_bounds(record, gamma, spec):
    """Latent support ``(lo, hi]`` of one record.

    ``(h(L) - h(R), 0]`` for an interior interval, ``(0, inf)`` when
    ``L = 0`` and ``(-inf, 0]`` when ``R = inf``; unrestricted for excluded
    records or when both endpoints are censored.
    """
    kind = record.kind
    if kind == LEFT:
        return 0.0, np.inf
    if kind == RIGHT:
        return -np.inf, 0.0
    if kind == FREE:
        return -np.inf, np.inf
    B = ispline_basis(spec, [record.left, record.right])
    return float((B[0] - B[1]) @ np.asarray(gamma, dtype=float)), 0.0


# ---------------------------------------------------------------------------
# data handling
# ---------------------------------------------------------------------------


@dataclass
class SurvivalData:
    """Records sorted by group, subject and event type.

    Attributes
    ----------
    left, right : ndarray
    X : ndarray of shape (n_records, p)
    excluded : ndarray of bool
    n_sub : ndarray of int
        Subjects per group.
    n0 : int
        Event types per subject.
    order : ndarray of int
        ``order[r]`` is the input row of sorted record ``r``.
    """

    left: np.ndarray
    right: np.ndarray
    X: np.ndarray
    excluded: np.ndarray
    n_sub: np.ndarray
    n0: int
    order: np.ndarray
    group_labels: np.ndarray
    subject_labels: np.ndarray
    feature_names: list = field(default_factory=list)

    @property
    def layout(self):
        return NestedLayout.top_unbalanced((self.n0,), tuple(int(v) for v in self.n_sub))

    @property
    def n_records(self):
        return self.left.size

    @property
    def kinds(self):
        k = np.full(self.n_records, INTERIOR)
        k[(self.left == 0)] = LEFT
        k[np.isinf(self.right)] = RIGHT
        k[(self.left == 0) & np.isinf(self.right)] = FREE
        k[self.excluded] = FREE
        return k

    @property
    def s(self):
        return np.where(self.left > 0, self.left, np.where(np.isfinite(self.right), self.right, 0.0))

    @classmethod
    def from_arrays(cls, groups, subjects, events, left, right, X, excluded=None, feature_names=None,
                    exclude_after_death=True):
        """Validate and sort record arrays.

        Raises
        ------
        ValidationError
            With the offending input row for malformed intervals, missing
            covariates or incomplete subjects.
        """
        left = np.asarray(left, dtype=float)
        right = np.asarray(right, dtype=float)
        n = left.size
        X = np.asarray(X, dtype=float).reshape(n, -1)
        for name, arr in (("group_id", groups), ("subject_id", subjects), ("event_type", events)):
            if len(arr) != n:
                raise ValidationError(f"{name} has {len(arr)} entries, expected {n}")
        bad = np.flatnonzero(~(left >= 0) | np.isnan(left))
        if bad.size:
            raise ValidationError("left endpoint must be a number >= 0", row=int(bad[0]), column="left")
        bad = np.flatnonzero(~(right > left))
        if bad.size:
            raise EmptyIntervalError("interval has right <= left", row=int(bad[0]), column="right")
        bad = np.argwhere(~np.isfinite(X))
        if bad.size:
            col = feature_names[bad[0, 1]] if feature_names else f"x{bad[0, 1] + 1}"
            raise ValidationError("covariates must be finite", row=int(bad[0, 0]), column=col)
        excl = np.zeros(n, bool) if excluded is None else np.asarray(excluded, dtype=bool)
        if not exclude_after_death:
            excl = np.zeros(n, bool)
        events = np.asarray(events)
        try:
            ev = events.astype(np.int64)
        except (TypeError, ValueError):
            raise ValidationError("event_type must be an integer", column="event_type") from None
        g_codes, g_labels = pd.factorize(pd.Series(groups), sort=True)
        subj_key = pd.Series(list(zip(g_codes, subjects)))
        s_codes, s_labels = pd.factorize(subj_key, sort=False)
        types = np.unique(ev)
        n0 = types.size
        if not np.array_equal(types, np.arange(1, n0 + 1)):
            raise ValidationError(f"event types must be 1..n0, got {types.tolist()}", column="event_type")
        # each subject must hold every event type exactly once
        counts = np.zeros((s_labels.size, n0), dtype=np.int64)
        np.add.at(counts, (s_codes, ev - 1), 1)
        bad = np.flatnonzero(np.any(counts != 1, axis=1))
        if bad.size:
            row = int(np.flatnonzero(s_codes == bad[0])[0])
            raise ValidationError(
                f"subject must have exactly one record of each of the {n0} event types",
                row=row, column="event_type",
            )
        subj_group = np.zeros(s_labels.size, dtype=np.int64)
        subj_group[s_codes] = g_codes
        subj_order = np.lexsort((np.arange(s_labels.size), subj_group))
        subj_rank = np.empty_like(subj_order)
        subj_rank[subj_order] = np.arange(subj_order.size)
        order = np.lexsort((ev, subj_rank[s_codes]))
        n_sub = np.bincount(subj_group, minlength=g_labels.size)
        try:
            NestedLayout.top_unbalanced((n0,), tuple(int(v) for v in n_sub))
        except LayoutError as exc:
            raise LayoutError(f"design is not identifiable: {exc}") from None
        return cls(
            left[order], right[order], X[order], excl[order], n_sub, n0, order,
            np.asarray(g_labels), np.asarray([s_labels[i][1] for i in subj_order], dtype=object),
            list(feature_names) if feature_names is not None else [f"x{i + 1}" for i in range(X.shape[1])],
        )

    @classmethod
    def from_frame(cls, df, exclude_after_death=True):
        """Build from a frame with columns ``group_id, subject_id, event_type, left, right, x1..xp``.

        An optional boolean ``excluded`` column flags records to treat as missing.
        """
        required = ["group_id", "subject_id", "event_type", "left", "right"]
        missing = [c for c in required if c not in df.columns]
        if missing:
            raise ValidationError(f"missing columns: {missing}", column=missing[0])
        feats = [c for c in df.columns if c not in required + ["excluded"]]
        excl = df["excluded"].astype(bool).to_numpy() if "excluded" in df.columns else None
        return cls.from_arrays(
            df["group_id"].to_numpy(), df["subject_id"].to_numpy(), df["event_type"].to_numpy(),
            df["left"].to_numpy(dtype=float), df["right"].to_numpy(dtype=float),
            df[feats].to_numpy(dtype=float) if feats else np.zeros((len(df), 0)),
            excl, feats, exclude_after_death,
        )


class _Problem:
    """Precomputed design quantities shared by all chains of one fit."""

    def __init__(self, data, spec):
        self.data = data
        self.spec = spec
        self.n0 = data.n0
        self.n_sub = data.n_sub.astype(np.int64)
        self.nbar1 = int(self.n_sub.max())
        kinds = data.kinds
        self.kinds = kinds
        keep = (kinds != FREE)[:, None]
        self.X = np.where(keep, data.X, 0.0)
        self.p = self.X.shape[1]
        self.B = np.where(keep, ispline_basis(spec, data.s), 0.0)
        self.K = spec.n_basis
        self.A = np.hstack([self.X, self.B])
        self.interior = np.flatnonzero(kinds == INTERIOR)
        BL = ispline_basis(spec, data.left[self.interior], intercept=False)
        BR = ispline_basis(spec, data.right[self.interior], intercept=False)
        dB = BR - BL
        dB[dB < 0] = 0.0
        empty = np.flatnonzero(dB.sum(axis=1) <= 0)
        if empty.size:
            row = int(data.order[self.interior[empty[0]]])
            raise EmptyIntervalError(
                "interval lies where the baseline is flat; no latent value is admissible "
                "(place knots inside the observed time range)", row=row,
            )
        self.dB = sparse.csc_matrix(dB)
        self.dB.eliminate_zeros()
        self.lo0 = np.where(kinds == LEFT, 0.0, -np.inf)
        self.hi0 = np.where((kinds == INTERIOR) | (kinds == RIGHT), 0.0, np.inf)
        self.grams = DesignGrams(self.A, self.n_sub, self.n0)
        self.subj_group = np.repeat(np.arange(self.n_sub.size), self.n_sub)
        self.partial = np.flatnonzero(self.n_sub < self.nbar1)
        grid_hi = spec.knots[-1]
        self.check_grid = ispline_basis(spec, np.linspace(0.0, grid_hi * 1.05, 200))

    def bounds(self, gamma):
        total = self.dB @ gamma[1:]
        lo = self.lo0.copy()
        lo[self.interior] = -total
        return lo, self.hi0, total

    def mean(self, beta, gamma):
        return self.A @ np.concatenate([beta, gamma])


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def _log_interval_prob(a, b):
    """``log(Phi(b) - Phi(a))`` for ``a < b``, stable in both tails."""
    flip = a > 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    la = special.log_ndtr(a2)
    lb = special.log_ndtr(b2)
    with np.errstate(divide="ignore"):
        return lb + np.log(-np.expm1(la - lb))


def _fallback(K, p):
    gamma = np.concatenate([[-2.0], np.full(K, 4.0 / K)])
    return np.zeros(p), gamma


def initialize_ml(data, spec, return_info=False):
    """Starting values maximizing the independence (zero covariance) likelihood.

    The interval probabilities ``Phi(-h(L) - x'beta) - Phi(-h(R) - x'beta)``
    are maximized with L-BFGS-B over ``(beta, gamma_1, log gamma_{2:})``
    starting from the fallback point ``beta = 0``, ``gamma_1 = -2``,
    ``gamma_l = 4/K`` (a baseline rising from -2 to 2 over the knot range).
    The fallback is returned when the data contain no events or the
    optimizer fails.

    Returns
    -------
    beta, gamma : ndarray
    method : str
        ``"ml"`` or ``"fallback"`` (only when ``return_info``).
    """
    kinds = data.kinds
    use = kinds != FREE
    p = data.X.shape[1]
    K = spec.n_basis
    beta0, gamma0 = _fallback(K, p)
    events = np.any((kinds == INTERIOR) | (kinds == LEFT))
    if not events:
        return (beta0, gamma0, "fallback") if return_info else (beta0, gamma0)
    L, R, X = data.left[use], data.right[use], data.X[use]
    BL = np.where((L > 0)[:, None], ispline_basis(spec, L), 0.0)
    BR = np.where(np.isfinite(R)[:, None], ispline_basis(spec, np.where(np.isfinite(R), R, 0.0)), 0.0)
    # infinite endpoints become infinite limits through masks on a and b
    finL = (L > 0)[:, None]
    finR = np.isfinite(R)[:, None]
    XL, XR = np.where(finL, X, 0.0), np.where(finR, X, 0.0)

    def fun(theta):
        beta = theta[:p]
        g = np.concatenate([theta[p : p + 1], np.exp(theta[p + 1 :])])
        a = np.where(finR[:, 0], -(BR @ g + XR @ beta), -np.inf)
        b = np.where(finL[:, 0], -(BL @ g + XL @ beta), np.inf)
        logp = _log_interval_prob(a, b)
        if not np.all(np.isfinite(logp)):
            return np.inf, np.zeros_like(theta)
        lphi_a = np.where(np.isfinite(a), -0.5 * a**2, -np.inf)
        lphi_b = np.where(np.isfinite(b), -0.5 * b**2, -np.inf)
        ra = np.exp(lphi_a - 0.5 * np.log(2 * np.pi) - logp)
        rb = np.exp(lphi_b - 0.5 * np.log(2 * np.pi) - logp)
        grad_beta = XR.T @ ra - XL.T @ rb
        grad_g = BR.T @ ra - BL.T @ rb
        grad = np.concatenate([grad_beta, grad_g[:1], grad_g[1:] * g[1:]])
        return -float(np.sum(logp)), -grad

    theta0 = np.concatenate([beta0, gamma0[:1], np.log(gamma0[1:])])
    bounds = [(None, None)] * (p + 1) + [(-15.0, 6.0)] * K
    try:
        res = optimize.minimize(fun, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": 2000})
        ok = np.all(np.isfinite(res.x)) and np.isfinite(res.fun) and res.fun <= fun(theta0)[0]
    except (ValueError, FloatingPointError, np.linalg.LinAlgError):
        ok = False
    if not ok:
        return (beta0, gamma0, "fallback") if return_info else (beta0, gamma0)
    beta = res.x[:p]
    gamma = np.concatenate([res.x[p : p + 1], np.exp(res.x[p + 1 :])])
    return (beta, gamma, "ml") if return_info else (beta, gamma)


# ---------------------------------------------------------------------------
# the sampler
# ---------------------------------------------------------------------------


@dataclass
class ChainResult:
    draws: np.ndarray
    n_burn: int
    converged: bool
    violations: dict
    state: ChainState


def _param_names(feature_names, K):
    return ([f"beta_{n}" for n in feature_names] + [f"gamma_{l + 1}" for l in range(K + 1)]
            + ["eta", "tau1", "tau2"])


class _Chain:
    """One Gibbs chain for the two-way survival model."""

    def __init__(self, prob, priors, tau1_update, seed_seq, beta, gamma, check_invariants=False):
        self.prob = prob
        self.priors = priors
        self.tau1_update = tau1_update
        self.rng = np.random.default_rng(seed_seq)
        self.check = check_invariants
        self.violations = {"Z_outside_omega": 0, "tau_not_pd": 0, "gamma_negative": 0,
                           "baseline_decreasing": 0}
        self.b0, self.L0 = priors.beta_prior(prob.p)
        self.state = self._init_state(np.asarray(beta, float).copy(), np.asarray(gamma, float).copy())

    def _init_state(self, beta, gamma):
        prob = self.prob
        mu = prob.mean(beta, gamma)
        lo, hi, _ = prob.bounds(gamma)
        s = int(self.rng.integers(2**31))
        Z = _kernels.truncnorm_array(s, mu, np.ones_like(mu), lo, hi)
        state = ChainState(Z, beta, gamma, 1.0, np.array([1.0, 0.0, 0.0]),
                           np.full(prob.n_sub.size, np.nan), 0)
        if prob.partial.size:
            vbar = self._group_means(Z - mu)[1]
            u, _ = augment_group_mean(vbar[prob.partial], prob.n_sub[prob.partial], prob.nbar1,
                                      prob.n0, 0.0, 0.0, self.rng)
            state.u_bar[prob.partial] = u
        return state

    def _group_means(self, V):
        prob = self.prob
        subj_mean = V.reshape(-1, prob.n0).mean(axis=1)
        grp_mean = np.bincount(prob.subj_group, weights=subj_mean) / prob.n_sub
        return subj_mean, grp_mean

    def sweep(self):
        prob, st, pri, rng = self.prob, self.state, self.priors, self.rng
        p = prob.p
        tau1, tau2 = st.tau[1], st.tau[2]
        # latent scores
        mu = prob.mean(st.beta, st.gamma)
        lo, hi, total = prob.bounds(st.gamma)
        sample_latent_sweep(st.Z, mu, lo, hi, prob.n_sub, prob.n0, tau1, tau2, rng)
        # covariate effects
        M = prob.grams.precision(tau1, tau2)
        w = prob.grams.project(st.Z - mu, tau1, tau2)
        if p:
            Mxx = M[:p, :p]
            lin = self.L0 @ self.b0 + w[:p] + Mxx @ st.beta
            new_beta = sample_mvn_precision(lin, self.L0 + Mxx, rng)[0]
            w -= M[:, :p] @ (new_beta - st.beta)
            st.beta = new_beta
        # spline coefficients and their shrinkage rate
        sample_gamma_coeffs(M, w, st.gamma, st.eta, p, prob.dB, st.Z[prob.interior], total,
                            pri.m0, pri.v0, rng)
        st.eta = sample_eta(st.gamma, pri.alpha_eta, pri.beta_eta, rng)
        # covariance parameters
        V = st.Z - prob.mean(st.beta, st.gamma)
        tau1, tau2 = two_way_tau_step(V, prob.n_sub, prob.n0, tau1, tau2, st.u_bar, pri.alpha_tau1,
                                      pri.beta_tau1, pri.alpha_tau2, pri.beta_tau2, rng, self.tau1_update)
        st.tau = np.array([1.0, tau1, tau2])
        st.sweep += 1
        if self.check:
            self._check(lo, hi)

    def _check(self, lo_old, hi):
        prob, st = self.prob, self.state
        lo, hi, _ = prob.bounds(st.gamma)
        Z = st.Z
        tol = 1e-10 * (1.0 + np.abs(Z))
        self.violations["Z_outside_omega"] += int(np.sum(~((Z > lo - tol) & (Z <= hi + tol))))
        tau1, tau2 = st.tau[1], st.tau[2]
        v1 = 1.0 + prob.n0 * tau1
        v2 = v1 + prob.n0 * prob.n_sub * tau2
        self.violations["tau_not_pd"] += int(not (v1 > 0 and np.all(v2 > 0)))
        self.violations["gamma_negative"] += int(np.any(st.gamma[1:] < 0))
        h = prob.check_grid @ st.gamma
        self.violations["baseline_decreasing"] += int(np.any(np.diff(h) < -1e-12 * (1 + np.abs(h[1:]))))

    def row(self):
        st = self.state
        return np.concatenate([st.beta, st.gamma, [st.eta, st.tau[1], st.tau[2]]])


def _monitored(p, K):
    """Column indices of the non-spline parameters (beta, tau1, tau2)."""
    return list(range(p)) + [p + K + 2, p + K + 3]


def _run_chain(prob, priors, cfg, seed_seq, beta, gamma):
    chain = _Chain(prob, priors, cfg["tau1_update"], seed_seq, beta, gamma, cfg["check_invariants"])
    p, K = prob.p, prob.K
    mon = _monitored(p, K)
    n_burn = 0
    window = cfg.get("geweke_window")
    burn_buf = []
    for _ in range(cfg["burn_in"]):
        chain.sweep()
        n_burn += 1
        if window:
            burn_buf.append(chain.row()[mon])
            if len(burn_buf) > window:
                burn_buf.pop(0)
    if window:
        while n_burn < cfg["max_burn_in"]:
            if len(burn_buf) >= window:
                buf = np.array(burn_buf)
                zs = [geweke(buf[:, j]) for j in range(buf.shape[1])]
                if np.all(np.abs(zs) < 3):
                    break
            for _ in range(window):
                chain.sweep()
                n_burn += 1
                burn_buf.append(chain.row()[mon])
                if len(burn_buf) > window:
                    burn_buf.pop(0)
    max_draws = cfg["max_draws"]
    draws = np.empty((max_draws, p + K + 4))
    n = 0
    converged = False
    while n < max_draws:
        chain.sweep()
        draws[n] = chain.row()
        n += 1
        if n >= cfg["min_draws"] and (n - cfg["min_draws"]) % cfg["check_every"] == 0:
            ess = [effective_sample_size(draws[:n, j]) for j in mon]
            if min(ess) >= cfg["target_ess"]:
                converged = True
                break
    return ChainResult(draws[:n].copy(), n_burn, converged, dict(chain.violations), chain.state)


def _n_jobs(n_jobs):
    env = os.environ.get("BCSM_THREADS")
    if n_jobs is None and env:
        return max(1, int(env))
    return n_jobs if n_jobs is not None else 1


# ---------------------------------------------------------------------------
# posterior summaries
# ---------------------------------------------------------------------------


class PosteriorDraws:
    """Retained draws of one or more chains.

    Parameters
    ----------
    names : list of str
        Parameter names (columns).
    chains : list of ndarray
        One ``(n_draws, n_params)`` array per chain; chains may differ in
        length.
    spec : SplineSpec, optional
        Needed for baseline and incidence summaries.
    """

    def __init__(self, names, chains, spec=None, meta=None):
        self.names = list(names)
        self.chains = [np.asarray(c, dtype=float) for c in chains]
        for c in self.chains:
            if c.ndim != 2 or c.shape[1] != len(self.names):
                raise ValidationError("chain arrays must have one column per parameter")
        self.spec = spec
        self.meta = dict(meta or {})

    @property
    def n_draws(self):
        return sum(c.shape[0] for c in self.chains)

    def merged(self):
        return np.concatenate(self.chains, axis=0)

    def __getitem__(self, name):
        return self.merged()[:, self.names.index(name)]

    def columns(self, prefix):
        return [i for i, n in enumerate(self.names) if n.startswith(prefix)]

    def to_frame(self, chain=None):
        data = self.merged() if chain is None else self.chains[chain]
        return pd.DataFrame(data, columns=self.names)

    def baseline(self, t):
        """Draws of ``h(t)``: array of shape (n_draws, len(t))."""
        if self.spec is None:
            raise ValidationError("spline specification unavailable")
        B = ispline_basis(self.spec, t)
        G = self.merged()[:, self.columns("gamma_")]
        return G @ B.T


def incidence_curve(draws, times, level=0.95, scale="sd"):
    """Posterior of the marginal incidence ``P(T <= t)`` at covariates 0.

    ``Phi(h(t) / sqrt(1 + tau1 + tau2))`` for ``scale="sd"``; with
    ``scale="variance"`` the denominator is ``1 + tau1 + tau2`` without the
    square root.

    Returns
    -------
    pandas.DataFrame
        Columns ``time, median, lower, upper`` (pointwise equal-tailed band).
    """
    times = np.asarray(times, dtype=float)
    h = draws.baseline(times)
    var = 1.0 + draws["tau1"] + draws["tau2"]
    denom = np.sqrt(var) if scale == "sd" else var
    F = special.ndtr(h / denom[:, None])
    a = (1 - level) / 2
    return pd.DataFrame({
        "time": times,
        "median": np.median(F, axis=0),
        "lower": np.quantile(F, a, axis=0),
        "upper": np.quantile(F, 1 - a, axis=0),
    })


def summarize(draws, level=0.95, times=None, scale="sd"):
    """Posterior summary of a fit.

    Parameters
    ----------
    draws : PosteriorDraws
    level : float in (0, 1)
        HPD level.
    times : array_like, optional
        Time grid of the incidence curve (default: 50 points over the knot
        range).
    scale : {"sd", "variance"}
        Incidence denominator, see :func:`incidence_curve`.

    Returns
    -------
    dict
        ``parameters`` (per-parameter statistics), ``tau2_positive``
        (posterior probability), ``bayes_factor_tau2_nonpositive`` (posterior
        odds of ``tau2 <= 0`` under equal prior odds) and ``incidence``
        (records of the curve).
    """
    if not 0 < level < 1:
        raise ValidationError(f"level must lie in (0, 1), got {level}")
    if draws.n_draws == 0:
        raise ValidationError("no draws to summarize")
    params = {}
    merged = draws.merged()
    for j, name in enumerate(draws.names):
        st = trace_stats(merged[:, j], level)
        d = st.to_dict()
        if len(draws.chains) > 1:
            d["ess"] = float(sum(effective_sample_size(c[:, j]) for c in draws.chains if c.shape[0] >= 20))
        params[name] = d
    out = {"level": level, "n_draws": draws.n_draws, "n_chains": len(draws.chains), "parameters": params}
    if "tau2" in draws.names:
        t2 = draws["tau2"]
        p_pos = float(np.mean(t2 > 0))
        out["tau2_positive"] = p_pos
        out["bayes_factor_tau2_nonpositive"] = float((1 - p_pos) / p_pos) if p_pos > 0 else float("inf")
    if draws.spec is not None and "tau1" in draws.names:
        if times is None:
            times = np.linspace(0.0, draws.spec.knots[-1], 50)
        out["incidence"] = incidence_curve(draws, times, level, scale).to_dict(orient="list")
    out.update({k: v for k, v in draws.meta.items() if k not in out})
    return out


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------


class BCSMSurvivalRegressor(BaseEstimator):
    """Bayesian covariance structure model for interval-censored nested event times.

    Parameters
    ----------
    degree : int, default 4
        Degree of the I-spline baseline.
    n_knots : int, default 20
        Number of equidistant knots between the smallest positive and the
        largest finite interval endpoint.
    knots : array_like, optional
        Explicit distinct knots; overrides ``n_knots``.
    priors : Priors, optional
        Hyperparameters; defaults to improper priors throughout.
    burn_in : int, default 3000
    min_draws : int, default 6000
    max_draws : int, default 60000
    target_ess : float, default 100
        Sampling stops once every non-spline parameter reaches this
        effective sample size (checked every ``check_every`` draws after
        ``min_draws``).
    check_every : int, default 1000
    geweke_window : int, optional
        Extend burn-in until the Geweke z-scores over the last
        ``geweke_window`` burn-in sweeps are all below 3.
    max_burn_in : int, default 20000
    n_chains : int, default 1
    n_jobs : int, optional
        Worker processes for chains; the environment variable
        ``BCSM_THREADS`` is used when unset.
    tau1_update : {"augmented", "marginal"}, default "augmented"
        ``"augmented"`` conditions ``tau_1`` on the within-group subject sums
        of squares and on the contrast between each observed and augmented
        group mean, which is the exact full conditional.  ``"marginal"`` uses
        the sums of squares only; it is exact when all groups have the same
        size and approximate otherwise.
    incidence_scale : {"sd", "variance"}, default "sd"
    exclude_after_death : bool, default False
        Honour the ``excluded`` flag of the records.
    check_invariants : bool, default False
        Count invariant violations after every sweep (``violations_``).
    random_state : int, optional

    Attributes
    ----------
    draws_ : PosteriorDraws
    spline_ : SplineSpec
    data_ : SurvivalData
    init_beta_, init_gamma_ : ndarray
    init_method_ : str
    converged_ : list of bool
        Whether each chain reached ``target_ess`` before ``max_draws``.
    n_burn_ : list of int
    violations_ : dict
    coef_ : ndarray
        Posterior medians of ``beta``.
    """

    def __init__(self, degree=4, n_knots=20, knots=None, priors=None, burn_in=3000, min_draws=6000,
                 max_draws=60000, target_ess=100.0, check_every=1000, geweke_window=None,
                 max_burn_in=20000, n_chains=1, n_jobs=None, tau1_update="augmented",
                 incidence_scale="sd", exclude_after_death=False, check_invariants=False,
                 random_state=None):
        self.degree = degree
        self.n_knots = n_knots
        self.knots = knots
        self.priors = priors
        self.burn_in = burn_in
        self.min_draws = min_draws
        self.max_draws = max_draws
        self.target_ess = target_ess
        self.check_every = check_every
        self.geweke_window = geweke_window
        self.max_burn_in = max_burn_in
        self.n_chains = n_chains
        self.n_jobs = n_jobs
        self.tau1_update = tau1_update
        self.incidence_scale = incidence_scale
        self.exclude_after_death = exclude_after_death
        self.check_invariants = check_invariants
        self.random_state = random_state

    @classmethod
    def from_config(cls, cfg, **overrides):
        """Estimator configured from a :class:`~bcsm.config.RunConfig`."""
        kw = dict(
            degree=cfg.degree, n_knots=cfg.n_knots, knots=cfg.knots, priors=cfg.priors,
            burn_in=cfg.burn_in, min_draws=cfg.min_draws, max_draws=cfg.max_draws,
            target_ess=cfg.target_ess, check_every=cfg.check_every, geweke_window=cfg.geweke_window,
            max_burn_in=cfg.max_burn_in, n_chains=cfg.chains, tau1_update=cfg.tau1_update,
            incidence_scale=cfg.incidence_scale, exclude_after_death=cfg.exclude_after_death,
            check_invariants=cfg.check_invariants, random_state=cfg.seed,
        )
        kw.update(overrides)
        return cls(**kw)

    def _validate_params(self):
        if self.tau1_update not in ("marginal", "augmented"):
            raise ValidationError(f"tau1_update must be 'marginal' or 'augmented', got {self.tau1_update!r}")
        if self.incidence_scale not in ("sd", "variance"):
            raise ValidationError(f"incidence_scale must be 'sd' or 'variance', got {self.incidence_scale!r}")
        for name in ("burn_in", "min_draws", "max_draws", "check_every", "n_chains"):
            v = getattr(self, name)
            if int(v) != v or v < (0 if name == "burn_in" else 1):
                raise ValidationError(f"{name} must be a positive integer, got {v}")
        if self.max_draws < self.min_draws:
            raise ValidationError("max_draws must be >= min_draws")

    def _as_data(self, X, y, groups, subjects, event_types, excluded):
        if isinstance(X, SurvivalData):
            return X
        if isinstance(X, pd.DataFrame) and y is None:
            return SurvivalData.from_frame(X, self.exclude_after_death)
        if y is None or groups is None or subjects is None or event_types is None:
            raise ValidationError("pass a data frame in the record schema, or X with y=[L, R], "
                                  "groups, subjects and event_types")
        y = np.asarray(y, dtype=float)
        if y.ndim != 2 or y.shape[1] != 2:
            raise ValidationError("y must have two columns (left, right)")
        names = list(X.columns) if isinstance(X, pd.DataFrame) else None
        return SurvivalData.from_arrays(groups, subjects, event_types, y[:, 0], y[:, 1], np.asarray(X),
                                        excluded, names, self.exclude_after_death)

    def fit(self, X, y=None, *, groups=None, subjects=None, event_types=None, excluded=None):
        """Run the Gibbs sampler.

        Parameters
        ----------
        X : DataFrame, SurvivalData or array_like of shape (n_records, p)
            Either a frame in the record schema (``group_id, subject_id,
            event_type, left, right, x1..xp``) or the covariate matrix.
        y : array_like of shape (n_records, 2), optional
            Interval endpoints ``[L, R)`` when ``X`` holds covariates only.
        groups, subjects, event_types, excluded : array_like, optional
            Record identifiers when ``X`` holds covariates only.
        """
        self._validate_params()
        data = self._as_data(X, y, groups, subjects, event_types, excluded)
        if self.knots is not None:
            spec = SplineSpec(tuple(self.knots), self.degree)
        else:
            spec = SplineSpec(tuple(default_knots(data.left, data.right, self.n_knots)), self.degree)
        prob = _Problem(data, spec)
        beta, gamma, method = initialize_ml(data, spec, return_info=True)
        # make sure every interior interval is admissible at the start
        gamma = gamma.copy()
        gamma[1:] = np.maximum(gamma[1:], 1e-8)
        priors = self.priors if self.priors is not None else Priors()
        if isinstance(priors, dict):
            priors = Priors(**priors)
        cfg = dict(burn_in=int(self.burn_in), min_draws=int(self.min_draws), max_draws=int(self.max_draws),
                   target_ess=float(self.target_ess), check_every=int(self.check_every),
                   geweke_window=self.geweke_window, max_burn_in=int(self.max_burn_in),
                   tau1_update=self.tau1_update, check_invariants=bool(self.check_invariants))
        seeds = np.random.SeedSequence(self.random_state).spawn(int(self.n_chains))
        n_jobs = _n_jobs(self.n_jobs)
        if n_jobs == 1 or self.n_chains == 1:
            results = [_run_chain(prob, priors, cfg, s, beta, gamma) for s in seeds]
        else:
            results = Parallel(n_jobs=n_jobs)(
                delayed(_run_chain)(prob, priors, cfg, s, beta, gamma) for s in seeds
            )
        names = _param_names(data.feature_names, spec.n_basis)
        self.data_ = data
        self.spline_ = spec
        self.init_beta_, self.init_gamma_, self.init_method_ = beta, gamma, method
        self.converged_ = [r.converged for r in results]
        self.n_burn_ = [r.n_burn for r in results]
        self.violations_ = {k: sum(r.violations[k] for r in results) for k in results[0].violations}
        self.final_states_ = [r.state for r in results]
        self.draws_ = PosteriorDraws(names, [r.draws for r in results], spec,
                                     meta={"init_method": method, "converged": self.converged_})
        self.coef_ = np.median(self.draws_.merged()[:, : data.X.shape[1]], axis=0)
        self.n_features_in_ = data.X.shape[1]
        return self

    def summary(self, level=0.95, times=None):
        check_is_fitted(self, "draws_")
        return summarize(self.draws_, level, times, self.incidence_scale)

    def _covariates(self, X):
        if isinstance(X, pd.DataFrame):
            cols = [c for c in self.data_.feature_names if c in X.columns]
            X = X[cols].to_numpy(dtype=float) if cols else X.to_numpy(dtype=float)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict(self, X):
        """Posterior median of the risk score ``x' beta`` (higher means earlier events)."""
        check_is_fitted(self, "draws_")
        return self._covariates(X) @ self.coef_

    def predict_cumulative_incidence(self, X, times):
        """Posterior mean of ``P(T <= t | x)`` for each row of ``X`` and each time.

        Returns an array of shape ``(n_rows, len(times))``.
        """
        check_is_fitted(self, "draws_")
        X = self._covariates(X)
        d = self.draws_
        h = d.baseline(np.asarray(times, dtype=float))
        beta = d.merged()[:, : self.n_features_in_]
        var = 1.0 + d["tau1"] + d["tau2"]
        denom = np.sqrt(var) if self.incidence_scale == "sd" else var
        lin = beta @ X.T  # (draws, rows)
        F = special.ndtr((h[:, None, :] + lin[:, :, None]) / denom[:, None, None])
        return F.mean(axis=0)
