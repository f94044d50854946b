"""Brute-force dense reference implementations.

Everything here is O(n^3) and meant for validating the structured fast path
on small problems.  Dense dimensions are capped (default 512).
"""

from __future__ import annotations

from functools import reduce

import numpy as np
from scipy import integrate, linalg

from .covariance import DEFAULT_ORACLE_CAP
from .exceptions import NumericalError, OracleCapError, SingularPosteriorError, ValidationError
from .helmert import helmert_matrix
from .layout import build_incidence, derive_sizes

__all__ = [
    "DenseGaussian",
    "dense_conditional",
    "gridded_posterior",
    "truncated_mvn_sample",
    "recursive_covariance",
    "direct_covariance",
    "kron_helmert",
    "level_selectors",
    "dense_loglik",
    "independence_metropolis",
    "TwoWayPosterior",
]


class DenseGaussian:
    """Multivariate normal with a dense covariance and a cached Cholesky factor.

    Parameters
    ----------
    mean : array_like of shape (d,)
    cov : array_like of shape (d, d)
    """

    def __init__(self, mean, cov, cap=DEFAULT_ORACLE_CAP):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValidationError(f"covariance shape {self.cov.shape} does not match mean length {d}")
        if d > cap:
            raise OracleCapError(f"dense dimension {d} exceeds oracle cap {cap}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise ValidationError("covariance must be symmetric")
        self._chol = None

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def chol(self):
        if self._chol is None:
            try:
                self._chol = linalg.cholesky(self.cov, lower=True)
            except linalg.LinAlgError as exc:
                raise SingularPosteriorError("covariance is not positive definite") from exc
        return self._chol

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        L = self.chol
        r = linalg.solve_triangular(L, (x - self.mean).T, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        return -0.5 * (np.sum(r**2, axis=0) + logdet + self.dim * np.log(2 * np.pi))

    def rvs(self, rng, size=None):
        n = 1 if size is None else int(size)
        z = rng.standard_normal((n, self.dim))
        out = self.mean + z @ self.chol.T
        return out[0] if size is None else out


def dense_conditional(g, idx, values):
    """Conditional distribution of the remaining coordinates given ``x[idx] = values``.

    Uses the Schur complement; conditioning on an empty index set returns
    ``g`` unchanged.
    """
    idx = np.asarray(idx, dtype=int).ravel()
    if idx.size == 0:
        return g
    if np.unique(idx).size != idx.size or idx.min() < 0 or idx.max() >= g.dim:
        raise ValidationError("invalid conditioning indices")
    rest = np.setdiff1d(np.arange(g.dim), idx)
    S11 = g.cov[np.ix_(rest, rest)]
    S12 = g.cov[np.ix_(rest, idx)]
    S22 = g.cov[np.ix_(idx, idx)]
    try:
        c22 = linalg.cho_factor(S22, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularPosteriorError("conditioning block is singular") from exc
    delta = np.asarray(values, dtype=float).ravel() - g.mean[idx]
    mean = g.mean[rest] + S12 @ linalg.cho_solve(c22, delta)
    cov = S11 - S12 @ linalg.cho_solve(c22, S12.T)
    return DenseGaussian(mean, 0.5 * (cov + cov.T))


def gridded_posterior(loglik, logprior, grid):
    """Posterior density on a grid, normalized by the trapezoid rule.

    ``loglik`` and ``logprior`` map the grid array to log values; ``-inf``
    (zero density) is allowed, NaN or ``+inf`` is not.
    """
    grid = np.asarray(grid, dtype=float)
    ll = np.asarray(loglik(grid), dtype=float)
    lp = np.asarray(logprior(grid), dtype=float)
    if np.any(np.isnan(ll)) or np.any(ll == np.inf):
        raise NumericalError("log-likelihood is not finite on the grid")
    lpost = ll + lp
    if not np.any(np.isfinite(lpost)):
        raise NumericalError("posterior vanishes on the whole grid")
    lpost = lpost - np.max(lpost[np.isfinite(lpost)])
    dens = np.exp(lpost)
    return dens / integrate.trapezoid(dens, grid)


def truncated_mvn_sample(g, lo, hi, rng, size=1, min_accept=1e-6, batch=100_000):
    """Exact draws from ``g`` restricted to the box ``(lo, hi]`` by rejection.

    Raises
    ------
    NumericalError
        If the observed acceptance rate falls below ``min_accept``.
    """
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (g.dim,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (g.dim,))
    out = []
    n_acc = n_prop = 0
    while n_acc < size:
        x = g.rvs(rng, batch)
        ok = np.all((x > lo) & (x <= hi), axis=1)
        n_prop += batch
        n_acc += int(ok.sum())
        out.append(x[ok])
        if n_prop >= 10 * batch and n_acc / n_prop < min_accept:
            raise NumericalError(f"rejection acceptance rate {n_acc / n_prop:.2e} below {min_accept}")
    return np.concatenate(out)[:size]


def recursive_covariance(layout, tau):
    """Covariance built level by level: ``S <- I_{n_{q-1}} kron S + tau_q J``."""
    tau = np.asarray(tau, dtype=float)
    if layout.top_counts is not None:
        return linalg.block_diag(
            *[recursive_covariance(layout.group_layout(i), tau) for i in range(layout.n_groups)]
        )
    S = np.array([[tau[0]]])
    for q in range(1, layout.Q + 1):
        S = np.kron(np.eye(layout.n[q - 1]), S)
        S += tau[q] * np.ones_like(S)
    return S


def direct_covariance(layout, tau):
    """Covariance as ``tau_0 I + sum_q tau_q N_q N_q^T`` from incidence matrices."""
    tau = np.asarray(tau, dtype=float)
    N = [build_incidence(layout, q) for q in range(1, layout.Q + 1)]
    dim = N[0].shape[0]
    return tau[0] * np.eye(dim) + sum(t * Nq @ Nq.T for t, Nq in zip(tau[1:], N))


def kron_helmert(layout):
    """``H_{n_{Q-1}} kron ... kron H_{n_0}`` for the lexicographic row order."""
    return reduce(np.kron, [helmert_matrix(nq) for nq in reversed(layout.n)])


def level_selectors(layout):
    """Diagonal selectors ``M_0..M_Q`` of the Helmert-transformed coordinates.

    Coordinate ``(r_{Q-1}, ..., r_0)`` belongs to level ``q < Q`` when
    ``r_q != 0`` and ``r_{q'} = 0`` for all ``q' < q``; the all-zero
    coordinate is level ``Q``.
    """
    s, _ = derive_sizes(layout)
    idx = np.arange(s[-1])
    digits = [(idx // s[q]) % layout.n[q] for q in range(layout.Q)]
    level = np.full(s[-1], layout.Q)
    for q in reversed(range(layout.Q)):
        level = np.where(digits[q] != 0, q, level)
    return [np.diag((level == q).astype(float)) for q in range(layout.Q + 1)]


def dense_loglik(layout, tau, V, mean=None):
    """Gaussian log-likelihood of group vectors ``V`` (rows) under ``Sigma(tau)``."""
    from .covariance import materialize_dense

    V = np.atleast_2d(np.asarray(V, dtype=float))
    cov = materialize_dense(layout, tau)
    try:
        L = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        return -np.inf
    R = V if mean is None else V - mean
    r = linalg.solve_triangular(L, R.T, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * (np.sum(r**2) + V.shape[0] * (logdet + cov.shape[0] * np.log(2 * np.pi))))


def independence_metropolis(logpost, propose, logq, n, rng, x0):
    """Independence Metropolis-Hastings sampler.

    Parameters
    ----------
    logpost : callable
        Log target density (unnormalized), ``-inf`` outside the support.
    propose : callable
        ``propose(rng, size)`` returning an array of shape ``(size, d)``.
    logq : callable
        Log proposal density for an array of points.
    n : int
        Number of iterations.
    x0 : array_like
        Starting point with finite target density.

    Returns
    -------
    draws : ndarray of shape (n, d)
    acceptance : float
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    lw = logpost(x) - logq(x[None, :])[0]
    if not np.isfinite(lw):
        raise ValidationError("starting point has zero target density")
    props = propose(rng, n)
    lw_props = np.array([logpost(p) for p in props]) - logq(props)
    log_u = np.log(rng.random(n))
    draws = np.empty((n, x.size))
    acc = 0
    for t in range(n):
        if log_u[t] < lw_props[t] - lw:
            x = props[t]
            lw = lw_props[t]
            acc += 1
        draws[t] = x
    return draws, acc / n


class TwoWayPosterior:
    """Dense log posterior of ``(beta, tau_1, tau_2)`` for observed two-way data with ``tau_0 = 1``.

    Groups may differ in size.  The prior matches the sampler's
    parameterization: ``w1 = tau_1 + 1/n0 ~ IG(alpha1, beta1)`` and, with
    ``nbar1`` the largest group size, ``w2 = tau_2 + w1/nbar1 ~ IG(alpha2, beta2)``
    independently; ``beta ~ N(b0, L0^-1)``.  Covariances are built from
    incidence matrices (:func:`~bcsm.layout.build_incidence`).

    Parameters
    ----------
    n0 : int
    n_sub : sequence of int
        Subjects per group.
    X : ndarray of shape (n, p)
    y : ndarray of shape (n,)
    priors : tuple
        ``(alpha1, beta1, alpha2, beta2)``, all positive.
    b0, L0 : ndarray
    """

    def __init__(self, n0, n_sub, X, y, priors, b0, L0):
        from .layout import NestedLayout

        self.n0 = int(n0)
        self.n_sub = [int(v) for v in n_sub]
        self.nbar1 = max(self.n_sub)
        self.layouts = [NestedLayout((self.n0, k), require_identifiable=False) for k in self.n_sub]
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.priors = tuple(float(v) for v in priors)
        self.b0 = np.asarray(b0, dtype=float)
        self.L0 = np.atleast_2d(np.asarray(L0, dtype=float))
        # Sigma_i = I + tau1 C1 + tau2 C2 with C_q = N_q N_q^T from the incidence matrices
        self.C = [[(N := build_incidence(lay, q)) @ N.T for q in (1, 2)] for lay in self.layouts]
        bounds = np.concatenate([[0], np.cumsum([self.n0 * k for k in self.n_sub])])
        self.blocks = [slice(bounds[i], bounds[i + 1]) for i in range(len(self.n_sub))]

    def _w(self, tau1, tau2):
        w1 = tau1 + 1.0 / self.n0
        return w1, tau2 + w1 / self.nbar1

    def logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        p = self.X.shape[1]
        beta, tau1, tau2 = theta[:p], theta[p], theta[p + 1]
        w1, w2 = self._w(tau1, tau2)
        if w1 <= 0 or w2 <= 0:
            return -np.inf
        a1, b1, a2, b2 = self.priors
        lp = -(a1 + 1) * np.log(w1) - b1 / w1 - (a2 + 1) * np.log(w2) - b2 / w2
        d = beta - self.b0
        lp -= 0.5 * d @ self.L0 @ d
        resid = self.y - self.X @ beta
        for (C1, C2), blk in zip(self.C, self.blocks):
            cov = np.eye(C1.shape[0]) + tau1 * C1 + tau2 * C2
            try:
                L = linalg.cholesky(cov, lower=True)
            except linalg.LinAlgError:
                return -np.inf
            r = linalg.solve_triangular(L, resid[blk], lower=True)
            lp -= 0.5 * r @ r + np.sum(np.log(np.diag(L)))
        return float(lp)

    def to_unconstrained(self, theta):
        p = self.X.shape[1]
        w1, w2 = self._w(theta[..., p], theta[..., p + 1])
        return np.concatenate([theta[..., :p], np.log(w1)[..., None], np.log(w2)[..., None]], axis=-1)

    def from_unconstrained(self, u):
        p = self.X.shape[1]
        w1, w2 = np.exp(u[..., p]), np.exp(u[..., p + 1])
        tau1 = w1 - 1.0 / self.n0
        tau2 = w2 - w1 / self.nbar1
        return np.concatenate([u[..., :p], tau1[..., None], tau2[..., None]], axis=-1)

    def log_jacobian(self, theta):
        """``log |d u / d theta|`` of :meth:`to_unconstrained`."""
        p = self.X.shape[1]
        w1, w2 = self._w(theta[..., p], theta[..., p + 1])
        return -np.log(w1) - np.log(w2)

    def t_proposal(self, df=5.0, inflate=1.5):
        """Multivariate-t independence proposal centred at the posterior mode.

        Returns ``(propose, logq, mode)`` in the original coordinates.
        """
        from scipy import optimize, stats

        p = self.X.shape[1]

        def neg(u):
            th = self.from_unconstrained(u)
            v = self.logpdf(th) - self.log_jacobian(th)
            return -v if np.isfinite(v) else 1e300

        u0 = np.concatenate([self.b0, [0.0, 0.0]])
        res = optimize.minimize(neg, u0, method="Nelder-Mead",
                                options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 20000})
        res = optimize.minimize(neg, res.x, method="BFGS")
        mode = res.x
        d = p + 2
        h = 1e-4
        H = np.empty((d, d))
        E = np.eye(d) * h
        for i in range(d):
            for j in range(d):
                H[i, j] = (neg(mode + E[i] + E[j]) - neg(mode + E[i] - E[j])
                           - neg(mode - E[i] + E[j]) + neg(mode - E[i] - E[j])) / (4 * h * h)
        cov = np.linalg.inv(0.5 * (H + H.T)) * inflate**2
        dist = stats.multivariate_t(loc=mode, shape=cov, df=df)

        def propose(rng, size):
            return self.from_unconstrained(dist.rvs(size=size, random_state=rng).reshape(size, d))

        def logq(theta):
            theta = np.atleast_2d(theta)
            return dist.logpdf(self.to_unconstrained(theta)) + self.log_jacobian(theta)

        return propose, logq, self.from_unconstrained(mode)
