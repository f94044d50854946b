"""Full-conditional updates of the Gibbs sampler.

Two families live here:

* general balanced Q-way updates (block conditionals of the latent vector
  and the sequential shifted inverse gamma posteriors of ``tau``);
* the two-way survival updates, where ``tau_0 = 1``, events are nested in
  subjects and subjects in groups with varying group sizes, balanced by
  augmenting every group mean to the maximal group size.

Row order everywhere is group, subject, event with the event index fastest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .covariance import inverse_coefficients, quadratic_form
from .distributions import ShiftedInverseGamma, sample_gamma, sample_mvn_precision, sample_shifted_ig
from .exceptions import NotPositiveDefiniteError, UnsupportedLayoutError, ValidationError
from .helmert import sum_of_squares
from .layout import NestedLayout, derive_sizes

__all__ = [
    "ChainState",
    "conditional_block",
    "scalar_conditional",
    "latent_conditional",
    "tau_conditional",
    "sample_tau_balanced",
    "tau1_posterior",
    "sample_tau1_survival",
    "tau2_posterior",
    "sample_tau2_survival",
    "augment_moments",
    "augment_group_mean",
    "two_way_group_stats",
    "two_way_tau_step",
    "beta_posterior",
    "sample_beta",
    "DesignGrams",
    "sample_gamma_coeffs",
    "sample_eta",
    "sample_latent_sweep",
]


@dataclass
class ChainState:
    """Mutable state of one chain.

    Attributes
    ----------
    Z : ndarray
        Latent scores of all records.
    beta, gamma : ndarray
        Covariate effects and spline coefficients (``gamma[0]`` is the
        intercept, ``gamma[1:] >= 0``).
    eta : float
        Rate of the exponential prior on ``gamma[1:]``.
    tau : ndarray
        ``(tau_0, tau_1, tau_2)`` with ``tau_0 = 1``.
    u_bar : ndarray
        Augmented means of the missing subjects of each group (NaN for
        groups at the maximal size).
    sweep : int
    """

    Z: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    eta: float = 1.0
    tau: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    u_bar: np.ndarray | None = None
    sweep: int = 0

    def copy(self):
        return ChainState(
            self.Z.copy(), self.beta.copy(), self.gamma.copy(), float(self.eta), self.tau.copy(),
            None if self.u_bar is None else self.u_bar.copy(), self.sweep,
        )


# ---------------------------------------------------------------------------
# general balanced conditionals
# ---------------------------------------------------------------------------


def conditional_block(layout, tau, mu_i, Z_i, j):
    """Conditional distribution of one top-level block given the others.

    The group vector of a balanced layout splits into ``m_{Q-1}`` blocks
    (levels of factor Q-1).  Given all other blocks, block ``j`` is normal
    with mean ``mu_ij + c 1`` where
    ``c = f_Q * mean(Z_other - mu_other)`` and
    ``f_Q = u_Q tau_Q / (v_{Q-1} + u_Q tau_Q)``, ``u_Q = (m_{Q-1} - 1) s_{Q-1}``,
    and with the (Q-1)-factor nested covariance whose top parameter gains
    ``tau_Q (1 - f_Q)``.

    Returns
    -------
    theta : ndarray of shape (s_{Q-1},)
        Conditional mean of the block.
    tau_reduced : ndarray of shape (Q,)
        Covariance parameters of the block (for ``Q = 1`` this is the
        scalar conditional variance).
    """
    if layout.top_counts is not None and not layout.is_balanced:
        raise UnsupportedLayoutError("conditional_block needs a balanced layout")
    tau = np.asarray(tau, dtype=float)
    inverse_coefficients(NestedLayout(layout.n, require_identifiable=False), tau)
    s, m = derive_sizes(layout)
    Q = layout.Q
    mu_i = np.asarray(mu_i, dtype=float)
    Z_i = np.asarray(Z_i, dtype=float)
    if Z_i.shape != (s[Q],) or mu_i.shape != (s[Q],):
        raise ValidationError(f"group vectors must have length {s[Q]}")
    if not 0 <= j < m[Q - 1]:
        raise IndexError(f"block {j} outside 0..{m[Q - 1] - 1}")
    bs = s[Q - 1]
    u = (m[Q - 1] - 1) * bs
    v_prev = tau[0] + np.dot(s[1:Q], tau[1:Q])
    f = u * tau[Q] / (v_prev + u * tau[Q]) if u > 0 else 0.0
    resid = Z_i - mu_i
    blk = slice(j * bs, (j + 1) * bs)
    other = (resid.sum() - resid[blk].sum()) / u if u > 0 else 0.0
    theta = mu_i[blk] + f * other
    tau_r = tau[:Q].copy()
    tau_r[Q - 1] += tau[Q] * (1.0 - f)
    return theta, tau_r


def scalar_conditional(layout, tau, mu_i, Z_i, r):
    """Mean and variance of ``Z_i[r]`` given the rest, by recursive blocking."""
    n = tuple(layout.n)
    tau = np.asarray(tau, dtype=float)
    mu = np.asarray(mu_i, dtype=float)
    Z = np.asarray(Z_i, dtype=float)
    while True:
        lay = NestedLayout(n, require_identifiable=False)
        s, _ = derive_sizes(lay)
        bs = s[-2]
        j = r // bs
        theta, tau = conditional_block(lay, tau, mu, Z, j)
        Z = Z[j * bs : (j + 1) * bs]
        mu = theta
        r = r - j * bs
        n = n[:-1]
        if len(n) == 0:
            return float(mu[0]), float(tau[0])


def latent_conditional(n0, n1, tau1, tau2, V_i, j, k):
    """Conditional mean and variance of ``V_ijk`` given the rest of group ``i``.

    Two-way layout with ``tau_0 = 1``: ``V_i`` has shape ``(n1, n0)`` (rows
    are subjects).  Uses

    ``f2 = n0 (n1-1) tau2 / (1 + n0 tau1 + n0 (n1-1) tau2)``,
    ``tt = tau1 + tau2 (1 - f2)``, ``f1 = (n0-1) tt / (1 + (n0-1) tt)``,
    mean ``c + f1 (mean of the subject's other events - c)`` with
    ``c = f2 * (mean of the other subjects)`` and variance
    ``1 + tt (1 - f1)``.
    """
    V_i = np.asarray(V_i, dtype=float).reshape(n1, n0)
    if n1 > 1:
        f2 = n0 * (n1 - 1) * tau2 / (1.0 + n0 * tau1 + n0 * (n1 - 1) * tau2)
        c = f2 * (V_i.sum() - V_i[j].sum()) / (n0 * (n1 - 1))
    else:
        f2 = c = 0.0
    tt = tau1 + tau2 * (1.0 - f2)
    f1 = (n0 - 1) * tt / (1.0 + (n0 - 1) * tt)
    other = (V_i[j].sum() - V_i[j, k]) / (n0 - 1) if n0 > 1 else 0.0
    return c + f1 * (other - c), 1.0 + tt * (1.0 - f1)


# ---------------------------------------------------------------------------
# covariance parameters, balanced Q-way
# ---------------------------------------------------------------------------


def tau_conditional(layout, V, alpha, beta, q, tau):
    """Posterior of ``tau_q`` given the lower-level parameters.

    Parameters
    ----------
    V : ndarray of shape (n_groups, s_Q)
        Mean-zero residual vectors of independent groups.
    alpha, beta : float
        Prior shape and scale of ``tau_q``.
    tau : array_like
        Current parameters; only ``tau[:q]`` is used.

    Returns
    -------
    ShiftedInverseGamma
        Shape ``alpha + n p_q / 2``, scale ``beta + sum_i S^2_iq / 2`` and
        shift ``v_{q-1} / s_q`` (no shift for ``q = 0``).
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    s, m = derive_sizes(layout)
    p = np.append(m[:-1] - m[1:], 1)
    S2 = sum_of_squares(layout, V).sum(axis=0)
    tau = np.asarray(tau, dtype=float)
    shift = 0.0 if q == 0 else (tau[0] + np.dot(s[1:q], tau[1:q])) / s[q]
    return ShiftedInverseGamma(alpha + V.shape[0] * p[q] / 2.0, beta + S2[q] / 2.0, float(shift))


def sample_tau_balanced(layout, V, alpha, beta, rng, tau0=None):
    """Exact joint draw of ``tau`` for a balanced layout.

    Samples ``tau_0`` (unless fixed through ``tau0``) and then each
    ``tau_q | tau_{<q}`` from its shifted inverse gamma posterior; the draw
    is positive definite by construction of the shifts.

    Parameters
    ----------
    V : ndarray of shape (n_groups, s_Q)
    alpha, beta : array_like of length Q+1
        Prior shapes and scales (index 0 is ignored when ``tau0`` is given).
    tau0 : float, optional
        Fixed observation-level variance.
    """
    if layout.top_counts is not None and not layout.is_balanced:
        raise UnsupportedLayoutError("conjugate tau updates need a balanced layout")
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (layout.Q + 1,))
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (layout.Q + 1,))
    tau = np.zeros(layout.Q + 1)
    if tau0 is None:
        tau[0] = sample_shifted_ig(tau_conditional(layout, V, alpha[0], beta[0], 0, tau), rng)
    else:
        tau[0] = float(tau0)
    for q in range(1, layout.Q + 1):
        d = tau_conditional(layout, V, alpha[q], beta[q], q, tau)
        tau[q] = sample_shifted_ig(d, rng)
        # guard against a draw that rounds onto the boundary
        while not d.sigma + tau[q] > 1e-12 * max(1.0, tau[0]):
            tau[q] = sample_shifted_ig(d, rng)
    return tau


# ---------------------------------------------------------------------------
# covariance parameters, two-way survival layout
# ---------------------------------------------------------------------------


def tau1_posterior(S2_1, n_sub, n0, alpha, beta, D=None, c=None):
    """Posterior of the within-subject covariance ``tau_1``.

    Parameters
    ----------
    S2_1 : array_like
        Per-group sums of squared deviations of subject means from the
        group mean.
    n_sub : array_like of int
        Observed subjects per group.
    D, c : array_like, optional
        Differences between observed and augmented group means and their
        variance factors ``1/n_1i + 1/(nbar_1 - n_1i)`` for augmented groups;
        when given they contribute one extra degree of freedom each.

    Returns
    -------
    ShiftedInverseGamma
        ``(alpha + sum(n_1i - 1)/2, beta + sum S2/2, 1/n0)`` plus the
        optional augmentation terms.
    """
    S2_1 = np.asarray(S2_1, dtype=float)
    n_sub = np.asarray(n_sub)
    a = alpha + np.sum(n_sub - 1) / 2.0
    b = beta + S2_1.sum() / 2.0
    if D is not None:
        D = np.asarray(D, dtype=float)
        a += D.size / 2.0
        b += np.sum(D**2 / np.asarray(c, dtype=float)) / 2.0
    return ShiftedInverseGamma(a, b, 1.0 / n0)


def sample_tau1_survival(S2_1, n_sub, n0, alpha, beta, rng, D=None, c=None):
    d = tau1_posterior(S2_1, n_sub, n0, alpha, beta, D, c)
    while True:
        t = sample_shifted_ig(d, rng)
        if 1.0 + n0 * t > 1e-12:
            return float(t)


def tau2_posterior(vbar_b, tau1, n0, nbar1, alpha, beta):
    """Posterior of the between-subject covariance ``tau_2`` given ``tau_1``.

    ``vbar_b`` are the balanced group means; the result is
    ``shifted-IG(alpha + n_2/2, beta + sum vbar_b^2 / 2, (1 + n0 tau1)/(n0 nbar1))``.
    """
    vbar_b = np.asarray(vbar_b, dtype=float)
    return ShiftedInverseGamma(
        alpha + vbar_b.size / 2.0, beta + np.sum(vbar_b**2) / 2.0, (1.0 + n0 * tau1) / (n0 * nbar1)
    )


def sample_tau2_survival(vbar_b, tau1, n0, nbar1, alpha, beta, rng):
    d = tau2_posterior(vbar_b, tau1, n0, nbar1, alpha, beta)
    while True:
        t = sample_shifted_ig(d, rng)
        if t + d.sigma > 1e-12:
            return float(t)


def augment_moments(vbar, n1, nbar1, n0, tau1, tau2):
    """Mean and variance of the augmented mean ``U_i`` given ``vbar``.

    ``U_i`` is the mean of the ``nbar1 - n1`` missing subjects of a group in
    the balanced completion.
    """
    n1 = np.asarray(n1, dtype=float)
    if np.any(n1 >= nbar1):
        raise ValidationError("augmentation is only defined for groups below the maximal size")
    v1 = 1.0 + n0 * tau1
    obs = v1 + n0 * n1 * tau2
    mean = n0 * n1 * tau2 / obs * np.asarray(vbar, dtype=float)
    var = (v1 + n0 * (nbar1 - n1) * tau2) / (n0 * (nbar1 - n1)) - n0 * n1 * tau2**2 / obs
    return mean, var


def augment_group_mean(vbar, n1, nbar1, n0, tau1, tau2, rng):
    """Draw ``U_i`` and return it with the balanced mean ``(n1 vbar + (nbar1-n1) U)/nbar1``."""
    mean, var = augment_moments(vbar, n1, nbar1, n0, tau1, tau2)
    u = mean + np.sqrt(var) * rng.standard_normal(np.shape(mean))
    n1 = np.asarray(n1, dtype=float)
    return u, (n1 * np.asarray(vbar) + (nbar1 - n1) * u) / nbar1


def two_way_group_stats(V, n_sub, n0):
    """Subject means, group means and within-group subject sums of squares of ``V``."""
    n_sub = np.asarray(n_sub, dtype=np.int64)
    subj_of_group = np.repeat(np.arange(n_sub.size), n_sub)
    subj_mean = np.asarray(V, dtype=float).reshape(-1, n0).mean(axis=1)
    vbar = np.bincount(subj_of_group, weights=subj_mean, minlength=n_sub.size) / n_sub
    S2 = np.bincount(subj_of_group, weights=(subj_mean - vbar[subj_of_group]) ** 2, minlength=n_sub.size)
    return subj_mean, vbar, S2


def two_way_tau_step(V, n_sub, n0, tau1, tau2, u_bar, alpha1, beta1, alpha2, beta2, rng,
                     tau1_update="augmented"):
    """One update of ``(tau_1, U, tau_2)`` for a two-way layout with ``tau_0 = 1``.

    Groups smaller than ``nbar1 = max(n_sub)`` are completed with the mean
    ``U_i`` of their missing subjects.  ``tau_1`` is drawn with the
    balanced-level variance ``v_2 = 1 + n0 tau1 + n0 nbar1 tau2`` held
    fixed, so the intermediate ``tau_2`` used for ``U`` stays inside the
    positive-definite region; ``tau_2`` is then drawn given the new
    ``tau_1`` from the completed group means.

    Parameters
    ----------
    V : ndarray
        Stacked residuals (event index fastest).
    u_bar : ndarray
        Current augmented means (entries of full groups are ignored);
        updated in place.
    tau1_update : {"marginal", "augmented"}
        ``"augmented"`` adds the contrast between observed and augmented
        group means to the ``tau_1`` posterior.

    Returns
    -------
    tau1, tau2 : float
    """
    n_sub = np.asarray(n_sub, dtype=np.int64)
    _, vbar, S2 = two_way_group_stats(V, n_sub, n0)
    nbar1 = int(n_sub.max())
    v2 = 1.0 + n0 * tau1 + n0 * nbar1 * tau2
    part = np.flatnonzero(n_sub < nbar1)
    if tau1_update == "augmented" and part.size:
        n1 = n_sub[part]
        D = vbar[part] - u_bar[part]
        c = 1.0 / n1 + 1.0 / (nbar1 - n1)
        tau1 = sample_tau1_survival(S2, n_sub, n0, alpha1, beta1, rng, D, c)
    else:
        tau1 = sample_tau1_survival(S2, n_sub, n0, alpha1, beta1, rng)
    tau2 = (v2 - 1.0 - n0 * tau1) / (n0 * nbar1)
    vbar_b = vbar.copy()
    if part.size:
        u, vb = augment_group_mean(vbar[part], n_sub[part], nbar1, n0, tau1, tau2, rng)
        u_bar[part] = u
        vbar_b[part] = vb
    tau2 = sample_tau2_survival(vbar_b, tau1, n0, nbar1, alpha2, beta2, rng)
    return tau1, tau2


# ---------------------------------------------------------------------------
# regression coefficients
# ---------------------------------------------------------------------------


def beta_posterior(resid, X, layout, tau, beta0, Lambda0):
    """Mean and covariance of ``beta | Z, gamma, tau``.

    Parameters
    ----------
    resid : sequence of ndarray
        Per-group ``Z_i - B_i gamma``.
    X : sequence of ndarray
        Per-group covariate matrices.
    layout : NestedLayout
        Either balanced (one layout for every group) or top-layer
        unbalanced with one group per entry of ``top_counts``.

    Notes
    -----
    The model is ``Z_i ~ N(B_i gamma + X_i beta, Sigma_i)`` and the mean is
    ``(Lambda0 + sum X_i' Sigma_i^-1 X_i)^-1 (Lambda0 beta0 + sum X_i' Sigma_i^-1 resid_i)``.
    """
    beta0 = np.atleast_1d(np.asarray(beta0, dtype=float))
    Lambda0 = np.atleast_2d(np.asarray(Lambda0, dtype=float))
    P = Lambda0.copy()
    lin = Lambda0 @ beta0
    for i, (r, x) in enumerate(zip(resid, X)):
        g = i if layout.top_counts is not None else None
        P += quadratic_form(layout, tau, x, group=g)
        lin += quadratic_form(layout, tau, x, r, group=g).ravel()
    cov = np.linalg.inv(P)
    return cov @ lin, cov


def sample_beta(resid, X, layout, tau, beta0, Lambda0, rng):
    """Draw ``beta`` from its full conditional (see :func:`beta_posterior`)."""
    beta0 = np.atleast_1d(np.asarray(beta0, dtype=float))
    Lambda0 = np.atleast_2d(np.asarray(Lambda0, dtype=float))
    P = Lambda0.copy()
    lin = Lambda0 @ beta0
    for i, (r, x) in enumerate(zip(resid, X)):
        g = i if layout.top_counts is not None else None
        P += quadratic_form(layout, tau, x, group=g)
        lin += quadratic_form(layout, tau, x, r, group=g).ravel()
    return sample_mvn_precision(lin, P, rng)[0]


class DesignGrams:
    """Cached cluster Gram matrices of the stacked design ``A`` of a two-way layout.

    ``A^T Sigma^{-1} A`` and ``A^T Sigma^{-1} V`` are evaluated from
    observation-, subject- and group-level column sums, so that no per-record
    work is repeated when ``tau`` changes.

    Parameters
    ----------
    A : ndarray of shape (n_records, p)
    n_sub : ndarray of int
        Subjects per group.
    n0 : int
        Events per subject.
    """

    def __init__(self, A, n_sub, n0):
        A = np.asarray(A, dtype=float)
        self.n_sub = np.asarray(n_sub, dtype=np.int64)
        self.n0 = int(n0)
        n_subjects = int(self.n_sub.sum())
        if A.shape[0] != n_subjects * self.n0:
            raise ValidationError("design rows do not match the layout")
        self.A = A
        self.subj_of_group = np.repeat(np.arange(self.n_sub.size), self.n_sub)
        self.A_subj = A.reshape(n_subjects, self.n0, -1).sum(axis=1)
        self.A_grp = np.zeros((self.n_sub.size, A.shape[1]))
        np.add.at(self.A_grp, self.subj_of_group, self.A_subj)
        self.G0 = A.T @ A
        self.G1 = self.A_subj.T @ self.A_subj
        self.G2 = np.einsum("ia,ib->iab", self.A_grp, self.A_grp)

    def rho(self, tau1, tau2):
        v1 = 1.0 + self.n0 * tau1
        v2 = v1 + self.n0 * self.n_sub * tau2
        if v1 <= 0 or np.any(v2 <= 0):
            raise NotPositiveDefiniteError("covariance parameters are not positive definite", 1 if v1 <= 0 else 2)
        return -tau1 / v1, -tau2 / (v2 * v1)

    def precision(self, tau1, tau2):
        """``sum_i A_i^T Sigma_i^{-1} A_i``."""
        r1, r2 = self.rho(tau1, tau2)
        return self.G0 + r1 * self.G1 + np.tensordot(r2, self.G2, axes=1)

    def project(self, V, tau1, tau2):
        """``sum_i A_i^T Sigma_i^{-1} V_i`` for the stacked residual vector ``V``."""
        r1, r2 = self.rho(tau1, tau2)
        V = np.asarray(V, dtype=float)
        v_subj = V.reshape(-1, self.n0).sum(axis=1)
        v_grp = np.bincount(self.subj_of_group, weights=v_subj, minlength=self.n_sub.size)
        return self.A.T @ V + r1 * (self.A_subj.T @ v_subj) + self.A_grp.T @ (r2 * v_grp)


def sample_gamma_coeffs(M, w, gamma, eta, off, dB, Zint, total, m0, v0, rng):
    """Update all spline coefficients in place.

    The intercept is drawn from its normal conditional (prior
    ``N(m0, 1/v0)``); every other coefficient from its normal conditional
    truncated below at the largest value that keeps each interior latent
    score inside its interval (and at 0), or from ``chi + Exp(eta)`` when its
    basis column carries no likelihood information.

    Parameters
    ----------
    M : ndarray
        ``A^T Sigma^{-1} A`` for the stacked design ``A = [X, B]``.
    w : ndarray
        ``A^T Sigma^{-1} (Z - A theta)``; updated in place.
    gamma : ndarray
        Updated in place.
    off : int
        Column of the intercept in ``A``.
    dB : scipy.sparse.csc_matrix
        Basis increments ``B(R) - B(L)`` of interior records for the
        non-intercept columns (only strictly positive entries stored).
    Zint : ndarray
        Latent scores of the interior records.
    total : ndarray
        ``dB @ gamma[1:]``; updated in place.
    """
    P = v0 + M[off, off]
    g_old = gamma[0]
    lin = v0 * m0 + w[off] + M[off, off] * g_old
    g_new = lin / P + rng.standard_normal() / np.sqrt(P)
    gamma[0] = g_new
    w -= M[:, off] * (g_new - g_old)
    _kernels.gamma_sweep(
        int(rng.integers(2**31)), M, w, gamma, float(eta), int(off),
        dB.indptr.astype(np.int64), dB.indices.astype(np.int64), dB.data, Zint, total,
    )
    return gamma


def sample_eta(gamma, alpha, beta, rng):
    """``eta | gamma ~ Gamma(alpha + K, beta + sum gamma[1:])`` (rate form)."""
    K = gamma.shape[0] - 1
    return float(sample_gamma(alpha + K, beta + np.sum(gamma[1:]), rng))


def sample_latent_sweep(Z, mu, lo, hi, n_sub, n0, tau1, tau2, rng):
    """Redraw every latent score from its truncated univariate conditional (in place)."""
    _kernels.latent_sweep(int(rng.integers(2**31)), Z, mu, lo, hi,
                          np.asarray(n_sub, dtype=np.int64), int(n0), float(tau1), float(tau2))
    return Z
