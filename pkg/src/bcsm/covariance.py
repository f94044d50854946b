"""Closed-form algebra of the nested covariance matrix.

For a balanced layout with cluster sizes ``s_q`` and counts ``m_q`` the
covariance of one top-level unit is

    Sigma = tau_0 I + sum_{q=1}^{Q} tau_q (I_{m_q} kron J_{s_q}),

with distinct eigenvalues ``v_q = tau_0 + sum_{r<=q} s_r tau_r`` and an
inverse of the same form.  Nothing here builds a dense matrix except
:func:`materialize_dense`, which exists for the test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NotPositiveDefiniteError, OracleCapError, UnsupportedLayoutError, ValidationError
from .layout import derive_sizes

__all__ = [
    "CovarianceParams",
    "SpectralSummary",
    "eigenvalues",
    "is_positive_definite",
    "lower_bound",
    "first_violation",
    "inverse_coefficients",
    "cluster_gram",
    "quadratic_form",
    "materialize_dense",
    "DEFAULT_ORACLE_CAP",
]

DEFAULT_ORACLE_CAP = 512


@dataclass(frozen=True)
class CovarianceParams:
    """Covariance parameters ``(tau_0, ..., tau_Q)``.

    Positive definiteness is not enforced here; use
    :func:`is_positive_definite` to query it.
    """

    tau: tuple

    def __post_init__(self):
        tau = tuple(float(t) for t in np.atleast_1d(self.tau))
        if len(tau) < 1:
            raise ValidationError("tau must contain at least tau_0")
        if not tau[0] > 0:
            raise ValidationError(f"tau_0 must be positive, got {tau[0]}")
        object.__setattr__(self, "tau", tau)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.tau, dtype=dtype)

    @property
    def Q(self):
        return len(self.tau) - 1


@dataclass(frozen=True)
class SpectralSummary:
    """Distinct eigenvalues ``v`` and their multiplicities ``p`` (per group)."""

    v: np.ndarray
    p: np.ndarray

    @property
    def logdet(self):
        return float(np.sum(self.p * np.log(self.v)))

    @property
    def determinant(self):
        return float(np.prod(self.v.astype(float) ** self.p))


def _tau_array(layout, tau):
    tau = np.asarray(tau, dtype=float).ravel()
    if tau.shape[0] != layout.Q + 1:
        raise ValidationError(f"tau has length {tau.shape[0]}, expected Q+1 = {layout.Q + 1}")
    return tau


def _group_sizes(layout, group):
    """Cluster sizes of the layout used for spectral quantities."""
    if layout.top_counts is not None:
        if group is None:
            if not layout.is_balanced:
                raise UnsupportedLayoutError(
                    "eigenvalues of a top-layer-unbalanced layout depend on the group; pass group="
                )
            group = 0
        return derive_sizes(layout.group_layout(group))
    return derive_sizes(layout)


def _v(s, tau):
    return tau[0] + np.concatenate([[0.0], np.cumsum(s[1:] * tau[1:])])


def eigenvalues(layout, tau, group=None):
    """Distinct eigenvalues of ``Sigma`` with their multiplicities.

    Parameters
    ----------
    layout : NestedLayout
    tau : array_like of length Q+1
    group : int, optional
        Group index for top-layer-unbalanced layouts.

    Returns
    -------
    SpectralSummary
        ``v[q] = tau_0 + sum_{r<=q} s_r tau_r`` with multiplicity
        ``p[q] = m_q - m_{q+1}`` (``p[Q] = 1``).
    """
    tau = _tau_array(layout, tau)
    s, m = _group_sizes(layout, group)
    p = np.append(m[:-1] - m[1:], 1)
    return SpectralSummary(_v(s, tau), p)


def _bound_sizes(layout):
    # s-bar: the largest group determines the binding factor-Q constraint
    return derive_sizes(layout)[0]


def lower_bound(layout, tau, q):
    """Lower bound on ``tau_q`` for positive definiteness given the others.

    Returns ``-(tau_0 + sum_{r<q} s_r tau_r) / s_q`` (``0`` for ``q = 0``).
    For top-layer-unbalanced layouts the factor-Q bound uses the maximal
    group size.
    """
    tau = _tau_array(layout, tau)
    if not 0 <= q <= layout.Q:
        raise IndexError(f"q={q} outside 0..{layout.Q}")
    if q == 0:
        return 0.0
    s = _bound_sizes(layout)
    return -float(tau[0] + np.dot(s[1:q], tau[1:q])) / float(s[q])


def _eps(tau):
    return 1e-12 * max(1.0, float(tau[0]))


def first_violation(layout, tau):
    """Index of the first violated positive-definiteness bound, or None."""
    tau = _tau_array(layout, tau)
    v = _v(_bound_sizes(layout), tau)
    bad = np.flatnonzero(~(v > _eps(tau)))
    return None if bad.size == 0 else int(bad[0])


def is_positive_definite(layout, tau):
    """Whether ``Sigma(tau)`` is positive definite for every group of ``layout``.

    The test is strict: all ``v_q`` must exceed ``1e-12 * max(1, tau_0)``.
    """
    return first_violation(layout, tau) is None


def inverse_coefficients(layout, tau, group=None, check=False):
    """Coefficients ``rho_1..rho_Q`` of the inverse covariance.

    ``Sigma^{-1} = I / tau_0 + sum_q rho_q (I_{m_q} kron J_{s_q})`` with
    ``rho_q = -tau_q / (v_q v_{q-1})``.

    Parameters
    ----------
    check : bool, default False
        Verify ``1/tau_0 + sum_{r<=q} s_r rho_r = 1/v_q`` for every q.

    Raises
    ------
    NotPositiveDefiniteError
        If ``tau`` is outside the positive-definite region; ``.index`` holds
        the first violated bound.
    """
    tau = _tau_array(layout, tau)
    q_bad = first_violation(layout, tau)
    if q_bad is not None:
        raise NotPositiveDefiniteError(
            f"covariance parameters violate the positive-definiteness bound for q={q_bad}", q_bad
        )
    s, _ = _group_sizes(layout, group)
    v = _v(s, tau)
    rho = -tau[1:] / (v[1:] * v[:-1])
    if check:
        lhs = 1.0 / tau[0] + np.cumsum(s[1:] * rho)
        if not np.allclose(lhs, 1.0 / v[1:], rtol=1e-10, atol=0):
            raise AssertionError("inverse coefficient identity failed")
    return rho


def cluster_gram(layout, A, group=None):
    """Gram matrices of per-cluster column sums.

    Returns a list ``G`` with ``G[0] = A^T A`` and, for ``q >= 1``,
    ``G[q] = sum_c a_c a_c^T`` where ``a_c`` is the column sum of ``A`` over
    the rows of level-``q`` cluster ``c``; i.e. ``A^T (I kron J_{s_q}) A``.
    The list can be cached and reused with any ``tau``.
    """
    A = np.asarray(A, dtype=float)
    vec = A.ndim == 1
    if vec:
        A = A[:, None]
    s, _ = _group_sizes(layout, group)
    if A.shape[0] != s[-1]:
        raise ValidationError(f"A has {A.shape[0]} rows, expected s_Q = {s[-1]}")
    grams = [A.T @ A]
    for q in range(1, len(s)):
        sums = A.reshape(-1, s[q], A.shape[1]).sum(axis=1)
        grams.append(sums.T @ sums)
    return grams


def quadratic_form(layout, tau, A, B=None, group=None, grams=None):
    """``A^T Sigma^{-1} A`` (or ``A^T Sigma^{-1} B``) without forming ``Sigma^{-1}``.

    Parameters
    ----------
    layout : NestedLayout
    tau : array_like
    A : ndarray of shape (s_Q,) or (s_Q, k)
    B : ndarray, optional
        Second factor; defaults to ``A``.
    grams : list of ndarray, optional
        Precomputed :func:`cluster_gram` output for ``A`` (ignored if ``B``
        is given).
    """
    tau = _tau_array(layout, tau)
    rho = inverse_coefficients(layout, tau, group=group)
    A = np.asarray(A, dtype=float)
    scalar = A.ndim == 1
    if B is None:
        if grams is None:
            grams = cluster_gram(layout, A, group=group)
    else:
        B = np.asarray(B, dtype=float)
        s, _ = _group_sizes(layout, group)
        A2 = A[:, None] if A.ndim == 1 else A
        B2 = B[:, None] if B.ndim == 1 else B
        if A2.shape[0] != s[-1] or B2.shape[0] != s[-1]:
            raise ValidationError(f"A and B must have s_Q = {s[-1]} rows")
        grams = [A2.T @ B2]
        for q in range(1, len(s)):
            sa = A2.reshape(-1, s[q], A2.shape[1]).sum(axis=1)
            sb = B2.reshape(-1, s[q], B2.shape[1]).sum(axis=1)
            grams.append(sa.T @ sb)
        scalar = scalar and B.ndim == 1
    out = grams[0] / tau[0]
    for q in range(1, len(grams)):
        out = out + rho[q - 1] * grams[q]
    if scalar:
        return float(out[0, 0])
    return out


def materialize_dense(layout, tau, cap=DEFAULT_ORACLE_CAP):
    """Dense covariance matrix (oracle support only).

    For top-layer-unbalanced layouts the result is block diagonal with one
    block per group.

    Raises
    ------
    OracleCapError
        If the matrix dimension exceeds ``cap``.
    """
    tau = _tau_array(layout, tau)
    if layout.top_counts is not None:
        blocks = [materialize_dense(layout.group_layout(i), tau, cap) for i in range(layout.n_groups)]
        dim = sum(b.shape[0] for b in blocks)
        if dim > cap:
            raise OracleCapError(f"dense dimension {dim} exceeds oracle cap {cap}")
        out = np.zeros((dim, dim))
        r = 0
        for b in blocks:
            out[r : r + b.shape[0], r : r + b.shape[0]] = b
            r += b.shape[0]
        return out
    s, m = derive_sizes(layout)
    dim = int(s[-1])
    if dim > cap:
        raise OracleCapError(f"dense dimension {dim} exceeds oracle cap {cap}")
    out = tau[0] * np.eye(dim)
    for q in range(1, layout.Q + 1):
        out += tau[q] * np.kron(np.eye(m[q]), np.ones((s[q], s[q])))
    return out
