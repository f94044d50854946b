"""Helmert contrasts and the nested sums of squares.

The Kronecker product of Helmert matrices diagonalizes the nested covariance
matrix, and the squared norms of the resulting contrast blocks are ordinary
nested ANOVA sums of squares.  The fast path below works only with the
cascade of hierarchical means; the dense Helmert matrices are available for
the oracle.
"""

import numpy as np
from scipy.linalg import helmert

from .exceptions import ValidationError
from .layout import derive_sizes

__all__ = [
    "helmert_matrix",
    "group_means_cascade",
    "sum_of_squares",
    "expand_means",
    "sample_structured_normal",
]


def helmert_matrix(nq):
    """Orthonormal Helmert matrix of order ``nq``.

    The first row is ``1/sqrt(nq)`` times the ones vector; the remaining rows
    are the usual Helmert contrasts.

    Examples
    --------
    >>> helmert_matrix(2).round(4)
    array([[ 0.7071,  0.7071],
           [ 0.7071, -0.7071]])
    """
    nq = int(nq)
    if nq < 1:
        raise ValidationError(f"Helmert order must be >= 1, got {nq}")
    return helmert(nq, full=True)


def _as_groups(layout, V):
    V = np.asarray(V, dtype=float)
    s, _ = derive_sizes(layout)
    if V.shape[-1] != s[-1]:
        raise ValidationError(f"group vector has length {V.shape[-1]}, expected s_Q = {s[-1]}")
    return V, s


def group_means_cascade(layout, V):
    """Means of every cluster at every level.

    Parameters
    ----------
    layout : NestedLayout
        Balanced layout of one group.
    V : ndarray of shape (..., s_Q)
        Group vector(s) in lexicographic row order.

    Returns
    -------
    list of ndarray
        Element ``q`` has shape ``(..., m_q)`` and holds the means of the
        level-``q`` clusters; element 0 is ``V`` itself and element Q the
        grand mean.
    """
    V, s = _as_groups(layout, V)
    out = [V]
    for q in range(1, len(s)):
        child = out[-1]
        n_q = s[q] // s[q - 1]
        out.append(child.reshape(child.shape[:-1] + (-1, n_q)).mean(axis=-1))
    return out


def sum_of_squares(layout, V):
    """Nested sums of squares ``S^2_0, ..., S^2_Q``.

    ``S^2_q`` (``q < Q``) is the sum over level-``q`` clusters of the squared
    difference between the cluster mean and its parent mean; ``S^2_Q`` is the
    squared grand mean.  They satisfy ``sum_q s_q S^2_q = ||V||^2``.

    Parameters
    ----------
    layout : NestedLayout
    V : ndarray of shape (s_Q,) or (n_groups, s_Q)

    Returns
    -------
    ndarray of shape (Q+1,) or (n_groups, Q+1)

    Examples
    --------
    >>> from bcsm.layout import NestedLayout
    >>> sum_of_squares(NestedLayout((2, 2)), [1.0, 2.0, 3.0, 4.0])
    array([1.  , 2.  , 6.25])
    """
    means = group_means_cascade(layout, V)
    Q = len(means) - 1
    ss = []
    for q in range(Q):
        n_q = means[q].shape[-1] // means[q + 1].shape[-1]
        dev = means[q] - np.repeat(means[q + 1], n_q, axis=-1)
        ss.append(np.sum(dev**2, axis=-1))
    ss.append(means[Q][..., 0] ** 2)
    return np.stack(ss, axis=-1)


def expand_means(means, s):
    """Broadcast level means back to observation rows (each repeated ``s`` times)."""
    return np.repeat(means, s, axis=-1)


def sample_structured_normal(layout, tau, rng, size=None):
    """Draw ``N(0, Sigma(tau))`` vectors for a balanced layout.

    Uses the spectral decomposition ``Sigma = sum_q v_q P_q`` where ``P_q`` are
    the orthogonal projections onto the between-level contrasts, so the cost
    is linear in ``s_Q``.

    Parameters
    ----------
    size : int, optional
        Number of independent group vectors; the result has shape
        ``(size, s_Q)`` (or ``(s_Q,)`` when omitted).
    """
    from .covariance import eigenvalues, inverse_coefficients  # local: avoid cycle

    tau = np.asarray(tau, dtype=float)
    inverse_coefficients(layout, tau)  # raises if not PD
    v = eigenvalues(layout, tau).v
    s, _ = derive_sizes(layout)
    n = 1 if size is None else int(size)
    z = rng.standard_normal((n, s[-1]))
    means = group_means_cascade(layout, z)
    Q = len(s) - 1
    out = np.sqrt(v[Q]) * expand_means(means[Q], s[Q])
    for q in range(Q):
        proj = expand_means(means[q], s[q]) - expand_means(means[q + 1], s[q + 1])
        out += np.sqrt(v[q]) * proj
    return out[0] if size is None else out
