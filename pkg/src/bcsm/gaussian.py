"""Covariance structure model for fully observed Gaussian outcomes.

With observed outcomes ``y_i ~ N(X_i beta, Sigma_i(tau))`` the sampler
alternates between ``beta | tau`` and ``tau | beta``.  For balanced layouts
all ``tau_q`` (``tau_0`` included, unless fixed) are drawn jointly from
their sequential shifted inverse gamma posteriors.  Two-way layouts with a
fixed ``tau_0 = 1`` use the same group-completion update as the survival
sampler, which also covers groups of unequal size.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, check_X_y

from .covariance import inverse_coefficients
from .distributions import sample_mvn_precision
from .exceptions import UnsupportedLayoutError, ValidationError
from .gibbs import DesignGrams, sample_tau_balanced, two_way_tau_step
from .layout import NestedLayout
from .survival import PosteriorDraws

__all__ = ["BCSMGaussianRegressor"]


def _stacked_grams(s, A, B):
    """``sum_i A_i^T (I kron J_{s_q}) B_i`` over equally sized stacked groups, for every level ``q``."""
    out = [A.T @ B]
    for sq in s[1:]:
        out.append(A.reshape(-1, sq, A.shape[1]).sum(axis=1).T @ B.reshape(-1, sq, B.shape[1]).sum(axis=1))
    return out


class BCSMGaussianRegressor(BaseEstimator):
    """Gibbs sampler for a nested covariance structure with observed outcomes.

    Parameters
    ----------
    layout : NestedLayout or dict
        Nesting of one group (balanced) or of all groups (``top_counts``).
        For a balanced layout the number of groups is ``len(y) / s_Q``.
    fit_tau0 : bool, default True
        Sample the observation-level variance; otherwise it is fixed at
        ``tau0``.
    tau0 : float, default 1.0
    alpha, beta : float or array_like of length Q+1, default 0
        Shape and scale of the shifted inverse gamma priors (0 is improper).
    beta_prior_mean : float or array_like, default 0
    beta_prior_precision : float or array_like, default 0
        Scalar (times identity), vector (diagonal) or full precision matrix
        of the normal prior on the coefficients.
    n_iter : int, default 2000
        Retained draws.
    burn_in : int, default 500
    tau1_update : {"augmented", "marginal"}, default "augmented"
        Only used for two-way layouts with unequal group sizes, see
        :func:`~bcsm.gibbs.two_way_tau_step`.
    random_state : int, optional

    Attributes
    ----------
    draws_ : PosteriorDraws
        Columns ``beta_<feature>`` and ``tau0 .. tauQ``.
    coef_ : ndarray
        Posterior means of the coefficients.
    tau_ : ndarray
        Posterior means of ``tau``.
    """

    def __init__(self, layout=None, fit_tau0=True, tau0=1.0, alpha=0.0, beta=0.0, beta_prior_mean=0.0,
                 beta_prior_precision=0.0, n_iter=2000, burn_in=500, tau1_update="augmented",
                 random_state=None):
        self.layout = layout
        self.fit_tau0 = fit_tau0
        self.tau0 = tau0
        self.alpha = alpha
        self.beta = beta
        self.beta_prior_mean = beta_prior_mean
        self.beta_prior_precision = beta_prior_precision
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.tau1_update = tau1_update
        self.random_state = random_state

    def _layout(self, n):
        lay = self.layout
        if lay is None:
            raise ValidationError("a layout is required")
        if isinstance(lay, dict):
            lay = NestedLayout.from_dict(lay)
        if lay.top_counts is None:
            sQ = int(lay.s[-1])
            if n % sQ:
                raise ValidationError(f"{n} outcomes do not split into groups of size {sQ}")
            return lay, [sQ] * (n // sQ)
        sizes = lay.group_sizes()
        if sizes.sum() != n:
            raise ValidationError(f"layout describes {sizes.sum()} outcomes, got {n}")
        return lay, [int(v) for v in sizes]

    def _prior(self, p):
        b0 = np.broadcast_to(np.asarray(self.beta_prior_mean, dtype=float), (p,)).copy()
        L0 = np.asarray(self.beta_prior_precision, dtype=float)
        if L0.ndim == 0:
            L0 = float(L0) * np.eye(p)
        elif L0.ndim == 1:
            L0 = np.diag(L0)
        if L0.shape != (p, p):
            raise ValidationError(f"beta_prior_precision must be {p} x {p}")
        return b0, L0

    def fit(self, X, y):
        """Run the sampler on outcomes ``y`` ordered by the layout (level 0 fastest)."""
        X, y = check_X_y(X, y, ensure_min_features=0, y_numeric=True)
        layout, sizes = self._layout(y.size)
        Q = layout.Q
        p = X.shape[1]
        alpha = np.broadcast_to(np.asarray(self.alpha, dtype=float), (Q + 1,))
        beta_h = np.broadcast_to(np.asarray(self.beta, dtype=float), (Q + 1,))
        b0, L0 = self._prior(p)
        two_way = Q == 2 and not self.fit_tau0 and self.tau0 == 1.0
        unbalanced = layout.top_counts is not None and not layout.is_balanced
        if unbalanced and not two_way:
            raise UnsupportedLayoutError(
                "unequal group sizes are supported for two-way layouts with tau0 fixed at 1"
            )
        n0 = layout.n[0]
        n_sub = np.asarray([sz // n0 for sz in sizes], dtype=np.int64)
        rng = np.random.default_rng(self.random_state)
        grams = DesignGrams(X, n_sub, n0) if two_way and p else None
        base = layout.group_layout(0) if layout.top_counts is not None else layout
        if p and grams is None:
            # balanced: the per-level grams of the design are fixed, only their weights change
            s = [int(v) for v in base.s]
            gXX = _stacked_grams(s, X, X)
            gXy = _stacked_grams(s, X, y[:, None])

        beta = np.zeros(p)
        tau = np.zeros(Q + 1)
        tau[0] = 1.0 if self.fit_tau0 else float(self.tau0)
        u_bar = np.zeros(len(sizes))
        if p:
            # start from least squares so the first tau draw sees sensible residuals
            beta = np.linalg.lstsq(X, y, rcond=None)[0]
        out = np.empty((int(self.n_iter), p + Q + 1))
        for it in range(int(self.burn_in) + int(self.n_iter)):
            V = y - X @ beta
            if two_way:
                tau[1], tau[2] = two_way_tau_step(V, n_sub, n0, tau[1], tau[2], u_bar, alpha[1], beta_h[1],
                                                  alpha[2], beta_h[2], rng, self.tau1_update)
            else:
                tau = sample_tau_balanced(base, V.reshape(len(sizes), -1), alpha, beta_h, rng,
                                          None if self.fit_tau0 else float(self.tau0))
            if grams is not None:
                beta = sample_mvn_precision(L0 @ b0 + grams.project(y, tau[1], tau[2]),
                                            L0 + grams.precision(tau[1], tau[2]), rng)[0]
            elif p:
                w = np.concatenate([[1.0 / tau[0]], inverse_coefficients(base, tau)])
                P = L0 + sum(c * g for c, g in zip(w, gXX))
                lin = L0 @ b0 + sum(c * g for c, g in zip(w, gXy)).ravel()
                beta = sample_mvn_precision(lin, P, rng)[0]
            if it >= self.burn_in:
                out[it - self.burn_in] = np.concatenate([beta, tau])
        names = [f"beta_x{j + 1}" for j in range(p)] + [f"tau{q}" for q in range(Q + 1)]
        self.draws_ = PosteriorDraws(names, [out])
        self.coef_ = out[:, :p].mean(axis=0)
        self.tau_ = out[:, p:].mean(axis=0)
        self.n_features_in_ = p
        self.layout_ = layout
        return self

    def predict(self, X):
        """Posterior mean ``X beta``."""
        check_is_fitted(self, "draws_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_
