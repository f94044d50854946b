import numpy as np
import pytest
from scipy import integrate, sparse, stats

from bcsm import _kernels
from bcsm.covariance import materialize_dense, quadratic_form
from bcsm.diagnostics import effective_sample_size
from bcsm.distributions import sample_shifted_ig
from bcsm.exceptions import ImproperPosteriorError, ValidationError
from bcsm.gibbs import (
    DesignGrams,
    augment_group_mean,
    augment_moments,
    beta_posterior,
    conditional_block,
    latent_conditional,
    sample_beta,
    sample_eta,
    sample_gamma_coeffs,
    sample_latent_sweep,
    sample_tau_balanced,
    scalar_conditional,
    tau1_posterior,
    tau2_posterior,
    tau_conditional,
    two_way_group_stats,
    two_way_tau_step,
)
from bcsm.layout import NestedLayout, derive_sizes
from bcsm.oracle import DenseGaussian, dense_conditional, gridded_posterior, truncated_mvn_sample

from conftest import random_balanced_layout, random_pd_tau


def ks_statistic(samples, cdf):
    x = np.sort(samples)
    F = cdf(x)
    n = x.size
    return max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n))


def grid_cdf(grid, dens):
    cum = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    cum /= cum[-1]
    return lambda x: np.interp(x, grid, cum)


# ---------------------------------------------------------------------------
# latent conditionals
# ---------------------------------------------------------------------------


def test_block_conditional_without_top_covariance(rng):
    lay = NestedLayout((2, 3))
    tau = np.array([1.0, 0.4, 0.0])
    mu, Z = rng.standard_normal(6), rng.standard_normal(6)
    theta, tau_r = conditional_block(lay, tau, mu, Z, 1)
    np.testing.assert_array_equal(theta, mu[2:4])
    np.testing.assert_array_equal(tau_r, [1.0, 0.4])


def test_block_conditional_shrinkage_factor():
    lay = NestedLayout((3, 2))
    tau = np.array([1.0, 0.5, 0.1])
    mu = np.zeros(6)
    Z = np.r_[np.zeros(3), np.ones(3)]
    theta, tau_r = conditional_block(lay, tau, mu, Z, 0)
    f2 = 0.3 / 2.8
    np.testing.assert_allclose(theta, np.full(3, f2), rtol=1e-14)
    cond = dense_conditional(DenseGaussian(mu, materialize_dense(lay, tau)), np.arange(3, 6), Z[3:])
    np.testing.assert_allclose(cond.mean, theta, atol=1e-12)
    np.testing.assert_allclose(tau_r, [1.0, 0.5 + 0.1 * (1 - f2)])


def test_block_conditional_matches_schur_complement(rng):
    for _ in range(50):
        lay = random_balanced_layout(rng, max_q=3, max_size=3)
        if lay.Q < 2:
            lay = NestedLayout(lay.n + (2,))
        tau = random_pd_tau(rng, lay)
        s, m = derive_sizes(lay)
        mu, Z = rng.standard_normal(s[-1]), rng.standard_normal(s[-1])
        j = int(rng.integers(m[-2]))
        theta, tau_r = conditional_block(lay, tau, mu, Z, j)
        bs = s[-2]
        rest = np.setdiff1d(np.arange(s[-1]), np.arange(j * bs, (j + 1) * bs))
        cond = dense_conditional(DenseGaussian(mu, materialize_dense(lay, tau)), rest, Z[rest])
        np.testing.assert_allclose(theta, cond.mean, atol=1e-10, rtol=0)
        sub = NestedLayout(lay.n[:-1], require_identifiable=False)
        np.testing.assert_allclose(materialize_dense(sub, tau_r), cond.cov, atol=1e-10, rtol=0)


def test_recursive_scalar_conditional_matches_dense_precision(rng):
    for _ in range(50):
        lay = random_balanced_layout(rng)
        tau = random_pd_tau(rng, lay)
        s, _ = derive_sizes(lay)
        mu, Z = rng.standard_normal(s[-1]), rng.standard_normal(s[-1])
        r = int(rng.integers(s[-1]))
        P = np.linalg.inv(materialize_dense(lay, tau))
        var = 1.0 / P[r, r]
        mean = mu[r] - var * (P[r] @ (Z - mu) - P[r, r] * (Z[r] - mu[r]))
        m_hat, v_hat = scalar_conditional(lay, tau, mu, Z, r)
        assert m_hat == pytest.approx(mean, abs=1e-10)
        assert v_hat == pytest.approx(var, abs=1e-10)


def test_latent_conditional_independent_case(rng):
    V = rng.standard_normal((3, 2))
    m, v = latent_conditional(2, 3, 0.0, 0.0, V, 1, 0)
    assert m == 0.0 and v == 1.0


def test_latent_conditional_within_subject_only():
    V = np.zeros((1, 3))
    _, var = latent_conditional(3, 1, 0.5, 0.0, V, 0, 0)
    assert var == pytest.approx(1.25)
    S = materialize_dense(NestedLayout((3,)), [1.0, 0.5])
    assert S[0, 0] - S[0, 1:] @ np.linalg.solve(S[1:, 1:], S[1:, 0]) == pytest.approx(1.25)


def test_latent_conditional_matches_dense(rng):
    for _ in range(100):
        n0, n1 = int(rng.integers(2, 5)), int(rng.integers(1, 5))
        lay = NestedLayout((n0, n1), require_identifiable=False)
        tau = random_pd_tau(rng, lay, tau0=1.0)
        V = rng.standard_normal(n0 * n1)
        j, k = int(rng.integers(n1)), int(rng.integers(n0))
        m, v = latent_conditional(n0, n1, tau[1], tau[2], V, j, k)
        m2, v2 = scalar_conditional(lay, tau, np.zeros_like(V), V, j * n0 + k)
        assert m == pytest.approx(m2, abs=1e-10)
        assert v == pytest.approx(v2, abs=1e-10)


def test_latent_sweep_keeps_bounds(rng):
    n_sub = np.array([3, 1, 2])
    n = 2 * n_sub.sum()
    mu = rng.standard_normal(n)
    lo = np.where(rng.random(n) < 0.5, -np.inf, -0.3)
    hi = np.where(np.isfinite(lo), 0.0, np.where(rng.random(n) < 0.5, np.inf, 0.0))
    Z = np.where(np.isfinite(lo), -0.1, np.where(np.isfinite(hi), -1.0, 0.5))
    for _ in range(200):
        sample_latent_sweep(Z, mu, lo, hi, n_sub, 2, 0.6, -0.1, rng)
        assert np.all((Z > lo) & (Z <= hi))


def test_latent_sweep_stationary_distribution():
    rng = np.random.default_rng(77)
    n0, n1 = 2, 2
    tau = np.array([1.0, 0.5, 0.3])
    mu = np.array([0.3, -0.2, 0.1, 0.4])
    lo = np.array([0.0, -np.inf, -1.0, -np.inf])
    hi = np.array([np.inf, 0.0, 0.0, np.inf])
    g = DenseGaussian(mu, materialize_dense(NestedLayout((n0, n1)), tau))
    exact = truncated_mvn_sample(g, lo, hi, rng, size=200_000)
    Z = np.array([0.5, -0.5, -0.5, 0.0])
    n_iter = 200_000
    chain = np.empty((n_iter, 4))
    for t in range(n_iter):
        sample_latent_sweep(Z, mu, lo, hi, np.array([n1]), n0, tau[1], tau[2], rng)
        chain[t] = Z
    chain = chain[1000:]

    def compare(a, b):
        se = np.hypot(a.std() / np.sqrt(effective_sample_size(a)), b.std() / np.sqrt(b.size))
        return abs(a.mean() - b.mean()) / se

    for i in range(4):
        assert compare(chain[:, i], exact[:, i]) < 3
    cm, em = chain.mean(axis=0), exact.mean(axis=0)
    for i in range(4):
        for j in range(i, 4):
            assert compare((chain[:, i] - cm[i]) * (chain[:, j] - cm[j]),
                           (exact[:, i] - em[i]) * (exact[:, j] - em[j])) < 3


# ---------------------------------------------------------------------------
# covariance parameters, balanced layouts
# ---------------------------------------------------------------------------


def test_tau_conditional_zero_residuals():
    lay = NestedLayout((2, 3))
    V = np.zeros((4, 6))
    d = tau_conditional(lay, V, 2.0, 0.7, 2, [1.0, 0.3, 0.0])
    assert d.a == pytest.approx(2.0 + 4 * 1 / 2)
    assert d.b == pytest.approx(0.7)
    assert d.sigma == pytest.approx((1.0 + 2 * 0.3) / 6)


def test_single_group_improper_posterior():
    lay = NestedLayout((2,))
    d = tau_conditional(lay, np.array([[1.0, -1.0]]), 0.0, 0.0, 1, [1.0, 0.0])
    # the group mean is 0, so the scale stays 0 and the density (1 + 2 tau1)^(-1/2) is not integrable
    assert (d.a, d.b, d.sigma) == (0.5, 0.0, 0.5)
    assert not d.proper
    with pytest.raises(ImproperPosteriorError):
        sample_tau_balanced(lay, np.array([[1.0, -1.0]]), 0.0, 0.0, np.random.default_rng(0), tau0=1.0)


def test_single_group_tau1_density_against_grid():
    lay = NestedLayout((2,))
    V = np.array([[1.0, -1.0]])
    alpha, beta = 1.0, 0.5
    d = tau_conditional(lay, V, alpha, beta, 1, [1.0, 0.0])
    grid = np.linspace(d.sigma * -1 + 1e-3, 50.0, 200_001)

    def loglik(t):
        # two-point covariance [[1+t, t], [t, 1+t]]: eigenvalues 1 and 1 + 2t
        return -0.5 * np.log(1 + 2 * t) - 0.5 * (0.0 / (1 + 2 * t) + 2.0)

    post = gridded_posterior(loglik, lambda t: d.__class__(alpha, beta, d.sigma).logpdf(t), grid)
    closed = d.pdf(grid)
    closed /= integrate.trapezoid(closed, grid)
    assert np.max(np.abs(post - closed) / closed) < 1e-6


def test_sample_tau_balanced_support(rng):
    lay = NestedLayout((3, 2))
    V = rng.standard_normal((2, 6))
    for _ in range(20_000):
        tau = sample_tau_balanced(lay, V, 0.0, 0.0, rng, tau0=1.0)
        assert tau[1] > -1.0 / 3
        assert tau[2] > -(1.0 + 3 * tau[1]) / 6


def test_sample_tau_balanced_free_tau0(rng):
    lay = NestedLayout((2, 2))
    V = np.array([[1.0, 2.0, 3.0, 4.0], [0.5, -0.5, 1.5, 0.0]])
    draws = np.array([sample_tau_balanced(lay, V, 1.0, 1.0, rng) for _ in range(2000)])
    assert np.all(draws[:, 0] > 0)
    v = draws[:, 0][:, None] + np.cumsum(np.array([[2.0, 4.0]]) * draws[:, 1:], axis=1)
    assert np.all(v > 0)


# ---------------------------------------------------------------------------
# covariance parameters, two-way survival layout
# ---------------------------------------------------------------------------


def test_tau2_shift():
    d = tau2_posterior(np.zeros(4), 0.4, 3, 10, 1.0, 0.25)
    assert d.sigma == pytest.approx(2.2 / 30)
    assert d.b == 0.25
    assert d.a == 1.0 + 2.0


def test_tau1_posterior_terms():
    d = tau1_posterior([1.0, 3.0], [3, 5], 2, 1.0, 0.5)
    assert (d.a, d.b, d.sigma) == (1.0 + 3.0, 0.5 + 2.0, 0.5)
    d2 = tau1_posterior([1.0, 3.0], [3, 5], 2, 1.0, 0.5, D=[0.4], c=[0.5])
    assert d2.a == d.a + 0.5
    assert d2.b == pytest.approx(d.b + 0.16 / 0.5 / 2)


def test_group_stats():
    V = np.arange(12, dtype=float)
    subj, vbar, S2 = two_way_group_stats(V, [2, 1, 3], 2)
    np.testing.assert_allclose(subj, [0.5, 2.5, 4.5, 6.5, 8.5, 10.5])
    np.testing.assert_allclose(vbar, [1.5, 4.5, 8.5])
    np.testing.assert_allclose(S2, [2.0, 0.0, 8.0])


def test_augment_moments_without_group_covariance():
    mean, var = augment_moments(1.3, 2, 5, 3, 0.4, 0.0)
    assert mean == 0.0
    assert var == pytest.approx((1 + 3 * 0.4) / (3 * 3))


def test_augment_moments_example_and_dense():
    mean, var = augment_moments(1.0, 2, 4, 3, 0.4, 0.1)
    assert mean == pytest.approx(0.6 / 2.8)
    # dense balanced group of 4 subjects: condition the mean of subjects 3-4 on the mean of subjects 1-2
    S = materialize_dense(NestedLayout((3, 4)), [1.0, 0.4, 0.1])
    a = np.r_[np.ones(6), np.zeros(6)] / 6
    b = np.r_[np.zeros(6), np.ones(6)] / 6
    cov = np.array([[a @ S @ a, a @ S @ b], [b @ S @ a, b @ S @ b]])
    g = dense_conditional(DenseGaussian([0.0, 0.0], cov), [0], [1.0])
    assert mean == pytest.approx(g.mean[0], abs=1e-12)
    assert var == pytest.approx(g.cov[0, 0], abs=1e-12)


def test_augment_full_group_rejected():
    with pytest.raises(ValidationError):
        augment_moments(0.0, 4, 4, 3, 0.4, 0.1)


def test_augmented_pair_matches_balanced_means():
    rng = np.random.default_rng(5)
    n0, n1, nbar1, tau1, tau2 = 3, 2, 5, 0.4, 0.15
    S = materialize_dense(NestedLayout((n0, nbar1)), [1.0, tau1, tau2])
    a = np.r_[np.ones(n0 * n1), np.zeros(n0 * (nbar1 - n1))] / (n0 * n1)
    b = np.r_[np.zeros(n0 * n1), np.ones(n0 * (nbar1 - n1))] / (n0 * (nbar1 - n1))
    cov = np.array([[a @ S @ a, a @ S @ b], [b @ S @ a, b @ S @ b]])
    n = 200_000
    vbar = np.sqrt(cov[0, 0]) * rng.standard_normal(n)
    u, vb = augment_group_mean(vbar, np.full(n, n1), nbar1, n0, tau1, tau2, rng)
    pair = np.column_stack([vbar, u])
    emp = np.cov(pair, rowvar=False)
    # standard errors of sample (co)variances of a bivariate normal
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / n)
    assert np.all(np.abs(emp - cov) < 3 * se)
    assert np.all(np.abs(pair.mean(axis=0)) < 3 * np.sqrt(np.diag(cov) / n))
    np.testing.assert_allclose(vb, (n1 * vbar + (nbar1 - n1) * u) / nbar1)


def test_tau2_chain_with_augmentation_matches_grid():
    rng = np.random.default_rng(2024)
    n0, n_sub, tau1 = 2, np.array([1, 3]), 0.3
    nbar1 = 3
    alpha2, beta2 = 2.0, 0.5
    V = np.array([0.8, 1.4, 0.2, 1.1, -0.3, 0.9, 0.5, 1.6])
    _, vbar, _ = two_way_group_stats(V, n_sub, n0)
    tau2, n_iter = 0.1, 300_000
    out = np.empty(n_iter)
    for t in range(n_iter):
        _, vb0 = augment_group_mean(vbar[:1], n_sub[:1], nbar1, n0, tau1, tau2, rng)
        vb = np.r_[vb0, vbar[1]]
        tau2 = sample_shifted_ig(tau2_posterior(vb, tau1, n0, nbar1, alpha2, beta2), rng)
        out[t] = tau2
    out = out[100:]
    w1 = tau1 + 1 / n0
    shift = w1 / nbar1

    def loglik(t2):
        blocks = [V[:2], V[2:]]
        res = np.zeros_like(t2)
        for i, x in enumerate(t2):
            lay = [NestedLayout((n0, k), require_identifiable=False) for k in n_sub]
            ll = 0.0
            for L, v in zip(lay, blocks):
                S = materialize_dense(L, [1.0, tau1, x])
                ll += stats.multivariate_normal(np.zeros(v.size), S).logpdf(v)
            res[i] = ll
        return res

    def logprior(t2):
        return stats.invgamma(alpha2, scale=beta2).logpdf(t2 + shift)

    grid = np.linspace(-shift + 1e-6, -shift + 40.0, 20_001)
    dens = gridded_posterior(loglik, logprior, grid)
    thin = out[:: max(1, int(round(out.size / effective_sample_size(out))))]
    assert ks_statistic(out, grid_cdf(grid, dens)) < 0.01
    assert thin.size > 10_000


def test_two_way_step_balanced_uses_plain_update():
    V = np.random.default_rng(3).standard_normal(12)
    u = np.full(2, np.nan)
    t1, t2 = two_way_tau_step(V, [3, 3], 2, 0.1, 0.1, u, 1.0, 1.0, 1.0, 1.0, np.random.default_rng(4))
    assert np.all(np.isnan(u))
    assert t1 > -0.5 and 1 + 2 * t1 + 6 * t2 > 0


# ---------------------------------------------------------------------------
# regression coefficients
# ---------------------------------------------------------------------------


def test_beta_independent_flat_prior_is_least_squares(rng):
    lay = NestedLayout((2, 3))
    X = [rng.standard_normal((6, 2)) for _ in range(3)]
    r = [rng.standard_normal(6) for _ in range(3)]
    mean, cov = beta_posterior(r, X, lay, [1.0, 0.0, 0.0], np.zeros(2), np.zeros((2, 2)))
    Xs, rs = np.vstack(X), np.concatenate(r)
    np.testing.assert_allclose(mean, np.linalg.lstsq(Xs, rs, rcond=None)[0], atol=1e-12)
    np.testing.assert_allclose(cov, np.linalg.inv(Xs.T @ Xs), atol=1e-12)


def test_beta_posterior_matches_dense(rng):
    lay = NestedLayout.top_unbalanced((2,), (3, 1, 2))
    tau = np.array([1.0, 0.4, -0.05])
    X = [rng.standard_normal((2 * k, 3)) for k in (3, 1, 2)]
    r = [rng.standard_normal(2 * k) for k in (3, 1, 2)]
    b0, L0 = rng.standard_normal(3), np.diag([0.5, 1.0, 2.0])
    mean, cov = beta_posterior(r, X, lay, tau, b0, L0)
    Si = np.linalg.inv(materialize_dense(lay, tau))
    Xs, rs = np.vstack(X), np.concatenate(r)
    P = L0 + Xs.T @ Si @ Xs
    np.testing.assert_allclose(cov, np.linalg.inv(P), atol=1e-10, rtol=0)
    np.testing.assert_allclose(mean, np.linalg.solve(P, L0 @ b0 + Xs.T @ Si @ rs), atol=1e-10, rtol=0)


def test_beta_prior_domination(rng):
    lay = NestedLayout((2, 2))
    X = [rng.standard_normal((4, 2))]
    r = [5.0 + rng.standard_normal(4)]
    draws = np.array([sample_beta(r, X, lay, [1.0, 0.2, 0.1], np.zeros(2), 1e8 * np.eye(2), rng)
                      for _ in range(100)])
    assert np.abs(draws).max() < 1e-3


def test_design_grams_match_quadratic_form(rng):
    n_sub, n0 = np.array([3, 1, 4]), 2
    A = rng.standard_normal((2 * n_sub.sum(), 3))
    V = rng.standard_normal(A.shape[0])
    tau = [1.0, 0.3, 0.2]
    G = DesignGrams(A, n_sub, n0)
    lay = NestedLayout.top_unbalanced((n0,), tuple(n_sub))
    bounds = np.r_[0, np.cumsum(n0 * n_sub)]
    P = sum(quadratic_form(lay, tau, A[a:b], group=i) for i, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])))
    w = sum(quadratic_form(lay, tau, A[a:b], V[a:b], group=i).ravel()
            for i, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])))
    np.testing.assert_allclose(G.precision(0.3, 0.2), P, atol=1e-12)
    np.testing.assert_allclose(G.project(V, 0.3, 0.2), w, atol=1e-12)


# ---------------------------------------------------------------------------
# spline coefficients
# ---------------------------------------------------------------------------


def _gamma_problem(dB_col, Z, tau=(1.0, 0.3, 0.2)):
    """One group of two subjects with two events, design = [intercept, basis column]."""
    n_sub, n0 = np.array([2]), 2
    A = np.column_stack([np.ones(4), dB_col])
    Si = np.linalg.inv(materialize_dense(NestedLayout((n0, 2)), tau))
    return A, Si


def test_gamma_conditional_matches_grid():
    Z = np.array([-0.3, -0.05, -0.5, -0.2])
    b = np.array([0.5, 0.1, 0.8, 0.4])  # basis increments of the four interior records
    A, Si = _gamma_problem(b, Z)
    eta = 1.5
    theta = np.array([-0.2, 1.0])
    M = A.T @ Si @ A
    rng = np.random.default_rng(8)
    dB = sparse.csc_matrix(b[:, None])
    draws = np.empty(100_000)
    gamma = theta.copy()
    w = A.T @ Si @ (Z - A @ gamma)
    total = b * gamma[1]
    for t in range(draws.size):
        _kernels.gamma_sweep(int(rng.integers(2**31)), M, w, gamma, eta, 0, dB.indptr.astype(np.int64),
                             dB.indices.astype(np.int64), dB.data, Z, total)
        draws[t] = gamma[1]
    chi = max(0.0, np.max(-Z / b))
    assert draws.min() >= chi

    def loglik(g):
        r = Z[None, :] - (theta[0] + np.outer(g, b))
        return -0.5 * np.einsum("ij,jk,ik->i", r, Si, r)

    grid = np.linspace(chi, chi + 8.0, 40_001)
    dens = gridded_posterior(loglik, lambda g: -eta * g, grid)
    assert ks_statistic(draws, grid_cdf(grid, dens)) < 0.01


def test_gamma_without_information_draws_shifted_exponential():
    Z = np.array([-0.3, -0.05, -0.5, -0.2])
    A = np.column_stack([np.ones(4), np.zeros(4)])
    M = np.zeros((2, 2))
    M[0, 0] = 1.0
    rng = np.random.default_rng(9)
    dB = sparse.csc_matrix(np.zeros((4, 1)))
    eta = 2.0
    draws = np.empty(50_000)
    gamma = np.array([0.0, 1.0])
    w = np.zeros(2)
    total = np.zeros(4)
    for t in range(draws.size):
        _kernels.gamma_sweep(int(rng.integers(2**31)), M, w, gamma, eta, 0, dB.indptr.astype(np.int64),
                             dB.indices.astype(np.int64), dB.data, Z, total)
        draws[t] = gamma[1]
    assert stats.kstest(draws, stats.expon(scale=1 / eta).cdf).pvalue > 0.01


def test_sample_gamma_coeffs_keeps_latent_admissible(rng):
    Z = np.array([-0.3, -0.05, -0.5, -0.2])
    b = np.array([[0.5, 0.1], [0.1, 0.0], [0.8, 0.3], [0.4, 0.4]])
    A = np.column_stack([np.ones(4), b])
    Si = np.linalg.inv(materialize_dense(NestedLayout((2, 2)), [1.0, 0.3, 0.2]))
    M = A.T @ Si @ A
    gamma = np.array([0.0, 1.0, 1.0])
    w = A.T @ Si @ (Z - A @ gamma)
    total = b @ gamma[1:]
    dB = sparse.csc_matrix(b)
    for _ in range(2000):
        sample_gamma_coeffs(M, w, gamma, 1.0, 0, dB, Z, total, 0.0, 0.0, rng)
        assert np.all(gamma[1:] >= 0)
        assert np.all(Z > -(b @ gamma[1:]) - 1e-12)
    np.testing.assert_allclose(total, b @ gamma[1:], atol=1e-10)
    np.testing.assert_allclose(w, A.T @ Si @ (Z - A @ gamma), atol=1e-10)


def test_sample_eta_mean():
    rng = np.random.default_rng(10)
    gamma = np.array([-1.0, 1.0, 2.0, 3.0])
    draws = np.array([sample_eta(gamma, 0.0, 0.0, rng) for _ in range(40_000)])
    assert abs(draws.mean() - 0.5) < 3 * draws.std() / np.sqrt(draws.size)
