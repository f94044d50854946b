import numpy as np
import pytest

from bcsm.covariance import (
    CovarianceParams,
    eigenvalues,
    first_violation,
    inverse_coefficients,
    is_positive_definite,
    lower_bound,
    materialize_dense,
    quadratic_form,
)
from bcsm.exceptions import NotPositiveDefiniteError, OracleCapError, ValidationError
from bcsm.layout import NestedLayout, derive_sizes

from conftest import random_balanced_layout, random_pd_tau


def dense_inverse_from_rho(layout, tau, rho):
    s, m = derive_sizes(layout)
    out = np.eye(s[-1]) / tau[0]
    for q in range(1, layout.Q + 1):
        out += rho[q - 1] * np.kron(np.eye(m[q]), np.ones((s[q], s[q])))
    return out


def test_eigenvalues_two_by_two():
    lay = NestedLayout((2, 2))
    spec = eigenvalues(lay, [1.0, 0.5, 0.25])
    np.testing.assert_allclose(spec.v, [1.0, 2.0, 3.0])
    assert spec.p.tolist() == [2, 1, 1]
    dense = np.linalg.eigvalsh(materialize_dense(lay, [1.0, 0.5, 0.25]))
    np.testing.assert_allclose(np.sort(dense), np.sort(np.repeat(spec.v, spec.p)), atol=1e-12)


def test_eigenvalues_identity():
    spec = eigenvalues(NestedLayout((3, 2)), [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(spec.v, np.ones(3))


def test_eigenvalues_negative_covariance():
    spec = eigenvalues(NestedLayout((2,)), [1.0, -0.4])
    np.testing.assert_allclose(spec.v, [1.0, 0.2])


def test_pd_bound_two_by_two():
    lay = NestedLayout((2, 2))
    assert is_positive_definite(lay, [1.0, 0.5, -0.49])
    assert lower_bound(lay, [1.0, 0.5, -0.49], 2) == pytest.approx(-0.5)
    assert np.linalg.eigvalsh(materialize_dense(lay, [1.0, 0.5, -0.49])).min() > 0
    assert not is_positive_definite(lay, [1.0, 0.5, -0.5])


def test_pd_identity_any_layout(rng):
    for _ in range(5):
        lay = random_balanced_layout(rng)
        assert is_positive_definite(lay, np.r_[1.0, np.zeros(lay.Q)])


def test_pd_bound_uses_largest_group():
    lay = NestedLayout.top_unbalanced((3,), (4, 10, 7))
    bound = lower_bound(lay, [1.0, 0.4, 0.0], 2)
    assert bound == pytest.approx(-(1 + 3 * 0.4) / 30)
    # just inside and just outside the bound, checked on the dense block of every group
    for tau2, expect in ((bound + 1e-6, True), (bound - 1e-6, False)):
        tau = [1.0, 0.4, tau2]
        assert is_positive_definite(lay, tau) is expect
        dense_ok = all(np.linalg.eigvalsh(materialize_dense(lay.group_layout(i), tau)).min() > 0
                       for i in range(lay.n_groups))
        assert dense_ok is expect


def test_top_unbalanced_groups_pd_iff_largest_balanced(rng):
    for _ in range(200):
        counts = tuple(int(v) for v in rng.integers(1, 6, 3))
        if max(counts) < 2:
            continue
        lay = NestedLayout.top_unbalanced((2,), counts)
        tau = [1.0, rng.uniform(-0.6, 1.0), rng.uniform(-0.5, 0.5)]
        groups_pd = all(np.linalg.eigvalsh(materialize_dense(lay.group_layout(i), tau)).min() > 1e-12
                        for i in range(lay.n_groups))
        full = np.linalg.eigvalsh(materialize_dense(NestedLayout((2, max(counts))), tau)).min() > 1e-12
        assert groups_pd == full == is_positive_definite(lay, tau)


def test_first_violation_reports_index():
    lay = NestedLayout((2, 2))
    assert first_violation(lay, [1.0, -0.6, 0.0]) == 1
    assert first_violation(lay, [1.0, 0.5, -0.6]) == 2
    with pytest.raises(NotPositiveDefiniteError) as info:
        inverse_coefficients(lay, [1.0, 0.5, -0.6])
    assert info.value.index == 2


def test_inverse_coefficients_single_factor():
    lay = NestedLayout((2,))
    rho = inverse_coefficients(lay, [1.0, 0.5])
    np.testing.assert_allclose(rho, [-0.25])
    inv = dense_inverse_from_rho(lay, [1.0, 0.5], rho)
    np.testing.assert_allclose(inv, [[0.75, -0.25], [-0.25, 0.75]], atol=1e-15)


def test_inverse_coefficients_identity():
    np.testing.assert_array_equal(inverse_coefficients(NestedLayout((2, 3)), [1.0, 0.0, 0.0]), [0.0, 0.0])


def test_inverse_coefficients_two_by_two():
    lay = NestedLayout((2, 2))
    tau = [1.0, 0.5, 0.25]
    rho = inverse_coefficients(lay, tau, check=True)
    np.testing.assert_allclose(rho, [-0.25, -1 / 24], rtol=1e-14)
    dense = np.linalg.inv(materialize_dense(lay, tau))
    assert np.max(np.abs(dense_inverse_from_rho(lay, tau, rho) - dense)) < 1e-12


def test_inverse_reconstruction_random(rng):
    for _ in range(100):
        lay = random_balanced_layout(rng)
        tau = random_pd_tau(rng, lay)
        rho = inverse_coefficients(lay, tau, check=True)
        S = materialize_dense(lay, tau)
        err = np.abs(S @ dense_inverse_from_rho(lay, tau, rho) - np.eye(S.shape[0])).max()
        assert err < 1e-10


def test_quadratic_form_identity_gives_inverse():
    lay = NestedLayout((2,))
    np.testing.assert_allclose(quadratic_form(lay, [1.0, 0.5], np.eye(2)), [[0.75, -0.25], [-0.25, 0.75]])


def test_quadratic_form_ones(rng):
    for _ in range(20):
        lay = random_balanced_layout(rng)
        tau = random_pd_tau(rng, lay)
        s, _ = derive_sizes(lay)
        v = eigenvalues(lay, tau).v
        assert quadratic_form(lay, tau, np.ones(s[-1])) == pytest.approx(s[-1] / v[-1], rel=1e-12)


def test_quadratic_form_random_matches_dense(rng):
    lay = NestedLayout((2, 2))
    for _ in range(20):
        tau = random_pd_tau(rng, lay)
        A = rng.standard_normal((4, 2))
        B = rng.standard_normal((4, 3))
        Si = np.linalg.inv(materialize_dense(lay, tau))
        np.testing.assert_allclose(quadratic_form(lay, tau, A), A.T @ Si @ A, atol=1e-12, rtol=0)
        np.testing.assert_allclose(quadratic_form(lay, tau, A, B), A.T @ Si @ B, atol=1e-12, rtol=0)


def test_quadratic_form_dimension_mismatch():
    with pytest.raises(ValidationError):
        quadratic_form(NestedLayout((2, 2)), [1.0, 0.1, 0.1], np.ones((3, 2)))


def test_materialize_dense_small():
    np.testing.assert_array_equal(materialize_dense(NestedLayout((2,)), [1.0, 0.5]), [[1.5, 0.5], [0.5, 1.5]])
    np.testing.assert_array_equal(materialize_dense(NestedLayout((2, 3)), [1.0, 0.0, 0.0]), np.eye(6))


def test_materialize_dense_top_unbalanced():
    lay = NestedLayout.top_unbalanced((2,), (1, 2))
    S = materialize_dense(lay, [1.0, 0.1, 0.05])
    assert S.shape == (6, 6)
    # group 0: one subject with two events
    np.testing.assert_allclose(S[:2, :2], np.eye(2) + 0.15 * np.ones((2, 2)))
    # group 1: two subjects with two events each
    member = np.array([0, 0, 1, 1])
    expected = np.eye(4) + 0.1 * (member[:, None] == member[None, :]) + 0.05 * np.ones((4, 4))
    np.testing.assert_allclose(S[2:, 2:], expected)
    np.testing.assert_array_equal(S[:2, 2:], 0.0)


def test_materialize_dense_cap():
    with pytest.raises(OracleCapError):
        materialize_dense(NestedLayout((4, 4, 4)), [1.0, 0.1, 0.1, 0.1], cap=32)


def test_determinant_matches_dense(rng):
    for _ in range(50):
        lay = random_balanced_layout(rng)
        tau = random_pd_tau(rng, lay)
        _, logdet = np.linalg.slogdet(materialize_dense(lay, tau))
        assert eigenvalues(lay, tau).logdet == pytest.approx(logdet, rel=1e-8, abs=1e-10)


def test_covariance_params_validation():
    with pytest.raises(ValidationError):
        CovarianceParams((0.0, 0.1))
    assert CovarianceParams((1.0, -0.2, 0.1)).Q == 2
