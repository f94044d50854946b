import numpy as np
import pytest

from bcsm.exceptions import LayoutError
from bcsm.layout import NestedLayout, build_incidence, derive_sizes
from bcsm.oracle import direct_covariance, recursive_covariance

from conftest import random_balanced_layout, random_pd_tau


def test_derive_sizes_two_factors():
    s, m = derive_sizes(NestedLayout((2, 3)))
    assert s.tolist() == [1, 2, 6]
    assert m.tolist() == [6, 3, 1]


def test_derive_sizes_single_observation_cluster():
    s, m = derive_sizes(NestedLayout((1,), require_identifiable=False))
    assert s.tolist() == [1, 1]
    assert m.tolist() == [1, 1]


def test_derive_sizes_three_factors():
    s, m = derive_sizes(NestedLayout((3, 2, 2)))
    assert s.tolist() == [1, 3, 6, 12]
    assert m.tolist() == [12, 4, 2, 1]
    assert all(s[-1] % v == 0 for v in s)


def test_incidence_single_factor():
    N = build_incidence(NestedLayout((2,)), 1)
    np.testing.assert_array_equal(N, np.ones((2, 1)))


def test_incidence_blocks_of_two():
    N = build_incidence(NestedLayout((2, 2)), 1)
    np.testing.assert_array_equal(N, np.kron(np.eye(2), np.ones((2, 1))))


def test_incidence_top_unbalanced():
    lay = NestedLayout.top_unbalanced((1,), (2, 3), require_identifiable=False)
    N = build_incidence(lay, lay.Q)
    # enumerate memberships: rows 0-1 belong to group 0, rows 2-4 to group 1
    expected = np.zeros((5, 2))
    expected[:2, 0] = 1
    expected[2:, 1] = 1
    np.testing.assert_array_equal(N, expected)
    assert np.all(N.sum(axis=1) == 1)


def test_incidence_index_out_of_range():
    with pytest.raises(IndexError):
        build_incidence(NestedLayout((2, 2)), 3)
    with pytest.raises(IndexError):
        build_incidence(NestedLayout((2, 2)), 0)


def test_incidence_products_match_kronecker(rng):
    for _ in range(20):
        lay = random_balanced_layout(rng)
        s, m = derive_sizes(lay)
        for q in range(1, lay.Q + 1):
            N = build_incidence(lay, q)
            np.testing.assert_array_equal(N.sum(axis=1), np.ones(s[-1]))
            np.testing.assert_array_equal(N @ N.T, np.kron(np.eye(m[q]), np.ones((s[q], s[q]))))


def test_recursive_and_direct_covariance_agree(rng):
    for _ in range(30):
        lay = random_balanced_layout(rng)
        tau = random_pd_tau(rng, lay)
        np.testing.assert_allclose(recursive_covariance(lay, tau), direct_covariance(lay, tau), atol=1e-12, rtol=0)


def test_unidentifiable_layout_rejected():
    with pytest.raises(LayoutError):
        NestedLayout((2, 1))
    NestedLayout((2, 1), require_identifiable=False)


def test_top_counts_must_match_last_entry():
    with pytest.raises(LayoutError):
        NestedLayout((2, 4), (2, 3))
    with pytest.raises(LayoutError):
        NestedLayout((2, 3), (0, 3))


def test_layout_serialization_round_trip():
    lay = NestedLayout.top_unbalanced((3,), (2, 5, 4))
    d = lay.to_dict()
    assert d == {"n": [3, 5], "top_counts": [2, 5, 4]}
    assert NestedLayout.from_dict(d) == lay
    assert lay.group_sizes().tolist() == [6, 15, 12]
    assert not lay.is_balanced
    assert lay.group_layout(0).n == (3, 2)
