import numpy as np
import pytest
from scipy.signal import lfilter

from bcsm.diagnostics import (
    effective_sample_size,
    geweke,
    hpd_interval,
    recovery_stats,
    spectrum0_ar,
    trace_stats,
    trimmed_sd,
)
from bcsm.exceptions import ValidationError


def ar1(phi, n, rng):
    e = rng.standard_normal(n)
    x = lfilter([1.0], [1.0, -phi], e)
    return x


def test_ess_white_noise():
    rng = np.random.default_rng(0)
    n = 10_000
    for _ in range(5):
        assert 0.8 * n <= effective_sample_size(rng.standard_normal(n)) <= 1.2 * n


def test_ess_ar1():
    rng = np.random.default_rng(1)
    n, phi = 100_000, 0.9
    target = n * (1 - phi) / (1 + phi)
    ess = effective_sample_size(ar1(phi, n, rng))
    assert abs(ess - target) < 0.15 * target


def test_ar_spectrum_selects_true_order():
    rng = np.random.default_rng(2)
    x = ar1(0.5, 50_000, rng)
    s, order = spectrum0_ar(x)
    # unit innovations: S(0) = 1 / (1 - phi)^2 = 4
    assert order >= 1
    assert s == pytest.approx(4.0, rel=0.1)


def test_ess_constant_and_short():
    assert effective_sample_size(np.full(100, 3.2)) == 0.0
    with pytest.raises(ValidationError):
        effective_sample_size(np.arange(10.0))


def test_ess_affine_invariance():
    rng = np.random.default_rng(3)
    x = ar1(0.7, 5000, rng)
    base = effective_sample_size(x)
    for a, b in [(3.0, 1.0), (1e-3, -7.0), (-2.0, 100.0)]:
        assert effective_sample_size(a * x + b) == pytest.approx(base, rel=1e-6)


def test_geweke_iid_calibration():
    rng = np.random.default_rng(4)
    z = np.array([geweke(rng.standard_normal(1000)) for _ in range(1000)])
    assert np.mean(np.abs(z) < 3) >= 0.99


def test_geweke_detects_trend():
    rng = np.random.default_rng(5)
    n = 2000
    x = rng.standard_normal(n) + np.linspace(0, 5, n)
    assert abs(geweke(x)) > 3


def test_geweke_equal_window_means():
    x = np.r_[np.tile([1.0, -1.0], 5), np.zeros(40), np.tile([2.0, -2.0], 25)]
    assert geweke(x) == 0.0


def test_geweke_windows():
    with pytest.raises(ValidationError):
        geweke(np.arange(100.0), first=0.6, last=0.5)
    with pytest.raises(ValidationError):
        geweke(np.arange(100.0), first=0.0)


def test_hpd_uniform_width():
    x = np.sort(np.random.default_rng(6).uniform(size=100_000))
    lo, hi = hpd_interval(x, 0.95)
    assert hi - lo == pytest.approx(0.95, abs=0.005)


def test_hpd_content_and_shortest():
    rng = np.random.default_rng(7)
    for _ in range(50):
        x = rng.gamma(2.0, size=int(rng.integers(20, 400)))
        level = rng.uniform(0.5, 0.99)
        lo, hi = hpd_interval(x, level)
        n = x.size
        assert np.mean((x >= lo) & (x <= hi)) >= level - 1.0 / n
        xs = np.sort(x)
        k = int(np.sum((x >= lo) & (x <= hi)))
        assert hi - lo <= np.min(xs[k - 1:] - xs[: n - k + 1]) + 1e-15


def test_hpd_contains_median_of_unimodal():
    rng = np.random.default_rng(8)
    for shape in (1.5, 3.0, 10.0):
        x = rng.gamma(shape, size=20_000)
        lo, hi = hpd_interval(x)
        assert lo <= np.median(x) <= hi


def test_hpd_level_validation():
    with pytest.raises(ValidationError):
        hpd_interval(np.arange(10.0), 1.0)


def test_trimmed_sd_ignores_outliers():
    x = np.r_[np.random.default_rng(9).standard_normal(10_000), 1e6]
    assert trimmed_sd(x) == pytest.approx(1.0, abs=0.05)


def test_trace_stats_fields():
    st = trace_stats(np.random.default_rng(10).standard_normal(500))
    assert st.ess <= 500
    assert st.hpd[0] < st.median < st.hpd[1]
    assert set(st.to_dict()) == {"mean", "median", "trimmed_sd", "hpd", "ess", "geweke_z"}


def _rep(median, sd, lo, hi):
    return {"median": median, "sd": sd, "hpd": {0.95: (lo, hi)}}


def test_recovery_full_coverage_and_exact_estimates():
    truth = {"beta": 2.0, "tau2": 0.0}
    res = [{"beta": _rep(2.0, 0.0, 1.0, 3.0), "tau2": _rep(0.0, 0.0, -0.1, 0.1)} for _ in range(5)]
    tab = recovery_stats(res, truth)
    assert list(tab.columns) == ["CP95", "CV", "RB", "median", "SD"]
    assert (tab["CP95"] == 1.0).all()
    assert (tab["RB"] == 0.0).all()
    assert (tab["CV"] == 0.0).all()


def test_recovery_bias_conventions():
    truth = {"beta": -2.0, "tau2": 0.0}
    res = [{"beta": _rep(-1.0, 0.5, -1.5, -0.5), "tau2": _rep(0.05, 0.1, 0.01, 0.2)} for _ in range(3)]
    tab = recovery_stats(res, truth)
    assert tab.loc["beta", "RB"] == pytest.approx(0.5)
    assert tab.loc["beta", "CV"] == pytest.approx(0.5)
    assert tab.loc["beta", "CP95"] == 0.0
    # zero truth: raw bias
    assert tab.loc["tau2", "RB"] == pytest.approx(0.05)


def test_recovery_per_replication_truth_and_levels():
    res = [{"b": {"median": m, "sd": 1.0, "hpd": {0.5: (m - 0.1, m + 0.1), 0.95: (m - 1, m + 1)}}}
           for m in (0.0, 1.0, 2.0, 3.0)]
    truth = [{"b": t} for t in (0.05, 1.5, 2.0, 5.0)]
    tab = recovery_stats(res, truth, levels=(0.5, 0.95))
    assert tab.loc["b", "CP50"] == 0.5
    assert tab.loc["b", "CP95"] == 0.75
    with pytest.raises(ValidationError):
        recovery_stats([], {})
