"""MCMC output diagnostics and replication recovery statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from statsmodels.tsa.stattools import acovf, levinson_durbin

from .exceptions import ValidationError

__all__ = [
    "TraceStats",
    "spectrum0_ar",
    "effective_sample_size",
    "geweke",
    "hpd_interval",
    "trimmed_sd",
    "trace_stats",
    "recovery_stats",
]


def spectrum0_ar(x, max_order=None):
    """Spectral density at frequency zero from an AR fit.

    An autoregressive model is fitted by Yule-Walker (Levinson-Durbin) for
    every order up to ``min(50, N/10)`` and the order with the smallest AIC
    is kept.  Returns ``sigma^2 / (1 - sum(phi))^2`` with the innovation
    variance rescaled by ``N / (N - order - 1)``.

    Returns
    -------
    spec : float
    order : int
    """
    x = np.asarray(x, dtype=float).ravel()
    N = x.size
    kmax = min(50, N // 10) if max_order is None else int(max_order)
    kmax = max(kmax, 0)
    acov = acovf(x, demean=True, fft=True, nlag=kmax)
    if acov[0] <= 0:
        return 0.0, 0
    if kmax == 0:
        return float(acov[0] * N / (N - 1)), 0
    _, _, _, sigma, phi = levinson_durbin(acov, nlags=kmax, isacov=True)
    sig = np.concatenate([[acov[0]], sigma[1:]])
    sig = np.maximum(sig, np.finfo(float).tiny)
    aic = N * np.log(sig) + 2.0 * np.arange(kmax + 1)
    k = int(np.argmin(aic))
    coef_sum = float(np.sum(phi[1 : k + 1, k])) if k > 0 else 0.0
    var_pred = sig[k] * N / (N - (k + 1))
    return var_pred / (1.0 - coef_sum) ** 2, k


def effective_sample_size(trace):
    """Effective sample size ``N var(x) / S(0)``.

    A constant trace has ESS 0.  The result is capped at ``N``.

    Examples
    --------
    >>> rng = np.random.default_rng(1)
    >>> 8000 < effective_sample_size(rng.standard_normal(10_000)) <= 10_000
    True
    """
    x = np.asarray(trace, dtype=float).ravel()
    N = x.size
    if N < 20:
        raise ValidationError("effective sample size needs at least 20 draws")
    if np.ptp(x) == 0:
        return 0.0
    var = np.var(x, ddof=1)
    if not var > 0 or not np.isfinite(var):
        return 0.0
    spec, _ = spectrum0_ar(x)
    if spec <= 0:
        return 0.0
    return float(min(N, N * var / spec))


def geweke(trace, first=0.1, last=0.5):
    """Geweke z-score comparing the means of the first and last windows.

    Each window variance is the AR spectral density at zero divided by the
    window length.
    """
    if not (0 < first < 1 and 0 < last < 1):
        raise ValidationError("window fractions must lie in (0, 1)")
    if first + last > 1:
        raise ValidationError("Geweke windows overlap")
    x = np.asarray(trace, dtype=float).ravel()
    N = x.size
    a = x[: int(np.floor(first * N))]
    b = x[N - int(np.floor(last * N)) :]
    if a.size < 2 or b.size < 2:
        raise ValidationError("trace too short for the Geweke windows")
    diff = a.mean() - b.mean()
    if diff == 0:
        return 0.0
    var = spectrum0_ar(a)[0] / a.size + spectrum0_ar(b)[0] / b.size
    if var <= 0:
        return float(np.sign(diff) * np.inf)
    return float(diff / np.sqrt(var))


def hpd_interval(trace, level=0.95):
    """Shortest interval containing ``ceil(level * N)`` sorted draws."""
    if not 0 < level < 1:
        raise ValidationError(f"level must lie in (0, 1), got {level}")
    x = np.sort(np.asarray(trace, dtype=float).ravel())
    N = x.size
    n_in = int(np.ceil(level * N))
    n_in = min(max(n_in, 1), N)
    widths = x[n_in - 1 :] - x[: N - n_in + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + n_in - 1])


def trimmed_sd(trace, level=0.99):
    """Standard deviation after dropping draws outside the central ``level`` interval."""
    x = np.asarray(trace, dtype=float).ravel()
    lo, hi = np.quantile(x, [(1 - level) / 2, (1 + level) / 2])
    kept = x[(x >= lo) & (x <= hi)]
    return float(np.std(kept, ddof=1)) if kept.size > 1 else 0.0


@dataclass(frozen=True)
class TraceStats:
    """Summary of one parameter trace."""

    mean: float
    median: float
    trimmed_sd: float
    hpd: tuple
    ess: float
    geweke_z: float

    def to_dict(self):
        return {
            "mean": self.mean, "median": self.median, "trimmed_sd": self.trimmed_sd,
            "hpd": list(self.hpd), "ess": self.ess, "geweke_z": self.geweke_z,
        }


def trace_stats(trace, level=0.95):
    x = np.asarray(trace, dtype=float).ravel()
    return TraceStats(
        float(np.mean(x)), float(np.median(x)), trimmed_sd(x), hpd_interval(x, level),
        effective_sample_size(x) if x.size >= 20 else float("nan"),
        geweke(x) if x.size >= 20 else float("nan"),
    )


def recovery_stats(results, truth, levels=(0.95,)):
    """Coverage, coefficient of variation and relative bias over replications.

    Parameters
    ----------
    results : sequence of mapping
        One mapping per replication, from parameter name to a dict with keys
        ``median``, ``sd`` and ``hpd`` (a mapping from level to interval).
    truth : mapping or sequence of mapping
        True parameter values, shared or per replication.
    levels : sequence of float

    Returns
    -------
    pandas.DataFrame
        One row per parameter with columns ``CP<level>``, ``CV`` (median of
        posterior SD / |posterior median|), ``RB`` (median of
        (median - truth) / |truth|, raw bias when the truth is 0), ``median``
        (median of posterior medians) and ``SD`` (median posterior SD).
    """
    results = list(results)
    if not results:
        raise ValidationError("at least one replication is required")
    truths = list(truth) if isinstance(truth, (list, tuple)) else [truth] * len(results)
    rows = {}
    for name in results[0]:
        med = np.array([r[name]["median"] for r in results], dtype=float)
        sd = np.array([r[name]["sd"] for r in results], dtype=float)
        tv = np.array([t[name] for t in truths], dtype=float)
        row = {}
        for lev in levels:
            ints = np.array([r[name]["hpd"][lev] for r in results], dtype=float)
            row[f"CP{int(round(lev * 100))}"] = float(np.mean((ints[:, 0] <= tv) & (tv <= ints[:, 1])))
        with np.errstate(divide="ignore", invalid="ignore"):
            cv = np.where(med != 0, sd / np.abs(med), np.where(sd == 0, 0.0, np.inf))
            rb = np.where(tv != 0, (med - tv) / np.abs(np.where(tv != 0, tv, 1.0)), med - tv)
        row["CV"] = float(np.median(cv))
        row["RB"] = float(np.median(rb))
        row["median"] = float(np.median(med))
        row["SD"] = float(np.median(sd))
        rows[name] = row
    return pd.DataFrame.from_dict(rows, orient="index")
