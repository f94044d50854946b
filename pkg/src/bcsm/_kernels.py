"""Compiled inner loops of the survival Gibbs sampler.

Each kernel reseeds numba's generator from an integer drawn by the caller's
``numpy.random.Generator``, so a sweep is fully determined by that generator
and kernels can be interleaved freely between chains.  numba keeps one
generator state per thread.
"""

import math

import numpy as np
from numba import njit

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)
TAIL_SWITCH = 5.0

# rational approximation coefficients for the normal quantile (Acklam)
_A = np.array([-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
               1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00])
_B = np.array([-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
               6.680131188771972e01, -1.328068155288572e01])
_C = np.array([-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
               -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00])
_D = np.array([7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
               3.754408661907416e00])


@njit(cache=True)
def seed(s):
    np.random.seed(s)


@njit(cache=True)
def ndtr(x):
    return 0.5 * math.erfc(-x / SQRT2)


@njit(cache=True)
def ndtri(p):
    """Normal quantile: rational start refined by one Halley step."""
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    if p > 0.5:
        # 1 - p is exact here; refine on the lower side where ndtr is accurate
        return -ndtri(1.0 - p)
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    e = ndtr(x) - p
    u = e * SQRT2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@njit(cache=True)
def _upper_tail(a, b):
    # standard normal on (a, b] with a > 0
    if b < np.inf and a * (b - a) < 1.0:
        while True:
            x = a + np.random.random() * (b - a)
            if math.log(np.random.random()) <= 0.5 * (a * a - x * x):
                return x
    lam = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        x = a + np.random.exponential(1.0) / lam
        if x <= b and math.log(np.random.random()) <= -0.5 * (x - lam) ** 2:
            return x


@njit(cache=True)
def std_truncnorm(a, b):
    """Standard normal restricted to ``(a, b]``."""
    flip = b < 0.0
    if flip:
        a, b = -b, -a
    if a > TAIL_SWITCH:
        z = _upper_tail(a, b)
    else:
        pa = ndtr(-a)
        pb = ndtr(-b)
        z = -ndtri(pa - np.random.random() * (pa - pb))
        if z < a:
            z = a
        if z > b:
            z = b
    return -z if flip else z


@njit(cache=True)
def truncnorm(mean, sd, lo, hi):
    x = mean + sd * std_truncnorm((lo - mean) / sd, (hi - mean) / sd)
    if x <= lo:
        x = np.nextafter(lo, np.inf)
    if x > hi:
        x = hi
    return x


@njit(cache=True)
def truncnorm_array(s, mean, sd, lo, hi):
    seed(s)
    out = np.empty(mean.shape[0])
    for i in range(mean.shape[0]):
        out[i] = truncnorm(mean[i], sd[i], lo[i], hi[i])
    return out


@njit(cache=True)
def latent_sweep(s, Z, mu, lo, hi, n_sub, n0, tau1, tau2):
    """One systematic-scan sweep over every latent score.

    Records are ordered group, subject, event (event fastest).  Each ``Z`` is
    redrawn from its univariate conditional given all others, truncated to
    ``(lo, hi]``.  Within a group the subject and group sums of
    ``V = Z - mu`` are updated incrementally.
    """
    seed(s)
    pos = 0
    for i in range(n_sub.shape[0]):
        n1 = n_sub[i]
        size = n1 * n0
        gsum = 0.0
        for r in range(pos, pos + size):
            gsum += Z[r] - mu[r]
        if n1 > 1:
            f2 = n0 * (n1 - 1) * tau2 / (1.0 + n0 * tau1 + n0 * (n1 - 1) * tau2)
        else:
            f2 = 0.0
        tt = tau1 + tau2 * (1.0 - f2)
        f1 = (n0 - 1) * tt / (1.0 + (n0 - 1) * tt)
        sd = math.sqrt(1.0 + tt * (1.0 - f1))
        for j in range(n1):
            base = pos + j * n0
            ssum = 0.0
            for k in range(n0):
                ssum += Z[base + k] - mu[base + k]
            if n1 > 1:
                c = f2 * (gsum - ssum) / (n0 * (n1 - 1))
            else:
                c = 0.0
            for k in range(n0):
                r = base + k
                v_old = Z[r] - mu[r]
                if n0 > 1:
                    other = (ssum - v_old) / (n0 - 1)
                else:
                    other = 0.0
                m = mu[r] + c + f1 * (other - c)
                z = truncnorm(m, sd, lo[r], hi[r])
                v_new = z - mu[r]
                ssum += v_new - v_old
                gsum += v_new - v_old
                Z[r] = z
        pos += size


@njit(cache=True)
def gamma_sweep(s, M, w, gamma, eta, off, indptr, rows, vals, Zint, total):
    """Update the constrained spline coefficients ``gamma[1:]`` in turn.

    ``M`` is ``A^T Sigma^{-1} A`` and ``w = A^T Sigma^{-1} (Z - mu)`` for the
    full design ``A``; column ``off + l`` of ``A`` holds basis ``l``.  The
    sparse matrix (``indptr``, ``rows``, ``vals``), stored by column, holds
    the basis increments between the interval endpoints of interior
    records, whose latent scores are ``Zint`` and whose current lower bounds
    are ``-total``.  ``w``, ``gamma`` and ``total`` are updated in place.
    """
    seed(s)
    K = gamma.shape[0] - 1
    for l in range(1, K + 1):
        c = off + l
        g_old = gamma[l]
        chi = 0.0
        for t in range(indptr[l - 1], indptr[l]):
            r = rows[t]
            d = vals[t]
            ratio = (-Zint[r] - (total[r] - d * g_old)) / d
            if ratio > chi:
                chi = ratio
        P = M[c, c]
        if P > 1e-14:
            sd = 1.0 / math.sqrt(P)
            mean = (w[c] + P * g_old - eta) / P
            g_new = truncnorm(mean, sd, chi, np.inf)
        else:
            g_new = chi + np.random.exponential(1.0) / eta
        delta = g_new - g_old
        if delta != 0.0:
            gamma[l] = g_new
            for t in range(indptr[l - 1], indptr[l]):
                total[rows[t]] += vals[t] * delta
            for a in range(w.shape[0]):
                w[a] -= M[a, c] * delta
