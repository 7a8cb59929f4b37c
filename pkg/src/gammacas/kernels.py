"""Hot numeric kernels, each with a numba loop variant and a numpy variant.

The public names at the bottom of the module point at whichever variant
``_accel.USE_NUMBA`` selects. Both variants stay importable (``*_nb`` and
``*_np``) so the test suite and the benchmark can compare them directly.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

_TINY = 1e-300
_EPS = 1e-16


# ---------------------------------------------------------------------------
# lower incomplete gamma


def _lower_gamma_py(s, x):
    if x == 0.0:
        return 0.0
    log_prefactor = -x + s * math.log(x)
    if x < s + 1.0:
        # power series
        ap = s
        term = 1.0 / s
        total = term
        for _ in range(100000):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * _EPS:
                break
        return total * math.exp(log_prefactor)
    # modified Lentz continued fraction for the upper function
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 100000):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.gamma(s) - math.exp(log_prefactor) * h


_lower_gamma_nb = njit(_lower_gamma_py)


# ---------------------------------------------------------------------------
# batched rate integral on fixed nodes


def _rate_integral_np(A, g, lam, t, w):
    """Weighted node sums of ``A t^g e^{-lam t}`` and its parameter partials.

    ``A, g, lam`` have shape (B,); ``t, w`` have shape (H, K).
    Returns four (B, H) arrays: value, d/dA, d/dg, d/dlam.
    """
    tt = t[None, :, :]
    with np.errstate(divide="ignore"):
        lt = np.where(t > 0.0, np.log(np.where(t > 0.0, t, 1.0)), 0.0)[None, :, :]
    base = np.power(tt, g[:, None, None]) * np.exp(-lam[:, None, None] * tt)
    wb = w[None, :, :] * base
    dA = wb.sum(axis=2)
    value = A[:, None] * dA
    dg = A[:, None] * (wb * lt).sum(axis=2)
    dl = -A[:, None] * (wb * tt).sum(axis=2)
    return value, dA, dg, dl


@njit
def _rate_integral_nb(A, g, lam, t, w):
    B = A.shape[0]
    H, K = t.shape
    value = np.zeros((B, H))
    dA = np.zeros((B, H))
    dg = np.zeros((B, H))
    dl = np.zeros((B, H))
    for b in range(B):
        gb = g[b]
        lb = lam[b]
        for h in range(H):
            s0 = 0.0
            s1 = 0.0
            s2 = 0.0
            for k in range(K):
                tk = t[h, k]
                if tk > 0.0:
                    ltk = math.log(tk)
                    base = math.exp(gb * ltk - lb * tk)
                else:
                    ltk = 0.0
                    base = 1.0 if gb == 0.0 else 0.0
                wb = w[h, k] * base
                s0 += wb
                s1 += wb * ltk
                s2 += wb * tk
            dA[b, h] = s0
            value[b, h] = A[b] * s0
            dg[b, h] = A[b] * s1
            dl[b, h] = -A[b] * s2
    return value, dA, dg, dl


# ---------------------------------------------------------------------------
# exponential-kernel Hawkes log-likelihood with analytic gradient


def _hawkes_loglik_py(t, T, mu, alpha, beta):
    n = t.shape[0]
    ll = 0.0
    g_mu = 0.0
    g_alpha = 0.0
    g_beta = 0.0
    R = 0.0
    dR = 0.0
    for i in range(n):
        if i > 0:
            dt = t[i] - t[i - 1]
            e = math.exp(-beta * dt)
            dR = e * (dR - dt * (1.0 + R))
            R = e * (1.0 + R)
        intensity = mu + alpha * R
        ll += math.log(intensity)
        g_mu += 1.0 / intensity
        g_alpha += R / intensity
        g_beta += alpha * dR / intensity
    comp = 0.0
    comp_b = 0.0
    for i in range(n):
        tail = T - t[i]
        e = math.exp(-beta * tail)
        comp += 1.0 - e
        comp_b += tail * e
    ll -= mu * T + alpha / beta * comp
    g_mu -= T
    g_alpha -= comp / beta
    g_beta += alpha / (beta * beta) * comp - alpha / beta * comp_b
    return ll, g_mu, g_alpha, g_beta


_hawkes_loglik_nb = njit(_hawkes_loglik_py)


# ---------------------------------------------------------------------------
# inversion count for Kendall's tau (Knight's merge sort)


@njit
def _count_inversions_nb(y):
    n = y.shape[0]
    a = y.copy()
    buf = np.empty_like(a)
    swaps = 0
    width = 1
    while width < n:
        start = 0
        while start < n:
            mid = min(start + width, n)
            end = min(start + 2 * width, n)
            i = start
            j = mid
            k = start
            while i < mid and j < end:
                if a[j] < a[i]:
                    buf[k] = a[j]
                    swaps += mid - i
                    j += 1
                else:
                    buf[k] = a[i]
                    i += 1
                k += 1
            while i < mid:
                buf[k] = a[i]
                i += 1
                k += 1
            while j < end:
                buf[k] = a[j]
                j += 1
                k += 1
            start += 2 * width
        a, buf = buf, a
        width *= 2
    return swaps


def _count_inversions_np(y):
    """Strict inversions of ``y`` via bottom-up merges using searchsorted."""
    a = np.array(y, dtype=np.float64, copy=True)
    n = a.shape[0]
    swaps = 0
    width = 1
    while width < n:
        for start in range(0, n, 2 * width):
            mid = min(start + width, n)
            end = min(start + 2 * width, n)
            if mid >= end:
                continue
            left = a[start:mid]
            right = a[mid:end]
            swaps += int((left.shape[0] - np.searchsorted(left, right, side="right")).sum())
            a[start:end] = np.sort(a[start:end], kind="mergesort")
        width *= 2
    return swaps


if USE_NUMBA:
    lower_gamma_scalar = _lower_gamma_nb
    rate_integral = _rate_integral_nb
    hawkes_loglik_grad = _hawkes_loglik_nb
    count_inversions = _count_inversions_nb
else:
    lower_gamma_scalar = _lower_gamma_py
    rate_integral = _rate_integral_np
    hawkes_loglik_grad = _hawkes_loglik_py
    count_inversions = _count_inversions_np

VARIANTS = {
    "lower_gamma": (_lower_gamma_nb, _lower_gamma_py),
    "rate_integral": (_rate_integral_nb, _rate_integral_np),
    "hawkes_loglik": (_hawkes_loglik_nb, _hawkes_loglik_py),
    "count_inversions": (_count_inversions_nb, _count_inversions_np),
}
