"""Fused ARCH/GARCH criterion kernels.

One pass per series: the variance recursion and the per-step score accumulate
together, with no intermediate arrays. ARCH(1) is the garch_coef = 0 case of
the shared recursion (the initialization term then never propagates).

These are jitted when numba is importable; `auxiliary._criterion_rows` falls
back to the numpy path otherwise and the two agree to rounding.
"""

import math

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is available in CI
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco if not (args and callable(args[0])) else args[0]


LOG_2PI = 1.8378770664093453
INV_SQRT2 = 0.7071067811865476
INV_SQRT_2PI = 0.3989422804014327
INV_SQRT_PI = 0.5641895835477563


@njit(cache=True)
def _log_ndtr(u):  # pragma: no cover - exercised through the kernels
    """log Phi(u); asymptotic expansion past the erfc underflow point."""
    if u > -26.0:
        return math.log(0.5 * math.erfc(-u * INV_SQRT2))
    t = 1.0 / (u * u)
    series = 1.0 - t * (1.0 - 3.0 * t * (1.0 - 5.0 * t))
    return -0.5 * u * u - 0.5 * LOG_2PI - math.log(-u) + math.log(series)


@njit(cache=True)
def crit_ls(y2d, b0, b1, bg, ba, out):  # pragma: no cover
    n, T = y2d.shape
    a0 = b1 / (1.0 - bg - ba)
    for i in range(n):
        a = a0
        acc = 0.0
        for t in range(1, T):
            e = y2d[i, t - 1] - b0
            a = b1 + bg * a + ba * e * e
            if not a > 0.0:
                acc = -math.inf
                break
            z2 = (y2d[i, t] - b0) ** 2 / a
            acc += -0.5 * (LOG_2PI + math.log(a) + z2)
        out[i] = acc


@njit(cache=True)
def crit_crps(y2d, b0, b1, bg, ba, out):  # pragma: no cover
    n, T = y2d.shape
    a0 = b1 / (1.0 - bg - ba)
    for i in range(n):
        a = a0
        acc = 0.0
        for t in range(1, T):
            e = y2d[i, t - 1] - b0
            a = b1 + bg * a + ba * e * e
            if not a > 0.0:
                acc = -math.inf
                break
            s = math.sqrt(a)
            z = (y2d[i, t] - b0) / s
            cdf = 0.5 * math.erfc(-z * INV_SQRT2)
            pdf = INV_SQRT_2PI * math.exp(-0.5 * z * z)
            acc += -s * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - INV_SQRT_PI)
        out[i] = acc


@njit(cache=True)
def crit_cls(y2d, b0, b1, bg, ba, thr, lower, out):  # pragma: no cover
    n, T = y2d.shape
    a0 = b1 / (1.0 - bg - ba)
    for i in range(n):
        a = a0
        acc = 0.0
        for t in range(1, T):
            e = y2d[i, t - 1] - b0
            a = b1 + bg * a + ba * e * e
            if not a > 0.0:
                acc = -math.inf
                break
            y = y2d[i, t]
            in_region = (y <= thr) if lower else (y >= thr)
            if in_region:
                z2 = (y - b0) ** 2 / a
                acc += -0.5 * (LOG_2PI + math.log(a) + z2)
            else:
                s = math.sqrt(a)
                u = (b0 - thr) / s if lower else (thr - b0) / s
                acc += _log_ndtr(u)
        out[i] = acc


@njit(cache=True)
def crit_interval(y2d, b0, b1, bg, ba, zq, inv_level, out):  # pragma: no cover
    n, T = y2d.shape
    a0 = b1 / (1.0 - bg - ba)
    for i in range(n):
        a = a0
        acc = 0.0
        for t in range(1, T):
            e = y2d[i, t - 1] - b0
            a = b1 + bg * a + ba * e * e
            if not a > 0.0:
                acc = -math.inf
                break
            s = math.sqrt(a)
            half = zq * s
            y = y2d[i, t]
            loss = 2.0 * half
            lo = b0 - half
            hi = b0 + half
            if y < lo:
                loss += 2.0 * inv_level * (lo - y)
            elif y > hi:
                loss += 2.0 * inv_level * (y - hi)
            acc += -loss
        out[i] = acc
