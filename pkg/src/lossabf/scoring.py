"""Proper scoring rules on Gaussian and Gaussian-mixture predictives.

All rules are positively oriented (bigger is better):

* LS    log predictive density
* CRPS  negative continuously ranked probability score
* CLS   censored log score for a tail region: log density inside the
        region, log predictive mass of the complement outside it
* IS    negative interval score of the central 100(1-alpha)% interval

Array-valued entry points broadcast over observations and are what the
criterion/evaluation hot paths call; the scalar wrappers mirror them 1:1.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

from .distributions import INV_SQRT_PI, LOG_2PI
from .errors import DomainError

_SQRT2_PI = float(np.sqrt(2.0 / np.pi))


# ---------------------------------------------------------------------------
# rule and predictive types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionSpec:
    """Tail region for censored scoring: kind 'lower' (y <= thr) or 'upper'."""

    kind: str
    threshold: float

    def __post_init__(self):
        if self.kind not in ("lower", "upper"):
            raise DomainError(f"region kind must be 'lower' or 'upper', got {self.kind!r}")
        if not np.isfinite(self.threshold):
            raise DomainError("region threshold must be finite")

    def contains(self, y):
        if self.kind == "lower":
            return np.asarray(y) <= self.threshold
        return np.asarray(y) >= self.threshold


@dataclass(frozen=True)
class ScoringRule:
    """Tagged scoring rule; CLS carries a resolved region, IS a level."""

    kind: str
    label: str
    region: RegionSpec | None = None
    level: float | None = None

    def __post_init__(self):
        if self.kind not in ("ls", "crps", "cls", "is"):
            raise DomainError(f"unknown scoring rule kind {self.kind!r}")
        if self.kind == "cls" and self.region is None:
            raise DomainError("CLS rule requires a resolved RegionSpec")
        if self.kind == "is":
            if self.level is None or not 0.0 < self.level < 1.0:
                raise DomainError("IS rule requires a level in (0, 1)")

    @classmethod
    def ls(cls):
        return cls("ls", "LS")

    @classmethod
    def crps(cls):
        return cls("crps", "CRPS")

    @classmethod
    def censored(cls, region: RegionSpec, label: str):
        return cls("cls", label, region=region)

    @classmethod
    def interval(cls, level: float = 0.05, label: str = "IS"):
        return cls("is", label, level=level)


@dataclass(frozen=True)
class GaussianPredictive:
    """One-step-ahead Gaussian predictive N(mean, variance)."""

    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0.0:
            raise DomainError(f"predictive variance must be positive, got {self.variance}")


class PredictiveMixture:
    """Equally weighted Gaussian mixture, stored as component arrays."""

    __slots__ = ("means", "variances")

    def __init__(self, means, variances):
        means = np.atleast_1d(np.asarray(means, dtype=float))
        variances = np.atleast_1d(np.asarray(variances, dtype=float))
        if means.shape != variances.shape or means.ndim != 1:
            raise DomainError("mixture means/variances must be 1-d arrays of equal length")
        if means.size == 0:
            raise DomainError("mixture must have at least one component")
        if not np.all(variances > 0.0):
            raise DomainError("all mixture variances must be positive")
        self.means = means
        self.variances = variances

    @classmethod
    def from_components(cls, components):
        comps = list(components)
        return cls([c.mean for c in comps], [c.variance for c in comps])

    def __len__(self):
        return self.means.size

    def component(self, i) -> GaussianPredictive:
        return GaussianPredictive(float(self.means[i]), float(self.variances[i]))


# ---------------------------------------------------------------------------
# Gaussian closed forms (array-valued)
# ---------------------------------------------------------------------------

def gaussian_logpdf(mean, var, y):
    z2 = (np.asarray(y, dtype=float) - mean) ** 2 / var
    return -0.5 * (LOG_2PI + np.log(var) + z2)


def gaussian_crps_loss(mean, var, y):
    """Positive CRPS of N(mean, var) at y: s*(z(2Phi(z)-1) + 2phi(z) - 1/sqrt(pi))."""
    s = np.sqrt(var)
    z = (np.asarray(y, dtype=float) - mean) / s
    phi = np.exp(-0.5 * z * z - 0.5 * LOG_2PI)
    return s * (z * (2.0 * special.ndtr(z) - 1.0) + 2.0 * phi - INV_SQRT_PI)


def gaussian_cls(mean, var, y, region: RegionSpec):
    s = np.sqrt(var)
    in_region = region.contains(y)
    dense = gaussian_logpdf(mean, var, y)
    if region.kind == "lower":
        # mass of the complement (thr, inf)
        out = special.log_ndtr((mean - region.threshold) / s)
    else:
        out = special.log_ndtr((region.threshold - mean) / s)
    return np.where(in_region, dense, out)


def gaussian_interval_loss(mean, var, y, level):
    z = special.ndtri(1.0 - 0.5 * level)
    s = np.sqrt(var)
    lo = mean - z * s
    hi = mean + z * s
    y = np.asarray(y, dtype=float)
    pen = (lo - y) * (y < lo) + (y - hi) * (y > hi)
    return (hi - lo) + (2.0 / level) * pen


def gaussian_scores(rule: ScoringRule, mean, var, y):
    """Positively oriented scores of N(mean, var) at y; broadcasts."""
    if np.any(np.asarray(var) <= 0.0):
        raise DomainError("predictive variance must be positive")
    if rule.kind == "ls":
        return gaussian_logpdf(mean, var, y)
    if rule.kind == "crps":
        return -gaussian_crps_loss(mean, var, y)
    if rule.kind == "cls":
        return gaussian_cls(mean, var, y, rule.region)
    return -gaussian_interval_loss(mean, var, y, rule.level)


def score_gaussian(rule: ScoringRule, pred: GaussianPredictive, y: float) -> float:
    return float(gaussian_scores(rule, pred.mean, pred.variance, y))


# ---------------------------------------------------------------------------
# mixture machinery
# ---------------------------------------------------------------------------

def mixture_logpdf(mix: PredictiveMixture, y: float) -> float:
    logs = gaussian_logpdf(mix.means, mix.variances, y)
    return float(special.logsumexp(logs) - np.log(len(mix)))


def mixture_cdf(mix: PredictiveMixture, y: float) -> float:
    z = (y - mix.means) / np.sqrt(mix.variances)
    return float(np.mean(special.ndtr(z)))


def mixture_quantile(mix: PredictiveMixture, p: float, tol: float = 1e-10) -> float:
    """Root of mixture_cdf(.) = p by bracketing bisection."""
    if not 0.0 < p < 1.0:
        raise DomainError("mixture_quantile requires p in (0, 1)")
    s = np.sqrt(mix.variances)
    lo = float(np.min(mix.means - 42.0 * s))
    hi = float(np.max(mix.means + 42.0 * s))
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        c = mixture_cdf(mix, mid)
        if abs(c - p) < tol:
            return mid
        if c < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * max(1.0, abs(hi) + abs(lo)):
            break
    return 0.5 * (lo + hi)


def _mixture_log_mass(mix: PredictiveMixture, region: RegionSpec, complement: bool):
    """Log predictive mass of the region (or its complement), underflow-safe."""
    s = np.sqrt(mix.variances)
    z = (region.threshold - mix.means) / s
    lower_mass = (region.kind == "lower") != complement
    logs = special.log_ndtr(z) if lower_mass else special.log_ndtr(-z)
    return float(special.logsumexp(logs) - np.log(len(mix)))


def _mean_abs_normal(mean, var):
    """E|X| for X ~ N(mean, var); closed form."""
    s = np.sqrt(var)
    z = mean / s
    phi = np.exp(-0.5 * z * z - 0.5 * LOG_2PI)
    return mean * (2.0 * special.ndtr(z) - 1.0) + 2.0 * s * phi


def _pairwise_mean_abs_numpy(means, variances, block=512):
    """Average over ordered component pairs of E|N(m_i - m_j, v_i + v_j)|.

    E|N(a, b^2)| is even in a, so only pairs j >= i are evaluated; row blocks
    bound temporary-array size for large mixtures.
    """
    n = means.size
    diag = float(np.sum(_mean_abs_normal(0.0, 2.0 * variances)))
    upper = 0.0
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        dm = means[i0:i1, None] - means[None, i0:]
        dv = variances[i0:i1, None] + variances[None, i0:]
        g = _mean_abs_normal(dm, dv)
        w = i1 - i0
        square_sum = float(np.sum(g[:, :w]))
        block_diag = float(np.sum(np.diagonal(g[:, :w])))
        rect_sum = float(np.sum(g))
        upper += rect_sum - block_diag - 0.5 * (square_sum - block_diag)
    return (2.0 * upper + diag) / (n * n)


try:  # jitted pairwise sum; same math, large mixtures are ~4x faster
    import math as _math

    import numba as _numba

    @_numba.njit(cache=True)
    def _pairwise_mean_abs_jit(means, variances):  # pragma: no cover
        n = means.size
        inv_sqrt2 = 0.7071067811865476
        two_phi0 = 0.7978845608028654  # 2 / sqrt(2 pi)
        diag = 0.0
        for i in range(n):
            diag += two_phi0 * _math.sqrt(2.0 * variances[i])
        upper = 0.0
        for i in range(n):
            mi = means[i]
            vi = variances[i]
            for j in range(i + 1, n):
                a = mi - means[j]
                s = _math.sqrt(vi + variances[j])
                z = a / s
                upper += a * _math.erf(z * inv_sqrt2) + s * two_phi0 * _math.exp(-0.5 * z * z)
        return (2.0 * upper + diag) / (n * n)

    def _pairwise_mean_abs(means, variances):
        return float(_pairwise_mean_abs_jit(means, variances))

except ImportError:  # pragma: no cover
    _pairwise_mean_abs = _pairwise_mean_abs_numpy


def mixture_crps_loss(mix: PredictiveMixture, y: float) -> float:
    """Exact mixture CRPS via E|X - y| - 0.5 E|X - X'|."""
    term1 = float(np.mean(_mean_abs_normal(mix.means - y, mix.variances)))
    term2 = _pairwise_mean_abs(mix.means, mix.variances)
    return term1 - 0.5 * term2


def score_mixture(rule: ScoringRule, mix: PredictiveMixture, y: float) -> float:
    """Positively oriented score of the mixture predictive at y."""
    if rule.kind == "ls":
        return mixture_logpdf(mix, y)
    if rule.kind == "crps":
        return -mixture_crps_loss(mix, y)
    if rule.kind == "cls":
        if bool(rule.region.contains(y)):
            return mixture_logpdf(mix, y)
        return _mixture_log_mass(mix, rule.region, complement=True)
    lo = mixture_quantile(mix, 0.5 * rule.level)
    hi = mixture_quantile(mix, 1.0 - 0.5 * rule.level)
    loss = hi - lo
    if y < lo:
        loss += (2.0 / rule.level) * (lo - y)
    elif y > hi:
        loss += (2.0 / rule.level) * (y - hi)
    return -loss
