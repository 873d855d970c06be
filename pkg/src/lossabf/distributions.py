"""Elementary stochastic kernels.

Standard-normal utilities, the standardized skew-normal quantile used to
build skewed returns, and alpha-stable sampling via the Chambers-Mallows-Stuck
(CMS) construction. Everything is driven by counter-based random streams so
simulations are reproducible independent of scheduling.
"""

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError

LOG_2PI = float(np.log(2.0 * np.pi))
INV_SQRT_PI = float(1.0 / np.sqrt(np.pi))

_MASK64 = (1 << 64) - 1
_CHEAP_SEED = np.random.SeedSequence(0)  # placeholder; the key is overwritten


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    The same (seed, stream_id) always reproduces the same draw sequence;
    distinct stream_ids give statistically independent streams. Streams are
    cheap value objects and safe to ship across processes.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream.

        Built by poking the Philox key directly, which skips the OS-entropy
        path of the key= constructor while producing the identical stream.
        """
        bg = np.random.Philox(seed=_CHEAP_SEED)
        state = bg.state
        state["state"]["key"][:] = (self.seed & _MASK64, self.stream_id & _MASK64)
        state["state"]["counter"][:] = 0
        state["buffer"][:] = 0
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        state["uinteger"] = 0
        bg.state = state
        return np.random.Generator(bg)

    def derive(self, *labels) -> "RngStream":
        """Child stream for the given labels (ints or strings).

        Derivation hashes (stream_id, labels), so the same labels always
        address the same substream no matter where in the program they are
        requested.
        """
        h = hashlib.blake2b(digest_size=8)
        h.update(self.stream_id.to_bytes(8, "little", signed=False))
        for label in labels:
            h.update(repr(label).encode())
            h.update(b"\x1f")
        return RngStream(self.seed, int.from_bytes(h.digest(), "little"))


# ---------------------------------------------------------------------------
# standard normal
# ---------------------------------------------------------------------------

def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - 0.5 * LOG_2PI)


def norm_logpdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - 0.5 * LOG_2PI


def norm_cdf(x):
    return special.ndtr(np.asarray(x, dtype=float))


def norm_quantile(p):
    """Inverse standard-normal CDF; p must lie strictly inside (0, 1)."""
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr <= 0.0) | (p_arr >= 1.0)):
        raise DomainError(f"quantile requires p in (0, 1), got {p!r}")
    out = special.ndtri(p_arr)
    return float(out) if np.isscalar(p) else out


# ---------------------------------------------------------------------------
# standardized skew normal
# ---------------------------------------------------------------------------

def skew_normal_moments(gamma: float) -> tuple[float, float]:
    """Mean and standard deviation of the raw skew-normal with shape gamma."""
    delta = gamma / np.sqrt(1.0 + gamma * gamma)
    mean = delta * np.sqrt(2.0 / np.pi)
    sd = np.sqrt(1.0 - 2.0 * delta * delta / np.pi)
    return float(mean), float(sd)


def _skew_normal_cdf_raw(x, gamma):
    # CDF of the unstandardized skew normal: Phi(x) - 2 * OwensT(x, gamma).
    return special.ndtr(x) - 2.0 * special.owens_t(x, gamma)


def skew_normal_quantile(p, gamma: float, tol: float = 1e-10):
    """Quantile of the skew normal standardized to mean 0, variance 1.

    Solved by bisection on the closed-form CDF (Owen's T representation);
    monotone in p, exact standard-normal quantile at gamma = 0.
    """
    p_arr = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any((p_arr <= 0.0) | (p_arr >= 1.0)):
        raise DomainError("skew_normal_quantile requires p in (0, 1)")
    mean, sd = skew_normal_moments(gamma)

    lo = np.full(p_arr.shape, -42.0)
    hi = np.full(p_arr.shape, 42.0)
    # ~130 halvings: bracket width 84 shrinks far below tol.
    for _ in range(130):
        mid = 0.5 * (lo + hi)
        below = _skew_normal_cdf_raw(mid, gamma) < p_arr
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) < tol:
            break
    raw = 0.5 * (lo + hi)
    out = (raw - mean) / sd
    return float(out[0]) if np.isscalar(p) else out.reshape(np.shape(p))


def skew_normal_standardized_draws(gamma: float, size: int, gen: np.random.Generator):
    """Direct draws from the standardized skew normal (test/oracle helper)."""
    # X = delta*|Z0| + sqrt(1-delta^2)*Z1 is skew-normal with shape gamma.
    delta = gamma / np.sqrt(1.0 + gamma * gamma)
    z0 = gen.standard_normal(size)
    z1 = gen.standard_normal(size)
    raw = delta * np.abs(z0) + np.sqrt(1.0 - delta * delta) * z1
    mean, sd = skew_normal_moments(gamma)
    return (raw - mean) / sd


# ---------------------------------------------------------------------------
# alpha-stable (Chambers-Mallows-Stuck)
# ---------------------------------------------------------------------------

def _validate_stable(alpha: float, beta_skew: float):
    if not 1.0 < alpha <= 2.0:
        raise DomainError(f"stable tail index must be in (1, 2], got {alpha}")
    if not -1.0 <= beta_skew <= 1.0:
        raise DomainError(f"stable skewness must be in [-1, 1], got {beta_skew}")


def stable_draws(alpha: float, beta_skew: float, size: int, gen: np.random.Generator):
    """CMS draws from the 1-parametrization stable law S(alpha, beta, 1, 0).

    Uniform/exponential pairs are consumed per draw (row-major (size, 2)
    block) so single-step and vectorized calls walk the stream identically.
    """
    _validate_stable(alpha, beta_skew)
    u01 = gen.random((size, 2))
    v = np.pi * (u01[:, 0] - 0.5)           # uniform on (-pi/2, pi/2)
    w = -np.log1p(-u01[:, 1])               # unit exponential

    half_pa = 0.5 * np.pi * alpha
    b = np.arctan(beta_skew * np.tan(half_pa)) / alpha
    x = (
        np.sin(alpha * (v + b))
        / (np.cos(alpha * b) * np.cos(v)) ** (1.0 / alpha)
        * (np.cos(alpha * b + (alpha - 1.0) * v) / w) ** ((1.0 - alpha) / alpha)
    )
    return x


def stable_sample(alpha: float, beta_skew: float, rng: RngStream) -> float:
    """One stable draw; deterministic given the stream."""
    return float(stable_draws(alpha, beta_skew, 1, rng.generator())[0])
