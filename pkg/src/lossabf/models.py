"""State space models: simulators, measurement density, transition sampling.

Three models are supported:

* ``SvGaussianParams`` -- Gaussian stochastic volatility, used both as a data
  generating process and as the assumed model inside the ABC engine.
* ``SkewSvParams``     -- skew-copula SV: a latent Gaussian SV process pushed
  through its simulated marginal CDF and a standardized skew-normal quantile.
  Data generating process only.
* ``StableSvParams``   -- SV with an alpha-stable log-volatility transition
  (skewness fixed at -1); the intractable empirical model.

AR(1)-style recursions run through ``scipy.signal.lfilter``; the step-wise
transition sampler applies the same kernel one draw at a time.
"""

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .distributions import RngStream, skew_normal_quantile, stable_draws
from .errors import ConfigError, DomainError

# steps discarded before recording when a model has no exact stationary start
BURN_IN = 200


@dataclass(frozen=True)
class SvGaussianParams:
    """Gaussian SV: y_t = mu + e^{a_t/2} e_t, a_t AR(1) around h_bar."""

    phi: float
    sigma_alpha: float
    mu: float
    h_bar: float

    def __post_init__(self):
        if not abs(self.phi) < 1.0:
            raise DomainError(f"|phi| must be < 1, got {self.phi}")
        if not self.sigma_alpha > 0.0:
            raise DomainError(f"sigma_alpha must be > 0, got {self.sigma_alpha}")


@dataclass(frozen=True)
class SkewSvParams:
    """Skew-copula SV data generating process."""

    a: float
    h_bar: float
    sigma_h: float
    gamma: float

    def __post_init__(self):
        if not abs(self.a) < 1.0:
            raise DomainError(f"|a| must be < 1, got {self.a}")
        if not self.sigma_h > 0.0:
            raise DomainError(f"sigma_h must be > 0, got {self.sigma_h}")


@dataclass(frozen=True)
class StableSvParams:
    """SV with alpha-stable transition noise, skewness fixed at -1."""

    omega: float
    phi: float
    sigma_h: float
    alpha: float

    def __post_init__(self):
        if not abs(self.phi) < 1.0:
            raise DomainError(f"|phi| must be < 1, got {self.phi}")
        if not self.sigma_h > 0.0:
            raise DomainError(f"sigma_h must be > 0, got {self.sigma_h}")
        if not 1.0 < self.alpha < 2.0:
            raise DomainError(f"alpha must be in (1, 2), got {self.alpha}")


@dataclass(frozen=True)
class SimulatedPath:
    states: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        if len(self.states) != len(self.observations):
            raise DomainError("states and observations must have equal length")


# model tags used by priors, configs and the CLI
MODEL_PARAM_FIELDS = {
    "sv-gaussian": ("phi", "sigma_alpha", "mu", "h_bar"),
    "sv-stable": ("omega", "phi", "sigma_h", "alpha"),
}

_MODEL_CLASSES = {
    "sv-gaussian": SvGaussianParams,
    "sv-stable": StableSvParams,
}


def params_from_values(model_tag: str, values) -> SvGaussianParams | StableSvParams:
    """Build a parameter record from values ordered as MODEL_PARAM_FIELDS."""
    try:
        cls = _MODEL_CLASSES[model_tag]
    except KeyError:
        raise ConfigError(f"unknown model tag {model_tag!r}; known: {sorted(_MODEL_CLASSES)}")
    return cls(*[float(v) for v in values])


def params_to_values(params) -> np.ndarray:
    if isinstance(params, SvGaussianParams):
        return np.array([params.phi, params.sigma_alpha, params.mu, params.h_bar])
    if isinstance(params, StableSvParams):
        return np.array([params.omega, params.phi, params.sigma_h, params.alpha])
    raise ConfigError(f"unsupported parameter record {type(params).__name__}")


def observation_mean(params) -> float:
    """Mean of the measurement equation (mu for Gaussian SV, 0 for stable SV)."""
    return params.mu if isinstance(params, SvGaussianParams) else 0.0


# ---------------------------------------------------------------------------
# transitions
# ---------------------------------------------------------------------------

def transition_mean(params, h_prev):
    if isinstance(params, SvGaussianParams):
        return params.h_bar + params.phi * (np.asarray(h_prev) - params.h_bar)
    if isinstance(params, StableSvParams):
        return params.omega + params.phi * np.asarray(h_prev)
    raise ConfigError(f"unsupported parameter record {type(params).__name__}")


def transition_draws(params, h_prev, gen: np.random.Generator):
    """Vector of next-state draws given current states h_prev."""
    h_prev = np.asarray(h_prev, dtype=float)
    if isinstance(params, SvGaussianParams):
        noise = params.sigma_alpha * gen.standard_normal(h_prev.shape)
    elif isinstance(params, StableSvParams):
        noise = params.sigma_h * stable_draws(params.alpha, -1.0, h_prev.size, gen).reshape(h_prev.shape)
    else:
        raise ConfigError(f"unsupported parameter record {type(params).__name__}")
    return transition_mean(params, h_prev) + noise


def sv_transition_sample(h_prev: float, params, rng) -> float:
    """One draw of h_t | h_{t-1}; rng may be an RngStream or a live generator."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return float(transition_draws(params, np.array([h_prev]), gen)[0])


def initial_state_draws(params, n: int, gen: np.random.Generator):
    """Draws from the model's initial state law.

    Gaussian SV has an exact stationary start; the stable transition has no
    closed-form stationary law, so its start is the deterministic fixed point
    pushed through BURN_IN transition steps.
    """
    if isinstance(params, SvGaussianParams):
        sd = params.sigma_alpha / np.sqrt(1.0 - params.phi**2)
        return params.h_bar + sd * gen.standard_normal(n)
    if isinstance(params, StableSvParams):
        h = np.full(n, params.omega / (1.0 - params.phi))
        for _ in range(BURN_IN):
            h = transition_draws(params, h, gen)
        return h
    raise ConfigError(f"unsupported parameter record {type(params).__name__}")


# ---------------------------------------------------------------------------
# measurement
# ---------------------------------------------------------------------------

def sv_measurement_logpdf(y, h, mu=0.0):
    """log N(y; mu, e^h), broadcasting over arrays.

    Overflow maps to -inf, which downstream code treats as zero weight.
    """
    y = np.asarray(y, dtype=float)
    h = np.asarray(h, dtype=float)
    with np.errstate(over="ignore"):
        return -0.5 * (np.log(2.0 * np.pi) + h + (y - mu) ** 2 * np.exp(-h))


# ---------------------------------------------------------------------------
# simulators
# ---------------------------------------------------------------------------

def simulate_sv_gaussian(params: SvGaussianParams, T: int, rng: RngStream) -> SimulatedPath:
    """Exact stationary initialization, then the AR(1)/lognormal recursion."""
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    gen = rng.generator()
    sd0 = params.sigma_alpha / np.sqrt(1.0 - params.phi**2)
    w = np.empty(T)
    w[0] = sd0 * gen.standard_normal()             # stationary deviation of a_1
    if T > 1:
        w[1:] = params.sigma_alpha * gen.standard_normal(T - 1)
    dev = signal.lfilter([1.0], [1.0, -params.phi], w)
    states = params.h_bar + dev
    e = gen.standard_normal(T)
    obs = params.mu + np.exp(0.5 * states) * e
    return SimulatedPath(states, obs)


def simulate_skew_sv(
    params: SkewSvParams, T: int, rng: RngStream, fz_draws: int = 200_000
) -> SimulatedPath:
    """Skew-copula DGP: z_t -> empirical PIT -> standardized skew-normal quantile.

    The marginal CDF of z is estimated from an independent pilot simulation of
    the same latent process; the empirical CDF interpolates order statistics
    with plotting positions i/(n+1), which also clamps away from 0 and 1.
    """
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    if fz_draws < 100_000:
        raise DomainError(f"fz_draws must be at least 1e5, got {fz_draws}")

    def latent_z(n, gen):
        eta = params.sigma_h * gen.standard_normal(n + BURN_IN)
        eta[0] = 0.0  # start at the level, burn in towards stationarity
        dev = signal.lfilter([1.0], [1.0, -params.a], eta)[BURN_IN:]
        h = params.h_bar + dev
        return h, np.exp(0.5 * h) * gen.standard_normal(n)

    pilot_gen = rng.derive("fz-pilot").generator()
    _, z_pilot = latent_z(fz_draws, pilot_gen)
    z_sorted = np.sort(z_pilot)
    pp = np.arange(1, fz_draws + 1) / (fz_draws + 1.0)

    gen = rng.generator()
    states, z = latent_z(T, gen)
    u = np.interp(z, z_sorted, pp)
    obs = skew_normal_quantile(u, params.gamma)
    return SimulatedPath(states, obs)


def simulate_stable_sv(params: StableSvParams, T: int, rng: RngStream) -> SimulatedPath:
    """Stable-transition SV; fixed-point start with BURN_IN discarded steps."""
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    gen = rng.generator()
    h0 = params.omega / (1.0 - params.phi)
    eta = params.sigma_h * stable_draws(params.alpha, -1.0, T + BURN_IN, gen)
    eta += params.omega
    zi = np.array([params.phi * h0])
    h_all, _ = signal.lfilter([1.0], [1.0, -params.phi], eta, zi=zi)
    states = h_all[BURN_IN:]
    e = gen.standard_normal(T)
    obs = np.exp(0.5 * states) * e
    return SimulatedPath(states, obs)


def simulate(params, T: int, rng: RngStream) -> SimulatedPath:
    """Dispatch on the parameter record type."""
    if isinstance(params, SvGaussianParams):
        return simulate_sv_gaussian(params, T, rng)
    if isinstance(params, SkewSvParams):
        return simulate_skew_sv(params, T, rng)
    if isinstance(params, StableSvParams):
        return simulate_stable_sv(params, T, rng)
    raise ConfigError(f"unsupported parameter record {type(params).__name__}")
