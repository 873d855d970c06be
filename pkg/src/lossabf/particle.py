"""Bootstrap particle filter and posterior-averaged predictive mixtures.

The filter proposes from the state transition, weights by the measurement
density, and resamples systematically at every step, so the cloud at time t
targets p(x_t | theta, y_{1:t}). Hold-out predictives reuse a single filter
pass per parameter draw: at each hold-out time the current cloud is resampled,
propagated one step, and contributes K Gaussian components N(mu_theta, e^x).
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import models
from .distributions import RngStream
from .errors import DomainError, FilterDegeneracyError
from .parallel import parallel_starmap
from .scoring import PredictiveMixture

log = logging.getLogger(__name__)

MAX_DROPPED_FRACTION = 0.10


def _state_to_variance(x):
    """exp(state) clipped away from 0 and inf.

    Stable-transition states can plunge past the exp underflow point; the
    floored component then behaves as a point mass at the measurement mean,
    which is the correct limit.
    """
    with np.errstate(over="ignore"):
        return np.clip(np.exp(x), 1e-300, 1e300)


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int = 1000
    state_draws_per_theta: int = 20
    resampling: str = "systematic"

    def __post_init__(self):
        if self.n_particles < 100:
            raise DomainError(f"n_particles must be >= 100, got {self.n_particles}")
        if self.state_draws_per_theta < 1:
            raise DomainError("state_draws_per_theta must be >= 1")
        if self.resampling != "systematic":
            raise DomainError(f"unsupported resampling scheme {self.resampling!r}")


@dataclass(frozen=True)
class ParticleCloud:
    particles: np.ndarray
    log_weights: np.ndarray  # normalized: logsumexp == 0

    def weights(self):
        return np.exp(self.log_weights)

    def mean(self) -> float:
        return float(np.sum(self.particles * self.weights()))


def systematic_resample(weights, gen: np.random.Generator, size=None) -> np.ndarray:
    """Systematic resampling indices; one uniform offset per call."""
    w = np.asarray(weights, dtype=float)
    n = size if size is not None else w.size
    positions = (gen.random() + np.arange(n)) / n
    cum = np.cumsum(w)
    cum[-1] = 1.0  # guard against rounding drift at the top
    return np.searchsorted(cum, positions)


def _filter_steps(params, y, cfg: FilterConfig, gen: np.random.Generator):
    """Yield (t, particles, normalized log-weights) for t = 0..T-1."""
    mu = models.observation_mean(params)
    particles = models.initial_state_draws(params, cfg.n_particles, gen)
    for t, yt in enumerate(np.asarray(y, dtype=float)):
        if t > 0:
            idx = systematic_resample(np.exp(logw), gen)
            particles = models.transition_draws(params, particles[idx], gen)
        logw = models.sv_measurement_logpdf(yt, particles, mu)
        norm = logsumexp(logw)
        if not np.isfinite(norm):
            raise FilterDegeneracyError(t)
        logw = logw - norm
        yield t, particles, logw


def bootstrap_filter(params, y, cfg: FilterConfig, rng: RngStream) -> list[ParticleCloud]:
    """Full cloud sequence; one cloud per observation."""
    gen = rng.generator()
    return [
        ParticleCloud(particles.copy(), logw.copy())
        for _, particles, logw in _filter_steps(params, y, cfg, gen)
    ]


def log_likelihood_estimate(params, y, cfg: FilterConfig, rng: RngStream) -> float:
    """SMC estimate of log p(y | theta); used by variance diagnostics."""
    gen = rng.generator()
    mu = models.observation_mean(params)
    particles = models.initial_state_draws(params, cfg.n_particles, gen)
    total = 0.0
    logw = None
    for t, yt in enumerate(np.asarray(y, dtype=float)):
        if t > 0:
            idx = systematic_resample(np.exp(logw), gen)
            particles = models.transition_draws(params, particles[idx], gen)
        raw = models.sv_measurement_logpdf(yt, particles, mu)
        norm = logsumexp(raw)
        if not np.isfinite(norm):
            raise FilterDegeneracyError(t)
        total += norm - np.log(cfg.n_particles)
        logw = raw - norm
    return total


def one_step_predictive(
    thetas, clouds_at_t, K: int, rng: RngStream
) -> PredictiveMixture:
    """Mixture over thetas of K propagated state draws each.

    Component i*K+k is N(mu_theta_i, exp(x')) with x' one transition draw from
    a resampled particle of theta_i's cloud.
    """
    thetas = list(thetas)
    clouds = list(clouds_at_t)
    if not thetas:
        raise DomainError("need at least one parameter draw")
    if len(thetas) != len(clouds):
        raise DomainError("one cloud per theta required")
    means = np.empty(len(thetas) * K)
    variances = np.empty(len(thetas) * K)
    for i, (params, cloud) in enumerate(zip(thetas, clouds)):
        gen = rng.derive("one-step", i).generator()
        idx = systematic_resample(cloud.weights(), gen, size=K)
        ahead = models.transition_draws(params, cloud.particles[idx], gen)
        means[i * K:(i + 1) * K] = models.observation_mean(params)
        variances[i * K:(i + 1) * K] = _state_to_variance(ahead)
    return PredictiveMixture(means, variances)


# ---------------------------------------------------------------------------
# hold-out predictive construction
# ---------------------------------------------------------------------------

def _holdout_components(params, y_full, split, cfg, stream):
    """One filter pass; returns (n_holdout, K) state draws x_{t+1}.

    Row r holds the K propagated draws used to predict y_full[split + r].
    """
    gen = stream.generator()
    K = cfg.state_draws_per_theta
    y_full = np.asarray(y_full, dtype=float)
    n_hold = y_full.size - split
    ahead = np.empty((n_hold, K))
    for t, particles, logw in _filter_steps(params, y_full, cfg, gen):
        if split - 1 <= t < y_full.size - 1:
            idx = systematic_resample(np.exp(logw), gen, size=K)
            ahead[t - (split - 1)] = models.transition_draws(params, particles[idx], gen)
    return ahead


def _holdout_components_task(model_tag, theta_row, y_full, split, cfg, stream):
    params = models.params_from_values(model_tag, theta_row)
    try:
        return models.observation_mean(params), _holdout_components(
            params, y_full, split, cfg, stream
        )
    except FilterDegeneracyError as exc:
        return None, exc.t


def holdout_predictives(
    posterior, y_full, split: int, cfg: FilterConfig, rng: RngStream, workers: int = 0
) -> list[PredictiveMixture]:
    """Predictive mixtures for y_full[split:], one per hold-out time.

    Each kept parameter draw is filtered once over the full series with its
    own stream. Draws whose filter degenerates are dropped with a warning;
    more than MAX_DROPPED_FRACTION dropped aborts.
    """
    y_full = np.asarray(y_full, dtype=float)
    if not 0 < split < y_full.size:
        raise DomainError(f"split must lie inside the series, got {split}")
    rows = posterior.kept_thetas
    tasks = [
        (posterior.model_tag, rows[j], y_full, split, cfg, rng.derive("filter", j))
        for j in range(rows.shape[0])
    ]
    results = parallel_starmap(_holdout_components_task, tasks, workers=workers)

    kept = [(mu, comps) for mu, comps in results if mu is not None]
    dropped = len(results) - len(kept)
    if dropped:
        log.warning("dropped %d of %d filter passes (degeneracy)", dropped, len(results))
        if dropped > MAX_DROPPED_FRACTION * len(results):
            raise FilterDegeneracyError(
                [t for mu, t in results if mu is None][0]
            )
    n_hold = y_full.size - split
    K = cfg.state_draws_per_theta
    means = np.repeat([mu for mu, _ in kept], K)
    mixtures = []
    for r in range(n_hold):
        variances = _state_to_variance(np.concatenate([comps[r] for _, comps in kept]))
        mixtures.append(PredictiveMixture(means, variances))
    return mixtures


def rolling_predictive_eval(
    posterior,
    y_full,
    split: int,
    cfg: FilterConfig,
    rules,
    rng: RngStream,
    workers: int = 0,
) -> dict:
    """Average hold-out scores of the posterior-averaged predictive.

    Returns {rule label: mean score of y_full[split:]} with the posterior held
    fixed over the whole hold-out period.
    """
    from .evaluation import average_score_row

    mixtures = holdout_predictives(posterior, y_full, split, cfg, rng, workers=workers)
    return average_score_row(mixtures, np.asarray(y_full)[split:], rules, workers=workers)
