"""Loss-based ABC engine.

Rejection ABC specialized to score-gradient summaries: draw parameters from
the prior, simulate an artificial series of the observed length, summarize it
by the averaged criterion gradient at the observed-data optimum, and keep the
draws with the smallest Mahalanobis distances. The observed summary is zero
by the first-order condition, so the distance of a draw is just the weighted
norm of its summary vector.

Phase 1 (simulate + summarize) is an embarrassingly parallel map over draw
indices with per-index random streams; phase 2 (weight matrix, distances,
selection) is a single deterministic reduction. Results are identical for
any worker count.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import models
from .auxiliary import (
    AuxFit,
    aux_params_from_values,
    aux_params_to_values,
    criterion_gradient_batch,
    fit_auxiliary,
)
from .distributions import RngStream
from .errors import DomainError, NumericalError
from .parallel import parallel_starmap
from .scoring import ScoringRule

log = logging.getLogger(__name__)

PHASE1_BATCH = 500


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise DomainError(f"uniform bounds must satisfy low < high, got {self}")


@dataclass(frozen=True)
class Normal:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise DomainError(f"normal variance must be positive, got {self}")


@dataclass(frozen=True)
class PriorSpec:
    """Independent marginals over the fields of one model's parameter record."""

    model_tag: str
    marginals: tuple

    def __post_init__(self):
        fields = models.MODEL_PARAM_FIELDS.get(self.model_tag)
        if fields is None:
            raise DomainError(f"unknown model tag {self.model_tag!r}")
        names = tuple(name for name, _ in self.marginals)
        if names != fields:
            raise DomainError(
                f"prior marginals {names} must match the parameter fields {fields}"
            )

    @property
    def names(self):
        return tuple(name for name, _ in self.marginals)


def sample_prior_matrix(spec: PriorSpec, n: int, gen: np.random.Generator) -> np.ndarray:
    """n independent draws; one column per parameter, prior order preserved."""
    cols = []
    for _, marginal in spec.marginals:
        if isinstance(marginal, Uniform):
            cols.append(gen.uniform(marginal.low, marginal.high, size=n))
        elif isinstance(marginal, Normal):
            cols.append(marginal.mean + np.sqrt(marginal.variance) * gen.standard_normal(n))
        else:
            raise DomainError(f"unsupported marginal {marginal!r}")
    return np.column_stack(cols)


def sample_prior(spec: PriorSpec, rng: RngStream):
    """One parameter record drawn from the prior."""
    row = sample_prior_matrix(spec, 1, rng.generator())[0]
    return models.params_from_values(spec.model_tag, row)


@dataclass(frozen=True)
class AbcConfig:
    """Draw budget and nearest-neighbour keep policy.

    ``keep`` wins when set; otherwise ``keep = round(keep_quantile * n_draws)``
    with the default quantile 50 * T^{-3/2} of the training length.
    """

    n_draws: int
    keep: int | None = None
    keep_quantile: float | None = None

    def __post_init__(self):
        if self.n_draws < 1:
            raise DomainError("n_draws must be positive")
        if self.keep is not None and not 1 <= self.keep <= self.n_draws:
            raise DomainError(f"keep must be in [1, n_draws], got {self.keep}")

    def resolve_keep(self, series_length: int) -> int:
        if self.keep is not None:
            return self.keep
        q = self.keep_quantile
        if q is None:
            q = 50.0 * series_length ** (-1.5)
        keep = int(round(q * self.n_draws))
        return max(1, min(keep, self.n_draws))


@dataclass(frozen=True)
class AbcPosterior:
    """Retained draws plus the full summary panel behind the selection."""

    model_tag: str
    param_names: tuple
    kept_thetas: np.ndarray      # (keep, P) rows sorted by distance
    kept_indices: np.ndarray     # original draw indices, tie-break order
    kept_distances: np.ndarray   # ascending
    summaries: np.ndarray        # (n_draws, dim beta), all draws
    weight_matrix: np.ndarray

    def kept_params(self):
        return [models.params_from_values(self.model_tag, row) for row in self.kept_thetas]

    def posterior_mean(self) -> dict:
        return dict(zip(self.param_names, self.kept_thetas.mean(axis=0)))


# ---------------------------------------------------------------------------
# summaries, weights, distances
# ---------------------------------------------------------------------------

def summary_statistic(y_sim, fit: AuxFit, rule: ScoringRule) -> np.ndarray:
    """Averaged criterion gradient of a simulated series at the observed fit."""
    y_sim = np.asarray(y_sim, dtype=float)
    n_terms = y_sim.size - 1
    return criterion_gradient_batch(rule, fit.params, y_sim[None, :])[0] / n_terms


def estimate_weight_matrix(summaries: np.ndarray) -> np.ndarray:
    """Inverse sample covariance of the summaries, ridge-regularized.

    Rows with non-finite entries (degenerate simulations) are excluded from
    the covariance; they are handled downstream via infinite distances.
    """
    summaries = np.asarray(summaries, dtype=float)
    finite = np.all(np.isfinite(summaries), axis=1)
    clean = summaries[finite]
    dim = summaries.shape[1]
    if clean.shape[0] < dim + 1:
        raise NumericalError(
            f"need at least {dim + 1} finite summary rows, got {clean.shape[0]}"
        )
    cov = np.cov(clean, rowvar=False)
    cov = np.atleast_2d(cov)
    ridge = 1e-10 * np.trace(cov) / dim
    cov = cov + ridge * np.eye(dim)
    try:
        w = np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"summary covariance is singular: {exc}") from exc
    return 0.5 * (w + w.T)


def mahalanobis(summary: np.ndarray, weight: np.ndarray) -> float:
    """sqrt(s' W s); the distance to the observed (zero) summary."""
    s = np.asarray(summary, dtype=float)
    if s.shape != (weight.shape[0],):
        raise DomainError(f"dimension mismatch: summary {s.shape}, weight {weight.shape}")
    q = float(s @ weight @ s)
    return float(np.sqrt(max(q, 0.0)))


def _distances(summaries, weight):
    finite = np.all(np.isfinite(summaries), axis=1)
    d = np.full(summaries.shape[0], np.inf)
    if np.any(finite):
        clean = summaries[finite]
        q = np.einsum("ij,jk,ik->i", clean, weight, clean)
        d[finite] = np.sqrt(np.maximum(q, 0.0))
    return d


# ---------------------------------------------------------------------------
# the two-phase run
# ---------------------------------------------------------------------------

def _phase1_batch(prior, rule, fit_params_values, aux_tag, series_length, parent, i0, i1):
    """Simulate draws i0..i1-1 and summarize them. Pure in (parent stream, index)."""
    fit_params = aux_params_from_values(aux_tag, fit_params_values)
    n = i1 - i0
    thetas = np.empty((n, len(prior.names)))
    paths = np.empty((n, series_length))
    for j, i in enumerate(range(i0, i1)):
        stream = parent.derive("draw", i)
        gen = stream.generator()
        row = sample_prior_matrix(prior, 1, gen)[0]
        thetas[j] = row
        try:
            params = models.params_from_values(prior.model_tag, row)
            paths[j] = models.simulate(params, series_length, stream.derive("path")).observations
        except DomainError:
            # zero-probability boundary draws: summarize as non-finite
            paths[j] = np.nan
    with np.errstate(all="ignore"):
        grads = criterion_gradient_batch(rule, fit_params, paths)
    summaries = grads / (series_length - 1)
    return thetas, summaries


def run_abc(
    prior: PriorSpec,
    rule: ScoringRule,
    aux_tag: str,
    y_obs,
    config: AbcConfig,
    rng: RngStream,
    fit: AuxFit | None = None,
    workers: int = 0,
) -> AbcPosterior:
    """Two-phase nearest-neighbour ABC run.

    Phase 1 simulates ``config.n_draws`` series of the observed length and
    computes their score-gradient summaries at the observed-data optimum
    (fitted here unless ``fit`` is supplied). Phase 2 estimates the weight
    matrix from all draws, computes distances, and keeps the smallest; ties
    break by draw index.
    """
    y_obs = np.asarray(y_obs, dtype=float)
    if y_obs.size < 100:
        raise DomainError(f"observed series too short for ABC (got {y_obs.size})")
    if fit is None:
        fit = fit_auxiliary(rule, aux_tag, y_obs)

    parent = rng.derive("abc", rule.label, prior.model_tag)
    fit_values = aux_params_to_values(fit.params)

    n = config.n_draws
    edges = list(range(0, n, PHASE1_BATCH)) + [n] if n > PHASE1_BATCH else [0, n]
    tasks = [
        (prior, rule, fit_values, aux_tag, y_obs.size, parent, edges[k], edges[k + 1])
        for k in range(len(edges) - 1)
    ]
    results = parallel_starmap(_phase1_batch, tasks, workers=workers)

    thetas = np.vstack([r[0] for r in results])
    summaries = np.vstack([r[1] for r in results])

    weight = estimate_weight_matrix(summaries)
    distances = _distances(summaries, weight)
    n_bad = int(np.sum(~np.isfinite(distances)))
    if n_bad:
        log.warning("%d of %d draws produced non-finite summaries", n_bad, n)

    keep = config.resolve_keep(y_obs.size)
    order = np.lexsort((np.arange(n), distances))[:keep]
    return AbcPosterior(
        model_tag=prior.model_tag,
        param_names=prior.names,
        kept_thetas=thetas[order],
        kept_indices=order,
        kept_distances=distances[order],
        summaries=summaries,
        weight_matrix=weight,
    )
