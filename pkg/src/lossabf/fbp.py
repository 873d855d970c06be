"""Focused Bayesian prediction with the auxiliary model.

The generalized posterior raises exp(w * criterion) against the improper
prior 1/beta1 (with the usual ARCH/GARCH indicator constraints) and is
sampled by random-walk Metropolis-Hastings in the unconstrained
parametrization. The FBP predictive is the equally weighted mixture of the
auxiliary one-step predictives across posterior draws.

With the log score and w = 1 the update is conventional Bayes for the
auxiliary model; for CRPS/IS the scale w is estimated as the ratio of summed
log scores to summed target-rule scores under the w = 1 log-score posterior.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .auxiliary import (
    AUX_PARAM_FIELDS,
    AuxFit,
    aux_params_from_values,
    aux_params_to_values,
    criterion,
    fit_auxiliary,
)
from .distributions import RngStream
from .errors import DomainError, EstimationError
from .scoring import PredictiveMixture, ScoringRule

log = logging.getLogger(__name__)

ADAPT_INTERVAL = 100
TARGET_ACCEPT = (0.2, 0.4)
ACCEPT_HEALTHY = (0.05, 0.7)


@dataclass(frozen=True)
class FbpConfig:
    """Chain dimensions: M draws kept after burn-in and thinning."""

    n_draws: int = 1000
    burn_in: int = 10_000
    thin: int = 5
    proposal_scale: tuple | None = None  # per-coordinate scales in u-space

    def __post_init__(self):
        if self.n_draws < 100:
            raise DomainError(f"n_draws must be >= 100, got {self.n_draws}")
        if self.burn_in < 0 or self.thin < 1:
            raise DomainError("burn_in must be >= 0 and thin >= 1")


@dataclass(frozen=True)
class FbpPosterior:
    aux_tag: str
    rule: ScoringRule
    w_used: float
    draws: np.ndarray          # (M, P) in beta space
    acceptance_rate: float
    tuning_warning: str | None = None

    @property
    def param_names(self):
        return AUX_PARAM_FIELDS[self.aux_tag]

    def param_records(self):
        return [aux_params_from_values(self.aux_tag, row) for row in self.draws]


# ---------------------------------------------------------------------------
# generalized posterior density
# ---------------------------------------------------------------------------

def _in_support(beta, aux_tag):
    if beta[1] <= 0 or not 0.0 <= beta[2] < 1.0:
        return False
    if aux_tag == "garch" and not (0.0 <= beta[3] < 1.0 and beta[2] + beta[3] < 1.0):
        return False
    return True


def log_generalized_posterior(params, rule: ScoringRule, w: float, y, aux_tag=None):
    """w * criterion + log prior, up to a constant; -inf outside the support.

    ``params`` may be a parameter record or a raw coordinate sequence (the
    latter lets callers probe out-of-support points).
    """
    if w <= 0:
        raise DomainError(f"scale w must be positive, got {w}")
    if isinstance(params, (tuple, list, np.ndarray)):
        beta = np.asarray(params, dtype=float)
        if aux_tag is None:
            aux_tag = {3: "arch", 4: "garch"}.get(beta.size)
        if not _in_support(beta, aux_tag):
            return -np.inf
        params = aux_params_from_values(aux_tag, beta)
    else:
        beta = aux_params_to_values(params)
    val = w * criterion(rule, params, np.asarray(y, dtype=float)) - np.log(beta[1])
    return float(val) if np.isfinite(val) else -np.inf


# ---------------------------------------------------------------------------
# random-walk MH in the unconstrained parametrization
# ---------------------------------------------------------------------------

def _u_to_beta(u, aux_tag):
    if aux_tag == "arch":
        return np.array([u[0], np.exp(u[1]), expit(u[2])])
    b2 = expit(u[2])
    return np.array([u[0], np.exp(u[1]), b2, (1.0 - b2) * expit(u[3])])


def _beta_to_u(beta, aux_tag):
    def logit(p):
        return np.log(p) - np.log1p(-p)

    if aux_tag == "arch":
        return np.array([beta[0], np.log(beta[1]), logit(beta[2])])
    return np.array(
        [beta[0], np.log(beta[1]), logit(beta[2]), logit(beta[3] / (1.0 - beta[2]))]
    )


def _log_target_u(u, rule, w, y2d_criterion, aux_tag):
    """Log density of the transformed chain state.

    The 1/beta1 prior cancels the log-scale Jacobian of beta1 exactly; the
    logistic/stick-breaking Jacobians for beta2 (and beta3) remain.
    """
    beta = _u_to_beta(u, aux_tag)
    s2 = expit(u[2])
    log_jac = np.log(s2) + np.log1p(-s2)
    if aux_tag == "garch":
        s3 = expit(u[3])
        log_jac += np.log1p(-s2) + np.log(s3) + np.log1p(-s3)
    val = w * y2d_criterion(beta) + log_jac
    return val if np.isfinite(val) else -np.inf


def _default_scales(u0, rule, w, crit, aux_tag):
    """Curvature-matched proposal scales from a crude FD Hessian diagonal."""
    scales = np.empty(u0.size)
    f0 = w * crit(_u_to_beta(u0, aux_tag))
    for k in range(u0.size):
        h = 1e-3
        up, um = u0.copy(), u0.copy()
        up[k] += h
        um[k] -= h
        fp = w * crit(_u_to_beta(up, aux_tag))
        fm = w * crit(_u_to_beta(um, aux_tag))
        curv = abs(fp - 2 * f0 + fm) / h**2
        scales[k] = 1.0 / np.sqrt(curv) if curv > 1e-12 else 0.1
    return np.clip(scales, 1e-5, 1.0)


def run_rwmh(
    rule: ScoringRule,
    w: float,
    y,
    aux_tag: str,
    cfg: FbpConfig,
    rng: RngStream,
    init: AuxFit | None = None,
) -> FbpPosterior:
    """Sample the generalized posterior; adaptive scaling during burn-in only.

    The chain starts at the criterion optimum, proposals are spherical
    Gaussians in u-space scaled per coordinate, and a global factor adapts
    every ADAPT_INTERVAL burn-in iterations towards acceptance in [0.2, 0.4],
    frozen afterwards.
    """
    y = np.asarray(y, dtype=float)
    if w <= 0:
        raise DomainError(f"scale w must be positive, got {w}")
    if init is None:
        init = fit_auxiliary(rule, aux_tag, y, restarts=2)

    from .auxiliary import _criterion_rows  # single shared criterion code path

    y2d = y[None, :]

    def crit(beta):
        return float(_criterion_rows(rule, beta, aux_tag, y2d)[0])

    u = _beta_to_u(aux_params_to_values(init.params), aux_tag)
    base = (
        np.asarray(cfg.proposal_scale, dtype=float)
        if cfg.proposal_scale is not None
        else _default_scales(u, rule, w, crit, aux_tag)
    )
    if base.shape != u.shape or np.any(base <= 0):
        raise DomainError("proposal_scale must be positive, one entry per parameter")

    gen = rng.generator()
    lam = 2.38 / np.sqrt(u.size)
    logp = _log_target_u(u, rule, w, crit, aux_tag)
    if not np.isfinite(logp):
        raise DomainError("chain start has zero posterior density")

    total = cfg.burn_in + cfg.n_draws * cfg.thin
    draws = np.empty((cfg.n_draws, u.size))
    kept = 0
    accepted_window = 0
    accepted_post = 0
    for i in range(total):
        prop = u + lam * base * gen.standard_normal(u.size)
        logp_prop = _log_target_u(prop, rule, w, crit, aux_tag)
        if np.log(gen.random()) < logp_prop - logp:
            u, logp = prop, logp_prop
            accepted_window += 1
            if i >= cfg.burn_in:
                accepted_post += 1
        in_burn = i < cfg.burn_in
        if in_burn and (i + 1) % ADAPT_INTERVAL == 0:
            rate = accepted_window / ADAPT_INTERVAL
            if rate < TARGET_ACCEPT[0]:
                lam *= 0.7
            elif rate > TARGET_ACCEPT[1]:
                lam *= 1.4
            accepted_window = 0
        if not in_burn and (i - cfg.burn_in + 1) % cfg.thin == 0:
            draws[kept] = _u_to_beta(u, aux_tag)
            kept += 1

    post_iters = cfg.n_draws * cfg.thin
    acc_rate = accepted_post / post_iters if post_iters else 0.0
    warning = None
    if not ACCEPT_HEALTHY[0] <= acc_rate <= ACCEPT_HEALTHY[1]:
        warning = f"acceptance rate {acc_rate:.3f} outside {ACCEPT_HEALTHY}"
        log.warning("%s (rule %s, w=%.4g)", warning, rule.label, w)
    return FbpPosterior(
        aux_tag=aux_tag,
        rule=rule,
        w_used=float(w),
        draws=draws,
        acceptance_rate=float(acc_rate),
        tuning_warning=warning,
    )


# ---------------------------------------------------------------------------
# scale-factor estimation
# ---------------------------------------------------------------------------

def scale_from_sums(ls_sum: float, rule_sum: float) -> float:
    """The scale ratio: summed log scores over summed target-rule scores."""
    if rule_sum == 0.0 or not np.isfinite(rule_sum) or not np.isfinite(ls_sum):
        raise EstimationError(
            f"degenerate score sums in w estimation (num={ls_sum}, den={rule_sum})"
        )
    return float(ls_sum / rule_sum)


def estimate_w(rule: ScoringRule, y, aux_tag: str, base_posterior: FbpPosterior) -> float:
    """Scale factor for the generalized update of a given rule.

    LS and CLS use the natural scale w = 1. For CRPS and IS the scale is the
    ratio of summed log scores to summed target-rule scores over the draws of
    the conventional (log-score, w = 1) posterior.
    """
    if rule.kind in ("ls", "cls"):
        return 1.0
    if base_posterior.rule.kind != "ls" or base_posterior.w_used != 1.0:
        raise DomainError("w estimation requires the log-score w=1 base posterior")
    y = np.asarray(y, dtype=float)
    ls_rule = ScoringRule.ls()
    num = 0.0
    den = 0.0
    for params in base_posterior.param_records():
        num += criterion(ls_rule, params, y)
        den += criterion(rule, params, y)
    return scale_from_sums(num, den)


def scale_factors(rules, y, aux_tag: str, base_posterior: FbpPosterior) -> dict:
    return {r.label: estimate_w(r, y, aux_tag, base_posterior) for r in rules}


# ---------------------------------------------------------------------------
# FBP predictives
# ---------------------------------------------------------------------------

def _variance_panel(draws, aux_tag, y, extend=False):
    """(M, n_pred) predictive variances; column c predicts y[c + 1].

    ``extend`` appends the predictive beyond the final observation.
    """
    y = np.asarray(y, dtype=float)
    eps2 = (y[None, :] - draws[:, [0]]) ** 2
    lead = eps2 if extend else eps2[:, :-1]
    b1 = draws[:, [1]]
    b2 = draws[:, [2]]
    if aux_tag == "arch":
        return b1 + b2 * lead
    b3 = draws[:, [3]]
    out = np.empty_like(lead)
    prev = (b1 / (1.0 - b2 - b3))[:, 0]
    for t in range(lead.shape[1]):
        prev = b1[:, 0] + b2[:, 0] * prev + b3[:, 0] * lead[:, t]
        out[:, t] = prev
    return out


def fbp_predictive(posterior: FbpPosterior, y) -> PredictiveMixture:
    """One-step-ahead mixture beyond the end of the series; M components."""
    if posterior.draws.shape[0] == 0:
        raise DomainError("posterior has no draws")
    panel = _variance_panel(posterior.draws, posterior.aux_tag, y, extend=True)
    return PredictiveMixture(posterior.draws[:, 0], panel[:, -1])


def fbp_holdout_predictives(posterior: FbpPosterior, y_full, split: int) -> list:
    """Per-time mixtures for y_full[split:], one filter pass per draw."""
    y_full = np.asarray(y_full, dtype=float)
    if not 0 < split < y_full.size:
        raise DomainError(f"split must lie inside the series, got {split}")
    panel = _variance_panel(posterior.draws, posterior.aux_tag, y_full)
    means = posterior.draws[:, 0]
    return [
        PredictiveMixture(means, panel[:, t - 1]) for t in range(split, y_full.size)
    ]


def fbp_rolling_eval(
    posterior: FbpPosterior, y_full, split: int, rules, workers: int = 0
) -> dict:
    from .evaluation import average_score_row

    mixtures = fbp_holdout_predictives(posterior, y_full, split)
    return average_score_row(
        mixtures, np.asarray(y_full)[split:], rules, workers=workers
    )
