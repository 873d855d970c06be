"""Gaussian ARCH(1) / GARCH(1,1) auxiliary models.

These supply the closed-form one-step predictives behind the score criterion

    S(beta) = sum over usable in-sample pairs of s(P_beta^{(t)}, y_t),

its finite-difference gradient (the ABC summary statistic), and criterion
maximization. The first observation only conditions, so a series of length T
contributes T-1 score terms (predictives for t = 2..T).

Batched variants score many simulated series against one shared parameter
point; they are the hot path of the ABC engine.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal
from scipy.special import expit, ndtri

from . import _criterion_kernels as _kern
from .errors import ConfigError, DomainError, OptimizationError
from .scoring import GaussianPredictive, ScoringRule, gaussian_scores

log = logging.getLogger(__name__)

FD_RELATIVE_STEP = 1e-6


@dataclass(frozen=True)
class ArchParams:
    beta0: float
    beta1: float
    beta2: float

    def __post_init__(self):
        if not self.beta1 > 0.0:
            raise DomainError(f"beta1 must be > 0, got {self.beta1}")
        if not 0.0 <= self.beta2 < 1.0:
            raise DomainError(f"beta2 must be in [0, 1), got {self.beta2}")


@dataclass(frozen=True)
class GarchParams:
    beta0: float
    beta1: float
    beta2: float
    beta3: float

    def __post_init__(self):
        if not self.beta1 > 0.0:
            raise DomainError(f"beta1 must be > 0, got {self.beta1}")
        if not 0.0 <= self.beta2 < 1.0 or not 0.0 <= self.beta3 < 1.0:
            raise DomainError("beta2 and beta3 must be in [0, 1)")
        if not self.beta2 + self.beta3 < 1.0:
            raise DomainError(f"beta2 + beta3 must be < 1, got {self.beta2 + self.beta3}")


AUX_PARAM_FIELDS = {
    "arch": ("beta0", "beta1", "beta2"),
    "garch": ("beta0", "beta1", "beta2", "beta3"),
}

_AUX_CLASSES = {"arch": ArchParams, "garch": GarchParams}


def aux_tag_of(params) -> str:
    if isinstance(params, ArchParams):
        return "arch"
    if isinstance(params, GarchParams):
        return "garch"
    raise ConfigError(f"unsupported auxiliary record {type(params).__name__}")


def aux_params_from_values(aux_tag: str, values):
    try:
        cls = _AUX_CLASSES[aux_tag]
    except KeyError:
        raise ConfigError(f"unknown auxiliary tag {aux_tag!r}; known: {sorted(_AUX_CLASSES)}")
    return cls(*[float(v) for v in values])


def aux_params_to_values(params) -> np.ndarray:
    return np.array([getattr(params, f) for f in AUX_PARAM_FIELDS[aux_tag_of(params)]])


@dataclass(frozen=True)
class AuxFit:
    """Criterion optimum for one (rule, auxiliary model) pair.

    ``gradient_norm`` is the norm of the averaged score gradient at the
    optimum, i.e. the observed-data summary statistic.
    """

    params: ArchParams | GarchParams
    rule: ScoringRule
    criterion_value: float
    gradient_norm: float


# ---------------------------------------------------------------------------
# predictive filters
# ---------------------------------------------------------------------------

def _raw_variances(beta, aux_tag, y2d, extend=False):
    """Predictive variances for each series row; no parameter validation.

    Rows of ``y2d`` share the parameter point. Returns variances aligned with
    targets y[:, 1:]; ``extend`` appends the one-step-ahead variance beyond
    the final observation.
    """
    eps2 = (y2d - beta[0]) ** 2
    lead = eps2 if extend else eps2[:, :-1]
    if aux_tag == "arch":
        return beta[1] + beta[2] * lead
    # GARCH(1,1): alpha_t = b1 + b2*alpha_{t-1} + b3*eps2_{t-1},
    # initialized at the unconditional variance.
    b1, b2, b3 = beta[1], beta[2], beta[3]
    alpha1 = b1 / (1.0 - b2 - b3)
    drive = b1 + b3 * lead
    zi = np.full((y2d.shape[0], 1), b2 * alpha1)
    out, _ = signal.lfilter([1.0], [1.0, -b2], drive, axis=1, zi=zi)
    return out


def _check_series(y):
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise DomainError("series must be one-dimensional with length >= 2")
    return y


def arch_filter(params: ArchParams, y) -> list[GaussianPredictive]:
    """Predictives N(beta0, beta1 + beta2 (y_{t-1}-beta0)^2) for t = 2..T."""
    y = _check_series(y)
    var = _raw_variances(aux_params_to_values(params), "arch", y[None, :])[0]
    return [GaussianPredictive(params.beta0, float(v)) for v in var]


def garch_filter(params: GarchParams, y) -> list[GaussianPredictive]:
    """GARCH(1,1) predictives for t = 2..T, recursion started at the
    unconditional variance."""
    y = _check_series(y)
    var = _raw_variances(aux_params_to_values(params), "garch", y[None, :])[0]
    return [GaussianPredictive(params.beta0, float(v)) for v in var]


def filter_predictives(params, y) -> list[GaussianPredictive]:
    if isinstance(params, ArchParams):
        return arch_filter(params, y)
    return garch_filter(params, y)


def next_step_predictive(params, y) -> GaussianPredictive:
    """Predictive for the observation after the end of the series."""
    y = _check_series(y)
    beta = aux_params_to_values(params)
    var = _raw_variances(beta, aux_tag_of(params), y[None, :], extend=True)[0, -1]
    return GaussianPredictive(params.beta0, float(var))


# ---------------------------------------------------------------------------
# score criterion and gradient
# ---------------------------------------------------------------------------

def _criterion_rows_numpy(rule, beta, aux_tag, y2d):
    var = _raw_variances(beta, aux_tag, y2d)
    ok = np.all(var > 0.0, axis=1)
    if not np.all(ok):
        out = np.full(y2d.shape[0], -np.inf)
        if np.any(ok):
            scores = gaussian_scores(rule, beta[0], var[ok], y2d[ok, 1:])
            out[ok] = np.sum(scores, axis=1)
        return out
    scores = gaussian_scores(rule, beta[0], var, y2d[:, 1:])
    return np.sum(scores, axis=1)


def _criterion_rows(rule, beta, aux_tag, y2d):
    """Per-row criterion values; fused jit kernels when numba is present."""
    if not _kern.HAVE_NUMBA:
        return _criterion_rows_numpy(rule, beta, aux_tag, y2d)
    y2d = np.ascontiguousarray(y2d, dtype=float)
    out = np.empty(y2d.shape[0])
    b0, b1 = float(beta[0]), float(beta[1])
    if aux_tag == "arch":
        bg, ba = 0.0, float(beta[2])
    else:
        bg, ba = float(beta[2]), float(beta[3])
    with np.errstate(all="ignore"):
        if rule.kind == "ls":
            _kern.crit_ls(y2d, b0, b1, bg, ba, out)
        elif rule.kind == "crps":
            _kern.crit_crps(y2d, b0, b1, bg, ba, out)
        elif rule.kind == "cls":
            _kern.crit_cls(
                y2d, b0, b1, bg, ba, rule.region.threshold,
                rule.region.kind == "lower", out,
            )
        else:
            zq = float(ndtri(1.0 - 0.5 * rule.level))
            _kern.crit_interval(y2d, b0, b1, bg, ba, zq, 1.0 / rule.level, out)
    out[~np.isfinite(out)] = -np.inf
    return out


def criterion(rule: ScoringRule, params, y) -> float:
    """Sum of per-step scores of the filter predictives against y_2..y_T."""
    y = _check_series(y)
    beta = aux_params_to_values(params)
    return float(_criterion_rows(rule, beta, aux_tag_of(params), y[None, :])[0])


def criterion_batch(rule: ScoringRule, params, y2d) -> np.ndarray:
    """Criterion of each row of ``y2d`` at a shared parameter point."""
    y2d = np.asarray(y2d, dtype=float)
    beta = aux_params_to_values(params)
    return _criterion_rows(rule, beta, aux_tag_of(params), y2d)


def _fd_steps(beta, aux_tag, active):
    """Central-difference steps that keep both evaluation points feasible."""
    steps = FD_RELATIVE_STEP * np.maximum(np.abs(beta), 1.0)
    margins = np.full_like(steps, np.inf)
    margins[1] = beta[1]                     # beta1 > 0
    margins[2] = min(beta[2], 1.0 - beta[2])  # beta2 in [0, 1)
    if aux_tag == "garch":
        gap = 1.0 - beta[2] - beta[3]
        margins[2] = min(margins[2], gap)
        margins[3] = min(beta[3], 1.0 - beta[3], gap)
    if np.any(margins[active] <= 0.0):
        raise DomainError("parameters on the constraint boundary; gradient undefined")
    return np.minimum(steps, 0.5 * margins)


def criterion_gradient_batch(rule: ScoringRule, params, y2d, active=None) -> np.ndarray:
    """Central-difference criterion gradients, one row per series.

    ``active`` masks the coordinates differentiated; pinned coordinates of a
    restricted fit get gradient 0.
    """
    y2d = np.asarray(y2d, dtype=float)
    beta = aux_params_to_values(params)
    aux_tag = aux_tag_of(params)
    if active is None:
        active = np.ones(beta.size, dtype=bool)
    steps = _fd_steps(beta, aux_tag, active)
    grad = np.zeros((y2d.shape[0], beta.size))
    for k in range(beta.size):
        if not active[k]:
            continue
        bp = beta.copy()
        bm = beta.copy()
        bp[k] += steps[k]
        bm[k] -= steps[k]
        cp = _criterion_rows(rule, bp, aux_tag, y2d)
        cm = _criterion_rows(rule, bm, aux_tag, y2d)
        grad[:, k] = (cp - cm) / (2.0 * steps[k])
    return grad


def criterion_gradient(rule: ScoringRule, params, y, active=None) -> np.ndarray:
    y = _check_series(y)
    return criterion_gradient_batch(rule, params, y[None, :], active=active)[0]


# ---------------------------------------------------------------------------
# criterion optimization
# ---------------------------------------------------------------------------

def _logit(p):
    return np.log(p) - np.log1p(-p)


class _Reparam:
    """Unconstrained parametrization over the free (non-pinned) coordinates.

    beta0 passes through; beta1 lives on the log scale; beta2 is logistic;
    for GARCH beta3 = (1 - beta2) * expit(u) so beta2 + beta3 < 1 by
    construction (stick-breaking).
    """

    def __init__(self, aux_tag, fixed):
        self.aux_tag = aux_tag
        self.fields = AUX_PARAM_FIELDS[aux_tag]
        self.fixed = dict(fixed)
        self.free = [f for f in self.fields if f not in self.fixed]

    def to_beta(self, u):
        vals = dict(self.fixed)
        for name, ui in zip(self.free, u):
            if name == "beta0":
                vals[name] = ui
            elif name == "beta1":
                vals[name] = np.exp(ui)
            else:
                vals[name] = expit(ui)
        beta = np.array([vals[f] for f in self.fields])
        if self.aux_tag == "garch" and "beta3" not in self.fixed:
            beta[3] = (1.0 - beta[2]) * beta[3]
        return beta

    def to_u(self, beta):
        out = []
        for name in self.free:
            k = self.fields.index(name)
            if name == "beta0":
                out.append(beta[k])
            elif name == "beta1":
                out.append(np.log(beta[k]))
            elif name == "beta3" and self.aux_tag == "garch":
                out.append(_logit(beta[3] / (1.0 - beta[2])))
            else:
                out.append(_logit(beta[k]))
        return np.array(out)

    def feasible(self, beta):
        if beta[1] <= 0 or not 0.0 <= beta[2] < 1.0:
            return False
        if self.aux_tag == "garch" and not (0.0 <= beta[3] and beta[2] + beta[3] < 1.0):
            return False
        return True


def _starting_betas(aux_tag, y, restarts):
    mean0 = float(np.mean(y[1:]))
    var0 = max(float(np.var(y[1:])), 1e-12)
    if aux_tag == "arch":
        base = np.array([mean0, var0 * 0.8, 0.2])
    else:
        base = np.array([mean0, var0 * 0.1, 0.8, 0.1])
    yield base
    jitter_gen = np.random.Generator(np.random.Philox(key=[len(y) & 0xFFFF, 0xA0C]))
    scale = np.sqrt(var0)
    for _ in range(restarts - 1):
        b = base.copy()
        b[0] += 0.3 * scale * jitter_gen.standard_normal()
        b[1] *= np.exp(0.5 * jitter_gen.standard_normal())
        b[2] = min(max(base[2] * np.exp(0.4 * jitter_gen.standard_normal()), 1e-3), 0.95)
        if aux_tag == "garch":
            b[3] = min(max(base[3] * np.exp(0.4 * jitter_gen.standard_normal()), 1e-3), 0.9 * (1 - b[2]))
        yield b


def fit_auxiliary(
    rule: ScoringRule,
    aux_tag: str,
    y,
    restarts: int = 3,
    fixed: dict | None = None,
) -> AuxFit:
    """Maximize the score criterion over the auxiliary parameters.

    Best of ``restarts`` Nelder-Mead runs in the unconstrained
    parametrization (log scale for beta1, logistic/stick-breaking for the
    ARCH/GARCH coefficients). ``fixed`` pins named coordinates in beta space,
    which is occasionally useful for degenerate reference fits.
    """
    y = _check_series(y)
    if aux_tag not in AUX_PARAM_FIELDS:
        raise ConfigError(f"unknown auxiliary tag {aux_tag!r}")
    if y.size < 50:
        raise DomainError(f"series too short to fit (need >= 50, got {y.size})")
    fields = AUX_PARAM_FIELDS[aux_tag]
    fixed = fixed or {}
    unknown = set(fixed) - set(fields)
    if unknown:
        raise ConfigError(f"cannot fix unknown coordinates {sorted(unknown)}")
    reparam = _Reparam(aux_tag, fixed)

    y2d = y[None, :]

    def neg_criterion(u):
        beta = reparam.to_beta(u)
        if not reparam.feasible(beta):
            return np.inf
        val = _criterion_rows(rule, beta, aux_tag, y2d)[0]
        return -val if np.isfinite(val) else np.inf

    best = None
    any_converged = False
    for beta0 in _starting_betas(aux_tag, y, restarts):
        res = optimize.minimize(
            neg_criterion,
            reparam.to_u(beta0),
            method="Nelder-Mead",
            options={
                "xatol": 1e-8,
                "fatol": 1e-10,
                "maxiter": 4000,
                "maxfev": 6000,
            },
        )
        any_converged = any_converged or bool(res.success)
        if best is None or res.fun < best.fun:
            best = res

    beta_hat = reparam.to_beta(best.x)
    params = aux_params_from_values(aux_tag, beta_hat)
    n_terms = y.size - 1
    active = np.array([f not in fixed for f in fields])
    grad_norm = float(
        np.linalg.norm(criterion_gradient(rule, params, y, active=active)) / n_terms
    )
    fit = AuxFit(params, rule, float(-best.fun), grad_norm)
    if not any_converged:
        raise OptimizationError(
            f"no Nelder-Mead restart converged for rule {rule.label}", best_fit=fit
        )
    return fit
