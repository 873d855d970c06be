"""Experiment orchestration.

Reproduces the three study designs end to end:

* ``correct-sim``  -- Gaussian SV data, Gaussian SV assumed in the ABC engine
* ``misspec-sim``  -- skew-copula SV data, Gaussian SV assumed
* ``empirical``    -- user-supplied returns, alpha-stable SV assumed

A run is staged, and every stage persists self-describing artifacts (CSV with
a config-hash comment) so stages can be re-run independently:

    simulate -> fit-abc -> fit-fbp -> evaluate

``run_experiment`` is exactly that stage sequence, which makes the composed
CLI path byte-identical to the one-shot path by construction.
"""

import csv
import dataclasses
import datetime
import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .abc import AbcConfig, Normal, PriorSpec, Uniform, run_abc
from .auxiliary import AUX_PARAM_FIELDS, aux_params_from_values, fit_auxiliary
from .distributions import RngStream
from .errors import ConfigError, IngestionError
from .evaluation import (
    EvalReport,
    ScoreMatrix,
    average_score_row,
    render_report,
    standard_rules,
)
from .fbp import FbpConfig, FbpPosterior, estimate_w, fbp_holdout_predictives, run_rwmh
from .models import MODEL_PARAM_FIELDS, SkewSvParams, SvGaussianParams, simulate
from .particle import FilterConfig, holdout_predictives
from .scoring import ScoringRule

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EMPIRICAL_HOLDOUT = 500

DGP_CORRECT = SvGaussianParams(phi=0.95, sigma_alpha=0.3, mu=0.0009, h_bar=-1.3)
DGP_MISSPEC = SkewSvParams(a=0.9, h_bar=-0.4581, sigma_h=0.4173, gamma=-5.0)

PRIORS = {
    "correct-sim": PriorSpec("sv-gaussian", (
        ("phi", Uniform(0.5, 0.99)),
        ("sigma_alpha", Uniform(0.05, 0.4)),
        ("mu", Normal(0.0, 0.5)),
        ("h_bar", Normal(-1.0, 1.0)),
    )),
    "misspec-sim": PriorSpec("sv-gaussian", (
        ("phi", Uniform(0.5, 0.99)),
        ("sigma_alpha", Uniform(0.05, 0.4)),
        ("mu", Normal(0.0, 1.0)),
        ("h_bar", Normal(-3.0, 2.0)),
    )),
    "empirical": PriorSpec("sv-stable", (
        ("omega", Uniform(-1.0, 1.0)),
        ("phi", Uniform(0.5, 0.99)),
        ("sigma_h", Uniform(0.0, 0.3)),
        ("alpha", Uniform(1.0, 2.0)),
    )),
}

RULES7 = ("LS", "CLS10", "CLS20", "CLS80", "CLS90", "CRPS", "IS")
RULES5 = ("LS", "CLS10", "CLS20", "CLS80", "CLS90")


@dataclass(frozen=True)
class ExperimentConfig:
    design: str
    aux_tag: str = "garch"
    rules: tuple = RULES7
    T: int = 4000
    split: int = 2000
    n_draws: int = 200_000
    keep: int | None = 100
    keep_quantile: float | None = None
    n_particles: int = 1000
    state_draws: int = 20
    fbp_draws: int = 800
    fbp_burn_in: int = 2000
    fbp_thin: int = 5
    seed: int = 0
    data_path: str | None = None
    data_schema: str = "returns"
    return_scaling: float = 100.0
    workers: int = 2
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.design not in PRIORS:
            raise ConfigError(f"unknown design {self.design!r}; known: {sorted(PRIORS)}")
        if self.aux_tag not in AUX_PARAM_FIELDS:
            raise ConfigError(f"unknown auxiliary tag {self.aux_tag!r}")
        if self.design != "empirical":
            if not 0 < self.split < self.T:
                raise ConfigError("split must satisfy 0 < split < T")
        for field in ("n_draws", "n_particles", "state_draws", "fbp_draws", "fbp_thin"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be positive")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema version {self.schema_version}")

    @property
    def model_tag(self) -> str:
        return PRIORS[self.design].model_tag

    def config_hash(self) -> str:
        payload = dataclasses.asdict(self)
        payload.pop("workers")  # concurrency must not change results
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        payload = json.loads(text)
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - fields
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        payload["rules"] = tuple(payload.get("rules", RULES7))
        return cls(**payload)


def _desk(design, **kw):
    base = dict(design=design, T=4000, split=2000, n_draws=200_000, keep=100,
                n_particles=1000, state_draws=20, fbp_draws=800,
                fbp_burn_in=2000, fbp_thin=5, seed=0)
    base.update(kw)
    return ExperimentConfig(**base)


def _full(design, **kw):
    base = dict(design=design, T=20_000, split=10_000, n_draws=5_000_000, keep=250,
                n_particles=5000, state_draws=20, fbp_draws=4000,
                fbp_burn_in=10_000, fbp_thin=5, seed=0)
    base.update(kw)
    return ExperimentConfig(**base)


PRESETS = {
    "table1-desk": _desk("correct-sim"),
    "table2-desk": _desk("misspec-sim"),
    "table3-empirical": _desk("empirical", rules=RULES5, n_draws=100_000, keep=None,
                              T=0, split=0),
    "table1-full": _full("correct-sim"),
    "table2-full": _full("misspec-sim"),
    "table3-full": _full("empirical", rules=RULES5, keep=None, T=0, split=0),
}

LONG_RUNNING_PRESETS = {"table1-full", "table2-full", "table3-full"}


# ---------------------------------------------------------------------------
# returns ingestion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReturnsData:
    dates: tuple
    returns: np.ndarray

    def __post_init__(self):
        if len(self.dates) != len(self.returns):
            raise IngestionError("dates and returns must align")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise IngestionError("dates must be strictly increasing")
        if not np.all(np.isfinite(self.returns)):
            raise IngestionError("returns contain non-finite values")


def load_returns(path, schema: str = "returns", scaling: float = 1.0) -> ReturnsData:
    """Read (date, price) or (date, return) CSV; prices become log returns."""
    if schema not in ("prices", "returns"):
        raise ConfigError(f"schema must be 'prices' or 'returns', got {schema!r}")
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such data file: {path}")
    dates, values = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise IngestionError("expected a header row with (date, value) columns")
        for rownum, row in enumerate(reader, start=2):
            if len(row) < 2:
                raise IngestionError("expected two columns", row=rownum)
            try:
                date = datetime.date.fromisoformat(row[0].strip())
            except ValueError:
                raise IngestionError(f"unparseable date {row[0]!r}", row=rownum)
            try:
                value = float(row[1])
            except ValueError:
                raise IngestionError(f"non-numeric value {row[1]!r}", row=rownum)
            if schema == "prices" and value <= 0:
                raise IngestionError(f"non-positive price {value}", row=rownum)
            if dates and date <= dates[-1]:
                raise IngestionError(
                    f"dates must be strictly increasing ({dates[-1]} then {date})",
                    row=rownum,
                )
            dates.append(date)
            values.append(value)
    values = np.asarray(values, dtype=float)
    if schema == "prices":
        if len(values) < 2:
            raise IngestionError("need at least two prices to form returns")
        returns = scaling * np.diff(np.log(values))
        dates = dates[1:]
    else:
        returns = scaling * values
    log.info("loaded %d rows from %s -> %d returns", len(dates), path, returns.size)
    return ReturnsData(tuple(dates), returns)


# ---------------------------------------------------------------------------
# artifact plumbing
# ---------------------------------------------------------------------------

def _write_rows(path, cfg, header, rows, comments=()):
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# config_hash={cfg.config_hash()}\n")
        for comment in comments:
            fh.write(f"# {comment}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v):
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def _read_rows(path, cfg, producer):
    path = Path(path)
    if not path.exists():
        raise IngestionError(
            f"missing artifact {path.name}; run `lossabf {producer}` first"
        )
    comments = {}
    with path.open(newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for ln in lines:
        if ln.startswith("#"):
            text = ln[1:].strip()
            if "=" in text:
                k, v = text.split("=", 1)
                comments[k.strip()] = v.strip()
        elif ln:
            body.append(ln)
    got = comments.get("config_hash")
    if got != cfg.config_hash():
        raise IngestionError(
            f"{path.name} was produced under config hash {got}, expected "
            f"{cfg.config_hash()}; re-run the producing stage"
        )
    header = body[0].split(",")
    rows = [ln.split(",") for ln in body[1:]]
    return comments, header, rows


def _update_manifest(out_dir, section, payload):
    path = Path(out_dir) / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest[section] = payload
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def _root(cfg) -> RngStream:
    return RngStream(cfg.seed)


def stage_simulate(cfg: ExperimentConfig, out_dir) -> np.ndarray:
    """Materialize data.csv (simulated states+observations, or loaded returns)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if cfg.design == "empirical":
        if cfg.data_path is None:
            raise ConfigError("empirical design requires data_path")
        data = load_returns(cfg.data_path, cfg.data_schema, cfg.return_scaling)
        y = data.returns
        h = np.full(y.size, np.nan)
    else:
        dgp = DGP_CORRECT if cfg.design == "correct-sim" else DGP_MISSPEC
        path = simulate(dgp, cfg.T, _root(cfg).derive("data"))
        h, y = path.states, path.observations
    rows = [(t + 1, h[t], y[t]) for t in range(y.size)]
    _write_rows(out_dir / "data.csv", cfg, ("t", "h", "y"), rows)
    _update_manifest(out_dir, "config", json.loads(cfg.to_json()))
    _update_manifest(out_dir, "meta", {
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "T": int(y.size),
        "split": _split_for(cfg, y.size),
    })
    log.info("simulate stage done in %.1fs (T=%d)", time.perf_counter() - t0, y.size)
    return y


def _split_for(cfg, n) -> int:
    if cfg.design != "empirical":
        return cfg.split
    split = n - EMPIRICAL_HOLDOUT
    if split < 100:
        raise ConfigError(
            f"empirical series too short: {n} observations leave a training "
            f"window of {split} after reserving {EMPIRICAL_HOLDOUT}"
        )
    return split


def _load_data(cfg, out_dir) -> np.ndarray:
    _, _, rows = _read_rows(Path(out_dir) / "data.csv", cfg, "simulate")
    return np.array([float(r[2]) for r in rows])


def _resolved_rules(cfg, y) -> list[ScoringRule]:
    split = _split_for(cfg, y.size)
    return standard_rules(y[:split], cfg.rules)


def _fit_all(cfg, y, rules):
    split = _split_for(cfg, y.size)
    fits = {}
    for rule in rules:
        t0 = time.perf_counter()
        fits[rule.label] = fit_auxiliary(rule, cfg.aux_tag, y[:split])
        log.info("fit %s/%s in %.1fs (criterion %.4f)", rule.label, cfg.aux_tag,
                 time.perf_counter() - t0, fits[rule.label].criterion_value)
    return fits


def _write_fits(cfg, out_dir, fits):
    fields = AUX_PARAM_FIELDS[cfg.aux_tag]
    header = ("rule", "model") + fields + ("criterion_value", "gradient_norm")
    rows = []
    for label, fit in fits.items():
        beta = [getattr(fit.params, f) for f in fields]
        rows.append([label, cfg.aux_tag, *beta, fit.criterion_value, fit.gradient_norm])
    _write_rows(Path(out_dir) / "aux_fits.csv", cfg, header, rows)


def _load_fits(cfg, out_dir, rules):
    """Reload persisted fits; None when absent or incomplete.

    Fitting is deterministic and the CSV round-trips float64 exactly, so a
    reload is interchangeable with refitting.
    """
    path = Path(out_dir) / "aux_fits.csv"
    if not path.exists():
        return None
    from .auxiliary import AuxFit

    _, header, rows = _read_rows(path, cfg, "fit-abc")
    fields = AUX_PARAM_FIELDS[cfg.aux_tag]
    by_label = {}
    for row in rows:
        label = row[0]
        beta = [float(x) for x in row[2:2 + len(fields)]]
        crit, grad = float(row[-2]), float(row[-1])
        by_label[label] = (beta, crit, grad)
    fits = {}
    for rule in rules:
        if rule.label not in by_label:
            return None
        beta, crit, grad = by_label[rule.label]
        fits[rule.label] = AuxFit(
            aux_params_from_values(cfg.aux_tag, beta), rule, crit, grad
        )
    return fits


def stage_fit_abc(cfg: ExperimentConfig, out_dir) -> dict:
    """Fit the auxiliary criteria and run one ABC pass per focusing rule."""
    out_dir = Path(out_dir)
    y = _load_data(cfg, out_dir)
    split = _split_for(cfg, y.size)
    y_train = y[:split]
    rules = _resolved_rules(cfg, y)
    fits = _fit_all(cfg, y, rules)
    _write_fits(cfg, out_dir, fits)

    prior = PRIORS[cfg.design]
    abc_cfg = AbcConfig(cfg.n_draws, keep=cfg.keep, keep_quantile=cfg.keep_quantile)
    names = MODEL_PARAM_FIELDS[cfg.model_tag]
    info = {}
    posteriors = {}
    for rule in rules:
        t0 = time.perf_counter()
        post = run_abc(prior, rule, cfg.aux_tag, y_train, abc_cfg, _root(cfg),
                       fit=fits[rule.label], workers=cfg.workers)
        posteriors[rule.label] = post
        rows = [list(theta) + [d] for theta, d in zip(post.kept_thetas, post.kept_distances)]
        _write_rows(out_dir / f"abc_{rule.label.lower()}.csv", cfg,
                    names + ("distance",), rows)
        _write_rows(out_dir / f"abc_{rule.label.lower()}_weights.csv", cfg,
                    tuple(f"w{j}" for j in range(post.weight_matrix.shape[1])),
                    post.weight_matrix.tolist())
        n_bad = int(np.sum(~np.isfinite(post.summaries).all(axis=1)))
        info[rule.label] = {
            "kept": int(post.kept_thetas.shape[0]),
            "nonfinite_summaries": n_bad,
            "max_kept_distance": float(post.kept_distances[-1]),
            "seconds": round(time.perf_counter() - t0, 2),
        }
        log.info("abc %s done in %.1fs", rule.label, info[rule.label]["seconds"])
    _update_manifest(out_dir, "abc", info)
    _update_manifest(out_dir, "thresholds", {
        r.label: r.region.threshold for r in rules if r.kind == "cls"
    })
    return posteriors


def stage_fit_fbp(cfg: ExperimentConfig, out_dir) -> dict:
    """Estimate scale factors and run one generalized-posterior chain per rule."""
    out_dir = Path(out_dir)
    y = _load_data(cfg, out_dir)
    split = _split_for(cfg, y.size)
    y_train = y[:split]
    rules = _resolved_rules(cfg, y)
    fits = _load_fits(cfg, out_dir, rules) or _fit_all(cfg, y, rules)

    fbp_cfg = FbpConfig(cfg.fbp_draws, cfg.fbp_burn_in, cfg.fbp_thin)
    ls_rule = ScoringRule.ls()
    ls_fit = fits.get("LS") or fit_auxiliary(ls_rule, cfg.aux_tag, y_train)
    t0 = time.perf_counter()
    base = run_rwmh(ls_rule, 1.0, y_train, cfg.aux_tag, fbp_cfg,
                    _root(cfg).derive("fbp", "LS"), init=ls_fit)
    log.info("fbp base chain done in %.1fs (acceptance %.2f)",
             time.perf_counter() - t0, base.acceptance_rate)

    info = {}
    chains = {}
    for rule in rules:
        w = estimate_w(rule, y_train, cfg.aux_tag, base)
        if rule.kind == "ls" and w == 1.0:
            chain = base
        else:
            chain = run_rwmh(rule, w, y_train, cfg.aux_tag, fbp_cfg,
                             _root(cfg).derive("fbp", rule.label),
                             init=fits[rule.label])
        chains[rule.label] = chain
        fields = AUX_PARAM_FIELDS[cfg.aux_tag]
        _write_rows(out_dir / f"fbp_{rule.label.lower()}.csv", cfg, fields,
                    chain.draws.tolist(),
                    comments=(f"w={chain.w_used!r}",
                              f"acceptance_rate={chain.acceptance_rate!r}"))
        info[rule.label] = {
            "w": chain.w_used,
            "acceptance_rate": chain.acceptance_rate,
            "tuning_warning": chain.tuning_warning,
        }
        log.info("fbp %s done (w=%.4g, acceptance %.2f)", rule.label, w,
                 chain.acceptance_rate)
    _update_manifest(out_dir, "fbp", info)
    return chains


@dataclass(frozen=True)
class _LoadedPosterior:
    model_tag: str
    kept_thetas: np.ndarray


def _load_abc(cfg, out_dir, label) -> _LoadedPosterior:
    _, header, rows = _read_rows(
        Path(out_dir) / f"abc_{label.lower()}.csv", cfg, "fit-abc"
    )
    thetas = np.array([[float(x) for x in r[:-1]] for r in rows])
    return _LoadedPosterior(cfg.model_tag, thetas)


def _load_fbp(cfg, out_dir, label, rule) -> FbpPosterior:
    comments, header, rows = _read_rows(
        Path(out_dir) / f"fbp_{label.lower()}.csv", cfg, "fit-fbp"
    )
    draws = np.array([[float(x) for x in r] for r in rows])
    return FbpPosterior(
        aux_tag=cfg.aux_tag,
        rule=rule,
        w_used=float(comments.get("w", "nan")),
        draws=draws,
        acceptance_rate=float(comments.get("acceptance_rate", "nan")),
    )


def stage_evaluate(cfg: ExperimentConfig, out_dir) -> EvalReport:
    """Score both methods over the hold-out and render the report."""
    out_dir = Path(out_dir)
    y = _load_data(cfg, out_dir)
    split = _split_for(cfg, y.size)
    rules = _resolved_rules(cfg, y)
    filter_cfg = FilterConfig(cfg.n_particles, cfg.state_draws)
    meta = {"config_hash": cfg.config_hash(), "T": int(y.size), "split": split,
            "seed": cfg.seed}

    abf_rows = {}
    for rule in rules:
        t0 = time.perf_counter()
        post = _load_abc(cfg, out_dir, rule.label)
        mixtures = holdout_predictives(
            post, y, split, filter_cfg, _root(cfg).derive("abf-eval", rule.label),
            workers=cfg.workers,
        )
        abf_rows[rule.label] = average_score_row(
            mixtures, y[split:], rules, workers=cfg.workers
        )
        log.info("abf eval %s in %.1fs", rule.label, time.perf_counter() - t0)

    fbp_rows = {}
    for rule in rules:
        t0 = time.perf_counter()
        chain = _load_fbp(cfg, out_dir, rule.label, rule)
        mixtures = fbp_holdout_predictives(chain, y, split)
        fbp_rows[rule.label] = average_score_row(
            mixtures, y[split:], rules, workers=cfg.workers
        )
        log.info("fbp eval %s in %.1fs", rule.label, time.perf_counter() - t0)

    labels = [r.label for r in rules]
    report = EvalReport(matrices={
        "ABF": ScoreMatrix.from_rows(abf_rows, labels, dict(meta)),
        "FBP": ScoreMatrix.from_rows(fbp_rows, labels, dict(meta)),
    })
    report.run_diagnostics()
    render_report(report, out_dir)
    _update_manifest(out_dir, "diagnostics", report.diagnostics)
    return report


def run_experiment(cfg: ExperimentConfig, out_dir) -> EvalReport:
    """All stages in order against one artifact directory."""
    stage_simulate(cfg, out_dir)
    stage_fit_abc(cfg, out_dir)
    stage_fit_fbp(cfg, out_dir)
    return stage_evaluate(cfg, out_dir)


# ---------------------------------------------------------------------------
# preset gates
# ---------------------------------------------------------------------------

def gate_report(preset: str, report: EvalReport) -> tuple[bool, str]:
    """Pass/fail summary consistent with the preset's purpose."""
    for method, matrix in report.matrices.items():
        if not np.all(np.isfinite(matrix.values)):
            return False, f"non-finite entries in the {method} score matrix"
    if preset.startswith("table1"):
        col = report.matrices["ABF"].col_labels.index("LS")
        ls = report.matrices["ABF"].values[:, col]
        spread = float(ls.max() - ls.min())
        ok = spread < 0.05
        return ok, f"ABF LS-column spread {spread:.4f} (gate < 0.05)"
    if preset.startswith("table2"):
        msgs = []
        ok = True
        for method in ("ABF", "FBP"):
            ranks = report.diagnostics[method]
            good = sum(1 for r in ranks.values() if r <= 2)
            ok = ok and good >= 5
            msgs.append(f"{method}: diagonal rank<=2 in {good}/{len(ranks)} columns")
        return ok, "; ".join(msgs) + " (gate >= 5)"
    return True, "score matrices finite; coherence diagnostics emitted"
