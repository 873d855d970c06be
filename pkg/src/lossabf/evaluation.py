"""Out-of-sample evaluation: score rows, score matrices, coherence checks.

A ScoreMatrix has one row per focusing rule (the rule driving the posterior)
and one column per evaluation rule (the rule averaged over the hold-out).
Coherence means the diagonal entry of a column ranks at or near the top.
"""

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .parallel import parallel_starmap
from .scoring import RegionSpec, ScoringRule, score_mixture

STANDARD_RULE_LABELS = ("LS", "CLS10", "CLS20", "CLS80", "CLS90", "CRPS", "IS")


# ---------------------------------------------------------------------------
# rule resolution
# ---------------------------------------------------------------------------

def cls_thresholds(y_train, levels) -> list[RegionSpec]:
    """Empirical-quantile tail regions: lower tail for levels <= 0.5.

    Thresholds use type-7 (linear) interpolation of the training order
    statistics and are frozen for the hold-out.
    """
    y_train = np.asarray(y_train, dtype=float)
    if y_train.size == 0:
        raise DomainError("cannot resolve thresholds from an empty series")
    specs = []
    for level in levels:
        thr = float(np.quantile(y_train, level))
        kind = "lower" if level <= 0.5 else "upper"
        specs.append(RegionSpec(kind, thr))
    return specs


def standard_rules(y_train, labels=STANDARD_RULE_LABELS) -> list[ScoringRule]:
    """Build the named rule set with CLS regions resolved on training data."""
    rules = []
    for label in labels:
        if label == "LS":
            rules.append(ScoringRule.ls())
        elif label == "CRPS":
            rules.append(ScoringRule.crps())
        elif label == "IS":
            rules.append(ScoringRule.interval(0.05))
        elif label.startswith("CLS"):
            level = int(label[3:]) / 100.0
            (region,) = cls_thresholds(y_train, [level])
            rules.append(ScoringRule.censored(region, label))
        else:
            raise DomainError(f"unknown rule label {label!r}")
    return rules


# ---------------------------------------------------------------------------
# score rows
# ---------------------------------------------------------------------------

def _score_chunk(mixtures, y_chunk, rules):
    out = np.empty((len(mixtures), len(rules)))
    for i, (mix, y) in enumerate(zip(mixtures, y_chunk)):
        for j, rule in enumerate(rules):
            out[i, j] = score_mixture(rule, mix, float(y))
    return out


def average_score_row(predictives, y_test, rules, workers: int = 0) -> dict:
    """Mean hold-out score per rule of per-time predictive mixtures."""
    predictives = list(predictives)
    y_test = np.asarray(y_test, dtype=float)
    if len(predictives) != y_test.size:
        raise DomainError(
            f"{len(predictives)} predictives vs {y_test.size} observations"
        )
    chunk = 64
    tasks = [
        (predictives[i:i + chunk], y_test[i:i + chunk], rules)
        for i in range(0, y_test.size, chunk)
    ]
    blocks = parallel_starmap(_score_chunk, tasks, workers=workers)
    scores = np.vstack(blocks)
    means = scores.mean(axis=0)
    return {rule.label: float(m) for rule, m in zip(rules, means)}


# ---------------------------------------------------------------------------
# score matrices and coherence
# ---------------------------------------------------------------------------

@dataclass
class ScoreMatrix:
    row_labels: list
    col_labels: list
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.row_labels), len(self.col_labels)):
            raise DomainError("score matrix shape does not match labels")

    @classmethod
    def from_rows(cls, rows: dict, col_labels, metadata=None):
        labels = list(rows)
        values = np.array([[rows[r][c] for c in col_labels] for r in labels])
        return cls(labels, list(col_labels), values, metadata or {})

    def entry(self, row: str, col: str) -> float:
        return float(self.values[self.row_labels.index(row), self.col_labels.index(col)])


def coherence_check(matrix: ScoreMatrix) -> dict:
    """Rank (1 = best, min-rank ties) of each column's diagonal entry."""
    ranks = {}
    for j, col in enumerate(matrix.col_labels):
        if col not in matrix.row_labels:
            raise DomainError(f"no focusing row matches evaluation column {col!r}")
        i = matrix.row_labels.index(col)
        column = matrix.values[:, j]
        ranks[col] = int(1 + np.sum(column > column[i]))
    return ranks


@dataclass
class EvalReport:
    matrices: dict                 # method label -> ScoreMatrix
    diagnostics: dict = field(default_factory=dict)  # method -> {col: rank}

    def run_diagnostics(self):
        self.diagnostics = {m: coherence_check(sm) for m, sm in self.matrices.items()}
        return self.diagnostics


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def matrix_to_csv(matrix: ScoreMatrix) -> str:
    """Bit-stable CSV with a config-hash comment line."""
    buf = io.StringIO()
    buf.write(f"# config_hash={matrix.metadata.get('config_hash', '')}\n")
    buf.write("rule," + ",".join(matrix.col_labels) + "\n")
    for label, row in zip(matrix.row_labels, matrix.values):
        cells = ",".join(format(v, ".17g") for v in row)
        buf.write(f"{label},{cells}\n")
    return buf.getvalue()


def matrix_from_csv(text: str) -> ScoreMatrix:
    lines = [ln for ln in text.strip().splitlines()]
    meta = {}
    if lines and lines[0].startswith("#"):
        head = lines.pop(0)
        if "config_hash=" in head:
            meta["config_hash"] = head.split("config_hash=", 1)[1].strip()
    cols = lines[0].split(",")[1:]
    row_labels, rows = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        row_labels.append(parts[0])
        rows.append([float(x) for x in parts[1:]])
    return ScoreMatrix(row_labels, cols, np.array(rows), meta)


def matrix_to_markdown(matrix: ScoreMatrix, title: str) -> str:
    """Four-decimal table with the best entry of each column in bold."""
    best = matrix.values.argmax(axis=0)
    buf = io.StringIO()
    buf.write(f"### {title}\n\n")
    buf.write("| rule | " + " | ".join(matrix.col_labels) + " |\n")
    buf.write("|---" * (len(matrix.col_labels) + 1) + "|\n")
    for i, label in enumerate(matrix.row_labels):
        cells = []
        for j in range(len(matrix.col_labels)):
            text = f"{matrix.values[i, j]:.4f}"
            cells.append(f"**{text}**" if best[j] == i else text)
        buf.write(f"| {label} | " + " | ".join(cells) + " |\n")
    buf.write("\n")
    return buf.getvalue()


def render_report(report: EvalReport, out_dir, formats=("csv", "markdown")) -> list:
    """Write scores_<method>.csv and report.md; returns written paths."""
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        for method, matrix in report.matrices.items():
            path = out_dir / f"scores_{method.lower()}.csv"
            path.write_text(matrix_to_csv(matrix))
            written.append(path)
    if "markdown" in formats:
        md = io.StringIO()
        md.write("# Out-of-sample average scores\n\n")
        for method, matrix in report.matrices.items():
            md.write(matrix_to_markdown(matrix, f"Panel: {method}"))
            if method in report.diagnostics:
                diag = report.diagnostics[method]
                md.write(
                    "Diagonal ranks: "
                    + ", ".join(f"{c}={r}" for c, r in diag.items())
                    + "\n\n"
                )
        path = out_dir / "report.md"
        path.write_text(md.getvalue())
        written.append(path)
    return written
