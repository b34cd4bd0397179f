"""Experiment reports: rows, aggregates, paired test, TSV and table output."""

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class ReportRow:
    experiment: str
    condition: str
    architecture: str
    fraction: float
    seed: int
    train_size: int
    macro_f1: float
    ppl: Optional[float] = None
    mixed_ppl: Optional[float] = None
    partial: bool = False

    def __post_init__(self):
        if not 0.0 <= self.macro_f1 <= 1.0:
            raise ValueError(f"macro_f1 out of range: {self.macro_f1}")
        for name in ("ppl", "mixed_ppl"):
            value = getattr(self, name)
            if value is not None and not value >= 1.0:
                raise ValueError(f"{name} must be >= 1, got {value}")


COLUMNS = tuple(f.name for f in fields(ReportRow))

ConditionKey = Tuple[str, str, float]


@dataclass
class ExperimentReport:
    name: str
    config: Dict[str, str] = field(default_factory=dict)
    version: str = ""
    test_digest: str = ""
    rows: List[ReportRow] = field(default_factory=list)

    def add(self, row: ReportRow) -> None:
        self.rows.append(row)

    def conditions(self) -> List[ConditionKey]:
        """(condition, architecture, fraction) in first-seen order."""
        return list(dict.fromkeys((r.condition, r.architecture, r.fraction) for r in self.rows))

    def rows_for(
        self,
        condition: str,
        architecture: Optional[str] = None,
        fraction: Optional[float] = None,
    ) -> List[ReportRow]:
        return [
            r
            for r in self.rows
            if r.condition == condition
            and (architecture is None or r.architecture == architecture)
            and (fraction is None or r.fraction == fraction)
        ]

    @property
    def partial(self) -> bool:
        return any(r.partial for r in self.rows)


@dataclass(frozen=True)
class ConditionSummary:
    condition: str
    architecture: str
    fraction: float
    n: int
    f1_mean: float
    f1_std: float
    ppl_mean: Optional[float]


def _std(values: List[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def summarize(report: ExperimentReport) -> List[ConditionSummary]:
    """Mean and sample standard deviation of macro-F1 (and mean PPL) per condition."""
    summaries = []
    for condition, architecture, fraction in report.conditions():
        rows = report.rows_for(condition, architecture, fraction)
        f1 = [r.macro_f1 for r in rows]
        ppl = [r.ppl for r in rows if r.ppl is not None]
        summaries.append(
            ConditionSummary(
                condition=condition,
                architecture=architecture,
                fraction=fraction,
                n=len(rows),
                f1_mean=float(np.mean(f1)),
                f1_std=_std(f1),
                ppl_mean=float(np.mean(ppl)) if ppl else None,
            )
        )
    return summaries


def paired_test(
    report: ExperimentReport,
    treated: str,
    control: str,
    architecture: Optional[str] = None,
    fraction: Optional[float] = None,
) -> float:
    """One-sided paired t-test p-value for macro-F1(treated) > macro-F1(control).

    Rows are paired on (architecture, fraction, seed). NaN when fewer than
    two pairs exist or the differences have no spread.
    """
    control_rows = {
        (r.architecture, r.fraction, r.seed): r.macro_f1
        for r in report.rows_for(control, architecture, fraction)
    }
    pairs = [
        (r.macro_f1, control_rows[(r.architecture, r.fraction, r.seed)])
        for r in report.rows_for(treated, architecture, fraction)
        if (r.architecture, r.fraction, r.seed) in control_rows
    ]
    if len(pairs) < 2:
        return float("nan")
    a, b = np.array(pairs).T
    if np.all(a - b == (a - b)[0]):
        return float("nan")
    return float(stats.ttest_rel(a, b, alternative="greater").pvalue)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_report_tsv(report: ExperimentReport, path: Path) -> None:
    """Commented ``# key=value`` header (experiment, version, test digest, config), then rows."""
    lines = [
        f"# experiment={report.name}",
        f"# version={report.version}",
        f"# test_sha256={report.test_digest}",
    ]
    lines += [f"# {key}={value}" for key, value in sorted(report.config.items())]
    lines.append("\t".join(COLUMNS))
    for row in report.rows:
        record = asdict(row)
        lines.append("\t".join(_cell(record[column]) for column in COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report_rows(path: Path) -> List[Dict[str, str]]:
    """Data rows of a report TSV as column -> cell mappings."""
    body = [
        line
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line and not line.startswith("#")
    ]
    header = body[0].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in body[1:]]


def format_report(report: ExperimentReport) -> str:
    header = f"{'condition':<14} {'arch':<5} {'fraction':>8} {'n':>3} {'macro-F1':>17} {'PPL':>9}"
    lines = [f"{report.name} ({report.version})", header, "-" * len(header)]
    for s in summarize(report):
        ppl = f"{s.ppl_mean:9.2f}" if s.ppl_mean is not None and math.isfinite(s.ppl_mean) else ""
        lines.append(
            f"{s.condition:<14} {s.architecture:<5} {s.fraction:>8.3f} {s.n:>3} "
            f"{s.f1_mean:>8.4f} ± {s.f1_std:<6.4f} {ppl:>9}"
        )
    if report.partial:
        lines.append("(some boosted conditions fell short of their plan)")
    return "\n".join(lines)
