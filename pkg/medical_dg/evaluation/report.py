"""
Report files.

Per-case CSV columns: case_id, domain_id, class, dice_percent, assd. An empty
assd cell marks an undefined distance (empty prediction or ground truth).
The summary CSV holds mean/std per (domain, class) plus an "all" row per class.
"""

import csv
import logging
from pathlib import Path
from typing import List, Optional, Sequence

from medical_dg.errors import DataError
from medical_dg.evaluation.metrics import CaseMetrics, ClassSummary, MetricsReport, aggregate

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["case_id", "domain_id", "class", "dice_percent", "assd"]
SUMMARY_COLUMNS = ["domain", "class", "n", "dice_mean", "dice_std", "assd_mean", "assd_std", "assd_n"]

INTER_DOMAIN_NOTE = (
    "inter_domain baseline trained with the hybrid Dice + cross-entropy loss "
    "(not a Dice-only loss)"
)


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def write_report_csv(report: MetricsReport, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for m in report.per_case:
            writer.writerow([m.case_id, m.domain_id, m.class_index, _fmt(m.dice), _fmt(m.assd)])
    return path


def read_report_csv(path: Path) -> List[CaseMetrics]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Report not found: {path}")
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != REPORT_COLUMNS:
            raise DataError(f"{path} has columns {reader.fieldnames}, expected {REPORT_COLUMNS}")
        return [
            CaseMetrics(
                case_id=row["case_id"],
                domain_id=int(row["domain_id"]),
                class_index=int(row["class"]),
                dice=float(row["dice_percent"]),
                assd=float(row["assd"]) if row["assd"] else None,
            )
            for row in reader
        ]


def load_reports(paths: Sequence[Path], class_names: Optional[Sequence[str]] = None) -> MetricsReport:
    per_case: List[CaseMetrics] = []
    for p in paths:
        per_case.extend(read_report_csv(p))
    if not per_case:
        raise DataError("no cases found in the given reports")
    return aggregate(per_case, class_names)


def _summary_row(domain: str, class_index: int, s: ClassSummary) -> list:
    return [domain, class_index, s.n, _fmt(s.dice_mean), _fmt(s.dice_std), _fmt(s.assd_mean), _fmt(s.assd_std), s.n_assd]


def write_summary_csv(report: MetricsReport, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_COLUMNS)
        for d, classes in report.per_domain.items():
            for c, s in classes.items():
                writer.writerow(_summary_row(str(d), c, s))
        for c, s in report.overall.items():
            writer.writerow(_summary_row("all", c, s))
    return path


def _cell(mean: Optional[float], std: Optional[float]) -> str:
    return "n/a" if mean is None else f"{mean:.2f}±{std:.2f}"


def format_table(report: MetricsReport, title: str = "Results", notes: Sequence[str] = ()) -> str:
    """Human-readable mean±std table, one row per domain plus an overall row."""
    classes = report.classes
    header = ["domain"] + [f"{report.class_name(c)} Dice" for c in classes] + [f"{report.class_name(c)} ASSD" for c in classes]
    rows = []
    for d, summaries in report.per_domain.items():
        rows.append(
            [f"domain {d}"]
            + [_cell(summaries[c].dice_mean, summaries[c].dice_std) if c in summaries else "-" for c in classes]
            + [_cell(summaries[c].assd_mean, summaries[c].assd_std) if c in summaries else "-" for c in classes]
        )
    rows.append(
        ["all"]
        + [_cell(report.overall[c].dice_mean, report.overall[c].dice_std) for c in classes]
        + [_cell(report.overall[c].assd_mean, report.overall[c].assd_std) for c in classes]
    )

    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]

    def line(row: list) -> str:
        return "  ".join(str(v).ljust(w) for v, w in zip(row, widths)).rstrip()

    output = [f"## {title}", ""]
    output.extend(f"note: {n}" for n in notes)
    if notes:
        output.append("")
    output.append(line(header))
    output.append("  ".join("-" * w for w in widths))
    output.extend(line(r) for r in rows)
    output.append("")
    output.append(f"mean foreground Dice: {report.mean_foreground_dice:.2f}")
    if report.assd_undefined:
        output.append(f"ASSD undefined for {report.assd_undefined} case/class pairs (excluded)")
    return "\n".join(output)
