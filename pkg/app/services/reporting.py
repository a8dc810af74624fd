"""Report emission: JSON document, table/figure CSVs and a Markdown summary."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import pandas as pd
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from app.core.config import get_settings
from app.core.errors import DataError
from app.schemas.report import AuditReport


logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
SUMMARY_FILE = "summary.md"
BUNDLES = ("json", "csv", "md")

TABLE3_COLUMNS = ["format", "algorithm", "metric", "aware", "blind", "delta", "z", "p_value"]
TABLE4_COLUMNS = ["format", "attribute", "group", "flag", "n", "dropout_rate"]
TABLE5_COLUMNS = [
    "format", "algorithm", "attribute", "first_group", "second_group", "first_mean",
    "second_mean", "n_first", "n_second", "t", "df", "p_value", "cohens_d",
]
FIG2_COLUMNS = [
    "format", "algorithm", "feature_set", "attribute", "metric", "group_value",
    "complement_value", "difference", "ci_lower", "ci_upper", "n_group", "n_complement",
]


def _frame(rows: Iterable[Dict[str, Any]], columns: Sequence[str]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=list(columns))


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def _histogram_rows(histogram, **keys: Any) -> List[Dict[str, Any]]:
    rows = []
    edges = histogram.edges
    for label, counts in histogram.counts.items():
        for i, count in enumerate(counts):
            rows.append({**keys, "class": label, "bin_lower": edges[i], "bin_upper": edges[i + 1], "count": count})
    return rows


def table_frames(report: AuditReport) -> Dict[str, pd.DataFrame]:
    """Every CSV of the bundle, keyed by file name."""
    frames = {
        "table3.csv": _frame((row.model_dump() for row in report.performance), TABLE3_COLUMNS),
        "table4.csv": _frame((row.model_dump() for row in report.group_rates), TABLE4_COLUMNS),
        "table5.csv": _frame((row.model_dump() for row in report.ranking_tests), TABLE5_COLUMNS),
        "fig2.csv": _frame((row.model_dump() for row in report.fairness), FIG2_COLUMNS),
    }
    for fmt in report.formats:
        fig1 = []
        for entry in report.probability_histograms:
            if entry.format == fmt:
                fig1 += _histogram_rows(
                    entry.histogram, algorithm=entry.algorithm, feature_set=entry.feature_set
                )
        frames[f"fig1_{fmt}.csv"] = _frame(
            fig1, ["algorithm", "feature_set", "class", "bin_lower", "bin_upper", "count"]
        )
        fig3 = []
        for entry in report.ranking_histograms:
            if entry.format == fmt:
                fig3 += _histogram_rows(
                    entry.histogram, algorithm=entry.algorithm, attribute=entry.attribute
                )
        frames[f"fig3_{fmt}.csv"] = _frame(
            [{**row, "group": row.pop("class")} for row in fig3],
            ["algorithm", "attribute", "group", "bin_lower", "bin_upper", "count"],
        )
    return frames


class ReportRenderer:
    """Render the Markdown summary from Jinja2 templates."""

    def __init__(self, template_dir: Optional[Path] = None) -> None:
        template_dir = template_dir or get_settings().template_dir
        self.env = Environment(
            loader=FileSystemLoader(str(template_dir)),
            undefined=StrictUndefined,
            keep_trailing_newline=True,
            trim_blocks=True,
            lstrip_blocks=True,
        )
        self.env.filters["num"] = _format_number

    def render_summary(self, report: AuditReport) -> str:
        template = self.env.get_template("summary.md.j2")
        return template.render(report=report, formats=report.formats)


def _format_number(value: Optional[float], digits: int = 3) -> str:
    if value is None:
        return "n/a"
    return f"{value:.{digits}f}"


def emit_report(
    report: AuditReport,
    out_dir: Path | str,
    bundles: Sequence[str] = BUNDLES,
    template_dir: Optional[Path] = None,
) -> List[Path]:
    """Write the requested bundles (json, csv, md) into ``out_dir``."""
    unknown = [bundle for bundle in bundles if bundle not in BUNDLES]
    if unknown:
        raise DataError(f"unknown report bundle(s) {unknown}; expected {list(BUNDLES)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    if "json" in bundles:
        path = out_dir / REPORT_FILE
        path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        written.append(path)
    if "csv" in bundles:
        for name, frame in table_frames(report).items():
            written.append(_write_csv(frame, out_dir / name))
    if "md" in bundles:
        path = out_dir / SUMMARY_FILE
        path.write_text(ReportRenderer(template_dir).render_summary(report), encoding="utf-8")
        written.append(path)
    logger.info("Wrote %d report files to %s", len(written), out_dir)
    return written


def load_report(path: Path | str) -> AuditReport:
    """Read ``report.json`` from a file path or an output directory."""
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_FILE
    try:
        return AuditReport.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc
