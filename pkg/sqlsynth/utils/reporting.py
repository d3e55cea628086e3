"""Plain-text report tables and the optional breakdown chart"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from sqlsynth.schemas.evaluation import CorpusStats, DiversityReport, ExecutionReport, QualityReport
from sqlsynth.schemas.taxonomy import CoverageReport
from sqlsynth.utils.record_io import atomic_path


logger = logging.getLogger(__name__)

COVERAGE_COLUMNS = (
    ("statement_type", "Statement"),
    ("syntax_structures", "Structure"),
    ("key_actions", "Action"),
    ("core_intent", "Intent"),
)


def format_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    """Left-aligned first column, right-aligned values, one header rule"""
    cells = [[str(header) for header in headers]] + [[_cell(value) for value in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]

    def line(row: List[str]) -> str:
        parts = [row[0].ljust(widths[0])] + [value.rjust(width) for value, width in zip(row[1:], widths[1:])]
        return "  ".join(parts).rstrip()

    rule = "  ".join("-" * width for width in widths)
    return "\n".join([line(cells[0]), rule] + [line(row) for row in cells[1:]]) + "\n"


def _cell(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def coverage_table(reports: Sequence[CoverageReport]) -> str:
    """One row per corpus with covered/cardinality and the ratio for each dimension"""
    headers = ["Corpus", "Records"] + [title for _, title in COVERAGE_COLUMNS]
    rows = []
    for report in reports:
        row = [report.name, report.total]
        for dimension, _ in COVERAGE_COLUMNS:
            coverage = report.dimensions[dimension]
            row.append(f"{coverage.covered}/{coverage.cardinality} ({coverage.ratio:.2f})")
        rows.append(row)
    return format_table(headers, rows)


def distribution_table(report: CoverageReport, dimension: str) -> str:
    coverage = report.dimensions[dimension]
    rows = [(category, coverage.counts[category], f"{coverage.percentages[category]:.1f}%")
            for category in sorted(coverage.counts, key=lambda c: (-coverage.counts[c], c))]
    return format_table([dimension, "Count", "Share"], rows)


def stats_table(stats: CorpusStats, name: str = "corpus",
                diversity: Sequence[DiversityReport] = ()) -> str:
    rows = [
        ("Databases", stats.database_count),
        ("SQL queries", stats.sql_count),
        ("Tables per SQL", stats.tables_per_sql),
        ("Tokens per SQL", stats.tokens_per_sql),
        ("Functions per SQL", stats.functions_per_sql),
        ("Joins", stats.join_count),
        ("Window functions", stats.window_function_count),
        ("CTEs", stats.cte_count),
        ("Subqueries", stats.subquery_count),
    ]
    rows.extend((f"Complexity {level}", count) for level, count in stats.complexity_levels.items())
    for report in diversity:
        rows.append((f"TTR ({report.label})", f"{report.ttr:.4f}"))
        rows.append((f"Semantic clusters ({report.label})", report.cluster_count))
    return format_table([name, "Value"], rows)


def execution_table(report: ExecutionReport) -> str:
    rows = [("overall", report.total, report.matched, f"{report.accuracy:.4f}")]
    for category, values in report.breakdown.items():
        rows.append((category, int(values["total"]), int(values["matched"]), f"{values['accuracy']:.4f}"))
    table = format_table([report.breakdown_by or "EX", "Pairs", "Matched", "Accuracy"], rows)
    failing = [outcome for outcome in report.outcomes if outcome.diff]
    if failing:
        table += "\nState differences:\n"
        for outcome in failing:
            table += f"  {outcome.id}: " + "; ".join(outcome.diff) + "\n"
    return table


def quality_table(report: QualityReport) -> str:
    rows = [(criterion.value, f"{score:.4f}") for criterion, score in report.scores.items()]
    rows.extend((f"[{aspect}]", f"{score:.4f}") for aspect, score in report.aspects.items())
    return format_table([f"Criterion (n={report.sample_size})", "Score"], rows)


def breakdown_chart(report: ExecutionReport, path: Union[str, Path]) -> Optional[Path]:
    """Bar chart of per-category accuracy; None when matplotlib is unavailable"""
    if not report.breakdown:
        return None
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.warning("matplotlib not installed; skipping breakdown chart")
        return None

    categories: Dict[str, float] = {name: values["accuracy"] for name, values in report.breakdown.items()}
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(categories) + 2), 3.6), constrained_layout=True)
    ax.bar(list(categories), list(categories.values()), color="#4C72B0")
    ax.set_ylim(0, 1)
    ax.set_ylabel("Execution accuracy")
    ax.set_title(f"EX by {report.breakdown_by}")
    ax.tick_params(axis="x", rotation=45, labelsize=8)
    with atomic_path(path) as temp:
        fig.savefig(temp, dpi=150, format="png")
    plt.close(fig)
    return Path(path)
