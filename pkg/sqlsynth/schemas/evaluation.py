from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field


class TableState(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    signature: Tuple[Tuple[str, str, bool, int], ...]
    rows: Tuple[Tuple[Any, ...], ...]


class DatabaseState(BaseModel):
    """Canonical, order-independent dump of a database"""

    model_config = ConfigDict(frozen=True)

    tables: Tuple[TableState, ...] = ()

    def diff(self, other: "DatabaseState") -> List[str]:
        """Names of tables whose schema or rows differ, with the kind of difference"""
        ours = {table.name: table for table in self.tables}
        theirs = {table.name: table for table in other.tables}
        lines = []
        for name in sorted(set(ours) | set(theirs)):
            left, right = ours.get(name), theirs.get(name)
            if left is None or right is None:
                lines.append(f"{name}: present in only one state")
            elif left.signature != right.signature:
                lines.append(f"{name}: schema differs")
            elif left.rows != right.rows:
                lines.append(f"{name}: rows differ ({len(left.rows)} vs {len(right.rows)})")
        return lines


class QualityCriterion(str, Enum):
    REAL_WORLD_RELEVANCE = "Real-world Relevance"
    PROPER_GRAMMAR = "Proper Grammar"
    SCHEMA_CONSISTENCY = "Consistency with Database Schema"
    UNAMBIGUOUS_PHRASING = "Unambiguous Phrasing"
    SQL_CORRECTNESS = "SQL Correctness"
    SQL_EFFICIENCY = "SQL Efficiency"
    RESULT_ALIGNMENT = "Result Alignment"
    STRUCTURAL_ALIGNMENT = "Structural Alignment"
    SOLUTION_EFFICIENCY = "Efficiency of Solution"
    ANSWER_ADHERENCE = "Answer Adherence"


class QualityLevel(str, Enum):
    EXCELLENT = "Excellent"
    GOOD = "Good"
    AVERAGE = "Average"
    POOR = "Poor"


QUALITY_WEIGHTS: Dict[QualityLevel, float] = {
    QualityLevel.EXCELLENT: 1.0,
    QualityLevel.GOOD: 0.75,
    QualityLevel.AVERAGE: 0.5,
    QualityLevel.POOR: 0.25,
}

QUALITY_ASPECTS: Dict[str, List[QualityCriterion]] = {
    "Question": [QualityCriterion.REAL_WORLD_RELEVANCE, QualityCriterion.PROPER_GRAMMAR,
                 QualityCriterion.SCHEMA_CONSISTENCY, QualityCriterion.UNAMBIGUOUS_PHRASING],
    "SQL": [QualityCriterion.SQL_CORRECTNESS, QualityCriterion.SQL_EFFICIENCY],
    "Result": [QualityCriterion.RESULT_ALIGNMENT, QualityCriterion.STRUCTURAL_ALIGNMENT,
               QualityCriterion.SOLUTION_EFFICIENCY, QualityCriterion.ANSWER_ADHERENCE],
}


class QualityVerdict(BaseModel):
    criterion: QualityCriterion
    level: QualityLevel
    explanation: str = Field(min_length=1)


class QualityReport(BaseModel):
    sample_size: int
    scores: Dict[QualityCriterion, float]
    aspects: Dict[str, float]


class DiversityReport(BaseModel):
    ttr: float = Field(gt=0, le=1)
    cluster_count: int = Field(ge=1)
    sample_size: int = Field(ge=1)
    label: str = "all"


class CorpusStats(BaseModel):
    database_count: int
    sql_count: int
    tables_per_sql: float
    tokens_per_sql: float
    functions_per_sql: float
    table_count: int
    token_count: int
    function_count: int
    join_count: int
    window_function_count: int
    cte_count: int
    subquery_count: int
    complexity_levels: Dict[str, int] = {}


class PairOutcome(BaseModel):
    id: Optional[str] = None
    db_id: str
    match: int
    diff: List[str] = []
    error: Optional[str] = None


class ExecutionReport(BaseModel):
    accuracy: float
    total: int
    matched: int
    breakdown_by: Optional[str] = None
    breakdown: Dict[str, Dict[str, float]] = {}
    outcomes: List[PairOutcome] = []
