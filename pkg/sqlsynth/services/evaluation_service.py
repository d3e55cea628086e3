"""Execution accuracy, judged quality, diversity and corpus statistics.

SELECT predictions are compared to the gold result as row multisets (by
position, column names ignored, NULL before every value, floats within an
absolute tolerance); order counts only when the gold query orders its top
level. Statements that change the database run on private copies and are
compared by post-execution state.
"""

import asyncio
import json
import logging
import math
import random
import tempfile
from collections import Counter
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from pydantic import BaseModel, ValidationError
from sqlalchemy import inspect, text

from sqlsynth.core.config import settings
from sqlsynth.core.database import SqliteExecutor, copy_database, create_sqlite_engine
from sqlsynth.core.exceptions import (
    DatabaseIOError,
    EmbedderError,
    EmptyCorpus,
    EmptyGroup,
    ExtractionError,
    GoldFailure,
    MissingVerdict,
    PreconditionError,
    QueryFailed,
    SynthError,
)
from sqlsynth.schemas.database import DatabaseSchema
from sqlsynth.schemas.evaluation import (
    QUALITY_ASPECTS,
    QUALITY_WEIGHTS,
    CorpusStats,
    DatabaseState,
    DiversityReport,
    ExecutionReport,
    PairOutcome,
    QualityCriterion,
    QualityLevel,
    QualityReport,
    QualityVerdict,
    TableState,
)
from sqlsynth.schemas.gateway import JudgeAnswer
from sqlsynth.schemas.taxonomy import TaxonomyLabels
from sqlsynth.services.sql_analysis_service import SqlAnalysisService
from sqlsynth.utils.text_tokenizer import WordTokenizer


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

BREAKDOWN_DIMENSIONS = ("core_intent", "statement_type", "syntax_structures", "key_actions", "complexity")
RESULT_PREVIEW_ROWS = 5
STATE_DIGITS = 6


class EvalPair(BaseModel):
    """One prediction joined to its gold record"""

    id: Optional[str] = None
    db_id: str
    pred: str
    gold: str
    labels: Optional[TaxonomyLabels] = None
    complexity: Optional[str] = None


def _canonical(value: Any) -> Tuple[int, Any]:
    # NULL sorts before every value; numbers compare as floats
    if value is None:
        return (0, 0)
    if isinstance(value, (bool, int, float)):
        return (1, float(value))
    if isinstance(value, bytes):
        return (3, value.hex())
    return (2, str(value))


def _sort_key(row: Tuple) -> Tuple:
    return tuple((kind, round(value, STATE_DIGITS) if kind == 1 else value) for kind, value in row)


def _rows_equal(left: Sequence[Tuple], right: Sequence[Tuple], tolerance: float) -> bool:
    if len(left) != len(right):
        return False
    for row_a, row_b in zip(left, right):
        if len(row_a) != len(row_b):
            return False
        for (kind_a, value_a), (kind_b, value_b) in zip(row_a, row_b):
            if kind_a != kind_b:
                return False
            if kind_a == 1:
                if not math.isclose(value_a, value_b, rel_tol=0.0, abs_tol=tolerance):
                    return False
            elif value_a != value_b:
                return False
    return True


def results_match(pred_rows: Sequence[Tuple], gold_rows: Sequence[Tuple], ordered: bool,
                  tolerance: Optional[float] = None) -> bool:
    """Compare two result sets by position; unordered comparison treats them as multisets"""
    tolerance = settings.FLOAT_TOLERANCE if tolerance is None else tolerance
    pred = [tuple(_canonical(value) for value in row) for row in pred_rows]
    gold = [tuple(_canonical(value) for value in row) for row in gold_rows]
    if not ordered:
        pred, gold = sorted(pred, key=_sort_key), sorted(gold, key=_sort_key)
    return _rows_equal(pred, gold, tolerance)


def snapshot_state(database_path: PathLike) -> DatabaseState:
    """Canonical dump of every user table: column signature plus sorted rows"""
    path = Path(database_path)
    if not path.exists():
        raise DatabaseIOError(f"Database file not found: {path}", path=str(path))
    engine = create_sqlite_engine(path, read_only=True)
    try:
        with engine.connect() as conn:
            names = sorted(name for name in inspect(conn).get_table_names() if not name.startswith("sqlite_"))
            tables = []
            for name in names:
                info = conn.exec_driver_sql(f'PRAGMA table_info("{name}")').fetchall()
                signature = tuple((row[1], (row[2] or "").upper(), bool(row[3]), int(row[5])) for row in info)
                rows = conn.execute(text(f'SELECT * FROM "{name}"')).fetchall()
                encoded = [tuple((kind, round(value, STATE_DIGITS) if kind == 1 else value)
                                 for kind, value in (_canonical(v) for v in row)) for row in rows]
                tables.append(TableState(name=name, signature=signature, rows=tuple(sorted(encoded))))
    except SynthError:
        raise
    except Exception as e:
        raise DatabaseIOError(f"Cannot read {path}: {e}", path=str(path))
    finally:
        engine.dispose()
    return DatabaseState(tables=tuple(tables))


def aggregate_counts(counts: Mapping[QualityLevel, int], group: str = "criterion") -> float:
    """Weighted mean of level counts with weights 1, 0.75, 0.5 and 0.25"""
    total = sum(counts.get(level, 0) for level in QualityLevel)
    if total == 0:
        raise EmptyGroup(group)
    return sum(QUALITY_WEIGHTS[level] * counts.get(level, 0) for level in QualityLevel) / total


def aggregate_quality(verdicts: Mapping[QualityCriterion, Iterable]) -> Dict[QualityCriterion, float]:
    """Score per criterion from its verdicts (QualityVerdict or QualityLevel items)"""
    scores = {}
    for criterion, items in verdicts.items():
        counts = Counter(getattr(item, "level", item) for item in items)
        scores[criterion] = aggregate_counts(counts, QualityCriterion(criterion).value)
    return scores


def quality_report(verdict_lists: Sequence[Sequence[QualityVerdict]]) -> QualityReport:
    """Per-criterion scores and per-aspect means over judged records"""
    grouped: Dict[QualityCriterion, List[QualityVerdict]] = {criterion: [] for criterion in QualityCriterion}
    for verdicts in verdict_lists:
        for verdict in verdicts:
            grouped[verdict.criterion].append(verdict)
    scores = aggregate_quality(grouped)
    aspects = {aspect: sum(scores[c] for c in criteria) / len(criteria) for aspect, criteria in QUALITY_ASPECTS.items()}
    return QualityReport(sample_size=len(verdict_lists), scores=scores, aspects=aspects)


def ttr(questions: Iterable[str], tokenizer: Optional[WordTokenizer] = None) -> float:
    """Unique lowercase words over total words"""
    tokenizer = tokenizer or WordTokenizer()
    words = [word for question in questions for word in tokenizer.split_words(question)]
    if not words:
        raise EmptyCorpus("question corpus")
    return len(set(words)) / len(words)


def similarity_graph(vectors: np.ndarray, threshold: float) -> nx.Graph:
    """Nodes are row indices; edges join rows whose cosine similarity reaches threshold.

    A zero row (text without words) has no direction and stays an isolated node.
    """
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    zero = norms[:, 0] == 0
    if zero.any():
        logger.debug("zero embedding rows kept as singletons count=%d", int(zero.sum()))
    unit = np.divide(vectors, norms, out=np.zeros_like(vectors, dtype=float), where=norms != 0)
    similarity = unit @ unit.T
    similarity[zero, :] = -np.inf
    similarity[:, zero] = -np.inf
    graph = nx.Graph()
    graph.add_nodes_from(range(len(vectors)))
    rows, cols = np.nonzero(np.triu(similarity >= threshold - 1e-9, k=1))
    graph.add_edges_from(zip(rows.tolist(), cols.tolist()))
    return graph


def propagate_labels(graph: nx.Graph) -> Dict[Any, Any]:
    """Label propagation with a fixed node order: every node adopts the smallest label in its neighborhood"""
    order = sorted(graph.nodes)
    labels = {node: node for node in order}
    changed = True
    while changed:
        changed = False
        for node in order:
            best = min([labels[node]] + [labels[neighbor] for neighbor in graph.neighbors(node)])
            if best != labels[node]:
                labels[node] = best
                changed = True
    return labels


def semantic_clusters(questions: Sequence[str], embedder, threshold: Optional[float] = None) -> int:
    """Number of communities in the question similarity graph"""
    if not questions:
        raise EmptyCorpus("question corpus")
    threshold = settings.SEMANTIC_THRESHOLD if threshold is None else threshold
    try:
        vectors = np.asarray(embedder.generate_embeddings(list(questions)), dtype=float)
    except SynthError:
        raise
    except Exception as e:
        raise EmbedderError(f"Embedder failed: {e}")
    if vectors.ndim != 2 or vectors.shape[0] != len(questions):
        raise EmbedderError(f"Embedder returned shape {vectors.shape} for {len(questions)} texts")
    labels = propagate_labels(similarity_graph(vectors, threshold))
    return len(set(labels.values()))


class EvaluationService:
    def __init__(self, analyzer: Optional[SqlAnalysisService] = None, gateway=None,
                 timeout_secs: Optional[float] = None, tolerance: Optional[float] = None):
        self.analyzer = analyzer or SqlAnalysisService()
        self.gateway = gateway
        self.timeout_secs = settings.TIMEOUT_SECS if timeout_secs is None else timeout_secs
        self.tolerance = settings.FLOAT_TOLERANCE if tolerance is None else tolerance

    # Execution accuracy

    def _is_select(self, sql: str) -> bool:
        try:
            tree = self.analyzer.parse_sql(sql)
            return self.analyzer.detect_statement_type(tree).value == "Select"
        except SynthError:
            return sql.lstrip().upper().startswith(("SELECT", "WITH"))

    def _ordered(self, sql: str) -> bool:
        try:
            return self.analyzer.parse_sql(sql).expression.args.get("order") is not None
        except SynthError:
            return False

    def compare(self, pred_sql: str, gold_sql: str, database_path: PathLike) -> PairOutcome:
        """Execution comparison of one prediction against its gold query"""
        database_path = Path(database_path)
        if self._is_select(gold_sql):
            executor = SqliteExecutor(database_path, self.timeout_secs, read_only=True)
            try:
                gold = executor.execute(gold_sql, commit=False)
            except QueryFailed as e:
                raise GoldFailure(f"Gold query failed: {e.message}", sql=gold_sql)
            try:
                pred = executor.execute(pred_sql, commit=False)
            except QueryFailed as e:
                return PairOutcome(db_id=database_path.stem, match=0, error=e.message)
            matched = results_match(pred.rows, gold.rows, self._ordered(gold_sql), self.tolerance)
            return PairOutcome(db_id=database_path.stem, match=int(matched))

        with tempfile.TemporaryDirectory(prefix="sqlsynth-ex-") as workdir:
            gold_copy = copy_database(database_path, Path(workdir) / "gold.sqlite")
            pred_copy = copy_database(database_path, Path(workdir) / "pred.sqlite")
            try:
                SqliteExecutor(gold_copy, self.timeout_secs).execute(gold_sql)
            except QueryFailed as e:
                raise GoldFailure(f"Gold statement failed: {e.message}", sql=gold_sql)
            try:
                SqliteExecutor(pred_copy, self.timeout_secs).execute(pred_sql)
            except QueryFailed as e:
                return PairOutcome(db_id=database_path.stem, match=0, error=e.message)
            diff = snapshot_state(pred_copy).diff(snapshot_state(gold_copy))
        return PairOutcome(db_id=database_path.stem, match=0 if diff else 1, diff=diff)

    def execution_match(self, pred_sql: str, gold_sql: str, database_path: PathLike) -> int:
        return self.compare(pred_sql, gold_sql, database_path).match

    @staticmethod
    def _resolve(pool, db_id: str) -> Path:
        if hasattr(pool, "path") and callable(pool.path):
            if db_id not in pool:
                raise PreconditionError(f"Unknown database id {db_id}", db_id=db_id)
            return pool.path(db_id)
        try:
            return Path(pool[db_id])
        except KeyError:
            raise PreconditionError(f"Unknown database id {db_id}", db_id=db_id)

    @staticmethod
    def _categories(pair: EvalPair, dimension: str) -> List[str]:
        if dimension == "complexity":
            return [pair.complexity or "unknown"]
        if pair.labels is None:
            return ["unlabeled"]
        value = getattr(pair.labels, dimension)
        if isinstance(value, frozenset):
            return sorted(member.value for member in value) or ["(none)"]
        return [value.value]

    def execution_accuracy(self, pairs: Sequence[EvalPair], pool,
                           breakdown_by: Optional[str] = None) -> ExecutionReport:
        """Mean execution match, optionally broken down by a label dimension of the gold record"""
        if breakdown_by is not None and breakdown_by not in BREAKDOWN_DIMENSIONS:
            raise PreconditionError(f"Unknown breakdown dimension {breakdown_by}")
        if not pairs:
            raise EmptyCorpus("prediction set")
        paths = {pair.db_id: self._resolve(pool, pair.db_id) for pair in pairs}

        outcomes = []
        for pair in pairs:
            outcome = self.compare(pair.pred, pair.gold, paths[pair.db_id])
            outcomes.append(outcome.model_copy(update={"id": pair.id, "db_id": pair.db_id}))
        matched = sum(outcome.match for outcome in outcomes)

        breakdown: Dict[str, Dict[str, float]] = {}
        if breakdown_by:
            groups: Dict[str, List[int]] = {}
            for pair, outcome in zip(pairs, outcomes):
                for category in self._categories(pair, breakdown_by):
                    groups.setdefault(category, []).append(outcome.match)
            breakdown = {category: {"total": len(values), "matched": sum(values),
                                    "accuracy": sum(values) / len(values)}
                         for category, values in sorted(groups.items())}
        report = ExecutionReport(accuracy=matched / len(pairs), total=len(pairs), matched=matched,
                                 breakdown_by=breakdown_by, breakdown=breakdown, outcomes=outcomes)
        logger.info("execution accuracy total=%d matched=%d accuracy=%.4f", report.total, matched, report.accuracy)
        return report

    # Judged quality

    def _result_preview(self, sql: str, database_path: Optional[PathLike]) -> str:
        if database_path is None:
            return "[]"
        if not self._is_select(sql):
            return "statement changes the database; no rows returned"
        try:
            result = SqliteExecutor(database_path, self.timeout_secs, read_only=True).execute(sql, commit=False)
        except QueryFailed as e:
            return f"execution failed: {e.message}"
        return json.dumps([list(row) for row in result.rows[:RESULT_PREVIEW_ROWS]], ensure_ascii=False, default=str)

    async def quality_judge(self, record, schema: DatabaseSchema,
                            database_path: Optional[PathLike] = None) -> List[QualityVerdict]:
        """One verdict per criterion; malformed output gets one reprompt before MissingVerdict"""
        result = await asyncio.to_thread(self._result_preview, record.sql, database_path)
        bindings = {
            "schema": schema.to_prompt(),
            "question": record.question,
            "sql": record.sql,
            "result": result,
            "criteria": json.dumps([criterion.value for criterion in QualityCriterion]),
        }
        collected: Dict[QualityCriterion, QualityVerdict] = {}
        for attempt in (1, 2):
            try:
                answer, _ = await self.gateway.generate("quality_judge", bindings, JudgeAnswer)
            except ExtractionError as e:
                logger.warning("judge output unreadable record=%s attempt=%d error=%s",
                               getattr(record, "id", None), attempt, e.message)
                continue
            for raw in answer.verdicts:
                try:
                    verdict = QualityVerdict.model_validate(raw)
                except ValidationError:
                    continue
                collected.setdefault(verdict.criterion, verdict)
            if len(collected) == len(QualityCriterion):
                break
            logger.warning("judge omitted criteria record=%s attempt=%d", getattr(record, "id", None), attempt)
        missing = [criterion.value for criterion in QualityCriterion if criterion not in collected]
        if missing:
            raise MissingVerdict(missing)
        return [collected[criterion] for criterion in QualityCriterion]

    # Diversity and statistics

    def diversity_report(self, questions: Sequence[str], embedder, threshold: Optional[float] = None,
                         sample_size: Optional[int] = None, seed: int = 0, label: str = "all") -> DiversityReport:
        """TTR and semantic cluster count over a seeded sample of the questions"""
        sample_size = sample_size or settings.DIVERSITY_SAMPLE_SIZE
        questions = list(questions)
        if len(questions) > sample_size:
            questions = random.Random(f"{seed}:{label}").sample(questions, sample_size)
        return DiversityReport(ttr=ttr(questions), cluster_count=semantic_clusters(questions, embedder, threshold),
                               sample_size=len(questions), label=label)

    def corpus_stats(self, records: Sequence) -> CorpusStats:
        """Per-query averages and corpus totals from feature summaries"""
        if not records:
            raise EmptyCorpus("record corpus")
        totals = Counter()
        levels = Counter()
        for record in records:
            try:
                summary = self.analyzer.summarize(record.question, record.sql)
            except SynthError as e:
                e.details["record_id"] = record.id
                e.message = f"record {record.id}: {e.message}"
                raise
            totals["tables"] += summary.distinct_table_count
            totals["tokens"] += summary.token_count
            totals["functions"] += summary.function_count
            totals["joins"] += summary.join_count
            totals["windows"] += summary.window_function_count
            totals["ctes"] += summary.cte_count
            totals["subqueries"] += summary.subquery_count
            complexity = getattr(record, "complexity", None)
            if complexity is not None:
                levels[getattr(complexity, "value", complexity)] += 1
        count = len(records)
        return CorpusStats(
            database_count=len({record.db_id for record in records}),
            sql_count=count,
            tables_per_sql=totals["tables"] / count,
            tokens_per_sql=totals["tokens"] / count,
            functions_per_sql=totals["functions"] / count,
            table_count=totals["tables"],
            token_count=totals["tokens"],
            function_count=totals["functions"],
            join_count=totals["joins"],
            window_function_count=totals["windows"],
            cte_count=totals["ctes"],
            subquery_count=totals["subqueries"],
            complexity_levels=dict(sorted(levels.items())),
        )
