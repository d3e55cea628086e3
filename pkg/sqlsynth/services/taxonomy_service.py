import itertools
import logging
import re
from math import comb
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from sqlsynth.core.config import settings
from sqlsynth.core.exceptions import (
    CombinatorialLimit,
    EmptyCorpus,
    ExtractionError,
    PreconditionError,
    ScoreOutOfRange,
)
from sqlsynth.schemas.gateway import IntentAnswer
from sqlsynth.schemas.sql import SqlFeatureSummary
from sqlsynth.schemas.taxonomy import (
    DIMENSIONS,
    DML_STATEMENTS,
    SET_STRUCTURES,
    Combination,
    ComplexityConfig,
    ComplexityLevel,
    CoreIntent,
    CoverageReport,
    DimensionCoverage,
    KeyAction,
    StatementType,
    SyntaxStructure,
    TaxonomyConfig,
    TaxonomyLabels,
)
from sqlsynth.services.sql_analysis_service import SqlAnalysisService
from sqlsynth.utils.record_io import read_json


logger = logging.getLogger(__name__)

HEURISTIC = "heuristic"
LLM = "llm"

TIME_ACTIONS = frozenset({KeyAction.SPECIFIC_TIME, KeyAction.TIME_FUNCTION})
ORDERING_STRUCTURES = frozenset({SyntaxStructure.ORDER_BY, SyntaxStructure.LIMIT_OFFSET})

# Keyword groups checked in order; the first group that fires (and whose SQL
# requirement holds) decides the intent.
SET_KEYWORDS = ("either", "combined with", "in common", "but not in", "union of", "as well as those",
                "both lists", "excluding those", "intersection")
TREND_KEYWORDS = ("trend", "trends", "over time", "growth", "evolution", "evolve", "month over month",
                  "year over year", "changed over", "progression")
DISTRIBUTION_KEYWORDS = ("distribution", "distributed", "spread", "frequency", "frequencies", "histogram",
                         "dispersion", "breakdown")
STATISTICS_KEYWORDS = ("standard deviation", "variance", "median", "percentile", "correlation", "ranking",
                       "running total", "cumulative", "moving average", "statistical", "statistics")
BUSINESS_CALCULATION_KEYWORDS = ("revenue", "profit", "margin", "kpi", "roi", "conversion", "per capita",
                                 "cost per", "turnover", "net sales", "gross")
BUSINESS_RULE_KEYWORDS = ("policy", "eligible", "eligibility", "business rule", "compliance", r"qualif\w*",
                          "must", "allowed to", "entitled")
FORMAT_KEYWORDS = ("format", "formatted", "convert", "converted", "as text", "uppercase", "lowercase",
                   "label", "labelled", "labeled", "rename as")
TIME_KEYWORDS = ("date", "dates", "day", "days", "month", "months", "year", "years", "when", "period",
                 "since", "before", "after", "recent", "recently", "latest", "earliest", "weekday",
                 "hour", "time")
SORTING_KEYWORDS = ("sort", "sorted", "ordered", "ascending", "descending", "page", "paginate", "ranked",
                    "in order of")
BASIC_QUERY_KEYWORDS = ("raw", "as they are stored", "straight from", "every column", "all columns")
CONDITION_KEYWORDS = ("only", "whose", "filter", "filtered", "matching", "where the", "which have")
AGGREGATION_KEYWORDS = ("how many", "count", "total", "sum", "average", "number of", "maximum", "minimum",
                        "mean")

QUOTED_IDENTIFIER = re.compile(r"`[^`]*`|\"[^\"]*\"|\[[^\]]*\]")


def _keyword_pattern(words: Sequence[str]) -> "re.Pattern":
    return re.compile(r"\b(?:" + "|".join(w if "\\" in w else re.escape(w) for w in words) + r")\b")


class _Rule:
    __slots__ = ("intent", "pattern", "requirement")

    def __init__(self, intent: CoreIntent, words: Sequence[str], requirement=None):
        self.intent = intent
        self.pattern = _keyword_pattern(words)
        self.requirement = requirement


def _has_set_operation(summary: SqlFeatureSummary) -> bool:
    return bool(summary.syntax_structures & SET_STRUCTURES)


def _has_time_feature(summary: SqlFeatureSummary) -> bool:
    return bool(summary.key_actions & TIME_ACTIONS) or summary.time_expression_grouped


def _has_ordering(summary: SqlFeatureSummary) -> bool:
    return bool(summary.syntax_structures & ORDERING_STRUCTURES)


KEYWORD_RULES = (
    _Rule(CoreIntent.SET_OPERATION, SET_KEYWORDS, _has_set_operation),
    _Rule(CoreIntent.TREND_ANALYSIS, TREND_KEYWORDS, _has_time_feature),
    _Rule(CoreIntent.DISTRIBUTION_ANALYSIS, DISTRIBUTION_KEYWORDS),
    _Rule(CoreIntent.ADVANCED_STATISTICS, STATISTICS_KEYWORDS),
    _Rule(CoreIntent.BUSINESS_CALCULATION, BUSINESS_CALCULATION_KEYWORDS),
    _Rule(CoreIntent.BUSINESS_RULE, BUSINESS_RULE_KEYWORDS),
    _Rule(CoreIntent.FORMAT_TRANSFORMATION, FORMAT_KEYWORDS),
    _Rule(CoreIntent.TIME_OPERATION, TIME_KEYWORDS, _has_time_feature),
    _Rule(CoreIntent.SORTING_AND_PAGINATION, SORTING_KEYWORDS, _has_ordering),
    _Rule(CoreIntent.BASIC_QUERY, BASIC_QUERY_KEYWORDS),
    _Rule(CoreIntent.CONDITION_FILTERING, CONDITION_KEYWORDS),
    _Rule(CoreIntent.BASIC_AGGREGATION, AGGREGATION_KEYWORDS),
)


def load_taxonomy_config(path: Union[str, Path, None] = None) -> TaxonomyConfig:
    """Load the taxonomy configuration file (weights, levels, rules, caps)"""
    path = Path(path) if path else settings.taxonomy_config_path
    return read_json(path, TaxonomyConfig)


def normalize_question(question: str) -> str:
    """Lowercase question text with quoted identifiers removed"""
    return " ".join(QUOTED_IDENTIFIER.sub(" ", question).lower().split())


class TaxonomyService:
    def __init__(self, config: Optional[TaxonomyConfig] = None, analyzer: Optional[SqlAnalysisService] = None,
                 gateway=None):
        self.config = config or load_taxonomy_config()
        self.analyzer = analyzer or SqlAnalysisService()
        self.gateway = gateway

    # Classification

    def heuristic_intent(self, question: str, summary: SqlFeatureSummary) -> CoreIntent:
        """Deterministic rule table: SQL-forced intents, keyword groups, then SQL shape"""
        if not question or not question.strip():
            raise PreconditionError("Question is empty")
        if summary.statement_type in DML_STATEMENTS:
            return CoreIntent.DATA_CHANGE
        if summary.statement_type == StatementType.ALTER:
            return CoreIntent.STRUCTURE_CHANGE

        text = normalize_question(question)
        for rule in KEYWORD_RULES:
            if rule.pattern.search(text) and (rule.requirement is None or rule.requirement(summary)):
                return rule.intent

        if _has_set_operation(summary):
            return CoreIntent.SET_OPERATION
        if KeyAction.AGGREGATE_FUNCTION in summary.key_actions:
            return CoreIntent.BASIC_AGGREGATION
        if SyntaxStructure.WHERE in summary.syntax_structures:
            return CoreIntent.CONDITION_FILTERING
        return CoreIntent.BASIC_QUERY

    async def classify_core_intent(self, question: str, summary: SqlFeatureSummary,
                                   mode: str = HEURISTIC) -> CoreIntent:
        """Single core intent for a question; llm mode falls back to the heuristic on bad output"""
        if mode == HEURISTIC or self.gateway is None:
            return self.heuristic_intent(question, summary)
        if mode != LLM:
            raise PreconditionError(f"Unknown classification mode: {mode}")

        bindings = {
            "question": question,
            "features": summary.model_dump_json(exclude={"warnings"}),
            "intents": ", ".join(intent.value for intent in CoreIntent),
        }
        try:
            answer, _ = await self.gateway.generate("intent_classification", bindings, IntentAnswer)
            return CoreIntent(answer.intent.strip())
        except (ExtractionError, ValueError) as e:
            logger.warning("intent classification fell back to heuristic reason=%s", e)
            return self.heuristic_intent(question, summary)

    async def classify_pair(self, question: str, sql: str, dialect: Optional[str] = None,
                            mode: str = HEURISTIC, schema=None) -> TaxonomyLabels:
        """Labels for one text-SQL pair, annotated with any violated validity rules"""
        summary = self.analyzer.summarize(question, sql, dialect, schema)
        intent = await self.classify_core_intent(question, summary, mode)
        return self._labels_from(intent, summary)

    def label_pair(self, question: str, sql: str, dialect: Optional[str] = None, schema=None) -> TaxonomyLabels:
        """Heuristic-mode classify_pair for synchronous callers"""
        summary = self.analyzer.summarize(question, sql, dialect, schema)
        return self._labels_from(self.heuristic_intent(question, summary), summary)

    def _labels_from(self, intent: CoreIntent, summary: SqlFeatureSummary) -> TaxonomyLabels:
        labels = TaxonomyLabels(
            core_intent=intent,
            statement_type=summary.statement_type,
            syntax_structures=summary.syntax_structures,
            key_actions=summary.key_actions,
        )
        violations = self.validate_combination(labels)
        if violations:
            return labels.with_violations(violations)
        return labels

    # Complexity

    def complexity_of(self, labels: TaxonomyLabels,
                      config: Optional[ComplexityConfig] = None) -> Tuple[int, ComplexityLevel]:
        """Summed category weights and the level range holding the sum"""
        config = config or self.config.complexity
        score = config.weight(labels.core_intent) + config.weight(labels.statement_type)
        score += sum(config.weight(member) for member in labels.syntax_structures)
        score += sum(config.weight(member) for member in labels.key_actions)
        level = config.level_of(score)
        if level is None:
            raise ScoreOutOfRange(score)
        return score, level

    # Validity rules

    def validate_combination(self, labels: TaxonomyLabels) -> List[str]:
        """All violated validity rules; an empty list means the tuple is realizable"""
        enabled = self.config.enabled_rules
        intent = labels.core_intent
        statement = labels.statement_type
        structures = labels.syntax_structures
        actions = labels.key_actions
        violations = []

        if "dml_intent" in enabled:
            if intent == CoreIntent.DATA_CHANGE and statement not in DML_STATEMENTS:
                violations.append(f"dml_intent: Data change requires Insert, Update or Delete, got {statement.value}")
            elif statement in DML_STATEMENTS and intent != CoreIntent.DATA_CHANGE:
                violations.append(f"dml_intent: {statement.value} requires the Data change intent")
        if "alter_intent" in enabled:
            if intent == CoreIntent.STRUCTURE_CHANGE and statement != StatementType.ALTER:
                violations.append(f"alter_intent: Structure change requires Alter, got {statement.value}")
            elif statement == StatementType.ALTER and intent != CoreIntent.STRUCTURE_CHANGE:
                violations.append("alter_intent: Alter requires the Structure change intent")
        if "select_only" in enabled and intent not in (CoreIntent.DATA_CHANGE, CoreIntent.STRUCTURE_CHANGE) \
                and statement != StatementType.SELECT:
            violations.append(f"select_only: {intent.value} requires Select, got {statement.value}")
        if "having_needs_group_by" in enabled and SyntaxStructure.HAVING in structures and SyntaxStructure.GROUP_BY not in structures:
            violations.append("having_needs_group_by: Having requires Group by")
        if "set_operation_structure" in enabled:
            if intent == CoreIntent.SET_OPERATION and not structures & SET_STRUCTURES:
                violations.append("set_operation_structure: Set operation requires Union, Intersect or Except")
            elif structures & SET_STRUCTURES and intent != CoreIntent.SET_OPERATION:
                logger.debug("set structure under another intent intent=%s", intent.value)
        if "sorting_needs_ordering" in enabled and intent == CoreIntent.SORTING_AND_PAGINATION and not structures & ORDERING_STRUCTURES:
            violations.append("sorting_needs_ordering: Sorting and Pagination requires Order by or Limit offset")
        if "time_needs_time_action" in enabled and intent in (CoreIntent.TIME_OPERATION, CoreIntent.TREND_ANALYSIS) \
                and not actions & TIME_ACTIONS:
            violations.append(f"time_needs_time_action: {intent.value} requires Specific time or Time function")
        if "bare_alter" in enabled and statement == StatementType.ALTER and (structures or actions - {KeyAction.CAST}):
            violations.append("bare_alter: Alter carries no syntax structures and no key actions other than Cast")
        return violations

    # Enumeration

    def candidate_count(self, max_structures: Optional[int] = None, max_actions: Optional[int] = None) -> int:
        """Size of the capped Cartesian product before any filtering"""
        max_structures = max_structures or self.config.max_structures
        max_actions = max_actions or self.config.max_actions
        structures = len(self.config.members("syntax_structures"))
        actions = len(self.config.members("key_actions"))
        structure_subsets = sum(comb(structures, k) for k in range(min(max_structures, structures) + 1))
        action_subsets = sum(comb(actions, k) for k in range(min(max_actions, actions) + 1))
        return (len(self.config.members("core_intent")) * len(self.config.members("statement_type"))
                * structure_subsets * action_subsets)

    def enumerate_combinations(self, config: Optional[ComplexityConfig] = None,
                               max_structures: Optional[int] = None,
                               max_actions: Optional[int] = None) -> List[Combination]:
        """Every valid, in-range combination in canonical order"""
        max_structures = self.config.max_structures if max_structures is None else max_structures
        max_actions = self.config.max_actions if max_actions is None else max_actions
        if max_structures < 1 or max_actions < 1:
            raise PreconditionError("Subset caps must be >= 1")
        candidates = self.candidate_count(max_structures, max_actions)
        if candidates > self.config.hard_ceiling:
            raise CombinatorialLimit(candidates, self.config.hard_ceiling)

        config = config or self.config.complexity
        structure_subsets = list(self._subsets(self.config.members("syntax_structures"), max_structures))
        action_subsets = list(self._subsets(self.config.members("key_actions"), max_actions))

        combinations = []
        for intent in self.config.members("core_intent"):
            for statement in self.config.members("statement_type"):
                combinations.extend(self._enumerate_prefix(intent, statement, structure_subsets,
                                                           action_subsets, config))
        logger.info("enumerated combinations candidates=%d emitted=%d", candidates, len(combinations))
        return combinations

    def _enumerate_prefix(self, intent, statement, structure_subsets, action_subsets,
                          config: ComplexityConfig) -> Iterator[Combination]:
        for structures in structure_subsets:
            for actions in action_subsets:
                labels = TaxonomyLabels(core_intent=intent, statement_type=statement,
                                        syntax_structures=structures, key_actions=actions)
                if self.validate_combination(labels):
                    continue
                try:
                    score, level = self.complexity_of(labels, config)
                except ScoreOutOfRange:
                    continue
                yield Combination(labels=labels, complexity_level=level, complexity_score=score)

    @staticmethod
    def _subsets(members: Sequence, cap: int) -> Iterator[frozenset]:
        for size in range(min(cap, len(members)) + 1):
            for subset in itertools.combinations(members, size):
                yield frozenset(subset)

    # Coverage

    def coverage_report(self, records: Iterable, name: str = "corpus") -> CoverageReport:
        """Per-dimension coverage ratios and category histograms"""
        records = list(records)
        if not records:
            raise EmptyCorpus("labeled corpus")
        total = len(records)

        counts: Dict[str, Dict[str, int]] = {dim: {m.value: 0 for m in enum} for dim, enum in DIMENSIONS.items()}
        for record in records:
            labels = record.labels if hasattr(record, "labels") else record
            counts["core_intent"][labels.core_intent.value] += 1
            counts["statement_type"][labels.statement_type.value] += 1
            for structure in labels.syntax_structures:
                counts["syntax_structures"][structure.value] += 1
            for action in labels.key_actions:
                counts["key_actions"][action.value] += 1

        dimensions = {}
        for dimension, histogram in counts.items():
            cardinality = len(DIMENSIONS[dimension])
            covered = sum(1 for count in histogram.values() if count > 0)
            dimensions[dimension] = DimensionCoverage(
                dimension=dimension,
                cardinality=cardinality,
                covered=covered,
                ratio=covered / cardinality,
                counts=histogram,
                percentages={category: 100.0 * count / total for category, count in histogram.items()},
            )
        return CoverageReport(name=name, total=total, dimensions=dimensions)
