from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator


class CoreIntent(str, Enum):
    BASIC_QUERY = "Basic query"
    CONDITION_FILTERING = "Condition filtering"
    SORTING_AND_PAGINATION = "Sorting and Pagination"
    BASIC_AGGREGATION = "Basic aggregation"
    TIME_OPERATION = "Time operation"
    FORMAT_TRANSFORMATION = "Format transformation"
    SET_OPERATION = "Set operation"
    DATA_CHANGE = "Data change"
    STRUCTURE_CHANGE = "Structure change"
    DISTRIBUTION_ANALYSIS = "Distribution analysis"
    ADVANCED_STATISTICS = "Advanced statistics"
    TREND_ANALYSIS = "Trend analysis"
    BUSINESS_CALCULATION = "Business calculation"
    BUSINESS_RULE = "Business rule"


class StatementType(str, Enum):
    SELECT = "Select"
    UPDATE = "Update"
    ALTER = "Alter"
    DELETE = "Delete"
    INSERT = "Insert"


class SyntaxStructure(str, Enum):
    WHERE = "Where"
    GROUP_BY = "Group by"
    HAVING = "Having"
    ORDER_BY = "Order by"
    LIMIT_OFFSET = "Limit offset"
    INNER_JOIN = "Inner join"
    CROSS_JOIN = "Cross join"
    OUTER_JOIN = "Outer join"
    UNION = "Union"
    INTERSECT = "Intersect"
    EXCEPT = "Except"
    SCALAR_SUBQUERY = "Scalar subquery"
    CORRELATED_SUBQUERY = "Correlated subquery"
    CTE = "Common Table Expression"


class KeyAction(str, Enum):
    SPECIFIC_TIME = "Specific time"
    TIME_FUNCTION = "Time function"
    JSON_FUNCTION = "Json function"
    STRING_FUNCTION = "String function"
    AGGREGATE_FUNCTION = "Aggregate function"
    WINDOW_FUNCTION = "Window function"
    CAST = "Cast"
    CONDITION_JUDGEMENT = "Condition judgement"
    WILDCARD_FILTERING = "Wildcard filtering"


class ComplexityLevel(str, Enum):
    SIMPLE = "simple"
    MEDIUM = "medium"
    HARD = "hard"


DML_STATEMENTS = frozenset({StatementType.INSERT, StatementType.UPDATE, StatementType.DELETE})
SET_STRUCTURES = frozenset({SyntaxStructure.UNION, SyntaxStructure.INTERSECT, SyntaxStructure.EXCEPT})

DIMENSIONS: Dict[str, type] = {
    "core_intent": CoreIntent,
    "statement_type": StatementType,
    "syntax_structures": SyntaxStructure,
    "key_actions": KeyAction,
}


def member_order(member: Enum) -> int:
    return list(type(member)).index(member)


class TaxonomyLabels(BaseModel):
    """Classification of one text-SQL pair across the four dimensions"""

    model_config = ConfigDict(frozen=True)

    core_intent: CoreIntent
    statement_type: StatementType
    syntax_structures: FrozenSet[SyntaxStructure] = frozenset()
    key_actions: FrozenSet[KeyAction] = frozenset()
    violations: Tuple[str, ...] = Field(default=(), exclude=True)

    @field_serializer("syntax_structures", "key_actions")
    def _serialize_sets(self, members):
        # Sets serialize in enumeration order so dataset files are byte-stable
        return [member.value for member in sorted(members, key=member_order)]

    def label_set(self) -> FrozenSet[str]:
        """Union of category names across all four dimensions"""
        names = {self.core_intent.value, self.statement_type.value}
        names.update(member.value for member in self.syntax_structures)
        names.update(member.value for member in self.key_actions)
        return frozenset(names)

    def key(self) -> Tuple:
        return (self.core_intent, self.statement_type, self.syntax_structures, self.key_actions)

    def same_as(self, other: "TaxonomyLabels") -> bool:
        return self.key() == other.key()

    def diff(self, other: "TaxonomyLabels") -> List[str]:
        """Human-readable differences against another label tuple"""
        lines = []
        if self.core_intent != other.core_intent:
            lines.append(f"core_intent {self.core_intent.value} != {other.core_intent.value}")
        if self.statement_type != other.statement_type:
            lines.append(f"statement_type {self.statement_type.value} != {other.statement_type.value}")
        for field in ("syntax_structures", "key_actions"):
            ours, theirs = getattr(self, field), getattr(other, field)
            missing = sorted(m.value for m in theirs - ours)
            extra = sorted(m.value for m in ours - theirs)
            if missing:
                lines.append(f"{field} missing {missing}")
            if extra:
                lines.append(f"{field} unexpected {extra}")
        return lines

    def with_violations(self, violations: List[str]) -> "TaxonomyLabels":
        return self.model_copy(update={"violations": tuple(violations)})


class Combination(BaseModel):
    """A target tuple steering synthesis"""

    model_config = ConfigDict(frozen=True)

    labels: TaxonomyLabels
    complexity_level: ComplexityLevel
    complexity_score: int

    @property
    def id(self) -> str:
        labels = self.labels
        parts = [labels.core_intent.value, labels.statement_type.value,
                 "+".join(sorted(m.value for m in labels.syntax_structures)) or "-",
                 "+".join(sorted(m.value for m in labels.key_actions)) or "-",
                 self.complexity_level.value]
        return "|".join(parts)

    def matches(self, labels: TaxonomyLabels, level: ComplexityLevel) -> bool:
        return self.labels.same_as(labels) and self.complexity_level == level


class LevelRange(BaseModel):
    low: int
    high: Optional[int] = None  # None means unbounded

    def contains(self, score: int) -> bool:
        return score >= self.low and (self.high is None or score <= self.high)

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.high is not None and self.high < self.low:
            raise ValueError(f"Level range [{self.low}, {self.high}] is empty")
        return self


def _default_weights() -> Dict[str, int]:
    weights: Dict[str, int] = {}
    intents = list(CoreIntent)
    for index, intent in enumerate(intents):
        # Listed sophistication: four basic, five intermediate, five advanced intents
        weights[intent.value] = 1 if index < 4 else 2 if index < 9 else 3
    weights.update({
        "Select": 1, "Insert": 2, "Delete": 2, "Update": 2, "Alter": 3,
        "Where": 1, "Order by": 1, "Limit offset": 1,
        "Group by": 2, "Having": 2, "Inner join": 2,
        "Cross join": 3, "Outer join": 3, "Union": 3, "Intersect": 3, "Except": 3,
        "Scalar subquery": 3, "Common Table Expression": 3,
        "Correlated subquery": 4,
        "Specific time": 1, "Wildcard filtering": 1, "String function": 1,
        "Time function": 2, "Aggregate function": 2, "Cast": 2, "Condition judgement": 2,
        "Window function": 3, "Json function": 3,
    })
    return weights


def _default_levels() -> Dict[ComplexityLevel, LevelRange]:
    return {
        ComplexityLevel.SIMPLE: LevelRange(low=1, high=4),
        ComplexityLevel.MEDIUM: LevelRange(low=5, high=8),
        ComplexityLevel.HARD: LevelRange(low=9, high=None),
    }


ALL_CATEGORY_NAMES = frozenset(member.value for enum in DIMENSIONS.values() for member in enum)
VALIDITY_RULES = ("dml_intent", "alter_intent", "select_only", "having_needs_group_by", "set_operation_structure",
                  "sorting_needs_ordering", "time_needs_time_action", "bare_alter")


class ComplexityConfig(BaseModel):
    """Weight table and level ranges used for complexity scoring"""

    weights: Dict[str, int] = Field(default_factory=_default_weights)
    levels: Dict[ComplexityLevel, LevelRange] = Field(default_factory=_default_levels)

    @field_validator("weights")
    @classmethod
    def _check_weights(cls, weights: Dict[str, int]) -> Dict[str, int]:
        unknown = sorted(set(weights) - ALL_CATEGORY_NAMES)
        if unknown:
            raise ValueError(f"Unknown taxonomy categories in weight table: {unknown}")
        low = sorted(name for name, weight in weights.items() if weight < 1)
        if low:
            raise ValueError(f"Weights must be >= 1: {low}")
        merged = _default_weights()
        merged.update(weights)
        return merged

    @model_validator(mode="after")
    def _check_levels(self):
        if set(self.levels) != set(ComplexityLevel):
            raise ValueError("Level ranges must define simple, medium and hard")
        ordered = [self.levels[level] for level in ComplexityLevel]
        for lower, upper in zip(ordered, ordered[1:]):
            if lower.high is None or lower.high >= upper.low:
                raise ValueError("Level ranges must be disjoint and ordered simple < medium < hard")
        return self

    def weight(self, member: Enum) -> int:
        return self.weights[member.value]

    def level_of(self, score: int) -> Optional[ComplexityLevel]:
        for level in ComplexityLevel:
            if self.levels[level].contains(score):
                return level
        return None


class TaxonomyConfig(BaseModel):
    """Everything the taxonomy text configuration file carries"""

    complexity: ComplexityConfig = Field(default_factory=ComplexityConfig)
    rules: Dict[str, bool] = Field(default_factory=lambda: dict.fromkeys(VALIDITY_RULES, True))
    max_structures: int = Field(default=3, ge=1)
    max_actions: int = Field(default=2, ge=1)
    hard_ceiling: int = Field(default=200_000, ge=1)
    truncate: Dict[str, List[str]] = Field(default_factory=dict)

    @field_validator("rules")
    @classmethod
    def _check_rules(cls, rules: Dict[str, bool]) -> Dict[str, bool]:
        unknown = sorted(set(rules) - set(VALIDITY_RULES))
        if unknown:
            raise ValueError(f"Unknown validity rules: {unknown}")
        merged = dict.fromkeys(VALIDITY_RULES, True)
        merged.update(rules)
        return merged

    @field_validator("truncate")
    @classmethod
    def _check_truncate(cls, truncate: Dict[str, List[str]]) -> Dict[str, List[str]]:
        for dimension, names in truncate.items():
            if dimension not in DIMENSIONS:
                raise ValueError(f"Unknown taxonomy dimension: {dimension}")
            enum = DIMENSIONS[dimension]
            for name in names:
                enum(name)
        return truncate

    def members(self, dimension: str) -> List[Enum]:
        """Members of one dimension in canonical order, honouring truncation"""
        enum = DIMENSIONS[dimension]
        if dimension not in self.truncate:
            return list(enum)
        allowed = set(self.truncate[dimension])
        return [member for member in enum if member.value in allowed]

    @property
    def enabled_rules(self) -> FrozenSet[str]:
        return frozenset(rule for rule, enabled in self.rules.items() if enabled)


class DimensionCoverage(BaseModel):
    dimension: str
    cardinality: int
    covered: int
    ratio: float
    counts: Dict[str, int]
    percentages: Dict[str, float]


class CoverageReport(BaseModel):
    name: str = "corpus"
    total: int
    dimensions: Dict[str, DimensionCoverage]

    def ratio(self, dimension: str) -> float:
        return self.dimensions[dimension].ratio
