from typing import Any, FrozenSet, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_serializer

from sqlsynth.schemas.taxonomy import KeyAction, StatementType, SyntaxStructure, member_order


class FunctionCall(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    function_class: str
    argument_count: int
    windowed: bool = False


class LiteralValue(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: str  # "string", "number" or "temporal"
    value: str
    time_function_argument: bool = False


class ColumnReference(BaseModel):
    model_config = ConfigDict(frozen=True)

    table: Optional[str] = None
    name: str
    depth: int = Field(ge=0)


class SubqueryNode(BaseModel):
    model_config = ConfigDict(frozen=True)

    position: str  # "scalar", "from", "in", "exists", "quantified"
    correlated: bool
    level: int


class SqlTree(BaseModel):
    """Parsed statement plus the extracted syntactic substrate"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    text: str
    dialect: str
    kind: str
    clauses: Tuple[str, ...] = ()
    functions: Tuple[FunctionCall, ...] = ()
    literals: Tuple[LiteralValue, ...] = ()
    columns: Tuple[ColumnReference, ...] = ()
    subqueries: Tuple[SubqueryNode, ...] = ()
    set_operations: Tuple[str, ...] = ()
    ctes: Tuple[str, ...] = ()
    tables: Tuple[str, ...] = ()
    token_count: int = 1
    warnings: Tuple[str, ...] = ()
    expression: Any = Field(default=None, exclude=True, repr=False)

    def render(self) -> str:
        """Render the statement back to dialect text"""
        return self.expression.sql(dialect=self.dialect)

    def signature(self) -> Tuple:
        """Structural fingerprint used for round-trip comparisons"""
        return (self.kind, self.clauses, tuple(f.name for f in self.functions),
                tuple(s.correlated for s in self.subqueries), self.set_operations, self.ctes,
                tuple(sorted(set(self.tables))))


class SqlFeatureSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    statement_type: StatementType
    syntax_structures: FrozenSet[SyntaxStructure] = frozenset()
    key_actions: FrozenSet[KeyAction] = frozenset()
    distinct_table_count: int = Field(default=0, ge=0)
    token_count: int = Field(default=1, ge=1)
    function_count: int = Field(default=0, ge=0)
    join_count: int = Field(default=0, ge=0)
    window_function_count: int = Field(default=0, ge=0)
    cte_count: int = Field(default=0, ge=0)
    subquery_count: int = Field(default=0, ge=0)
    time_expression_grouped: bool = False
    warnings: Tuple[str, ...] = ()

    @field_serializer("syntax_structures", "key_actions")
    def _serialize_sets(self, members):
        return [member.value for member in sorted(members, key=member_order)]
