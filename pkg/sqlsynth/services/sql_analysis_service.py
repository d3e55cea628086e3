"""SQL parsing and taxonomy feature extraction.

Statements are parsed with sqlglot in the embedded-database dialect and
reduced to an immutable ``SqlTree``. The detectors only read that tree, so a
single service instance is safe to share between workers.
"""

import json
import logging
import re
from functools import lru_cache
from pathlib import Path
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Set, Tuple

import sqlglot
from sqlglot import exp
from sqlglot.dialects.dialect import Dialect
from sqlglot.errors import ParseError as SqlglotParseError
from sqlglot.errors import TokenError
from sqlglot.tokens import TokenType

from sqlsynth.core.config import settings
from sqlsynth.core.exceptions import ParseError, PreconditionError, UnsupportedFeature, UnsupportedStatement
from sqlsynth.schemas.sql import (
    ColumnReference,
    FunctionCall,
    LiteralValue,
    SqlFeatureSummary,
    SqlTree,
    SubqueryNode,
)
from sqlsynth.schemas.taxonomy import KeyAction, StatementType, SyntaxStructure


logger = logging.getLogger(__name__)

SUPPORTED_DIALECT = "sqlite"

ALTER_CLASSES = tuple(cls for cls in (getattr(exp, "Alter", None), getattr(exp, "AlterTable", None)) if cls)
SET_OPERATION_CLASSES = (exp.Union, exp.Intersect, exp.Except)
QUERY_CLASSES = (exp.Select,) + SET_OPERATION_CLASSES
CONTROL_FLOW_CLASSES = (exp.Case, exp.If)
CAST_CLASSES = (exp.Cast, exp.TryCast)
WILDCARD_CLASSES = (exp.Like, exp.ILike)
ARITHMETIC_CLASSES = (exp.Add, exp.Sub, exp.Mul, exp.Div, exp.Mod)

# Tokens that can never open a statement
NON_STATEMENT_TOKENS = {TokenType.VAR, TokenType.NUMBER, TokenType.STRING, TokenType.IDENTIFIER}

SET_OPERATION_STRUCTURES = {
    exp.Union: SyntaxStructure.UNION,
    exp.Intersect: SyntaxStructure.INTERSECT,
    exp.Except: SyntaxStructure.EXCEPT,
}

FUNCTION_CLASS_ACTIONS = {
    "time": KeyAction.TIME_FUNCTION,
    "json": KeyAction.JSON_FUNCTION,
    "string": KeyAction.STRING_FUNCTION,
    "aggregate": KeyAction.AGGREGATE_FUNCTION,
}

FUNCTION_CLASSES = ("time", "json", "string", "aggregate", "other")


@lru_cache(maxsize=8)
def load_function_table(path: str) -> Dict[str, str]:
    """Load the function-classification table: function name -> class"""
    with open(path, "r", encoding="utf-8") as handle:
        raw = json.load(handle)
    table = {}
    for name, function_class in raw.items():
        if function_class not in FUNCTION_CLASSES:
            raise ValueError(f"Function {name} has unknown class {function_class}")
        table[name.upper()] = function_class
    return table


def temporal_pattern(formats: Sequence[str]) -> "re.Pattern":
    """Compile temporal literal formats such as YYYY-MM-DD into one regex"""
    token = re.compile(r"YYYY|MM|DD|HH|SS|.", re.S)

    def convert(fmt: str) -> str:
        parts = []
        for piece in token.findall(fmt):
            if piece == "YYYY":
                parts.append(r"\d{4}")
            elif piece in ("MM", "DD", "HH", "SS"):
                parts.append(r"\d{2}")
            else:
                parts.append(re.escape(piece))
        return "".join(parts)

    return re.compile("|".join(f"(?:{convert(fmt)})" for fmt in formats))


def _byte_offset(text: str, char_offset: int) -> int:
    char_offset = max(0, min(char_offset, len(text)))
    return len(text[:char_offset].encode("utf-8"))


def _effective_parent(node: exp.Expression) -> Optional[exp.Expression]:
    parent = node.parent
    while isinstance(parent, (exp.Subquery, exp.Paren)):
        parent = parent.parent
    return parent


class _Scope:
    __slots__ = ("sources", "marker")

    def __init__(self, sources: Dict[str, Optional[str]], marker: Optional[int]):
        self.sources = sources
        self.marker = marker


class _ScopeWalker:
    """Resolves column references to scope depths and flags correlated subqueries"""

    def __init__(self, schema: Optional[Mapping[str, Sequence[str]]]):
        self.schema = {name.lower(): {c.lower() for c in cols} for name, cols in (schema or {}).items()}
        self.columns: List[ColumnReference] = []
        self.subqueries: List[dict] = []

    def run(self, root: exp.Expression) -> None:
        if isinstance(root, (exp.Update, exp.Delete)):
            scope = _Scope(self._dml_sources(root), None)
            for child in root.iter_expressions():
                if child.key == "with":
                    self.visit(child, [])
                else:
                    self.visit(child, [scope])
        elif isinstance(root, exp.Insert):
            for child in root.iter_expressions():
                self.visit(child, [])
        else:
            self.visit(root, [])

    def visit(self, node: exp.Expression, stack: List[_Scope], marker: Optional[int] = None) -> None:
        if isinstance(node, exp.Select):
            self._visit_select(node, stack, marker)
        elif isinstance(node, SET_OPERATION_CLASSES):
            if marker is None:
                marker = self._subquery_marker(node, stack)
            for key, value in node.args.items():
                for child in value if isinstance(value, list) else [value]:
                    if not isinstance(child, exp.Expression):
                        continue
                    if key in ("this", "expression"):
                        self.visit(child, stack, marker)
                    else:
                        self.visit(child, stack)
        elif isinstance(node, exp.Column):
            self._bind(node, stack)
        else:
            for child in node.iter_expressions():
                self.visit(child, stack)

    def _visit_select(self, select: exp.Select, stack: List[_Scope], marker: Optional[int]) -> None:
        if marker is None:
            marker = self._subquery_marker(select, stack)
        scope = _Scope(self._select_sources(select), marker)
        inner = stack + [scope]
        # Derived tables cannot see the select that owns them
        blind = stack + [_Scope({}, None)]
        for key, value in select.args.items():
            for child in value if isinstance(value, list) else [value]:
                if not isinstance(child, exp.Expression):
                    continue
                if key == "with":
                    self.visit(child, stack)
                elif key == "from":
                    self.visit(child.this, blind if not isinstance(child.this, exp.Table) else inner)
                elif key == "joins":
                    for join_key, join_value in child.args.items():
                        if not isinstance(join_value, exp.Expression):
                            continue
                        if join_key == "this" and not isinstance(join_value, exp.Table):
                            self.visit(join_value, blind)
                        else:
                            self.visit(join_value, inner)
                else:
                    self.visit(child, inner)

    def _subquery_marker(self, query: exp.Expression, stack: List[_Scope]) -> Optional[int]:
        parent = _effective_parent(query)
        if parent is None or isinstance(parent, (exp.CTE, exp.Insert) + SET_OPERATION_CLASSES):
            return None
        if isinstance(parent, (exp.From, exp.Join)):
            position = "from"
        elif isinstance(parent, exp.In):
            position = "in"
        elif isinstance(parent, exp.Exists):
            position = "exists"
        elif isinstance(parent, (exp.Any, exp.All)):
            position = "quantified"
        else:
            position = "scalar"
        self.subqueries.append({"position": position, "correlated": False, "level": len(stack)})
        return len(self.subqueries) - 1

    def _bind(self, column: exp.Column, stack: List[_Scope]) -> None:
        current = len(stack) - 1
        qualifier = column.table
        target = None
        if current >= 0:
            if qualifier:
                for index in range(current, -1, -1):
                    if qualifier.lower() in stack[index].sources:
                        target = index
                        break
            elif self.schema:
                name = column.name.lower()
                for index in range(current, -1, -1):
                    tables = [t for t in stack[index].sources.values() if t]
                    if any(name in self.schema.get(t.lower(), ()) for t in tables):
                        target = index
                        break
        if target is None:
            target = max(current, 0)
        depth = max(current, 0) - target
        self.columns.append(ColumnReference(table=qualifier or None, name=column.name, depth=depth))
        if depth > 0:
            for scope in stack[target + 1:]:
                if scope.marker is not None:
                    self.subqueries[scope.marker]["correlated"] = True

    @staticmethod
    def _select_sources(select: exp.Select) -> Dict[str, Optional[str]]:
        items = []
        from_ = select.args.get("from")
        if from_ is not None:
            items.append(from_.this)
        items.extend(join.this for join in select.args.get("joins") or [])
        return _ScopeWalker._sources_of(items)

    @staticmethod
    def _dml_sources(root: exp.Expression) -> Dict[str, Optional[str]]:
        items = [root.this] if isinstance(root.this, exp.Expression) else []
        from_ = root.args.get("from")
        if from_ is not None:
            items.append(from_.this)
        return _ScopeWalker._sources_of(items)

    @staticmethod
    def _sources_of(items: List[exp.Expression]) -> Dict[str, Optional[str]]:
        sources: Dict[str, Optional[str]] = {}
        for item in items:
            if isinstance(item, exp.Table):
                sources[item.alias_or_name.lower()] = item.name
            elif item is not None and item.alias_or_name:
                sources[item.alias_or_name.lower()] = None
        return sources


class SqlAnalysisService:
    def __init__(
        self,
        function_table: Optional[Mapping[str, str]] = None,
        temporal_formats: Optional[Sequence[str]] = None,
        dialect: Optional[str] = None,
    ):
        self.dialect = dialect or settings.DIALECT
        self.function_table = dict(function_table) if function_table is not None else \
            load_function_table(str(settings.function_table_path))
        self.temporal_formats = list(temporal_formats or settings.temporal_formats)
        self._temporal = temporal_pattern(self.temporal_formats)

    # Parsing

    def parse_sql(self, text: str, dialect: Optional[str] = None,
                  schema: Optional[Mapping[str, Sequence[str]]] = None) -> SqlTree:
        """Parse one statement into a SqlTree"""
        dialect = dialect or self.dialect
        if not text or not text.strip():
            raise PreconditionError("SQL text is empty")
        if dialect != SUPPORTED_DIALECT:
            raise UnsupportedFeature(f"Unsupported dialect: {dialect}", dialect=dialect)

        try:
            tokens = Dialect.get_or_raise(dialect).tokenize(text)
        except TokenError as e:
            raise ParseError(_byte_offset(text, len(text)), "a complete token", message=f"SQL tokenize error: {e}")
        significant = [token for token in tokens if token.token_type != TokenType.SEMICOLON]
        if not significant:
            raise ParseError(0, "a statement")
        first = significant[0]
        if first.token_type in NON_STATEMENT_TOKENS:
            raise ParseError(_byte_offset(text, first.start), "SELECT, WITH, INSERT, UPDATE, DELETE or ALTER",
                             message=f"Unexpected token {first.text!r} at offset {first.start}")

        try:
            statements = [s for s in sqlglot.parse(text, read=dialect) if s is not None]
        except SqlglotParseError as e:
            error = e.errors[0] if e.errors else {}
            offset = self._error_offset(text, significant, error.get("line"), error.get("col"))
            raise ParseError(_byte_offset(text, offset), error.get("description") or "valid syntax",
                             message=f"SQL parse error at offset {offset}: {error.get('description') or e}")
        if len(statements) != 1:
            raise UnsupportedFeature(f"Expected exactly one statement, found {len(statements)}",
                                     count=len(statements))
        root = statements[0]
        if isinstance(root, exp.Command) and root.name.upper() != "ALTER":
            raise UnsupportedFeature(f"Construct outside the dialect grammar: {root.name}", verb=root.name)

        return self._build_tree(text, dialect, root, len(significant), schema)

    @staticmethod
    def _error_offset(text: str, tokens, line: Optional[int], col: Optional[int]) -> int:
        if not line or not col:
            return len(text)
        for token in tokens:
            if token.line == line and token.col == col:
                return token.start
        lines = text.split("\n")
        offset = sum(len(previous) + 1 for previous in lines[:line - 1])
        return min(offset + max(col - 1, 0), len(text))

    def _build_tree(self, text, dialect, root, token_count, schema) -> SqlTree:
        walker = _ScopeWalker(schema)
        walker.run(root)

        cte_names = [cte.alias_or_name for cte in root.find_all(exp.CTE)]
        lowered = [name.lower() for name in cte_names]
        for name in lowered:
            if lowered.count(name) > 1:
                raise ParseError(_byte_offset(text, text.lower().rfind(name)), "a distinct CTE name",
                                 message=f"CTE name {name} defined twice")
        tables = tuple(
            table.name for table in root.find_all(exp.Table)
            if table.name and table.name.lower() not in lowered
        )

        functions = []
        literals = []
        for node in root.walk(bfs=False):
            if isinstance(node, exp.Func) and not self._is_control_flow(node) and not self._is_synthetic(node, text):
                functions.append(FunctionCall(
                    name=self._display_name(node),
                    function_class=self.function_class(node) or "unknown",
                    argument_count=self._argument_count(node),
                    windowed=isinstance(node.parent, exp.Window) and node.parent.this is node,
                ))
            elif isinstance(node, exp.Literal):
                literals.append(self._literal(node))

        return SqlTree(
            text=text,
            dialect=dialect,
            kind=type(root).__name__,
            clauses=tuple(self._clauses(root)),
            functions=tuple(functions),
            literals=tuple(literals),
            columns=tuple(walker.columns),
            subqueries=tuple(SubqueryNode(**node) for node in walker.subqueries),
            set_operations=tuple(type(node).__name__.upper() for node in root.find_all(*SET_OPERATION_CLASSES)),
            ctes=tuple(cte_names),
            tables=tables,
            token_count=max(token_count, 1),
            expression=root,
        )

    @staticmethod
    def _clauses(root: exp.Expression) -> List[str]:
        if isinstance(root, exp.Select):
            order = [("with", "WITH"), ("from", "FROM"), ("joins", "JOIN"), ("where", "WHERE"),
                     ("group", "GROUP BY"), ("having", "HAVING"), ("windows", "WINDOW"),
                     ("order", "ORDER BY"), ("limit", "LIMIT"), ("offset", "OFFSET")]
        elif isinstance(root, SET_OPERATION_CLASSES):
            order = [("with", "WITH"), ("order", "ORDER BY"), ("limit", "LIMIT"), ("offset", "OFFSET")]
        elif isinstance(root, exp.Update):
            order = [("with", "WITH"), ("expressions", "SET"), ("from", "FROM"), ("where", "WHERE"),
                     ("order", "ORDER BY"), ("limit", "LIMIT")]
        elif isinstance(root, exp.Delete):
            order = [("with", "WITH"), ("where", "WHERE"), ("order", "ORDER BY"), ("limit", "LIMIT")]
        elif isinstance(root, exp.Insert):
            clauses = ["WITH"] if root.args.get("with") else []
            source = root.expression
            clauses.append("VALUES" if isinstance(source, exp.Values) else "SELECT")
            return clauses
        else:
            return [type(action).__name__.upper() for action in root.args.get("actions") or []]
        clauses = [name for key, name in order if root.args.get(key)]
        if isinstance(root, SET_OPERATION_CLASSES):
            clauses.insert(1 if "WITH" in clauses else 0, type(root).__name__.upper())
        return clauses

    # Function classification

    def _is_control_flow(self, node: exp.Expression) -> bool:
        if isinstance(node, CONTROL_FLOW_CLASSES):
            return True
        return isinstance(node, exp.Anonymous) and node.name.upper() == "IIF"

    @staticmethod
    def _is_synthetic(node: exp.Expression, text: str) -> bool:
        # Conversion wrappers the dialect parser inserts around STRFTIME arguments
        parent = node.parent
        if not isinstance(parent, exp.TimeToStr) or parent.this is not node:
            return False
        if type(node).__name__ == "TsOrDsToTimestamp":
            return True
        return isinstance(node, exp.CurrentTimestamp) and "CURRENT_TIMESTAMP" not in text.upper()

    @staticmethod
    def _candidate_names(node: exp.Func) -> List[str]:
        if isinstance(node, exp.Anonymous):
            return [node.name.upper()]
        names = [name.upper() for name in type(node).sql_names()]
        names.append(type(node).__name__.upper())
        return names

    def _display_name(self, node: exp.Func) -> str:
        return self._candidate_names(node)[0]

    def function_class(self, node: exp.Func) -> Optional[str]:
        """Class of a function call, or None when the table does not know it"""
        if isinstance(node, exp.AggFunc):
            return "aggregate"
        for name in self._candidate_names(node):
            if name in self.function_table:
                return self.function_table[name]
        return None

    @staticmethod
    def _argument_count(node: exp.Expression) -> int:
        count = 0
        for value in node.args.values():
            if isinstance(value, list):
                count += sum(isinstance(item, exp.Expression) for item in value)
            elif isinstance(value, exp.Expression):
                count += 1
        return count

    def _literal(self, node: exp.Literal) -> LiteralValue:
        value = node.this if isinstance(node.this, str) else str(node.this)
        if node.is_string:
            kind = "temporal" if self._temporal.fullmatch(value) else "string"
        else:
            kind = "number"
        parent = node.parent
        in_time_function = isinstance(parent, exp.Func) and self.function_class(parent) == "time"
        return LiteralValue(kind=kind, value=value, time_function_argument=in_time_function)

    # Detectors

    def detect_statement_type(self, tree: SqlTree) -> StatementType:
        """Map the top-level verb to one of the five statement types"""
        root = tree.expression
        while isinstance(root, exp.Subquery):
            root = root.this
        if isinstance(root, QUERY_CLASSES):
            return StatementType.SELECT
        if isinstance(root, exp.Insert):
            return StatementType.INSERT
        if isinstance(root, exp.Update):
            return StatementType.UPDATE
        if isinstance(root, exp.Delete):
            return StatementType.DELETE
        if ALTER_CLASSES and isinstance(root, ALTER_CLASSES):
            return StatementType.ALTER
        if isinstance(root, exp.Command) and root.name.upper() == "ALTER":
            return StatementType.ALTER
        verb = type(root).__name__.upper()
        kind = root.args.get("kind")
        if isinstance(kind, str):
            verb = f"{verb} {kind.upper()}"
        raise UnsupportedStatement(verb)

    def detect_syntax_structures(self, tree: SqlTree) -> FrozenSet[SyntaxStructure]:
        """Structures present anywhere in the statement, nested scopes included"""
        root = tree.expression
        found: Set[SyntaxStructure] = set()
        owners = QUERY_CLASSES + (exp.Update, exp.Delete)

        if any(True for _ in root.find_all(exp.Where)):
            found.add(SyntaxStructure.WHERE)
        if any(True for _ in root.find_all(exp.Group)):
            found.add(SyntaxStructure.GROUP_BY)
        if any(True for _ in root.find_all(exp.Having)):
            found.add(SyntaxStructure.HAVING)
        if any(isinstance(node.parent, owners) for node in root.find_all(exp.Order)):
            found.add(SyntaxStructure.ORDER_BY)
        if any(isinstance(node.parent, owners) for node in root.find_all(exp.Limit, exp.Offset)):
            found.add(SyntaxStructure.LIMIT_OFFSET)

        for join in root.find_all(exp.Join):
            found.add(self._join_structure(join))

        for node_class, structure in SET_OPERATION_STRUCTURES.items():
            if any(True for _ in root.find_all(node_class)):
                found.add(structure)

        for subquery in tree.subqueries:
            if subquery.correlated:
                found.add(SyntaxStructure.CORRELATED_SUBQUERY)
            elif subquery.position == "scalar":
                found.add(SyntaxStructure.SCALAR_SUBQUERY)

        if tree.ctes:
            found.add(SyntaxStructure.CTE)
        return frozenset(found)

    @staticmethod
    def _join_structure(join: exp.Join) -> SyntaxStructure:
        side = (join.side or "").upper()
        kind = (join.kind or "").upper()
        method = (join.method or "").upper() if isinstance(join.method, str) else ""
        if side in ("LEFT", "RIGHT", "FULL"):
            return SyntaxStructure.OUTER_JOIN
        if kind == "CROSS":
            return SyntaxStructure.CROSS_JOIN
        if join.args.get("on") is not None or join.args.get("using") or method == "NATURAL":
            return SyntaxStructure.INNER_JOIN
        # Comma-separated FROM lists and JOIN without a condition
        return SyntaxStructure.CROSS_JOIN

    def detect_key_actions(self, tree: SqlTree) -> FrozenSet[KeyAction]:
        """Key actions present anywhere in the statement"""
        found, _ = self._key_actions_with_warnings(tree)
        return found

    def _key_actions_with_warnings(self, tree: SqlTree) -> Tuple[FrozenSet[KeyAction], List[str]]:
        root = tree.expression
        found: Set[KeyAction] = set()
        warnings: List[str] = []

        for node in root.walk(bfs=False):
            if isinstance(node, exp.Window) and isinstance(node.this, exp.Func):
                found.add(KeyAction.WINDOW_FUNCTION)
            elif isinstance(node, CAST_CLASSES):
                found.add(KeyAction.CAST)
            elif isinstance(node, WILDCARD_CLASSES):
                found.add(KeyAction.WILDCARD_FILTERING)
            elif isinstance(node, exp.DPipe):
                found.add(KeyAction.STRING_FUNCTION)

            if self._is_control_flow(node):
                found.add(KeyAction.CONDITION_JUDGEMENT)
            elif isinstance(node, exp.Func):
                if self._is_synthetic(node, tree.text):
                    continue
                # A windowed call counts as a window function only
                if isinstance(node.parent, exp.Window) and node.parent.this is node:
                    continue
                function_class = self.function_class(node)
                if function_class in FUNCTION_CLASS_ACTIONS:
                    found.add(FUNCTION_CLASS_ACTIONS[function_class])
                elif function_class is None:
                    name = self._display_name(node)
                    if self._string_context(node):
                        found.add(KeyAction.STRING_FUNCTION)
                    else:
                        warnings.append(f"Unknown function {name}")
                        logger.warning("unknown function name=%s", name)

        for literal in tree.literals:
            if literal.kind == "temporal" or (literal.kind == "number" and literal.time_function_argument):
                found.add(KeyAction.SPECIFIC_TIME)
                break
        return frozenset(found), warnings

    @staticmethod
    def _string_context(node: exp.Func) -> bool:
        if isinstance(node.parent, (exp.DPipe,) + WILDCARD_CLASSES):
            return True
        return any(isinstance(arg, exp.Literal) and arg.is_string for arg in node.iter_expressions())

    # Summary

    def summarize(self, question: str, sql: str, dialect: Optional[str] = None,
                  schema: Optional[Mapping[str, Sequence[str]]] = None) -> SqlFeatureSummary:
        """Per-query feature summary feeding classification and corpus statistics"""
        tree = self.parse_sql(sql, dialect, schema)
        statement_type = self.detect_statement_type(tree)
        structures = self.detect_syntax_structures(tree)
        actions, warnings = self._key_actions_with_warnings(tree)
        if SyntaxStructure.HAVING in structures and SyntaxStructure.GROUP_BY not in structures:
            warnings.append("HAVING without GROUP BY")
            logger.warning("having without group by sql=%r", sql)
        root = tree.expression
        return SqlFeatureSummary(
            statement_type=statement_type,
            syntax_structures=structures,
            key_actions=actions,
            distinct_table_count=len({name.lower() for name in tree.tables}),
            token_count=tree.token_count,
            function_count=len(tree.functions),
            join_count=sum(1 for _ in root.find_all(exp.Join)),
            window_function_count=sum(1 for node in root.find_all(exp.Window) if isinstance(node.this, exp.Func)),
            cte_count=len(tree.ctes),
            subquery_count=len(tree.subqueries),
            time_expression_grouped=self._time_grouped(root),
            warnings=tuple(warnings),
        )

    def _time_grouped(self, root: exp.Expression) -> bool:
        for group in root.find_all(exp.Group):
            select = group.parent
            for item in group.expressions:
                if isinstance(item, exp.Literal) and not item.is_string and isinstance(select, exp.Select):
                    position = int(item.this) - 1
                    if 0 <= position < len(select.expressions):
                        item = select.expressions[position]
                elif isinstance(item, exp.Column) and isinstance(select, exp.Select):
                    for projection in select.expressions:
                        if isinstance(projection, exp.Alias) and projection.alias == item.name:
                            item = projection
                            break
                if any(self.function_class(func) == "time" for func in item.find_all(exp.Func)):
                    return True
        return False

    def arithmetic_chain_depth(self, tree: SqlTree) -> int:
        """Longest chain of nested arithmetic/aggregate operations in the statement"""

        def depth(node: exp.Expression) -> int:
            below = max((depth(child) for child in node.iter_expressions()), default=0)
            step = isinstance(node, ARITHMETIC_CLASSES) or (
                isinstance(node, exp.Func) and self.function_class(node) == "aggregate")
            return below + 1 if step else below

        return depth(tree.expression)
