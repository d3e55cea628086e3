"""Rule-based SQL and question composition for a target label tuple.

Used by the offline provider: given a schema and the labels a pair must
carry, build one SQLite statement realizing exactly those structures and
actions, plus a question phrased for the core intent. Anything the composer
cannot express for a statement type is reported in ``missing``.
"""

import hashlib
import json
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel

from sqlsynth.schemas.database import DatabaseSchema, TableSchema
from sqlsynth.schemas.taxonomy import CoreIntent, KeyAction, StatementType, SyntaxStructure, TaxonomyLabels


NUMERIC_TYPES = {"INTEGER", "REAL", "NUMERIC"}
TEMPORAL_TYPES = {"DATE", "DATETIME"}
JSON_HINTS = ("payload", "json", "meta", "attributes", "details")

SET_KEYWORDS = (
    (SyntaxStructure.UNION, "UNION"),
    (SyntaxStructure.INTERSECT, "INTERSECT"),
    (SyntaxStructure.EXCEPT, "EXCEPT"),
)


def stable_choice(options: Sequence, *key: object):
    digest = hashlib.sha256("|".join(str(part) for part in key).encode("utf-8")).hexdigest()
    return options[int(digest[:8], 16) % len(options)]


def _is_json_value(value) -> bool:
    if isinstance(value, (dict, list)):
        return True
    if isinstance(value, str) and value.strip().startswith(("{", "[")):
        try:
            json.loads(value)
            return True
        except ValueError:
            return False
    return False


class TableRoles(BaseModel):
    """Columns of one table grouped by the part they can play in a query"""

    name: str
    pk: Optional[str] = None
    pk_type: Optional[str] = None
    fk_columns: List[str] = []
    num: Optional[str] = None
    text: Optional[str] = None
    date: Optional[str] = None
    json_column: Optional[str] = None
    free: List[str] = []  # non-key columns, nullable ones first
    minimum: Optional[float] = None

    @classmethod
    def of(cls, table: TableSchema) -> "TableRoles":
        fk_columns = sorted({column for fk in table.foreign_keys for column in fk.columns})
        keys = set(fk_columns) | set(table.primary_key)
        roles = cls(name=table.name, fk_columns=fk_columns)
        if len(table.primary_key) == 1:
            roles.pk = table.primary_key[0]
            roles.pk_type = table.column(roles.pk).data_type if table.column(roles.pk) else None
        for column in table.columns:
            if column.name in keys:
                continue
            values = [v for v in table.column_values(column.name) if v is not None]
            if column.data_type in NUMERIC_TYPES and roles.num is None:
                roles.num = column.name
                numbers = [v for v in values if isinstance(v, (int, float)) and not isinstance(v, bool)]
                roles.minimum = min(numbers) if numbers else 0
            elif column.data_type in TEMPORAL_TYPES and roles.date is None:
                roles.date = column.name
            elif column.data_type == "TEXT":
                looks_json = any(h in column.name.lower() for h in JSON_HINTS) or (values and _is_json_value(values[0]))
                if looks_json and roles.json_column is None:
                    roles.json_column = column.name
                elif roles.text is None:
                    roles.text = column.name
        roles.free = [c.name for c in sorted(table.columns, key=lambda c: not c.nullable) if c.name not in keys]
        return roles

    def score(self) -> int:
        return 4 * bool(self.num) + 2 * bool(self.text) + bool(self.date) + bool(self.json_column)


class ComposedQuery(BaseModel):
    sql: str
    table: str
    columns: List[str] = []
    threshold: Optional[float] = None
    missing: List[str] = []


def _format_number(value: Optional[float]) -> str:
    if value is None:
        return "0"
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


class SqlComposer:
    def __init__(self, schema: DatabaseSchema, labels: TaxonomyLabels, variant: object = 0):
        self.schema = schema
        self.labels = labels
        self.variant = variant
        self.roles: Dict[str, TableRoles] = {table.name: TableRoles.of(table) for table in schema.tables}
        self.missing: List[str] = []

    def compose(self) -> ComposedQuery:
        if not self.schema.tables:
            return ComposedQuery(sql="", table="", missing=["schema has no tables"])
        statement = self.labels.statement_type
        if statement == StatementType.SELECT:
            return self._select_statement()
        if statement == StatementType.INSERT:
            return self._insert_statement()
        if statement == StatementType.UPDATE:
            return self._update_statement()
        if statement == StatementType.DELETE:
            return self._delete_statement()
        return self._alter_statement()

    # Table choice

    def _children_of(self, name: str) -> List[str]:
        return sorted({child for child, parent in self.schema.fk_edges() if parent == name and child != name})

    def _pick_table(self, predicate=None) -> TableRoles:
        candidates = [roles for roles in self.roles.values() if predicate is None or predicate(roles)]
        if not candidates:
            candidates = list(self.roles.values())
        best = max(roles.score() for roles in candidates)
        top = sorted((roles for roles in candidates if roles.score() == best), key=lambda roles: roles.name)
        return stable_choice(top, self.schema.id, self.variant, self.labels.statement_type.value)

    def _join_target(self, main: TableRoles) -> Tuple[str, List[Tuple[str, str]]]:
        table = self.schema.table(main.name)
        if table.foreign_keys:
            fk = sorted(table.foreign_keys, key=lambda fk: (fk.ref_table, fk.columns))[0]
            return fk.ref_table, list(zip(fk.columns, fk.ref_columns))
        for child in self._children_of(main.name):
            for fk in self.schema.table(child).foreign_keys:
                if fk.ref_table == main.name:
                    return child, list(zip(fk.ref_columns, fk.columns))
        key = main.pk or "rowid"
        return main.name, [(key, key)]

    # Expressions

    def _refs(self, roles: TableRoles, alias: str) -> Dict[str, str]:
        prefix = f"{alias}." if alias else ""
        num = roles.num or roles.pk or "rowid"
        return {
            "num": prefix + num,
            "text": prefix + (roles.text or roles.num or roles.pk or "rowid"),
            "date": prefix + roles.date if roles.date else None,
            "json": prefix + roles.json_column if roles.json_column else None,
            "key": prefix + (roles.pk or "rowid"),
        }

    def _select_action_items(self, roles: TableRoles, refs: Dict[str, str], where: List[str]) -> List[str]:
        actions = self.labels.key_actions
        structures = self.labels.syntax_structures
        items = []
        if KeyAction.AGGREGATE_FUNCTION in actions:
            items.append("COUNT(*) AS row_count")
        if KeyAction.STRING_FUNCTION in actions:
            items.append(f"UPPER({refs['text']}) AS upper_text")
        if KeyAction.TIME_FUNCTION in actions:
            items.append(f"strftime('%Y-%m', {refs['date'] or chr(39) + 'now' + chr(39)}) AS period_key")
        if KeyAction.SPECIFIC_TIME in actions:
            if SyntaxStructure.WHERE in structures and refs["date"]:
                where.append(f"{refs['date']} >= '2020-01-01'")
            else:
                items.append("'2020-01-01' AS reference_date")
        if KeyAction.JSON_FUNCTION in actions:
            if refs["json"]:
                items.append(f"json_extract({refs['json']}, '$.status') AS payload_status")
            else:
                items.append(f"json_object('value', {refs['num']}) AS payload")
        if KeyAction.CAST in actions:
            items.append(f"CAST({refs['num']} AS TEXT) AS value_text")
        if KeyAction.CONDITION_JUDGEMENT in actions:
            items.append(f"CASE WHEN {refs['num']} > 0 THEN 'positive' ELSE 'other' END AS sign_class")
        if KeyAction.WILDCARD_FILTERING in actions:
            if SyntaxStructure.WHERE in structures:
                where.append(f"{refs['text']} LIKE '%a%'")
            else:
                items.append(f"{refs['text']} LIKE '%a%' AS has_a")
        if KeyAction.WINDOW_FUNCTION in actions:
            items.append("ROW_NUMBER() OVER () AS position")
        return items

    def _query_body(self, main: TableRoles, projection: Optional[List[str]] = None) -> Tuple[str, str, List[str]]:
        """(with clause, compound-ready query text, columns referenced) for the SELECT part"""
        structures = self.labels.syntax_structures
        actions = self.labels.key_actions
        refs = self._refs(main, "t1")
        where: List[str] = []
        with_clause = ""
        source = f"{main.name} AS t1"
        if SyntaxStructure.CTE in structures:
            with_clause = f"WITH base AS (SELECT * FROM {main.name}) "
            source = "base AS t1"

        extra = self._select_action_items(main, refs, where)
        if SyntaxStructure.SCALAR_SUBQUERY in structures:
            column = main.num or main.pk or "rowid"
            extra.append(f"(SELECT s.{column} FROM {main.name} AS s) AS reference_value")
        if SyntaxStructure.CORRELATED_SUBQUERY in structures:
            if SyntaxStructure.WHERE in structures:
                key = main.pk or "rowid"
                where.append(f"EXISTS (SELECT 1 FROM {main.name} AS c WHERE c.{key} = t1.{key})")
            else:
                extra.append(f"(SELECT {refs['num']}) AS same_value")
        if SyntaxStructure.WHERE in structures:
            where.insert(0, f"{refs['num']} >= {_format_number(main.minimum)}")

        if projection is None:
            items = [refs["text"], refs["num"]] if refs["text"] != refs["num"] else [refs["num"]]
            items += extra
        else:
            items = self._fold_into(projection, extra, main)

        joins = []
        join_kinds = [(SyntaxStructure.INNER_JOIN, "JOIN"), (SyntaxStructure.OUTER_JOIN, "LEFT JOIN"),
                      (SyntaxStructure.CROSS_JOIN, "CROSS JOIN")]
        for index, (structure, keyword) in enumerate((k for k in join_kinds if k[0] in structures), start=1):
            target, pairs = self._join_target(main)
            alias = f"j{index}"
            if structure == SyntaxStructure.CROSS_JOIN:
                joins.append(f"CROSS JOIN {target} AS {alias}")
            else:
                condition = " AND ".join(f"t1.{left} = {alias}.{right}" for left, right in pairs)
                joins.append(f"{keyword} {target} AS {alias} ON {condition}")

        body = f"SELECT {', '.join(items)} FROM {source}"
        if joins:
            body += " " + " ".join(joins)
        if where:
            body += " WHERE " + " AND ".join(where)
        if SyntaxStructure.GROUP_BY in structures:
            body += f" GROUP BY {refs['text']}"
            if SyntaxStructure.HAVING in structures:
                if KeyAction.AGGREGATE_FUNCTION in actions:
                    body += " HAVING COUNT(*) > 0"
                else:
                    body += f" HAVING {refs['text']} IS NOT NULL"
        elif SyntaxStructure.HAVING in structures:
            self.missing.append("Having without Group by")

        set_ops = [keyword for structure, keyword in SET_KEYWORDS if structure in structures]
        compound = body
        for keyword in set_ops:
            compound += f" {keyword} {body}"
        if SyntaxStructure.ORDER_BY in structures:
            compound += " ORDER BY 1" if set_ops else f" ORDER BY {refs['num']} DESC"
        if SyntaxStructure.LIMIT_OFFSET in structures:
            compound += " LIMIT 10"
        columns = [c for c in (main.text, main.num, main.date) if c]
        return with_clause, compound, columns

    def _fold_into(self, projection: List[str], extra: List[str], main: TableRoles) -> List[str]:
        # Insert-select: each extra expression replaces one non-key target column
        items = list(projection)
        targets = [index for index, column in enumerate(items) if column.split(".")[-1] in main.free]
        expressions = [expression.rsplit(" AS ", 1)[0] for expression in extra]
        if not expressions:
            return items
        if not targets:
            self.missing.append("no free column to carry expressions")
            return items
        for position, expression in enumerate(expressions):
            slot = targets[position % len(targets)]
            if position < len(targets):
                items[slot] = expression
            else:
                items[slot] = f"COALESCE({items[slot]}, {expression})"
        return items

    # Statements

    def _select_statement(self) -> ComposedQuery:
        joined = self.labels.syntax_structures & {SyntaxStructure.INNER_JOIN, SyntaxStructure.OUTER_JOIN}
        main = self._pick_table((lambda roles: bool(self.schema.table(roles.name).foreign_keys)) if joined else None)
        with_clause, body, columns = self._query_body(main)
        return ComposedQuery(sql=with_clause + body, table=main.name, columns=columns,
                             threshold=main.minimum, missing=self.missing)

    def _insert_statement(self) -> ComposedQuery:
        main = self._pick_table(lambda roles: roles.pk is None or roles.pk_type == "INTEGER")
        table = self.schema.table(main.name)
        targets = [column.name for column in table.columns if column.name != main.pk]
        if not targets:
            return ComposedQuery(sql="", table=main.name, missing=["no insertable columns"])
        with_clause, body, columns = self._query_body(main, [f"t1.{column}" for column in targets])
        sql = f"INSERT INTO {main.name} ({', '.join(targets)}) {with_clause}{body}"
        return ComposedQuery(sql=sql, table=main.name, columns=columns, threshold=main.minimum,
                             missing=self.missing)

    def _dml_unsupported(self, statement: str) -> None:
        unsupported = {SyntaxStructure.GROUP_BY, SyntaxStructure.HAVING, SyntaxStructure.ORDER_BY,
                       SyntaxStructure.LIMIT_OFFSET, SyntaxStructure.INNER_JOIN, SyntaxStructure.OUTER_JOIN,
                       SyntaxStructure.CROSS_JOIN, SyntaxStructure.UNION, SyntaxStructure.INTERSECT,
                       SyntaxStructure.EXCEPT}
        for structure in sorted(self.labels.syntax_structures & unsupported, key=lambda s: s.value):
            self.missing.append(f"{structure.value} in {statement}")

    def _update_statement(self) -> ComposedQuery:
        main = self._pick_table(lambda roles: bool(roles.free))
        refs = self._refs(main, "")
        structures = self.labels.syntax_structures
        actions = self.labels.key_actions
        self._dml_unsupported("UPDATE")
        assignments: Dict[str, str] = {}
        free = list(main.free)

        def assign(preferred: Optional[str], expression: str) -> None:
            column = preferred if preferred in free and preferred not in assignments else None
            column = column or next((c for c in free if c not in assignments), None)
            if column is None:
                self.missing.append(f"no column left for {expression}")
                return
            assignments[column] = expression

        num, text = main.num or refs["num"], main.text or refs["text"]
        subquery_used = False
        if KeyAction.AGGREGATE_FUNCTION in actions:
            if SyntaxStructure.SCALAR_SUBQUERY in structures:
                assign(main.num, f"(SELECT MAX(s.{num}) FROM {main.name} AS s)")
                subquery_used = True
            else:
                self.missing.append("Aggregate function in UPDATE without Scalar subquery")
        if KeyAction.WINDOW_FUNCTION in actions:
            if SyntaxStructure.SCALAR_SUBQUERY in structures:
                assign(main.num, f"(SELECT ROW_NUMBER() OVER () FROM {main.name} AS s)")
                subquery_used = True
            else:
                self.missing.append("Window function in UPDATE without Scalar subquery")
        if KeyAction.STRING_FUNCTION in actions:
            assign(main.text, f"UPPER({text})")
        if KeyAction.TIME_FUNCTION in actions and KeyAction.SPECIFIC_TIME in actions:
            assign(main.date, "date('2024-01-01')")
        elif KeyAction.TIME_FUNCTION in actions:
            assign(main.date, f"date({main.date})" if main.date else "strftime('%Y', 'now')")
        elif KeyAction.SPECIFIC_TIME in actions:
            assign(main.date, "'2024-01-01'")
        if KeyAction.JSON_FUNCTION in actions:
            assign(main.json_column, f"json({main.json_column})" if main.json_column else f"json_object('v', {num})")
        if KeyAction.CAST in actions:
            assign(main.num, f"CAST({num} AS REAL)")
        if KeyAction.CONDITION_JUDGEMENT in actions:
            assign(main.num, f"CASE WHEN {num} > 0 THEN {num} ELSE 0 END")

        where = []
        if KeyAction.WILDCARD_FILTERING in actions:
            if SyntaxStructure.WHERE in structures:
                where.append(f"{text} LIKE '%a%'")
            else:
                assign(main.num, f"({text} LIKE '%a%')")
        if SyntaxStructure.SCALAR_SUBQUERY in structures and not subquery_used:
            assign(main.num, f"(SELECT s.{num} FROM {main.name} AS s)")
        if SyntaxStructure.CORRELATED_SUBQUERY in structures:
            key = main.pk or "rowid"
            if SyntaxStructure.WHERE in structures:
                where.append(f"EXISTS (SELECT 1 FROM {main.name} AS c WHERE c.{key} = {main.name}.{key})")
            else:
                assign(main.text, f"(SELECT {main.name}.{text})")
        if SyntaxStructure.WHERE in structures:
            where.insert(0, f"{num} >= {_format_number(main.minimum)}")
        if not assignments:
            column = main.text or main.num or free[0]
            assignments[column] = column

        sql = ""
        if SyntaxStructure.CTE in structures:
            sql = f"WITH base AS (SELECT * FROM {main.name}) "
        sql += f"UPDATE {main.name} SET " + ", ".join(f"{c} = {e}" for c, e in assignments.items())
        if where:
            sql += " WHERE " + " AND ".join(where)
        return ComposedQuery(sql=sql, table=main.name, columns=list(assignments), threshold=main.minimum,
                             missing=self.missing)

    def _delete_statement(self) -> ComposedQuery:
        main = self._pick_table(lambda roles: not self._children_of(roles.name))
        num = main.num or main.pk or "rowid"
        text = main.text or num
        structures = self.labels.syntax_structures
        actions = self.labels.key_actions
        self._dml_unsupported("DELETE")
        predicates = []
        if SyntaxStructure.WHERE in structures:
            predicates.append(f"{num} >= {_format_number(main.minimum)}")
        if KeyAction.STRING_FUNCTION in actions:
            predicates.append(f"LENGTH({text}) >= 0")
        if KeyAction.TIME_FUNCTION in actions and KeyAction.SPECIFIC_TIME in actions:
            predicates.append(f"date({main.date or text}) >= '2000-01-01'")
        elif KeyAction.TIME_FUNCTION in actions:
            predicates.append(f"date({main.date}) IS NOT NULL" if main.date else "strftime('%Y', 'now') IS NOT NULL")
        elif KeyAction.SPECIFIC_TIME in actions:
            predicates.append(f"{main.date or text} >= '2000-01-01'")
        if KeyAction.JSON_FUNCTION in actions:
            predicates.append(f"json_valid({main.json_column or text}) >= 0")
        if KeyAction.CAST in actions:
            predicates.append(f"CAST({num} AS REAL) >= {_format_number(main.minimum)}")
        if KeyAction.CONDITION_JUDGEMENT in actions:
            predicates.append(f"CASE WHEN {num} > 0 THEN 1 ELSE 1 END = 1")
        if KeyAction.WILDCARD_FILTERING in actions:
            predicates.append(f"{text} LIKE '%'")
        if KeyAction.AGGREGATE_FUNCTION in actions:
            if SyntaxStructure.SCALAR_SUBQUERY in structures:
                predicates.append(f"{num} >= (SELECT MIN(s.{num}) FROM {main.name} AS s)")
            else:
                self.missing.append("Aggregate function in DELETE without Scalar subquery")
        elif SyntaxStructure.SCALAR_SUBQUERY in structures:
            predicates.append(f"{num} >= (SELECT s.{num} FROM {main.name} AS s)")
        if KeyAction.WINDOW_FUNCTION in actions:
            self.missing.append("Window function in DELETE")
        if SyntaxStructure.CORRELATED_SUBQUERY in structures:
            key = main.pk or "rowid"
            predicates.append(f"EXISTS (SELECT 1 FROM {main.name} AS c WHERE c.{key} = {main.name}.{key})")
        if predicates and SyntaxStructure.WHERE not in structures:
            self.missing.append("DELETE predicates need Where")
            predicates = []

        sql = ""
        if SyntaxStructure.CTE in structures:
            sql = f"WITH base AS (SELECT * FROM {main.name}) "
        sql += f"DELETE FROM {main.name}"
        if predicates:
            sql += " WHERE " + " AND ".join(predicates)
        return ComposedQuery(sql=sql, table=main.name, columns=[num], threshold=main.minimum,
                             missing=self.missing)

    def _alter_statement(self) -> ComposedQuery:
        main = self._pick_table()
        table = self.schema.table(main.name)
        existing = {column.name for column in table.columns}
        name, suffix = "note", 1
        while name in existing:
            suffix += 1
            name = f"note_{suffix}"
        if self.labels.syntax_structures or self.labels.key_actions:
            self.missing.append("ALTER carries no structures or actions")
        return ComposedQuery(sql=f"ALTER TABLE {main.name} ADD COLUMN {name} TEXT", table=main.name,
                             columns=[name], missing=self.missing)


# Question phrasing

CANONICAL_QUESTIONS: Dict[CoreIntent, str] = {
    CoreIntent.BASIC_QUERY: "Show the rows straight from the table.",
    CoreIntent.CONDITION_FILTERING: "Show only the rows that meet the condition.",
    CoreIntent.SORTING_AND_PAGINATION: "Show the rows sorted by value.",
    CoreIntent.BASIC_AGGREGATION: "How many rows are there?",
    CoreIntent.TIME_OPERATION: "Show the rows for the given date.",
    CoreIntent.FORMAT_TRANSFORMATION: "Show the values converted to another format.",
    CoreIntent.SET_OPERATION: "Show the union of the two result lists.",
    CoreIntent.DATA_CHANGE: "Change the stored rows.",
    CoreIntent.STRUCTURE_CHANGE: "Add a new column to the table.",
    CoreIntent.DISTRIBUTION_ANALYSIS: "Show the distribution of the values.",
    CoreIntent.ADVANCED_STATISTICS: "Compute the running total of the values.",
    CoreIntent.TREND_ANALYSIS: "Show how the values change over time.",
    CoreIntent.BUSINESS_CALCULATION: "Compute the revenue figure.",
    CoreIntent.BUSINESS_RULE: "Apply the eligibility policy to the rows.",
}

VARIED_QUESTIONS: Dict[CoreIntent, Tuple[str, ...]] = {
    CoreIntent.BASIC_QUERY: (
        "Give me the raw {text} and {num} entries kept in {table}.",
        "List the {table} rows straight from storage, including {text}.",
        "Return {num} values from {table} exactly as they are stored.",
        "Pull the raw contents of {table}, showing {text} next to {num}.",
    ),
    CoreIntent.CONDITION_FILTERING: (
        "Which {table} entries have a {num} of at least {threshold}? Show only those.",
        "Filter {table} down to rows whose {num} reaches {threshold}.",
        "Find the {table} records matching a {num} threshold of {threshold}.",
        "Keep only {table} items with {num} no smaller than {threshold}.",
    ),
    CoreIntent.SORTING_AND_PAGINATION: (
        "Sort {table} by {num} in descending sequence and give the first page.",
        "List {table} entries ranked by {num}, biggest first.",
        "Show {text} for {table}, sorted on {num}.",
        "Paginate through {table} with rows ordered by {num}.",
    ),
    CoreIntent.BASIC_AGGREGATION: (
        "How many {table} entries are recorded?",
        "What is the number of rows in {table}?",
        "Count the {table} records for each {text}.",
        "Give the total of {table} rows, please.",
    ),
    CoreIntent.TIME_OPERATION: (
        "Which {table} entries fall after the {date} cutoff day?",
        "List the {table} rows since the start of that year.",
        "Show {table} activity for that period, using {date}.",
        "Find {table} records dated after the given day.",
    ),
    CoreIntent.FORMAT_TRANSFORMATION: (
        "Show {num} from {table} converted to text.",
        "Present {table} {text} values in uppercase format.",
        "Convert the {num} figures of {table} into a readable format.",
    ),
    CoreIntent.SET_OPERATION: (
        "Which {table} rows appear in either result list?",
        "Give the union of both {table} selections.",
        "What do the two {table} lists have in common?",
        "Show {table} rows from the first list but not in the second.",
    ),
    CoreIntent.DATA_CHANGE: (
        "Update {text} for the matching {table} rows.",
        "Change the stored {num} values in {table}.",
        "Remove the affected entries from {table}.",
        "Copy {table} entries back into {table} as new rows.",
    ),
    CoreIntent.STRUCTURE_CHANGE: (
        "Add a free-text note column to {table}.",
        "Extend {table} with one more column.",
    ),
    CoreIntent.DISTRIBUTION_ANALYSIS: (
        "How are {table} rows spread across {text}?",
        "Show the frequency of each {text} in {table}.",
        "Give the distribution of {num} over {table}.",
    ),
    CoreIntent.ADVANCED_STATISTICS: (
        "Compute a running total of {num} across {table}.",
        "Give the cumulative {num} for {table} rows.",
        "Show a ranking of {table} by {num}.",
    ),
    CoreIntent.TREND_ANALYSIS: (
        "How has {num} in {table} evolved over time?",
        "Show the trend of {table} activity by {date}.",
        "Describe the growth of {num} across {table} periods.",
    ),
    CoreIntent.BUSINESS_CALCULATION: (
        "What revenue do the {table} rows bring in?",
        "Compute the margin implied by {num} in {table}.",
        "Give the turnover figure for {table}.",
    ),
    CoreIntent.BUSINESS_RULE: (
        "Which {table} rows are eligible under the policy on {num}?",
        "Apply the compliance rule to {table} using {num}.",
        "List {table} entries that qualify under the business rule.",
    ),
}

DML_QUESTIONS = {
    StatementType.INSERT: "Copy the matching {table} entries into new rows.",
    StatementType.UPDATE: "Update the {columns} values of {table}.",
    StatementType.DELETE: "Remove the selected entries from {table}.",
}


def _quoted(name: Optional[str]) -> str:
    return f"`{name}`" if name else "`value`"


def compose_question(labels: TaxonomyLabels, query: ComposedQuery, varied: bool, key: object = "") -> str:
    """Question text for a composed query; the canonical form ignores the schema"""
    intent = labels.core_intent
    if not varied:
        return CANONICAL_QUESTIONS[intent]
    columns = query.columns + [None, None, None]
    values = {
        "table": _quoted(query.table),
        "text": _quoted(columns[0]),
        "num": _quoted(columns[1] or columns[0]),
        "date": _quoted(columns[2] or columns[0]),
        "columns": ", ".join(_quoted(c) for c in query.columns) or "`value`",
        "threshold": _format_number(query.threshold),
    }
    if intent == CoreIntent.DATA_CHANGE and labels.statement_type in DML_QUESTIONS:
        pattern = DML_QUESTIONS[labels.statement_type]
    else:
        pattern = stable_choice(VARIED_QUESTIONS[intent], key, query.table, intent.value)
    return pattern.format(**values)
