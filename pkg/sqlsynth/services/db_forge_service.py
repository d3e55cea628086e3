"""Database forge: multi-table schemas from flat tables, and physical initialization.

Tables are created one at a time in foreign-key dependency order (parents
first, zero in-degree tables taken by name) so every constraint is in place
before the first row that depends on it is inserted.
"""

import json
import logging
import os
import random
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import networkx as nx
from sqlalchemy import Column, ForeignKeyConstraint, MetaData, Table, inspect, text, types
from sqlalchemy.exc import IntegrityError, SQLAlchemyError

from sqlsynth.core.config import settings
from sqlsynth.core.database import create_sqlite_engine
from sqlsynth.core.exceptions import (
    ConstraintViolation,
    CycleError,
    DatabaseIOError,
    EnhancementRejected,
    PreconditionError,
    SchemaRejected,
)
from sqlsynth.schemas.database import SQL_TYPES, ColumnSchema, DatabaseSchema, ForeignKey, SourceTable, TableSchema
from sqlsynth.utils.record_io import read_json, write_json


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

COLUMN_TYPES = {
    "INTEGER": types.INTEGER,
    "REAL": types.REAL,
    "TEXT": types.TEXT,
    "NUMERIC": types.NUMERIC,
    "BLOB": types.BLOB,
    "DATE": types.DATE,
    "DATETIME": types.DATETIME,
    "BOOLEAN": types.BOOLEAN,
}

# Declared types that may sit on opposite ends of one foreign key
COMPATIBLE_TYPES = [{"INTEGER", "NUMERIC", "BOOLEAN"}, {"REAL", "NUMERIC"}, {"DATE", "DATETIME", "TEXT"}]

DATE_VALUE = re.compile(r"\d{4}-\d{2}-\d{2}$")
DATETIME_VALUE = re.compile(r"\d{4}-\d{2}-\d{2}[ T]\d{2}:\d{2}(:\d{2}(\.\d+)?)?$")


def _types_compatible(left: str, right: str) -> bool:
    return left == right or any(left in group and right in group for group in COMPATIBLE_TYPES)


def _value_conforms(value: Any, data_type: str) -> bool:
    if data_type == "INTEGER":
        return isinstance(value, int) and not isinstance(value, bool)
    if data_type in ("REAL", "NUMERIC"):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if data_type == "TEXT":
        return isinstance(value, (str, dict, list))
    if data_type == "DATE":
        return isinstance(value, str) and bool(DATE_VALUE.match(value))
    if data_type == "DATETIME":
        return isinstance(value, str) and bool(DATETIME_VALUE.match(value) or DATE_VALUE.match(value))
    if data_type == "BOOLEAN":
        return isinstance(value, bool) or value in (0, 1)
    return True


def _storage_value(value: Any) -> Any:
    if isinstance(value, (dict, list)):
        return json.dumps(value, ensure_ascii=False, sort_keys=True)
    if isinstance(value, bool):
        return int(value)
    return value


def fk_graph(schema: DatabaseSchema) -> nx.DiGraph:
    """Directed graph with one child -> parent edge per foreign key"""
    graph = nx.DiGraph()
    graph.add_nodes_from(sorted(schema.table_names))
    for child, parent in sorted(schema.fk_edges()):
        graph.add_edge(child, parent)
    return graph


def find_fk_cycle(schema: DatabaseSchema) -> Optional[List[str]]:
    """One directed foreign-key cycle as a table list, or None"""
    graph = fk_graph(schema)
    for node in graph.nodes:
        if graph.has_edge(node, node):
            return [node]
    try:
        edges = nx.find_cycle(graph, orientation="original")
    except nx.NetworkXNoCycle:
        return None
    return [edge[0] for edge in edges]


def topo_order(schema: DatabaseSchema) -> List[str]:
    """Tables with every referenced parent before its children, ties broken by name"""
    cycle = find_fk_cycle(schema)
    if cycle:
        raise CycleError(cycle)
    dependencies = fk_graph(schema).reverse(copy=True)
    return list(nx.lexicographical_topological_sort(dependencies))


def validate_schema(schema: DatabaseSchema) -> List[str]:
    """Every structural problem of a schema document; empty means valid"""
    violations: List[str] = []
    if not schema.tables:
        return ["Schema has no tables"]

    seen = set()
    for table in schema.tables:
        key = table.name.lower()
        if key in seen:
            violations.append(f"Duplicate table name {table.name}")
        seen.add(key)

    tables = {table.name: table for table in schema.tables}
    for table in schema.tables:
        names = [column.name.lower() for column in table.columns]
        if not table.columns:
            violations.append(f"Table {table.name} has no columns")
        for name in sorted({name for name in names if names.count(name) > 1}):
            violations.append(f"Duplicate column {table.name}.{name}")
        for column in table.columns:
            if column.data_type not in SQL_TYPES:
                violations.append(f"Column {table.name}.{column.name} has unsupported type {column.data_type}")
        for name in table.primary_key:
            if table.column(name) is None:
                violations.append(f"Primary key column {table.name}.{name} does not exist")

        for fk in table.foreign_keys:
            violations.extend(_validate_foreign_key(table, fk, tables))
        violations.extend(_validate_sample_rows(table))

    if not violations:
        cycle = find_fk_cycle(schema)
        if cycle:
            violations.append("Foreign-key cycle " + " -> ".join(cycle + [cycle[0]]))
    return violations


def _validate_foreign_key(table: TableSchema, fk: ForeignKey, tables: Dict[str, TableSchema]) -> List[str]:
    label = f"{table.name}({', '.join(fk.columns)}) -> {fk.ref_table}({', '.join(fk.ref_columns)})"
    if len(fk.columns) != len(fk.ref_columns):
        return [f"Foreign key {label} has arity {len(fk.columns)} against {len(fk.ref_columns)}"]
    parent = tables.get(fk.ref_table)
    if parent is None:
        return [f"Foreign key {label} references missing table {fk.ref_table}"]
    violations = []
    for local, remote in zip(fk.columns, fk.ref_columns):
        local_column, remote_column = table.column(local), parent.column(remote)
        if local_column is None:
            violations.append(f"Foreign key {label} uses missing column {table.name}.{local}")
        if remote_column is None:
            violations.append(f"Foreign key {label} references missing column {fk.ref_table}.{remote}")
        if local_column and remote_column and not _types_compatible(local_column.data_type, remote_column.data_type):
            violations.append(f"Foreign key {label} joins {local_column.data_type} to {remote_column.data_type}")
    if not violations and sorted(fk.ref_columns) != sorted(parent.primary_key):
        violations.append(f"Foreign key {label} must reference the primary key of {fk.ref_table}")
    return violations


def _validate_sample_rows(table: TableSchema) -> List[str]:
    violations = []
    known = set(table.column_names)
    for index, row in enumerate(table.sample_rows):
        unknown = sorted(set(row) - known)
        if unknown:
            violations.append(f"Sample row {index} of {table.name} has unknown columns {unknown}")
        for column in table.columns:
            value = row.get(column.name)
            if value is None:
                if not column.nullable or column.name in table.primary_key:
                    violations.append(f"Sample row {index} of {table.name} lacks a value for {column.name}")
            elif not _value_conforms(value, column.data_type):
                violations.append(f"Sample row {index} of {table.name} has {value!r} in "
                                  f"{column.data_type} column {column.name}")
    return violations


def _constraint_name(message: str) -> str:
    upper = message.upper()
    for name in ("FOREIGN KEY", "UNIQUE", "NOT NULL", "CHECK", "PRIMARY KEY"):
        if name in upper:
            return message[upper.index(name):].strip()
    return message


def initialize_database(schema: DatabaseSchema, path: PathLike) -> Path:
    """Create the database file table by table in dependency order and insert sample rows"""
    order = topo_order(schema)
    target = Path(path)
    temp = target.with_name(target.name + ".tmp")
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        if temp.exists():
            temp.unlink()
    except OSError as e:
        raise DatabaseIOError(f"Cannot prepare {target}: {e}", path=str(target))

    metadata = MetaData()
    tables = {}
    for name in order:
        table = schema.table(name)
        columns = [
            Column(column.name, COLUMN_TYPES[column.data_type](),
                   primary_key=column.name in table.primary_key,
                   nullable=column.nullable and column.name not in table.primary_key,
                   autoincrement=False)
            for column in table.columns
        ]
        constraints = [
            ForeignKeyConstraint(fk.columns, [f"{fk.ref_table}.{ref}" for ref in fk.ref_columns])
            for fk in table.foreign_keys
        ]
        tables[name] = Table(name, metadata, *columns, *constraints)

    engine = create_sqlite_engine(temp)
    try:
        with engine.begin() as conn:
            quote = engine.dialect.identifier_preparer.quote
            for name in order:
                tables[name].create(conn)
                table = schema.table(name)
                if not table.sample_rows:
                    continue
                column_list = ", ".join(quote(column) for column in table.column_names)
                params = ", ".join(f":p{index}" for index in range(len(table.column_names)))
                statement = text(f"INSERT INTO {quote(name)} ({column_list}) VALUES ({params})")
                for row in table.sample_rows:
                    values = {f"p{index}": _storage_value(row.get(column))
                              for index, column in enumerate(table.column_names)}
                    try:
                        conn.execute(statement, values)
                    except IntegrityError as e:
                        raise ConstraintViolation(name, row, _constraint_name(str(e.orig)))
        engine.dispose()
        os.replace(temp, target)
    except SQLAlchemyError as e:
        raise DatabaseIOError(f"Cannot initialize {target}: {e}", path=str(target))
    except OSError as e:
        raise DatabaseIOError(f"Cannot promote {temp} to {target}: {e}", path=str(target))
    finally:
        engine.dispose()
        if temp.exists():
            temp.unlink()
    logger.info("initialized database path=%s tables=%d order=%s", target, len(order), ",".join(order))
    return target


def read_schema(path: PathLike, sample_rows: Optional[int] = None) -> DatabaseSchema:
    """Reflect table names, declared types and keys from a database file"""
    path = Path(path)
    if not path.exists():
        raise DatabaseIOError(f"Database file not found: {path}", path=str(path))
    limit = settings.SAMPLE_ROWS if sample_rows is None else sample_rows
    engine = create_sqlite_engine(path, read_only=True)
    try:
        inspector = inspect(engine)
        tables = []
        with engine.connect() as conn:
            quote = engine.dialect.identifier_preparer.quote
            for name in sorted(inspector.get_table_names()):
                columns = [
                    ColumnSchema(name=column["name"], data_type=str(column["type"]) or "TEXT",
                                 nullable=bool(column.get("nullable", True)))
                    for column in inspector.get_columns(name)
                ]
                primary_key = list(inspector.get_pk_constraint(name).get("constrained_columns") or [])
                foreign_keys = [
                    ForeignKey(columns=fk["constrained_columns"], ref_table=fk["referred_table"],
                               ref_columns=fk["referred_columns"])
                    for fk in inspector.get_foreign_keys(name)
                ]
                rows = []
                if limit:
                    result = conn.exec_driver_sql(f"SELECT * FROM {quote(name)} LIMIT {int(limit)}")
                    keys = list(result.keys())
                    rows = [dict(zip(keys, row)) for row in result.fetchall()]
                tables.append(TableSchema(name=name, columns=columns, primary_key=primary_key,
                                          foreign_keys=foreign_keys, sample_rows=rows))
    except SQLAlchemyError as e:
        raise DatabaseIOError(f"Cannot read {path}: {e}", path=str(path))
    finally:
        engine.dispose()
    return DatabaseSchema(id=path.stem, tables=tables)


class DatabaseForgeService:
    def __init__(self, gateway=None, attempts: Optional[int] = None, sample_rows: Optional[int] = None):
        self.gateway = gateway
        self.attempts = attempts or settings.SCHEMA_ATTEMPTS
        self.sample_rows = sample_rows or settings.SAMPLE_ROWS

    async def generate_database(self, source_table: SourceTable) -> DatabaseSchema:
        """Turn one flat table into a validated multi-table business schema"""
        if not source_table.header or not source_table.rows:
            raise PreconditionError(f"Source table {source_table.id} is empty", table=source_table.id)

        bindings = {
            "source_table": source_table.model_dump_json(),
            "sample_rows": self.sample_rows,
        }
        messages: List[str] = []
        for attempt in range(1, self.attempts + 1):
            schema, _ = await self.gateway.generate("database_generation", bindings, DatabaseSchema)
            violations = validate_schema(schema)
            if not violations:
                schema = schema.with_content_id()
                logger.info("generated schema source=%s db_id=%s tables=%d attempt=%d",
                            source_table.id, schema.id, len(schema.tables), attempt)
                return schema
            logger.warning("generated schema rejected source=%s attempt=%d violations=%s",
                           source_table.id, attempt, violations)
            messages.extend(f"attempt {attempt}: {violation}" for violation in violations)
        raise SchemaRejected(messages)

    async def enhance_database(self, schema: DatabaseSchema) -> DatabaseSchema:
        """Add columns and refine foreign keys without losing anything the input had"""
        violations = validate_schema(schema)
        if violations:
            raise PreconditionError("Input schema is invalid: " + "; ".join(violations))

        bindings = {"schema": schema.to_prompt(), "sample_rows": self.sample_rows}
        enhanced, _ = await self.gateway.generate("database_enhancement", bindings, DatabaseSchema)
        enhanced = self._fill_new_columns(schema, enhanced)

        diff = self.enhancement_diff(schema, enhanced)
        if diff:
            raise EnhancementRejected(diff)
        enhanced = enhanced.model_copy(update={"scenario": enhanced.scenario or schema.scenario}).with_content_id()
        logger.info("enhanced schema db_id=%s columns=%d->%d fks=%d->%d", enhanced.id,
                    sum(len(t.columns) for t in schema.tables), sum(len(t.columns) for t in enhanced.tables),
                    len(schema.fk_edges()), len(enhanced.fk_edges()))
        return enhanced

    @staticmethod
    def _fill_new_columns(original: DatabaseSchema, enhanced: DatabaseSchema) -> DatabaseSchema:
        # Nullable added columns default to NULL in sample rows the model left short
        tables = []
        for table in enhanced.tables:
            before = original.table(table.name)
            added = [c for c in table.columns if before is None or before.column(c.name) is None]
            rows = []
            for row in table.sample_rows:
                row = dict(row)
                for column in added:
                    if column.name not in row and column.nullable:
                        row[column.name] = None
                rows.append(row)
            tables.append(table.model_copy(update={"sample_rows": rows}))
        return enhanced.model_copy(update={"tables": tables})

    @staticmethod
    def enhancement_diff(original: DatabaseSchema, enhanced: DatabaseSchema) -> List[str]:
        """Post-condition failures of an enhancement, empty when it is acceptable"""
        diff = []
        for table in original.tables:
            after = enhanced.table(table.name)
            if after is None:
                diff.append(f"table {table.name} was dropped")
                continue
            if len(after.columns) < len(table.columns):
                diff.append(f"table {table.name} lost columns ({len(table.columns)} -> {len(after.columns)})")
            missing = [c.name for c in table.columns if after.column(c.name) is None]
            if missing:
                diff.append(f"table {table.name} lost columns {missing}")
            for row_index, row in enumerate(after.sample_rows):
                absent = [c.name for c in after.columns if c.name not in row and not c.nullable]
                if absent:
                    diff.append(f"table {table.name} sample row {row_index} has no value for {absent}")
        if len(enhanced.fk_edges()) < len(original.fk_edges()):
            diff.append(f"foreign keys decreased ({len(original.fk_edges())} -> {len(enhanced.fk_edges())})")
        cycle = find_fk_cycle(enhanced)
        if cycle:
            diff.append("foreign-key cycle " + " -> ".join(cycle + [cycle[0]]))
        if not diff:
            diff.extend(validate_schema(enhanced))
        return diff

    def topo_order(self, schema: DatabaseSchema) -> List[str]:
        return topo_order(schema)

    def initialize_database(self, schema: DatabaseSchema, path: PathLike) -> Path:
        return initialize_database(schema, path)

    def validate_schema(self, schema: DatabaseSchema) -> List[str]:
        return validate_schema(schema)


class DatabasePool:
    """Schema documents and database files of a run, addressed by database id"""

    def __init__(self, root: PathLike):
        self.root = Path(root)
        self.schema_dir = self.root / "schemas"
        self.database_dir = self.root / "databases"
        self._schemas: Dict[str, DatabaseSchema] = {}

    @classmethod
    def load(cls, root: PathLike) -> "DatabasePool":
        pool = cls(root)
        if not pool.schema_dir.exists():
            raise DatabaseIOError(f"No schemas under {pool.root}", path=str(pool.root))
        for path in sorted(pool.schema_dir.glob("*.json")):
            schema = read_json(path, DatabaseSchema)
            if not pool.path(schema.id).exists():
                raise DatabaseIOError(f"Database file missing for {schema.id}", path=str(pool.path(schema.id)))
            pool._schemas[schema.id] = schema
        logger.info("loaded database pool root=%s databases=%d", pool.root, len(pool._schemas))
        return pool

    def add(self, schema: DatabaseSchema) -> Path:
        """Persist the schema document and initialize its database file"""
        if not schema.id:
            schema = schema.with_content_id()
        if schema.id in self._schemas:
            return self.path(schema.id)
        path = initialize_database(schema, self.path(schema.id))
        write_json(self.schema_dir / f"{schema.id}.json", schema)
        self._schemas[schema.id] = schema
        return path

    def path(self, db_id: str) -> Path:
        return self.database_dir / f"{db_id}.sqlite"

    def schema(self, db_id: str) -> DatabaseSchema:
        try:
            return self._schemas[db_id]
        except KeyError:
            raise PreconditionError(f"Unknown database id {db_id}", db_id=db_id)

    @property
    def ids(self) -> List[str]:
        return sorted(self._schemas)

    def __len__(self) -> int:
        return len(self._schemas)

    def __contains__(self, db_id: str) -> bool:
        return db_id in self._schemas

    def sample(self, k: int, rng: random.Random, exclude: Sequence[str] = ()) -> List[str]:
        """Uniform sample without replacement from a seeded stream"""
        candidates = [db_id for db_id in self.ids if db_id not in set(exclude)]
        if not candidates:
            raise PreconditionError("Database pool is empty")
        return rng.sample(candidates, min(k, len(candidates)))
