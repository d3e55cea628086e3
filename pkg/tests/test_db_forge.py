import random

import pytest

from sqlsynth.core.database import SqliteExecutor
from sqlsynth.core.exceptions import (
    ConstraintViolation,
    CycleError,
    DatabaseIOError,
    EnhancementRejected,
    PreconditionError,
    SchemaRejected,
)
from sqlsynth.schemas.database import ColumnSchema, DatabaseSchema, ForeignKey, SourceTable, TableSchema
from sqlsynth.services.db_forge_service import (
    DatabaseForgeService,
    DatabasePool,
    find_fk_cycle,
    initialize_database,
    read_schema,
    topo_order,
    validate_schema,
)


def _table(name, parents=(), rows=()):
    columns = [ColumnSchema(name="id", data_type="INTEGER", nullable=False)]
    columns += [ColumnSchema(name=f"{parent}_id", data_type="INTEGER") for parent in parents]
    foreign_keys = [ForeignKey(columns=[f"{parent}_id"], ref_table=parent, ref_columns=["id"]) for parent in parents]
    return TableSchema(name=name, columns=columns, primary_key=["id"], foreign_keys=foreign_keys,
                       sample_rows=list(rows))


def _schema(*tables):
    return DatabaseSchema(id="test", tables=list(tables))


class TestTopologicalOrder:
    def test_retail(self, retail_schema):
        """Test parents come first and ties break by name"""
        assert topo_order(retail_schema) == ["customers", "orders", "products", "order_items"]

    def test_random_dags(self):
        """Test every foreign key points backwards in the order across random acyclic schemas"""
        rng = random.Random(7)
        for _ in range(50):
            names = [f"t{i}" for i in range(rng.randint(1, 8))]
            tables = []
            for index, name in enumerate(names):
                parents = sorted(rng.sample(names[:index], rng.randint(0, min(index, 3))))
                tables.append(_table(name, parents))
            rng.shuffle(tables)
            schema = _schema(*tables)

            order = topo_order(schema)

            assert sorted(order) == sorted(names)
            for child, parent in schema.fk_edges():
                assert order.index(parent) < order.index(child)

    def test_two_table_cycle(self):
        """Test a mutual reference is reported with its tables"""
        schema = _schema(_table("a", ["b"]), _table("b", ["a"]))

        with pytest.raises(CycleError) as error:
            topo_order(schema)
        assert set(error.value.cycle) == {"a", "b"}

    def test_self_reference(self):
        """Test a table referencing itself is a cycle of one"""
        assert find_fk_cycle(_schema(_table("a", ["a"]))) == ["a"]

    def test_acyclic(self, retail_schema):
        """Test no cycle is reported for the retail schema"""
        assert find_fk_cycle(retail_schema) is None


class TestValidateSchema:
    def test_retail_is_valid(self, retail_schema):
        """Test the bundled schema passes validation"""
        assert validate_schema(retail_schema) == []

    def test_no_tables(self):
        """Test an empty schema is invalid"""
        assert validate_schema(DatabaseSchema()) == ["Schema has no tables"]

    def test_duplicate_table(self):
        """Test table names must be unique regardless of case"""
        violations = validate_schema(_schema(_table("a"), _table("A")))
        assert "Duplicate table name A" in violations

    def test_missing_parent(self):
        """Test a foreign key to an absent table is reported"""
        violations = validate_schema(_schema(_table("child", ["ghost"])))
        assert any("references missing table ghost" in v for v in violations)

    def test_reference_must_hit_primary_key(self):
        """Test foreign keys may only reference the parent's primary key"""
        parent = _table("parent").model_copy(update={
            "columns": [ColumnSchema(name="id", data_type="INTEGER"), ColumnSchema(name="code", data_type="INTEGER")]})
        child = TableSchema(name="child", columns=[ColumnSchema(name="id", data_type="INTEGER"),
                                                   ColumnSchema(name="code", data_type="INTEGER")],
                            primary_key=["id"],
                            foreign_keys=[ForeignKey(columns=["code"], ref_table="parent", ref_columns=["code"])])

        violations = validate_schema(_schema(parent, child))

        assert any("must reference the primary key of parent" in v for v in violations)

    def test_incompatible_key_types(self):
        """Test both ends of a foreign key need compatible declared types"""
        child = TableSchema(name="child", columns=[ColumnSchema(name="id", data_type="INTEGER"),
                                                   ColumnSchema(name="parent_id", data_type="TEXT")],
                            primary_key=["id"],
                            foreign_keys=[ForeignKey(columns=["parent_id"], ref_table="parent", ref_columns=["id"])])

        violations = validate_schema(_schema(_table("parent"), child))

        assert any("joins TEXT to INTEGER" in v for v in violations)

    def test_sample_rows(self):
        """Test sample rows are checked against columns, types and nullability"""
        table = _table("a", rows=[{"id": "one"}, {"id": None}, {"id": 3, "extra": 1}])

        violations = validate_schema(_schema(table))

        assert "Sample row 0 of a has 'one' in INTEGER column id" in violations
        assert "Sample row 1 of a lacks a value for id" in violations
        assert "Sample row 2 of a has unknown columns ['extra']" in violations

    def test_unsupported_type(self):
        """Test declared types come from the supported list"""
        table = TableSchema(name="a", columns=[ColumnSchema(name="id", data_type="uuid")], primary_key=["id"])
        assert validate_schema(_schema(table)) == ["Column a.id has unsupported type UUID"]


class TestInitializeDatabase:
    def test_read_back_structure(self, retail_schema, retail_db):
        """Test the file reflects the names, types and keys of the document"""
        assert read_schema(retail_db).structure() == retail_schema.structure()

    def test_sample_rows_inserted(self, retail_db):
        """Test every sample row lands in its table"""
        executor = SqliteExecutor(retail_db, read_only=True)

        assert executor.execute("SELECT COUNT(*) FROM customers").rows == [(6,)]
        assert executor.execute("SELECT COUNT(*) FROM order_items").rows == [(11,)]

    def test_json_values_stored_as_text(self, retail_db):
        """Test nested values are stored as JSON documents"""
        executor = SqliteExecutor(retail_db, read_only=True)
        rows = executor.execute("SELECT json_extract(attributes, '$.color') FROM products WHERE product_id = 10").rows
        assert rows == [("black",)]

    def test_foreign_key_violation(self, tmp_path, retail_schema):
        """Test a dangling reference aborts initialization and leaves no file"""
        orders = retail_schema.table("orders")
        bad_row = {**orders.sample_rows[0], "order_id": 999, "customer_id": 99}
        tables = [table.model_copy(update={"sample_rows": table.sample_rows + [bad_row]})
                  if table.name == "orders" else table for table in retail_schema.tables]
        target = tmp_path / "broken.sqlite"

        with pytest.raises(ConstraintViolation) as error:
            initialize_database(retail_schema.model_copy(update={"tables": tables}), target)

        assert error.value.table == "orders"
        assert "FOREIGN KEY" in error.value.constraint
        assert not target.exists()

    def test_cycle_rejected_before_writing(self, tmp_path):
        """Test a cyclic schema raises before any file is created"""
        target = tmp_path / "cycle.sqlite"
        with pytest.raises(CycleError):
            initialize_database(_schema(_table("a", ["b"]), _table("b", ["a"])), target)
        assert not target.exists()

    def test_read_missing_file(self, tmp_path):
        """Test reading an absent database is an I/O error"""
        with pytest.raises(DatabaseIOError):
            read_schema(tmp_path / "absent.sqlite")

    def test_read_sample_limit(self, retail_db):
        """Test read-back sample rows honour the limit"""
        schema = read_schema(retail_db, sample_rows=2)
        assert all(len(table.sample_rows) == 2 for table in schema.tables)


class TestDatabaseForgeService:
    async def test_generate_from_source_table(self, gateway, source_tables):
        """Test a flat table becomes a valid three-table schema with a content id"""
        forge = DatabaseForgeService(gateway=gateway)

        schema = await forge.generate_database(source_tables[0])

        assert validate_schema(schema) == []
        assert len(schema.tables) == 3
        assert schema.id.startswith("db_")
        assert topo_order(schema) == [table.name for table in schema.tables]

    async def test_generation_is_deterministic(self, gateway, source_tables):
        """Test the same source table yields the same schema id"""
        forge = DatabaseForgeService(gateway=gateway)
        first = await forge.generate_database(source_tables[1])
        second = await forge.generate_database(source_tables[1])
        assert first.id == second.id

    async def test_generated_schema_initializes(self, tmp_path, gateway, source_tables):
        """Test a generated schema can be materialized"""
        schema = await DatabaseForgeService(gateway=gateway).generate_database(source_tables[2])
        path = initialize_database(schema, tmp_path / "generated.sqlite")
        assert read_schema(path).structure() == schema.structure()

    async def test_empty_source_table(self, gateway):
        """Test a table without rows is a precondition failure"""
        forge = DatabaseForgeService(gateway=gateway)
        with pytest.raises(PreconditionError):
            await forge.generate_database(SourceTable(id="empty", header=["a"], rows=[]))

    async def test_rejected_after_attempts(self, scripted_gateway, source_tables):
        """Test invalid schemas are retried and then rejected with every violation"""
        forge = DatabaseForgeService(gateway=scripted_gateway([{"tables": []}] * 3), attempts=3)

        with pytest.raises(SchemaRejected) as error:
            await forge.generate_database(source_tables[0])

        assert error.value.violations == [f"attempt {i}: Schema has no tables" for i in (1, 2, 3)]

    async def test_enhancement_adds_columns(self, gateway, retail_schema):
        """Test enhancement keeps every table and adds a column to each"""
        forge = DatabaseForgeService(gateway=gateway)

        enhanced = await forge.enhance_database(retail_schema)

        for table in retail_schema.tables:
            after = enhanced.table(table.name)
            assert len(after.columns) == len(table.columns) + 1
            assert after.column_names[:len(table.columns)] == table.column_names
        assert len(enhanced.fk_edges()) == len(retail_schema.fk_edges())
        assert enhanced.id != retail_schema.id

    async def test_enhancement_dropping_a_table(self, scripted_gateway, retail_schema):
        """Test an enhancement that loses a table is rejected"""
        shrunk = retail_schema.model_copy(update={"tables": retail_schema.tables[:2]})
        forge = DatabaseForgeService(gateway=scripted_gateway([shrunk.model_dump(mode="json")]))

        with pytest.raises(EnhancementRejected) as error:
            await forge.enhance_database(retail_schema)

        assert "table orders was dropped" in error.value.diff

    async def test_enhancing_invalid_input(self, gateway):
        """Test an invalid input schema is refused"""
        with pytest.raises(PreconditionError):
            await DatabaseForgeService(gateway=gateway).enhance_database(DatabaseSchema())

    def test_diff_of_lost_columns(self, retail_schema):
        """Test the diff names columns that disappeared"""
        customers = retail_schema.table("customers")
        trimmed = customers.model_copy(update={
            "columns": customers.columns[:-1],
            "sample_rows": [{k: v for k, v in row.items() if k != "credit_limit"} for row in customers.sample_rows]})
        enhanced = retail_schema.model_copy(update={
            "tables": [trimmed if t.name == "customers" else t for t in retail_schema.tables]})

        diff = DatabaseForgeService.enhancement_diff(retail_schema, enhanced)

        assert "table customers lost columns ['credit_limit']" in diff


class TestDatabasePool:
    def test_add_and_load(self, retail_pool):
        """Test a pool persists schemas and files that a fresh pool can load"""
        loaded = DatabasePool.load(retail_pool.root)

        assert loaded.ids == ["retail"]
        assert "retail" in loaded
        assert loaded.path("retail").exists()
        assert loaded.schema("retail").structure() == retail_pool.schema("retail").structure()

    def test_adding_twice_is_idempotent(self, retail_pool, retail_schema):
        """Test re-adding a known schema keeps one entry"""
        retail_pool.add(retail_schema)
        assert len(retail_pool) == 1

    def test_unknown_id(self, retail_pool):
        """Test looking up an absent database id fails"""
        with pytest.raises(PreconditionError):
            retail_pool.schema("nowhere")

    def test_sample_is_seeded(self, tmp_path):
        """Test sampling draws the same ids from the same seed"""
        pool = DatabasePool(tmp_path / "pool")
        for name in ("a", "b", "c", "d"):
            pool.add(DatabaseSchema(id=name, tables=[_table(f"{name}_t")]))

        first = pool.sample(2, random.Random(3))
        second = pool.sample(2, random.Random(3))

        assert first == second
        assert len(set(first)) == 2
        assert pool.sample(9, random.Random(3), exclude=["a"]) != []
        assert "a" not in pool.sample(9, random.Random(3), exclude=["a"])

    def test_sample_from_empty_pool(self, tmp_path):
        """Test an empty pool cannot be sampled"""
        with pytest.raises(PreconditionError):
            DatabasePool(tmp_path / "empty").sample(1, random.Random(0))

    def test_load_missing_root(self, tmp_path):
        """Test loading a directory without schemas fails"""
        with pytest.raises(DatabaseIOError):
            DatabasePool.load(tmp_path / "nothing")
