import hashlib
import json
from pathlib import Path

import pytest

from sqlsynth.cli.main import main
from sqlsynth.core.database import SqliteExecutor
from sqlsynth.schemas.records import DatasetRecord, ExpansionPath
from sqlsynth.services.db_forge_service import DatabasePool
from sqlsynth.services.evaluation_service import ttr
from sqlsynth.utils.record_io import read_json, read_jsonl, write_json, write_jsonl

from tests.conftest import DATA_DIR, labeled


GOLD = [
    {"id": "g1", "db_id": "retail", "sql": "SELECT COUNT(*) FROM orders",
     "labels": {"core_intent": "Basic aggregation", "statement_type": "Select", "syntax_structures": [],
                "key_actions": ["Aggregate function"]}},
    {"id": "g2", "db_id": "retail", "sql": "SELECT name FROM customers WHERE city = 'Lisbon'",
     "labels": {"core_intent": "Condition filtering", "statement_type": "Select", "syntax_structures": ["Where"],
                "key_actions": []}},
]


@pytest.fixture
def pool_dir(tmp_path, retail_schema) -> Path:
    DatabasePool(tmp_path / "pool").add(retail_schema)
    return tmp_path / "pool"


@pytest.fixture
def gold_file(tmp_path) -> Path:
    path = tmp_path / "gold.jsonl"
    write_jsonl(path, GOLD)
    return path


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dataset(path: Path) -> str:
    return path.read_text(encoding="utf-8")


class TestTaxonomyCommands:
    def test_combos(self, tmp_path, capsys):
        """Test the shipped configuration enumerates its valid combinations"""
        assert main(["combos", "--out", str(tmp_path)]) == 0

        assert len(read_jsonl(tmp_path / "combinations.jsonl")) == 127
        assert "127 combination(s)" in capsys.readouterr().out

    def test_combos_structured(self, tmp_path, capsys):
        """Test structured output is the stage record"""
        assert main(["combos", "--out", str(tmp_path), "--format", "structured"]) == 0

        stage = json.loads(capsys.readouterr().out)
        assert stage["counters"] == {"combinations": 127}

    def test_classify(self, tmp_path, capsys):
        """Test the blueprint corpus is labeled into the run directory"""
        code = main(["classify", str(DATA_DIR / "blueprints.jsonl"), "--schema",
                     str(DATA_DIR / "blueprint_schema.json"), "--out", str(tmp_path)])

        assert code == 0
        records = read_jsonl(tmp_path / "labeled.jsonl")
        assert len(records) == 60
        assert records[0]["id"] == "bp-001"
        assert "labeled 60 record(s)" in capsys.readouterr().out

    def test_analyze(self, tmp_path, capsys):
        """Test coverage is reported per named corpus"""
        code = main(["analyze", f"blueprints={DATA_DIR / 'blueprints.jsonl'}", "--distribution", "core_intent",
                     "--out", str(tmp_path)])

        assert code == 0
        reports = read_json(tmp_path / "coverage.json")
        assert [report["name"] for report in reports] == ["blueprints"]
        out = capsys.readouterr().out
        assert "blueprints" in out
        assert "Condition filtering" in out

    def test_jobs_must_be_positive(self, tmp_path, capsys):
        """Test a non-positive worker count is a usage error"""
        assert main(["combos", "--jobs", "0", "--out", str(tmp_path)]) == 1
        assert "--jobs must be >= 1" in capsys.readouterr().err


class TestEvaluateCommand:
    def test_execution_report(self, tmp_path, pool_dir, gold_file, capsys):
        """Test predictions are scored against the pool and the report is written"""
        predictions = tmp_path / "pred.json"
        write_json(predictions, {"g1": "SELECT COUNT(order_id) FROM orders", "g2": "SELECT name FROM customers"})

        code = main(["evaluate", str(predictions), str(gold_file), "--pool", str(pool_dir),
                     "--breakdown-by", "core_intent", "--out", str(tmp_path)])

        assert code == 0
        report = read_json(tmp_path / "execution_report.json")
        assert report["accuracy"] == 0.5
        assert report["breakdown"]["Basic aggregation"]["matched"] == 1
        assert report["breakdown"]["Condition filtering"]["matched"] == 0
        assert "0.5000" in capsys.readouterr().out

    def test_predictions_as_lines(self, tmp_path, pool_dir, gold_file):
        """Test a record-per-line prediction file is accepted"""
        predictions = tmp_path / "pred.jsonl"
        write_jsonl(predictions, [{"id": "g1", "sql": "SELECT 8"}, {"id": "g2", "sql": GOLD[1]["sql"]}])

        assert main(["evaluate", str(predictions), str(gold_file), "--pool", str(pool_dir),
                     "--out", str(tmp_path)]) == 0
        assert read_json(tmp_path / "execution_report.json")["matched"] == 2

    def test_missing_prediction(self, tmp_path, pool_dir, gold_file, capsys):
        """Test a gold record without a prediction is reported with its id"""
        predictions = tmp_path / "pred.json"
        write_json(predictions, {"g1": "SELECT 8"})

        code = main(["evaluate", str(predictions), str(gold_file), "--pool", str(pool_dir), "--out", str(tmp_path)])

        assert code == 1
        err = capsys.readouterr().err
        assert '"error": "PreconditionError"' in err
        assert "Prediction file has no entry for id g2" in err

    def test_missing_pool(self, tmp_path, gold_file):
        """Test a pool directory without schemas is an IO error"""
        predictions = tmp_path / "pred.json"
        write_json(predictions, {"g1": "SELECT 8", "g2": "SELECT 1"})

        assert main(["evaluate", str(predictions), str(gold_file), "--pool", str(tmp_path / "nothing"),
                     "--out", str(tmp_path)]) == 1


class TestReportCommands:
    @pytest.fixture
    def records_file(self, tmp_path, filtering_combo) -> Path:
        path = tmp_path / "records.jsonl"
        write_jsonl(path, [
            labeled("r1", filtering_combo.labels, question="Which customers live in Lisbon?",
                    sql="SELECT name FROM customers WHERE city = 'Lisbon'"),
            labeled("r2", filtering_combo.labels, question="Which orders are pending?",
                    sql="SELECT order_id FROM orders WHERE status = 'P'"),
        ])
        return path

    def test_stats(self, tmp_path, records_file, capsys):
        """Test statistics and diversity are written for a record file"""
        assert main(["stats", str(records_file), "--out", str(tmp_path)]) == 0

        document = read_json(tmp_path / "stats.json")
        assert document["stats"]["sql_count"] == 2
        assert document["stats"]["tables_per_sql"] == 1.0
        assert [report["label"] for report in document["diversity"]] == ["all"]
        assert "records" in capsys.readouterr().out

    def test_quality(self, tmp_path, records_file, pool_dir):
        """Test the offline judge scores every criterion"""
        assert main(["quality", str(records_file), "--pool", str(pool_dir), "--out", str(tmp_path)]) == 0

        report = read_json(tmp_path / "quality_report.json")
        assert report["sample_size"] == 2
        assert len(report["scores"]) == 10
        assert set(report["aspects"]) == {"Question", "SQL", "Result"}

    def test_unwritable_output(self, tmp_path, records_file, capsys):
        """Test an output directory that is a regular file becomes a structured IO error"""
        blocker = tmp_path / "occupied"
        blocker.write_text("", encoding="utf-8")

        assert main(["stats", str(records_file), "--out", str(blocker)]) == 1
        assert '"error": "DatabaseIOError"' in capsys.readouterr().err


class TestInputErrors:
    def test_missing_input_file(self, tmp_path, capsys):
        """Test a missing pair file exits nonzero with an IO error block naming the file"""
        code = main(["classify", str(tmp_path / "missing.json"), "--out", str(tmp_path)])

        assert code == 1
        err = capsys.readouterr().err
        assert '"error": "DatabaseIOError"' in err
        assert "missing.json" in err

    def test_malformed_record(self, tmp_path, capsys):
        """Test a record missing required fields is reported with its line"""
        records = tmp_path / "records.jsonl"
        records.write_text('{"question": "x"}\n', encoding="utf-8")

        assert main(["stats", str(records), "--out", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert '"error": "PreconditionError"' in err
        assert "records.jsonl:1: invalid record" in err

    def test_pair_without_sql(self, tmp_path, capsys):
        """Test a pair file entry without SQL is a precondition error"""
        pairs = tmp_path / "pairs.jsonl"
        write_jsonl(pairs, [{"id": "p1", "question": "How many orders?"}])

        assert main(["classify", str(pairs), "--out", str(tmp_path)]) == 1
        assert "record 1 needs question and sql fields" in capsys.readouterr().err

    def test_invalid_json_predictions(self, tmp_path, pool_dir, gold_file, capsys):
        """Test a prediction file that is not JSON is a precondition error"""
        predictions = tmp_path / "pred.json"
        predictions.write_text("{not json", encoding="utf-8")

        code = main(["evaluate", str(predictions), str(gold_file), "--pool", str(pool_dir), "--out", str(tmp_path)])

        assert code == 1
        err = capsys.readouterr().err
        assert '"error": "PreconditionError"' in err
        assert "invalid document" in err


@pytest.mark.slow
class TestPipelineCommand:
    ARGS = ["pipeline", "--databases", "2", "--sample-size", "1", "--jobs", "2"]

    def test_end_to_end(self, tmp_path):
        """Test a full offline run writes every stage output"""
        out = tmp_path / "run"
        assert main(self.ARGS + ["--out", str(out)]) == 0

        manifest = read_json(out / "manifest.json")
        assert list(manifest["stages"]) == ["dbgen", "combos", "seed", "expand", "stats", "calls"]
        assert manifest["stages"]["dbgen"]["counters"]["databases"] == 2
        records = read_jsonl(out / "dataset.jsonl", DatasetRecord)
        assert records
        assert {record.provenance.path for record in records} <= set(ExpansionPath)
        assert (out / "calls.jsonl").exists()

        pool = DatabasePool.load(out / "pool")
        for record in records:
            SqliteExecutor(pool.path(record.db_id)).check(record.sql)

    def test_same_seed_same_dataset(self, tmp_path):
        """Test two runs with one seed write identical seeds and records"""
        for name in ("a", "b"):
            assert main(self.ARGS + ["--seed", "7", "--out", str(tmp_path / name)]) == 0

        for output in ("seeds.jsonl", "dataset.jsonl", "quarantine.jsonl"):
            assert _dataset(tmp_path / "a" / output) == _dataset(tmp_path / "b" / output)

    def test_replay(self, tmp_path):
        """Test replaying a manifest reproduces the run in a new directory"""
        assert main(self.ARGS + ["--seed", "3", "--out", str(tmp_path / "first")]) == 0

        code = main(["pipeline", "--replay", str(tmp_path / "first" / "manifest.json"),
                     "--out", str(tmp_path / "again")])

        assert code == 0
        assert _dataset(tmp_path / "first" / "dataset.jsonl") == _dataset(tmp_path / "again" / "dataset.jsonl")

    def test_replay_without_out_keeps_original(self, tmp_path):
        """Test a replay without --out writes next to the original run instead of over it"""
        first = tmp_path / "first"
        assert main(self.ARGS + ["--seed", "3", "--out", str(first)]) == 0
        manifest = _dataset(first / "manifest.json")

        assert main(["pipeline", "--replay", str(first / "manifest.json")]) == 0

        assert _dataset(first / "manifest.json") == manifest
        assert _dataset(tmp_path / "first-replay" / "dataset.jsonl") == _dataset(first / "dataset.jsonl")

    def test_question_path_ablation(self, tmp_path):
        """Test disabling the question-oriented path leaves only SQL-oriented records"""
        out = tmp_path / "ablation"
        assert main(self.ARGS + ["--no-question-path", "--out", str(out)]) == 0

        records = read_jsonl(out / "dataset.jsonl", DatasetRecord)
        assert all(record.provenance.path == ExpansionPath.SQL_ORIENTED for record in records)
        assert read_json(out / "manifest.json")["config"]["ENABLE_QUESTION_PATH"] is False


@pytest.mark.slow
class TestPipelineAtScale:
    ARGS = ["pipeline", "--databases", "20", "--seed", "7"]

    @pytest.fixture(scope="class")
    def full_run(self, tmp_path_factory) -> Path:
        out = tmp_path_factory.mktemp("scale") / "full"
        assert main(self.ARGS + ["--out", str(out)]) == 0
        return out

    def test_same_seed_same_dataset(self, full_run, tmp_path):
        """Test a second run with the same seed writes a byte-identical dataset of at least 200 records"""
        again = tmp_path / "again"
        assert main(self.ARGS + ["--out", str(again)]) == 0

        assert len(read_jsonl(full_run / "dataset.jsonl")) >= 200
        assert _digest(full_run / "dataset.jsonl") == _digest(again / "dataset.jsonl")

    def test_question_path_lowers_ttr(self, full_run, tmp_path):
        """Test dropping the question-oriented path lowers the lexical diversity of the corpus"""
        ablated = tmp_path / "ablated"
        assert main(self.ARGS + ["--no-question-path", "--out", str(ablated)]) == 0

        full = [record.question for record in read_jsonl(full_run / "dataset.jsonl", DatasetRecord)]
        sql_only = [record.question for record in read_jsonl(ablated / "dataset.jsonl", DatasetRecord)]
        assert ttr(sql_only) < ttr(full)
