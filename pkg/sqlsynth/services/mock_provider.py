"""Offline provider for tests and desk runs.

A response is looked up first in a fixtures directory, addressed by template
name and prompt hash. Without a fixture, a rule-based synthesizer for the
template answers from the structured bindings, so the same request always
produces the same text.
"""

import difflib
import hashlib
import json
import logging
import re
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

from sqlsynth.schemas.database import ColumnSchema, DatabaseSchema, ForeignKey, SourceTable, TableSchema
from sqlsynth.schemas.evaluation import QualityCriterion, QualityLevel
from sqlsynth.schemas.gateway import PromptRequest
from sqlsynth.schemas.sql import SqlFeatureSummary
from sqlsynth.schemas.taxonomy import Combination, TaxonomyConfig
from sqlsynth.utils.sql_composer import SqlComposer, compose_question, stable_choice


logger = logging.getLogger(__name__)

MISMATCH_MARKER = "[[MISMATCH]]"

RESERVED_WORDS = {
    "all", "alter", "and", "as", "asc", "begin", "between", "by", "case", "cast", "check", "collate", "column",
    "commit", "constraint", "create", "cross", "current", "date", "day", "default", "delete", "desc", "distinct",
    "drop", "else", "end", "escape", "except", "exists", "filter", "foreign", "from", "full", "glob", "group",
    "having", "in", "index", "inner", "insert", "intersect", "into", "is", "join", "key", "left", "like",
    "limit", "match", "month", "natural", "no", "not", "null", "offset", "on", "or", "order", "outer", "over",
    "partition", "primary", "range", "rank", "references", "regexp", "replace", "right", "rows", "select",
    "set", "table", "then", "time", "to", "transaction", "trigger", "union", "unique", "update", "using",
    "values", "view", "when", "where", "window", "with", "year",
}

STATUSES = ("open", "closed", "pending")
CHANNELS = ("web", "store", "phone")


def sanitize_identifier(name: str, taken: Optional[set] = None) -> str:
    """Lowercase snake_case identifier that is safe to use unquoted"""
    cleaned = re.sub(r"[^0-9a-zA-Z]+", "_", name or "").strip("_").lower() or "column"
    if cleaned[0].isdigit():
        cleaned = f"c_{cleaned}"
    if cleaned in RESERVED_WORDS:
        cleaned = f"{cleaned}_value"
    if taken is not None:
        base, suffix = cleaned, 2
        while cleaned in taken:
            cleaned = f"{base}_{suffix}"
            suffix += 1
        taken.add(cleaned)
    return cleaned


def _slug(title: str) -> str:
    words = re.findall(r"[a-zA-Z]+", title.lower())[:3]
    return "_".join(words) or "source"


def _real(value: Any) -> Optional[float]:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return float(str(value).replace(",", ""))
    except ValueError:
        return None


def _dump(payload: Any) -> str:
    return json.dumps(payload, ensure_ascii=False, sort_keys=True, default=str)


class MockProvider:
    name = "mock"

    def __init__(self, fixtures_dir: Union[str, Path, None] = None):
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir else None
        self._taxonomy = None
        self.synthesizers: Dict[str, Callable[[Dict[str, Any]], Any]] = {
            "database_generation": self.database_generation,
            "database_enhancement": self.database_enhancement,
            "seed_modification": self.seed_modification,
            "seed_repair": self.seed_repair,
            "sql_generation": self.sql_generation,
            "question_generation": self.question_generation,
            "knowledge_generation": self.knowledge_generation,
            "intent_classification": self.intent_classification,
            "semantic_validation": self.semantic_validation,
            "quality_judge": self.quality_judge,
        }

    async def complete(self, request: PromptRequest) -> str:
        fixture = self._fixture(request)
        if fixture is not None:
            return fixture
        synthesizer = self.synthesizers.get(request.template)
        if synthesizer is None:
            return "{}"
        return _dump(synthesizer(request.bindings))

    def _fixture(self, request: PromptRequest) -> Optional[str]:
        if self.fixtures_dir is None:
            return None
        digest = hashlib.sha256(request.prompt.encode("utf-8")).hexdigest()[:16]
        for suffix in (".json", ".txt"):
            path = self.fixtures_dir / request.template / f"{digest}{suffix}"
            if path.exists():
                logger.debug("mock fixture hit template=%s digest=%s", request.template, digest)
                return path.read_text(encoding="utf-8")
        return None

    @property
    def taxonomy(self):
        if self._taxonomy is None:
            from sqlsynth.services.taxonomy_service import TaxonomyService

            self._taxonomy = TaxonomyService(config=TaxonomyConfig())
        return self._taxonomy

    # Database forge

    def database_generation(self, bindings: Dict[str, Any]) -> Dict[str, Any]:
        source = SourceTable.model_validate_json(bindings["source_table"])
        limit = int(bindings.get("sample_rows") or 5)
        slug = _slug(source.title)
        rows = source.rows[:limit]

        taken = {"record_id", "group_id"}
        source_columns = []
        for index, header in enumerate(source.header):
            kind = (source.types[index] if index < len(source.types) else "text").lower()
            source_columns.append((index, sanitize_identifier(header, taken), "REAL" if kind == "real" else "TEXT"))

        text_index = next((index for index, _, data_type in source_columns if data_type == "TEXT"), None)
        group_names: List[str] = []
        for row in rows:
            name = str(row[text_index]) if text_index is not None and text_index < len(row) else "default"
            if name not in group_names:
                group_names.append(name)
        group_names = group_names[:3] or ["default"]

        groups = TableSchema(
            name=f"{slug}_groups",
            description=f"Groups of {source.title}",
            columns=[
                ColumnSchema(name="group_id", data_type="INTEGER", nullable=False, description="Group key"),
                ColumnSchema(name="name", data_type="TEXT", description="Group name"),
                ColumnSchema(name="description", data_type="TEXT", description="Free-text description"),
            ],
            primary_key=["group_id"],
            sample_rows=[{"group_id": i, "name": name, "description": f"Entries under {name}"}
                         for i, name in enumerate(group_names, start=1)],
        )

        record_rows = []
        for position, row in enumerate(rows, start=1):
            record = {"record_id": position, "group_id": (position - 1) % len(group_names) + 1}
            for index, column, data_type in source_columns:
                value = row[index] if index < len(row) else None
                record[column] = _real(value) if data_type == "REAL" else (None if value is None else str(value))
            record_rows.append(record)
        records = TableSchema(
            name=f"{slug}_records",
            description=f"Rows of {source.title}",
            columns=[ColumnSchema(name="record_id", data_type="INTEGER", nullable=False, description="Record key"),
                     ColumnSchema(name="group_id", data_type="INTEGER", description="Owning group")]
            + [ColumnSchema(name=column, data_type=data_type, description=source.header[index])
               for index, column, data_type in source_columns],
            primary_key=["record_id"],
            foreign_keys=[ForeignKey(columns=["group_id"], ref_table=groups.name, ref_columns=["group_id"])],
            sample_rows=record_rows,
        )

        event_rows = []
        for position, record in enumerate(record_rows, start=1):
            status = STATUSES[position % len(STATUSES)]
            event_rows.append({
                "event_id": position,
                "record_id": record["record_id"],
                "event_date": f"{2020 + position % 4}-{1 + position % 9:02d}-{10 + position % 18:02d}",
                "amount": round(12.5 * position, 2),
                "status": status,
                "payload": _dump({"status": status, "channel": CHANNELS[position % len(CHANNELS)]}),
            })
        events = TableSchema(
            name=f"{slug}_events",
            description=f"Activity recorded against {source.title}",
            columns=[
                ColumnSchema(name="event_id", data_type="INTEGER", nullable=False, description="Event key"),
                ColumnSchema(name="record_id", data_type="INTEGER", nullable=False, description="Affected record"),
                ColumnSchema(name="event_date", data_type="DATE", description="Day of the event"),
                ColumnSchema(name="amount", data_type="REAL", description="Amount involved"),
                ColumnSchema(name="status", data_type="TEXT", description="Event status"),
                ColumnSchema(name="payload", data_type="TEXT", description="JSON details"),
            ],
            primary_key=["event_id"],
            foreign_keys=[ForeignKey(columns=["record_id"], ref_table=records.name, ref_columns=["record_id"])],
            sample_rows=event_rows,
        )
        schema = DatabaseSchema(scenario=f"Operations around {source.title}", tables=[groups, records, events])
        return schema.model_dump(mode="json")

    def database_enhancement(self, bindings: Dict[str, Any]) -> Dict[str, Any]:
        schema = DatabaseSchema.model_validate_json(bindings["schema"])
        tables = []
        for table in schema.tables:
            name = sanitize_identifier("remark", set(table.column_names))
            column = ColumnSchema(name=name, data_type="TEXT", description=f"Reviewer remark on {table.name}")
            rows = [{**row, name: f"checked {index}"} for index, row in enumerate(table.sample_rows, start=1)]
            tables.append(table.model_copy(update={"columns": table.columns + [column], "sample_rows": rows}))
        return schema.model_copy(update={"tables": tables}).model_dump(mode="json")

    # Seeding and expansion

    @staticmethod
    def _compose(bindings: Dict[str, Any], variant: object = 0):
        schema = DatabaseSchema.model_validate_json(bindings["schema"])
        combination = Combination.model_validate_json(bindings["combination"])
        return SqlComposer(schema, combination.labels, variant).compose(), combination.labels

    def seed_modification(self, bindings: Dict[str, Any]) -> Dict[str, Any]:
        query, labels = self._compose(bindings, bindings.get("feedback") or 0)
        if not query.sql:
            return {"question": "", "sql": ""}
        question = compose_question(labels, query, varied=True, key=bindings.get("feedback", ""))
        return {"question": question, "sql": query.sql}

    def seed_repair(self, bindings: Dict[str, Any]) -> Dict[str, Any]:
        schema = DatabaseSchema.model_validate_json(bindings["schema"])
        sql, error = bindings["sql"], bindings.get("error", "")
        missing = re.search(r"no such (column|table): ([\w.]+)", error)
        if missing:
            kind, name = missing.groups()
            bare = name.split(".")[-1]
            names = schema.table_names if kind == "table" else sorted(
                {column for table in schema.tables for column in table.column_names})
            closest = difflib.get_close_matches(bare, names, n=1, cutoff=0.0)
            if closest:
                return {"sql": re.sub(rf"\b{re.escape(bare)}\b", closest[0], sql)}
        query, _ = self._compose(bindings, error)
        return {"sql": query.sql}

    def sql_generation(self, bindings: Dict[str, Any]) -> Dict[str, Any]:
        query, _ = self._compose(bindings)
        return {"sql": query.sql}

    def question_generation(self, bindings: Dict[str, Any]) -> Dict[str, Any]:
        query, labels = self._compose(bindings)
        if bindings.get("sql"):
            # Describing a given statement: one fixed phrasing per intent
            return {"question": compose_question(labels, query, varied=False)}
        return {"question": compose_question(labels, query, varied=True, key=bindings.get("reference_question", ""))}

    def knowledge_generation(self, bindings: Dict[str, Any]) -> Dict[str, Any]:
        items = []
        for candidate in json.loads(bindings.get("values") or "[]"):
            meaning = candidate.get("description") or candidate.get("column") or "the stored code"
            items.append({
                "kind": "value_mapping",
                "text": f"'{candidate['value']}' in {candidate.get('table', '')}.{candidate.get('column', '')} "
                        f"stands for {meaning}.",
                "value": candidate["value"],
            })
        if str(bindings.get("calculation")).lower() == "true":
            items.append({"kind": "numeric_calculation",
                          "text": "The figure combines several stored values in one arithmetic expression."})
        return {"knowledge": items}

    # Classification and judging

    def intent_classification(self, bindings: Dict[str, Any]) -> Dict[str, Any]:
        summary = SqlFeatureSummary.model_validate_json(bindings["features"])
        return {"intent": self.taxonomy.heuristic_intent(bindings["question"], summary).value}

    def semantic_validation(self, bindings: Dict[str, Any]) -> Dict[str, Any]:
        flagged = MISMATCH_MARKER in bindings.get("question", "") or MISMATCH_MARKER in bindings.get("sql", "")
        if flagged:
            return {"consistent": False, "reason": "question and SQL describe different requests"}
        return {"consistent": True, "reason": ""}

    def quality_judge(self, bindings: Dict[str, Any]) -> Dict[str, Any]:
        criteria = bindings.get("criteria") or [criterion.value for criterion in QualityCriterion]
        if isinstance(criteria, str):
            criteria = json.loads(criteria)
        levels = [QualityLevel.EXCELLENT] * 6 + [QualityLevel.GOOD] * 3 + [QualityLevel.AVERAGE]
        verdicts = []
        for criterion in criteria:
            level = stable_choice(levels, criterion, bindings.get("question", ""), bindings.get("sql", ""))
            verdicts.append({"criterion": criterion, "level": level.value,
                             "explanation": f"{criterion} rated {level.value.lower()} for this pair."})
        return {"verdicts": verdicts}
