"""Dual-path expansion of seeds across sampled databases.

The SQL-oriented path writes the statement first (the seed SQL is the shape
to follow) and then the question describing it. The question-oriented path
writes a question in the spirit of the seed question first and then its SQL.
Each candidate passes an execution validator and a semantic validator before
it is emitted; semantic failures go to quarantine.
"""

import asyncio
import json
import logging
import random
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ValidationError

from sqlsynth.core.config import settings
from sqlsynth.core.database import SqliteExecutor
from sqlsynth.core.exceptions import ExtractionError, GatewayError, QueryFailed, SynthError
from sqlsynth.schemas.database import DatabaseSchema
from sqlsynth.schemas.gateway import GeneratedQuestion, GeneratedSql, KnowledgeAnswer, SemanticVerdict
from sqlsynth.schemas.records import (
    DatasetRecord,
    ExpansionPath,
    KnowledgeItem,
    KnowledgeKind,
    Provenance,
    QuarantinedRecord,
    SeedRecord,
    stable_id,
)
from sqlsynth.services.db_forge_service import DatabasePool
from sqlsynth.services.seed_service import schema_columns
from sqlsynth.services.taxonomy_service import TaxonomyService


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

EXECUTION = "execution"
SEMANTIC = "semantic"


class PathCounters(BaseModel):
    emitted: int = 0
    skipped: int = 0
    quarantined: int = 0
    duplicates: int = 0


class ExpansionResult(BaseModel):
    records: List[DatasetRecord] = []
    quarantined: List[QuarantinedRecord] = []
    counters: Dict[ExpansionPath, PathCounters] = {}


class _Outcome(BaseModel):
    record: Optional[DatasetRecord] = None
    quarantined: Optional[QuarantinedRecord] = None
    skip_reason: Optional[str] = None


def schema_values(schema: DatabaseSchema) -> Dict[str, Tuple[str, str, str]]:
    """Every stored sample value as text -> (table, column, column description)"""
    values = {}
    for table in schema.tables:
        for column in table.columns:
            for value in table.column_values(column.name):
                if value is None or isinstance(value, (dict, list)):
                    continue
                values.setdefault(str(value), (table.name, column.name, column.description))
    return values


class ExpansionService:
    def __init__(self, gateway, pool: DatabasePool, taxonomy: Optional[TaxonomyService] = None,
                 sample_size: Optional[int] = None, timeout_secs: Optional[float] = None,
                 enable_sql_path: Optional[bool] = None, enable_question_path: Optional[bool] = None,
                 jobs: Optional[int] = None):
        self.gateway = gateway
        self.pool = pool
        self.taxonomy = taxonomy or TaxonomyService(gateway=gateway)
        self.analyzer = self.taxonomy.analyzer
        self.sample_size = sample_size or settings.EXPANSION_SAMPLE_SIZE
        self.timeout_secs = settings.TIMEOUT_SECS if timeout_secs is None else timeout_secs
        self.enable_sql_path = settings.ENABLE_SQL_PATH if enable_sql_path is None else enable_sql_path
        self.enable_question_path = settings.ENABLE_QUESTION_PATH if enable_question_path is None \
            else enable_question_path
        self.jobs = jobs or settings.JOBS

    @property
    def paths(self) -> List[ExpansionPath]:
        paths = []
        if self.enable_sql_path:
            paths.append(ExpansionPath.SQL_ORIENTED)
        if self.enable_question_path:
            paths.append(ExpansionPath.QUESTION_ORIENTED)
        return paths

    def sample_databases(self, seed: SeedRecord, path: ExpansionPath, random_seed: int = 0) -> List[str]:
        """Databases for one seed and path, drawn without replacement from a seeded stream"""
        rng = random.Random(f"{random_seed}:{seed.id}:{path.value}")
        return self.pool.sample(self.sample_size, rng)

    # Paths

    async def expand_sql_oriented(self, seed: SeedRecord, databases: Sequence[str]) -> List[DatasetRecord]:
        outcomes = await self._expand(seed, databases, ExpansionPath.SQL_ORIENTED)
        return [outcome.record for outcome in outcomes if outcome.record]

    async def expand_question_oriented(self, seed: SeedRecord, databases: Sequence[str]) -> List[DatasetRecord]:
        outcomes = await self._expand(seed, databases, ExpansionPath.QUESTION_ORIENTED)
        return [outcome.record for outcome in outcomes if outcome.record]

    async def _expand(self, seed: SeedRecord, databases: Sequence[str], path: ExpansionPath) -> List[_Outcome]:
        outcomes = []
        for position, db_id in enumerate(databases):
            try:
                outcome = await self._expand_one(seed, db_id, position, path)
            except GatewayError as e:
                outcome = _Outcome(skip_reason=f"gateway: {e.message}")
            if outcome.skip_reason:
                logger.info("expansion skip seed=%s db_id=%s path=%s reason=%s",
                            seed.id, db_id, path.value, outcome.skip_reason)
            outcomes.append(outcome)
        return outcomes

    async def _expand_one(self, seed: SeedRecord, db_id: str, position: int, path: ExpansionPath) -> _Outcome:
        schema = self.pool.schema(db_id)
        combination = seed.combination.model_dump_json()
        call_ids = []
        if path == ExpansionPath.SQL_ORIENTED:
            generated, call_id = await self.gateway.generate("sql_generation", {
                "schema": schema.to_prompt(), "combination": combination,
                "reference_sql": seed.sql, "question": ""}, GeneratedSql)
            call_ids.append(call_id)
            sql = generated.sql.strip()
            if not sql:
                return _Outcome(skip_reason="no compatible table for the seed structure")
            asked, call_id = await self.gateway.generate("question_generation", {
                "schema": schema.to_prompt(), "combination": combination,
                "reference_question": seed.question, "sql": sql}, GeneratedQuestion)
            call_ids.append(call_id)
            question = asked.question.strip()
        else:
            asked, call_id = await self.gateway.generate("question_generation", {
                "schema": schema.to_prompt(), "combination": combination,
                "reference_question": seed.question, "sql": ""}, GeneratedQuestion)
            call_ids.append(call_id)
            question = asked.question.strip()
            if not question:
                return _Outcome(skip_reason="model returned no question")
            generated, call_id = await self.gateway.generate("sql_generation", {
                "schema": schema.to_prompt(), "combination": combination,
                "reference_sql": seed.sql, "question": question}, GeneratedSql)
            call_ids.append(call_id)
            sql = generated.sql.strip()
            if not sql:
                return _Outcome(skip_reason="no compatible table for the seed structure")

        provenance = Provenance(seed_id=seed.id, path=path, position=position, call_ids=call_ids)
        record_id = stable_id(seed.id, db_id, path.value)
        try:
            labels = await self.taxonomy.classify_pair(question, sql, schema=schema_columns(schema))
            _, level = self.taxonomy.complexity_of(labels)
        except SynthError as e:
            return _Outcome(skip_reason=f"unclassifiable: {e.message}")

        record = DatasetRecord(id=record_id, db_id=db_id, question=question, sql=sql, labels=labels,
                               complexity=level, provenance=provenance)
        failures = await self.run_validators(record, self.pool.path(db_id), schema)
        if any(reason.startswith(EXECUTION) for reason in failures):
            return _Outcome(skip_reason="; ".join(failures))
        if failures:
            logger.warning("quarantined record id=%s reasons=%s", record.id, failures)
            return _Outcome(quarantined=QuarantinedRecord(**record.model_dump(), reasons=failures))

        knowledge = await self.generate_knowledge(record, schema)
        return _Outcome(record=record.model_copy(update={"knowledge": knowledge}))

    # Validators and knowledge

    async def run_validators(self, record: DatasetRecord, database_path: PathLike,
                             schema: DatabaseSchema) -> List[str]:
        """Failure reasons from the execution and semantic validators; empty means the record passes"""
        reasons = []
        try:
            await asyncio.to_thread(SqliteExecutor(database_path, self.timeout_secs).check, record.sql)
        except QueryFailed as e:
            reasons.append(f"{EXECUTION}: {e.message}")

        bindings = {"schema": schema.to_prompt(), "question": record.question, "sql": record.sql}
        verdict = None
        for attempt in (1, 2):
            try:
                verdict, call_id = await self.gateway.generate("semantic_validation", bindings, SemanticVerdict)
                record.provenance.call_ids.append(call_id)
                break
            except (ExtractionError, GatewayError) as e:
                logger.warning("semantic validator failed record=%s attempt=%d error=%s", record.id, attempt, e)
        if verdict is None:
            reasons.append(f"{SEMANTIC}: no verdict")
        elif not verdict.consistent:
            reasons.append(f"{SEMANTIC}: {verdict.reason or 'inconsistent'}")
        return reasons

    async def generate_knowledge(self, record: DatasetRecord, schema: DatabaseSchema) -> List[KnowledgeItem]:
        """Value mappings for stored codes the SQL relies on and a note for multi-step figures"""
        tree = self.analyzer.parse_sql(record.sql, schema=schema_columns(schema))
        stored = schema_values(schema)
        candidates = []
        for literal in tree.literals:
            if literal.kind == "number" or literal.value not in stored:
                continue
            table, column, description = stored[literal.value]
            candidate = {"value": literal.value, "table": table, "column": column, "description": description}
            if candidate not in candidates:
                candidates.append(candidate)
        calculation = self.analyzer.arithmetic_chain_depth(tree) >= 2
        if not candidates and not calculation:
            return []

        bindings = {
            "schema": schema.to_prompt(),
            "question": record.question,
            "sql": record.sql,
            "values": json.dumps(candidates, ensure_ascii=False),
            "calculation": "true" if calculation else "false",
        }
        try:
            answer, call_id = await self.gateway.generate("knowledge_generation", bindings, KnowledgeAnswer)
        except (GatewayError, ExtractionError) as e:
            logger.warning("knowledge generation failed record=%s error=%s", record.id, e)
            return []
        record.provenance.call_ids.append(call_id)

        items = []
        for raw in answer.knowledge:
            try:
                item = KnowledgeItem.model_validate(raw)
            except ValidationError:
                continue
            if item.kind == KnowledgeKind.VALUE_MAPPING:
                if not item.value or (item.value not in stored and item.value not in record.sql):
                    logger.info("dropping unreferenced value mapping record=%s value=%r", record.id, item.value)
                    continue
            elif not calculation:
                continue
            items.append(item)
        return items

    # Stage

    async def expand_all(self, seeds: Sequence[SeedRecord], random_seed: int = 0) -> ExpansionResult:
        """Both enabled paths over every seed; output order follows seeds, then path, then sample position"""
        limit = asyncio.Semaphore(self.jobs)

        async def one(seed: SeedRecord, path: ExpansionPath) -> List[_Outcome]:
            async with limit:
                return await self._expand(seed, self.sample_databases(seed, path, random_seed), path)

        tasks = [(seed, path) for seed in seeds for path in self.paths]
        batches = await asyncio.gather(*(one(seed, path) for seed, path in tasks))

        result = ExpansionResult(counters={path: PathCounters() for path in self.paths})
        seen = set()
        for (_, path), outcomes in zip(tasks, batches):
            counters = result.counters[path]
            for outcome in outcomes:
                if outcome.quarantined:
                    result.quarantined.append(outcome.quarantined)
                    counters.quarantined += 1
                elif outcome.record:
                    key = (outcome.record.question, outcome.record.sql)
                    if key in seen:
                        counters.duplicates += 1
                        continue
                    seen.add(key)
                    result.records.append(outcome.record)
                    counters.emitted += 1
                else:
                    counters.skipped += 1
        for path, counters in result.counters.items():
            logger.info("expansion path=%s emitted=%d skipped=%d quarantined=%d duplicates=%d", path.value,
                        counters.emitted, counters.skipped, counters.quarantined, counters.duplicates)
        return result
