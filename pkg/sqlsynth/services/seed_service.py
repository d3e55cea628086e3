"""Seed generation: one verified pair per taxonomy combination.

Covered combinations reuse the first corpus record carrying the exact tuple.
Uncovered ones retrieve the closest corpus records by label-set Jaccard
similarity and ask the model to adapt them to a sampled database. A seed is
kept only when it re-classifies to its combination and executes.
"""

import asyncio
import heapq
import json
import logging
import random
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from sqlsynth.core.config import settings
from sqlsynth.core.database import SqliteExecutor
from sqlsynth.core.exceptions import (
    GatewayError,
    ParseError,
    PreconditionError,
    QueryFailed,
    RepairExhausted,
    SeedRejected,
    SynthError,
    UnsupportedFeature,
    UnsupportedStatement,
)
from sqlsynth.schemas.database import DatabaseSchema
from sqlsynth.schemas.gateway import GeneratedPair, GeneratedSql
from sqlsynth.schemas.records import LabeledRecord, SeedRecord, SeedStatus, stable_id
from sqlsynth.schemas.taxonomy import Combination
from sqlsynth.services.db_forge_service import DatabasePool, read_schema
from sqlsynth.services.taxonomy_service import TaxonomyService
from sqlsynth.utils.record_io import read_json, read_jsonl


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ANALYSIS_ERRORS = (ParseError, UnsupportedFeature, UnsupportedStatement)


def jaccard(a: Iterable, b: Iterable) -> float:
    """|a & b| / |a | b|, with two empty sets counting as identical"""
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def label_set(item) -> FrozenSet[str]:
    """Category names across all four dimensions of a combination, labels or record"""
    labels = getattr(item, "labels", item)
    return labels.label_set()


def match_combinations(records: Sequence[LabeledRecord],
                       combos: Sequence[Combination]) -> Tuple[Dict[str, LabeledRecord], List[Combination]]:
    """Split combos into those fully covered by a corpus record (first in corpus order) and the rest"""
    first: Dict[Tuple, LabeledRecord] = {}
    for record in records:
        if record.complexity is None:
            continue
        key = (record.labels.key(), record.complexity)
        first.setdefault(key, record)

    covered: Dict[str, LabeledRecord] = {}
    uncovered: List[Combination] = []
    for combo in combos:
        record = first.get((combo.labels.key(), combo.complexity_level))
        if record is None:
            uncovered.append(combo)
        else:
            covered[combo.id] = record
    return covered, uncovered


def rank_blueprints(combo: Combination, records: Sequence[LabeledRecord],
                    k: int) -> List[Tuple[LabeledRecord, float]]:
    """Top-k records with their similarity; equal scores keep corpus order"""
    if k < 1:
        raise PreconditionError("k must be >= 1", k=k)
    if not records:
        raise PreconditionError("Blueprint corpus is empty")
    target = label_set(combo)
    scored = ((-jaccard(target, label_set(record)), index, record) for index, record in enumerate(records))
    return [(record, -negated) for negated, _, record in heapq.nsmallest(k, scored, key=lambda s: (s[0], s[1]))]


def retrieve_blueprints(combo: Combination, records: Sequence[LabeledRecord], k: Optional[int] = None) -> List[LabeledRecord]:
    return [record for record, _ in rank_blueprints(combo, records, k or settings.BLUEPRINT_TOP_K)]


def schema_columns(schema: DatabaseSchema) -> Dict[str, List[str]]:
    return {table.name: table.column_names for table in schema.tables}


# Corpus loading

def load_pairs(path: PathLike) -> List[dict]:
    """Raw pairs from a record-per-line file or a Spider-layout JSON array"""
    path = Path(path)
    if path.suffix == ".jsonl":
        items = read_jsonl(path)
        for index, item in enumerate(items, start=1):
            if not isinstance(item, dict) or "question" not in item or "sql" not in item:
                raise PreconditionError(f"{path}: record {index} needs question and sql fields",
                                        path=str(path), record=index)
        return items
    entries = read_json(path)
    if not isinstance(entries, list):
        raise PreconditionError(f"{path}: expected a JSON array of pairs", path=str(path))
    pairs = []
    for index, entry in enumerate(entries):
        try:
            pairs.append({
                "id": entry.get("id") or f"{path.stem}-{index}",
                "db_id": entry.get("db_id", ""),
                "question": entry["question"],
                "sql": entry.get("sql") if isinstance(entry.get("sql"), str) else entry["query"],
            })
        except (AttributeError, KeyError) as e:
            raise PreconditionError(f"{path}: entry {index} is not a question/SQL pair (missing {e})",
                                    path=str(path), entry=index)
    return pairs


def label_records(pairs: Iterable[dict], taxonomy: TaxonomyService,
                  schemas: Optional[Mapping[str, DatabaseSchema]] = None) -> List[LabeledRecord]:
    """Classify raw pairs into labeled records; pairs the analyzer rejects are skipped"""
    records = []
    skipped = 0
    for pair in pairs:
        schema = schemas.get(pair.get("db_id", "")) if schemas else None
        try:
            labels = taxonomy.label_pair(pair["question"], pair["sql"],
                                         schema=schema_columns(schema) if schema else None)
            score, level = taxonomy.complexity_of(labels)
        except SynthError as e:
            skipped += 1
            logger.warning("skipping unclassifiable pair id=%s reason=%s", pair.get("id"), e.message)
            continue
        records.append(LabeledRecord(
            id=str(pair.get("id") or stable_id(pair["question"], pair["sql"])),
            db_id=pair.get("db_id", ""),
            question=pair["question"],
            sql=pair["sql"],
            labels=labels,
            complexity=level,
            complexity_score=score,
        ))
    logger.info("labeled corpus records=%d skipped=%d", len(records), skipped)
    return records


def spider_databases(root: PathLike) -> Dict[str, Tuple[DatabaseSchema, Path]]:
    """Schemas and files of a Spider-layout database directory (database/<db_id>/<db_id>.sqlite)"""
    databases = {}
    for path in sorted(Path(root).glob("*/*.sqlite")):
        if path.stem != path.parent.name:
            continue
        schema = read_schema(path).model_copy(update={"id": path.stem})
        databases[path.stem] = (schema, path)
    return databases


class SeedService:
    def __init__(self, gateway, taxonomy: Optional[TaxonomyService] = None, attempts: Optional[int] = None,
                 repair_budget: Optional[int] = None, timeout_secs: Optional[float] = None,
                 k: Optional[int] = None):
        self.gateway = gateway
        self.taxonomy = taxonomy or TaxonomyService(gateway=gateway)
        self.attempts = attempts or settings.SEED_ATTEMPTS
        self.repair_budget = repair_budget or settings.REPAIR_BUDGET
        self.timeout_secs = settings.TIMEOUT_SECS if timeout_secs is None else timeout_secs
        self.k = k or settings.BLUEPRINT_TOP_K

    # Verification

    async def _execution_error(self, sql: str, database_path: PathLike) -> Optional[str]:
        try:
            await asyncio.to_thread(SqliteExecutor(database_path, self.timeout_secs).check, sql)
        except QueryFailed as e:
            return e.message
        return None

    async def _label_diagnosis(self, question: str, sql: str, combo: Combination,
                               schema: DatabaseSchema) -> Optional[str]:
        labels = await self.taxonomy.classify_pair(question, sql, schema=schema_columns(schema))
        _, level = self.taxonomy.complexity_of(labels)
        if combo.matches(labels, level):
            return None
        return "label mismatch: " + "; ".join(labels.diff(combo.labels) or [f"level {level.value}"])

    async def verify(self, question: str, sql: str, combo: Combination, schema: DatabaseSchema,
                     database_path: PathLike) -> Optional[str]:
        """None when the pair re-classifies to combo and executes, else the diagnosis"""
        try:
            diagnosis = await self._label_diagnosis(question, sql, combo, schema)
        except ANALYSIS_ERRORS as e:
            return f"parse error: {e.message}"
        if diagnosis:
            return diagnosis
        return await self._execution_error(sql, database_path)

    # Generation

    async def generate_seed(self, combo: Combination, blueprints: Sequence[LabeledRecord],
                            schema: DatabaseSchema, database_path: PathLike,
                            sampling_seed: Optional[str] = None) -> SeedRecord:
        """Adapt blueprints to schema until the pair verifies, or raise SeedRejected"""
        if not blueprints:
            raise PreconditionError("generate_seed needs at least one blueprint", combination=combo.id)
        bindings = {
            "schema": schema.to_prompt(),
            "combination": combo.model_dump_json(),
            "blueprints": json.dumps([{"question": b.question, "sql": b.sql} for b in blueprints],
                                     ensure_ascii=False),
            "feedback": "",
        }
        diagnosis = "no attempt made"
        call_ids: List[str] = []
        for attempt in range(1, self.attempts + 1):
            pair, call_id = await self.gateway.generate("seed_modification", bindings, GeneratedPair)
            call_ids.append(call_id)
            record = SeedRecord(
                id=stable_id("seed", combo.id),
                db_id=schema.id,
                question=pair.question,
                sql=pair.sql,
                combination=combo,
                blueprint_ids=[b.id for b in blueprints],
                sampling_seed=sampling_seed,
                call_ids=list(call_ids),
                attempts=attempt,
            )
            if not pair.sql.strip() or not pair.question.strip():
                diagnosis = "model returned an empty question or SQL"
            else:
                try:
                    diagnosis = await self._label_diagnosis(pair.question, pair.sql, combo, schema)
                    failure = None if diagnosis else await self._execution_error(pair.sql, database_path)
                except ANALYSIS_ERRORS as e:
                    diagnosis, failure = None, f"parse error: {e.message}"
                if not diagnosis and not failure:
                    logger.info("seed generated combination=%s db_id=%s attempt=%d", combo.id, schema.id, attempt)
                    return record
                if failure:
                    try:
                        return await self.repair_loop(record, schema, database_path)
                    except RepairExhausted as e:
                        diagnosis = f"repair exhausted: {failure}"
                        logger.warning("seed repair exhausted combination=%s attempts=%d", combo.id, len(e.history))
            logger.warning("seed attempt failed combination=%s attempt=%d diagnosis=%s", combo.id, attempt, diagnosis)
            bindings["feedback"] = diagnosis
        raise SeedRejected(diagnosis, self.attempts)

    async def repair_loop(self, record: SeedRecord, schema: DatabaseSchema, database_path: PathLike,
                          budget: Optional[int] = None) -> SeedRecord:
        """Ask the model to fix a failing seed; a healthy seed comes back untouched"""
        budget = budget or self.repair_budget
        error = await self.verify(record.question, record.sql, record.combination, schema, database_path)
        if error is None:
            return record

        history = []
        sql = record.sql
        call_ids = list(record.call_ids)
        for attempt in range(1, budget + 1):
            bindings = {
                "schema": schema.to_prompt(),
                "combination": record.combination.model_dump_json(),
                "question": record.question,
                "sql": sql,
                "error": error,
            }
            try:
                fixed, call_id = await self.gateway.generate("seed_repair", bindings, GeneratedSql)
            except GatewayError as e:
                history.append({"attempt": attempt, "sql": sql, "error": error, "gateway": e.message})
                continue
            call_ids.append(call_id)
            history.append({"attempt": attempt, "sql": sql, "error": error})
            sql = fixed.sql
            error = await self.verify(record.question, sql, record.combination, schema, database_path)
            if error is None:
                logger.info("seed repaired combination=%s attempts=%d", record.combination.id, attempt)
                return record.model_copy(update={"sql": sql, "status": SeedStatus.REPAIRED, "call_ids": call_ids})
        history.append({"attempt": budget + 1, "sql": sql, "error": error})
        raise RepairExhausted(history)

    # Stage

    async def seed_combinations(self, combos: Sequence[Combination], corpus: Sequence[LabeledRecord],
                                pool: DatabasePool, seed: int = 0,
                                corpus_databases: Optional[Mapping[str, Tuple[DatabaseSchema, Path]]] = None,
                                jobs: Optional[int] = None,
                                databases_per_combo: int = 2) -> Tuple[List[SeedRecord], List[dict]]:
        """Seeds for every combination in input order plus the rejected combinations with reasons"""
        covered, _ = match_combinations(corpus, combos)
        corpus_databases = corpus_databases or {}
        limit = asyncio.Semaphore(jobs or settings.JOBS)

        async def one(combo: Combination):
            async with limit:
                return await self._seed_one(combo, covered.get(combo.id), corpus, pool, seed,
                                            corpus_databases, databases_per_combo)

        outcomes = await asyncio.gather(*(one(combo) for combo in combos))
        seeds = [outcome for outcome in outcomes if isinstance(outcome, SeedRecord)]
        rejected = [outcome for outcome in outcomes if isinstance(outcome, dict)]
        logger.info("seed stage finished combinations=%d seeds=%d reused=%d rejected=%d", len(combos), len(seeds),
                    sum(1 for s in seeds if s.status == SeedStatus.REUSED), len(rejected))
        return seeds, rejected

    async def _seed_one(self, combo, match, corpus, pool, seed, corpus_databases, databases_per_combo):
        if match is not None and match.db_id in corpus_databases:
            schema, path = corpus_databases[match.db_id]
            failure = await self._execution_error(match.sql, path)
            if failure is None:
                return SeedRecord(id=stable_id("seed", combo.id), db_id=match.db_id, question=match.question,
                                  sql=match.sql, combination=combo, blueprint_ids=[match.id],
                                  status=SeedStatus.REUSED)
            logger.warning("corpus match does not execute combination=%s record=%s error=%s",
                           combo.id, match.id, failure)

        sampling_seed = f"{seed}:{combo.id}"
        rng = random.Random(sampling_seed)
        blueprints = retrieve_blueprints(combo, corpus, self.k)
        reasons = []
        for db_id in pool.sample(databases_per_combo, rng):
            try:
                return await self.generate_seed(combo, blueprints, pool.schema(db_id), pool.path(db_id),
                                                sampling_seed=sampling_seed)
            except (SeedRejected, GatewayError) as e:
                reasons.append(f"{db_id}: {e.message}")
        return {"combination": combo.id, "reasons": reasons}
