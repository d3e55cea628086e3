"""Stage runners behind the CLI and the end-to-end pipeline.

Each stage reads its inputs from files, writes its outputs through the
atomic writers in ``record_io`` and returns a ``StageRecord`` for the run
manifest.
"""

import logging
import random
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from sqlsynth.core.config import Settings, settings as default_settings
from sqlsynth.core.exceptions import EnhancementRejected, GatewayError, PreconditionError, SchemaRejected
from sqlsynth.schemas.database import DatabaseSchema, SourceTable
from sqlsynth.schemas.evaluation import CorpusStats, DiversityReport, ExecutionReport, QualityReport
from sqlsynth.schemas.records import DatasetRecord, LabeledRecord, SeedRecord, stable_id
from sqlsynth.schemas.run import RunManifest, StageRecord
from sqlsynth.schemas.taxonomy import Combination, CoverageReport
from sqlsynth.services.db_forge_service import DatabaseForgeService, DatabasePool, initialize_database
from sqlsynth.services.embedding_service import EmbeddingService
from sqlsynth.services.evaluation_service import EvalPair, EvaluationService, quality_report
from sqlsynth.services.expansion_service import ExpansionResult, ExpansionService
from sqlsynth.services.llm_service import LLMService, create_provider
from sqlsynth.services.seed_service import SeedService, label_records, load_pairs
from sqlsynth.services.taxonomy_service import TaxonomyService, load_taxonomy_config
from sqlsynth.utils.record_io import read_json, read_jsonl, write_json, write_jsonl


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CORPUS_SCHEMA = "blueprint_schema.json"
CORPUS_PAIRS = "blueprints.jsonl"
SOURCE_TABLES = "source_tables.jsonl"


class StageContext:
    """Services of one run, built from a settings snapshot"""

    def __init__(self, config: Optional[Settings] = None, out_dir: Optional[PathLike] = None,
                 provider=None):
        self.config = config or default_settings
        self.out_dir = Path(out_dir or self.config.OUTPUT_DIR)
        self.gateway = LLMService(
            provider=provider or create_provider(self.config.PROVIDER, self.config.fixtures_path),
            prompts_dir=self.config.prompts_path,
            call_log=self.out_dir / "calls.jsonl",
            max_attempts=self.config.LLM_MAX_ATTEMPTS,
            backoff_secs=self.config.LLM_BACKOFF_SECS,
        )
        self.taxonomy = TaxonomyService(config=load_taxonomy_config(self.config.taxonomy_config_path),
                                        gateway=self.gateway)

    @property
    def pool_root(self) -> Path:
        return self.out_dir / "pool"

    def forge(self) -> DatabaseForgeService:
        return DatabaseForgeService(self.gateway, attempts=self.config.SCHEMA_ATTEMPTS,
                                    sample_rows=self.config.SAMPLE_ROWS)

    def seeder(self) -> SeedService:
        return SeedService(self.gateway, self.taxonomy, attempts=self.config.SEED_ATTEMPTS,
                           repair_budget=self.config.REPAIR_BUDGET, timeout_secs=self.config.TIMEOUT_SECS,
                           k=self.config.BLUEPRINT_TOP_K)

    def expander(self, pool: DatabasePool) -> ExpansionService:
        return ExpansionService(self.gateway, pool, self.taxonomy, sample_size=self.config.EXPANSION_SAMPLE_SIZE,
                                timeout_secs=self.config.TIMEOUT_SECS,
                                enable_sql_path=self.config.ENABLE_SQL_PATH,
                                enable_question_path=self.config.ENABLE_QUESTION_PATH, jobs=self.config.JOBS)

    def evaluator(self) -> EvaluationService:
        return EvaluationService(self.taxonomy.analyzer, self.gateway, timeout_secs=self.config.TIMEOUT_SECS,
                                 tolerance=self.config.FLOAT_TOLERANCE)

    def embedder(self) -> EmbeddingService:
        return EmbeddingService(self.config.EMBEDDER, self.config.EMBEDDING_DIM, self.config.EMBEDDING_MODEL)


def _stage(inputs: Mapping[str, PathLike], outputs: Mapping[str, PathLike], counters: Mapping[str, int],
           started_at: datetime) -> StageRecord:
    return StageRecord(inputs={k: str(v) for k, v in inputs.items()}, outputs={k: str(v) for k, v in outputs.items()},
                       counters=dict(counters), started_at=started_at, finished_at=datetime.utcnow())


# Taxonomy

def classify_records(context: StageContext, pairs_path: PathLike, out_path: PathLike,
                     schema_path: Optional[PathLike] = None) -> Tuple[List[LabeledRecord], StageRecord]:
    started = datetime.utcnow()
    schemas = None
    if schema_path:
        schema = read_json(schema_path, DatabaseSchema)
        schemas = {schema.id: schema}
    pairs = load_pairs(pairs_path)
    records = label_records(pairs, context.taxonomy, schemas)
    write_jsonl(out_path, records)
    return records, _stage({"pairs": pairs_path}, {"records": out_path},
                           {"pairs": len(pairs), "labeled": len(records), "skipped": len(pairs) - len(records)},
                           started)


def load_labeled(context: StageContext, path: PathLike) -> List[LabeledRecord]:
    """Labeled records from a labeled file, or labels computed on the fly for raw pairs"""
    if Path(path).suffix == ".jsonl":
        raw = read_jsonl(path)
        if raw and all(isinstance(item, dict) and "labels" in item for item in raw):
            return read_jsonl(path, LabeledRecord)
    return label_records(load_pairs(path), context.taxonomy)


def analyze_corpora(context: StageContext, corpora: Mapping[str, PathLike],
                    out_path: Optional[PathLike] = None) -> List[CoverageReport]:
    reports = [context.taxonomy.coverage_report(load_labeled(context, path), name=name)
               for name, path in corpora.items()]
    if out_path:
        write_json(out_path, [report.model_dump(mode="json") for report in reports])
    return reports


def write_combinations(context: StageContext, out_path: PathLike) -> Tuple[List[Combination], StageRecord]:
    started = datetime.utcnow()
    combos = context.taxonomy.enumerate_combinations()
    write_jsonl(out_path, combos)
    logger.info("combinations written count=%d path=%s", len(combos), out_path)
    return combos, _stage({"taxonomy_config": context.config.taxonomy_config_path}, {"combinations": out_path},
                          {"combinations": len(combos)}, started)


# Databases

def load_source_tables(path: PathLike, limit: Optional[int] = None) -> List[SourceTable]:
    tables = read_jsonl(path, SourceTable)
    return tables[:limit] if limit else tables


async def forge_databases(context: StageContext, source_tables_path: PathLike,
                          limit: Optional[int] = None) -> Tuple[DatabasePool, StageRecord]:
    """Generate, enhance and initialize one database per source table"""
    started = datetime.utcnow()
    forge = context.forge()
    pool = DatabasePool(context.pool_root)
    counters = {"source_tables": 0, "generated": 0, "enhanced": 0, "rejected": 0}
    for source in load_source_tables(source_tables_path, limit):
        counters["source_tables"] += 1
        try:
            schema = await forge.generate_database(source)
        except (SchemaRejected, GatewayError) as e:
            counters["rejected"] += 1
            logger.warning("database generation rejected source=%s reason=%s", source.id, e.message)
            continue
        counters["generated"] += 1
        try:
            schema = await forge.enhance_database(schema)
            counters["enhanced"] += 1
        except (EnhancementRejected, GatewayError) as e:
            logger.warning("keeping unenhanced schema db_id=%s reason=%s", schema.id, e.message)
        pool.add(schema)
    if not len(pool):
        raise PreconditionError("No database could be generated", source_tables=str(source_tables_path))
    logger.info("database stage finished databases=%d rejected=%d", len(pool), counters["rejected"])
    return pool, _stage({"source_tables": source_tables_path}, {"pool": context.pool_root},
                        dict(counters, databases=len(pool)), started)


# Seeds

def prepare_corpus(context: StageContext, corpus_path: Optional[PathLike] = None,
                   schema_path: Optional[PathLike] = None) -> Tuple[List[LabeledRecord], Dict]:
    """Labeled blueprint corpus plus the databases its records execute on"""
    data = context.config.data_path
    corpus_path = Path(corpus_path or data / CORPUS_PAIRS)
    schema_path = Path(schema_path or data / CORPUS_SCHEMA)
    schema = read_json(schema_path, DatabaseSchema)
    database = initialize_database(schema, context.out_dir / "corpus" / f"{schema.id}.sqlite")
    records = label_records(load_pairs(corpus_path), context.taxonomy, {schema.id: schema})
    return records, {schema.id: (schema, database)}


async def seed_stage(context: StageContext, combos: Sequence[Combination], pool: DatabasePool,
                     corpus_path: Optional[PathLike] = None,
                     schema_path: Optional[PathLike] = None) -> Tuple[List[SeedRecord], StageRecord]:
    started = datetime.utcnow()
    corpus, corpus_databases = prepare_corpus(context, corpus_path, schema_path)
    seeds, rejected = await context.seeder().seed_combinations(
        combos, corpus, pool, seed=context.config.SEED, corpus_databases=corpus_databases, jobs=context.config.JOBS)
    seeds_path = context.out_dir / "seeds.jsonl"
    rejected_path = context.out_dir / "rejected_combinations.jsonl"
    write_jsonl(seeds_path, seeds)
    write_jsonl(rejected_path, rejected)
    counters = {"combinations": len(combos), "seeds": len(seeds), "rejected": len(rejected)}
    for seed in seeds:
        counters[seed.status.value] = counters.get(seed.status.value, 0) + 1
    return seeds, _stage({"corpus": corpus_path or context.config.data_path / CORPUS_PAIRS},
                         {"seeds": seeds_path, "rejected": rejected_path}, counters, started)


# Expansion

async def expand_stage(context: StageContext, seeds: Sequence[SeedRecord],
                       pool: DatabasePool) -> Tuple[ExpansionResult, StageRecord]:
    started = datetime.utcnow()
    result = await context.expander(pool).expand_all(seeds, random_seed=context.config.SEED)
    dataset_path = context.out_dir / "dataset.jsonl"
    quarantine_path = context.out_dir / "quarantine.jsonl"
    write_jsonl(dataset_path, result.records)
    write_jsonl(quarantine_path, result.quarantined)
    counters = {"seeds": len(seeds), "records": len(result.records), "quarantined": len(result.quarantined)}
    for path, path_counters in result.counters.items():
        for name, value in path_counters.model_dump().items():
            counters[f"{path.value}.{name}"] = value
    return result, _stage({"seeds": context.out_dir / "seeds.jsonl", "pool": context.pool_root},
                          {"dataset": dataset_path, "quarantine": quarantine_path}, counters, started)


# Evaluation

def load_predictions(path: PathLike) -> Dict[str, str]:
    """id -> SQL from a JSON object or a record-per-line file of {id, sql}"""
    path = Path(path)
    document = read_jsonl(path) if path.suffix == ".jsonl" else read_json(path)
    if isinstance(document, dict):
        return {str(key): value for key, value in document.items()}
    try:
        return {str(item["id"]): item["sql"] for item in document}
    except (KeyError, TypeError) as e:
        raise PreconditionError(f"{path}: every prediction needs id and sql fields (missing {e})", path=str(path))


def join_predictions(predictions: Mapping[str, str], gold: Sequence[Mapping]) -> List[EvalPair]:
    malformed = [index for index, record in enumerate(gold, start=1)
                 if not isinstance(record, dict) or not {"id", "db_id", "sql"} <= set(record)]
    if malformed:
        raise PreconditionError(f"Gold record {malformed[0]} needs id, db_id and sql fields", records=malformed)
    missing = [str(record["id"]) for record in gold if str(record["id"]) not in predictions]
    if missing:
        raise PreconditionError(f"Prediction file has no entry for id {missing[0]}", missing=missing)
    return [EvalPair(id=str(record["id"]), db_id=record["db_id"], pred=predictions[str(record["id"])],
                     gold=record["sql"], labels=record.get("labels"), complexity=record.get("complexity"))
            for record in gold]


def evaluate_predictions(context: StageContext, predictions_path: PathLike, gold_path: PathLike,
                         pool: Union[DatabasePool, Mapping[str, Path]],
                         breakdown_by: Optional[str] = None) -> ExecutionReport:
    pairs = join_predictions(load_predictions(predictions_path), read_jsonl(gold_path))
    return context.evaluator().execution_accuracy(pairs, pool, breakdown_by)


async def judge_records(context: StageContext, records: Sequence[DatasetRecord], pool: DatabasePool,
                        sample_size: Optional[int] = None) -> QualityReport:
    """Judge a seeded sample of the records and aggregate the verdicts"""
    records = list(records)
    if sample_size and len(records) > sample_size:
        records = random.Random(f"{context.config.SEED}:quality").sample(records, sample_size)
    evaluator = context.evaluator()
    verdicts = []
    for record in records:
        verdicts.append(await evaluator.quality_judge(record, pool.schema(record.db_id), pool.path(record.db_id)))
    return quality_report(verdicts)


def corpus_report(context: StageContext, records: Sequence[DatasetRecord],
                  by_path: bool = False) -> Tuple[CorpusStats, List[DiversityReport]]:
    evaluator = context.evaluator()
    embedder = context.embedder()
    stats = evaluator.corpus_stats(records)
    groups: Dict[str, List[str]] = {"all": [record.question for record in records]}
    if by_path:
        for record in records:
            provenance = getattr(record, "provenance", None)
            if provenance is not None:
                groups.setdefault(provenance.path.value, []).append(record.question)
    diversity = [evaluator.diversity_report(questions, embedder, context.config.SEMANTIC_THRESHOLD,
                                            context.config.DIVERSITY_SAMPLE_SIZE, context.config.SEED, label)
                 for label, questions in groups.items()]
    return stats, diversity


# Pipeline

def run_id_for(config: Settings) -> str:
    return stable_id("run", config.SEED, config.PROVIDER, config.taxonomy_config_path.name,
                     config.EXPANSION_SAMPLE_SIZE, config.ENABLE_SQL_PATH, config.ENABLE_QUESTION_PATH)


def config_snapshot(config: Settings) -> Dict:
    snapshot = config.model_dump(mode="json")
    snapshot.pop("LLM_KEY", None)
    return snapshot


async def run_pipeline(context: StageContext, source_tables_path: Optional[PathLike] = None,
                       databases: Optional[int] = None) -> RunManifest:
    """Databases, combinations, seeds, expansion and statistics in order"""
    config = context.config
    source_tables_path = Path(source_tables_path or config.data_path / SOURCE_TABLES)
    manifest = RunManifest(run_id=run_id_for(config), seed=config.SEED, config=config_snapshot(config))
    manifest.config["databases"] = databases
    manifest.config["source_tables"] = str(source_tables_path)
    logger.info("pipeline started run_id=%s out=%s", manifest.run_id, context.out_dir)
    if context.gateway.call_log.exists():
        context.gateway.call_log.unlink()

    pool, manifest.stages["dbgen"] = await forge_databases(context, source_tables_path, databases)
    combos, manifest.stages["combos"] = write_combinations(context, context.out_dir / "combinations.jsonl")
    seeds, manifest.stages["seed"] = await seed_stage(context, combos, pool)
    result, manifest.stages["expand"] = await expand_stage(context, seeds, pool)

    started = datetime.utcnow()
    stats_path = context.out_dir / "stats.json"
    if result.records:
        stats, diversity = corpus_report(context, result.records, by_path=True)
        write_json(stats_path, {"stats": stats.model_dump(mode="json"),
                                "diversity": [report.model_dump(mode="json") for report in diversity]})
        manifest.stages["stats"] = _stage({"dataset": context.out_dir / "dataset.jsonl"}, {"stats": stats_path},
                                          {"records": stats.sql_count}, started)
    else:
        logger.warning("pipeline produced no records; skipping statistics")

    manifest.stages["calls"] = StageRecord(outputs={"call_log": str(context.gateway.call_log)},
                                           counters={"calls": len(context.gateway.calls)})
    manifest.finished_at = datetime.utcnow()
    write_json(context.out_dir / "manifest.json", manifest)
    logger.info("pipeline finished run_id=%s records=%d quarantined=%d", manifest.run_id,
                len(result.records), len(result.quarantined))
    return manifest


def replay_settings(manifest_path: PathLike) -> Tuple[Settings, Dict]:
    """Settings and pipeline arguments recorded in a run manifest"""
    manifest = read_json(manifest_path, RunManifest)
    snapshot = dict(manifest.config)
    extras = {"databases": snapshot.pop("databases", None), "source_tables": snapshot.pop("source_tables", None)}
    fields = {name: value for name, value in snapshot.items() if name in Settings.model_fields}
    return Settings(**fields), extras
