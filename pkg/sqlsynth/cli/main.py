"""Command-line surface: one subcommand per pipeline stage or report"""

import argparse
import asyncio
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from sqlsynth import __version__
from sqlsynth.core.config import Settings, settings
from sqlsynth.core.exceptions import DatabaseIOError, PreconditionError, SynthError
from sqlsynth.core.logging import configure_logging
from sqlsynth.schemas.records import DatasetRecord, LabeledRecord, SeedRecord
from sqlsynth.schemas.taxonomy import Combination
from sqlsynth.services.db_forge_service import DatabasePool
from sqlsynth.tasks import pipeline_tasks as tasks
from sqlsynth.utils import reporting
from sqlsynth.utils.record_io import read_jsonl, write_json


BREAKDOWN_CHOICES = ("core_intent", "statement_type", "syntax_structures", "key_actions", "complexity")


def _config_from(args: argparse.Namespace, base: Optional[Settings] = None) -> Settings:
    """Settings with global flags applied on top"""
    overrides: Dict[str, Any] = {}
    for flag, field in (("config", "TAXONOMY_CONFIG"), ("prompts_dir", "PROMPTS_DIR"), ("provider", "PROVIDER"),
                        ("seed", "SEED"), ("jobs", "JOBS"), ("timeout_secs", "TIMEOUT_SECS"),
                        ("out", "OUTPUT_DIR"), ("sample_size", "EXPANSION_SAMPLE_SIZE")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = str(value) if isinstance(value, Path) else value
    if getattr(args, "no_sql_path", False):
        overrides["ENABLE_SQL_PATH"] = False
    if getattr(args, "no_question_path", False):
        overrides["ENABLE_QUESTION_PATH"] = False
    config = (base or settings).model_copy(update=overrides)
    if config.JOBS < 1:
        raise PreconditionError("--jobs must be >= 1", jobs=config.JOBS)
    return config


def _emit(args: argparse.Namespace, text: str, document: Any) -> None:
    if args.format == "structured":
        print(json.dumps(document, ensure_ascii=False, indent=2, sort_keys=True, default=str))
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def _load_records(path: Path) -> List:
    """Dataset records when provenance is present, labeled records otherwise"""
    raw = read_jsonl(path)
    dataset = bool(raw) and all(isinstance(item, dict) and "provenance" in item for item in raw)
    return read_jsonl(path, DatasetRecord if dataset else LabeledRecord)


def _pool(args: argparse.Namespace, config: Settings) -> DatabasePool:
    return DatabasePool.load(args.pool or Path(config.OUTPUT_DIR) / "pool")


# Subcommands

def cmd_classify(args, config):
    context = tasks.StageContext(config)
    out = args.output or Path(config.OUTPUT_DIR) / "labeled.jsonl"
    records, stage = tasks.classify_records(context, args.input, out, args.schema)
    _emit(args, f"labeled {len(records)} record(s) -> {out}", stage.model_dump(mode="json"))


def cmd_analyze(args, config):
    corpora = {}
    for item in args.corpora:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        corpora[name] = Path(path)
    context = tasks.StageContext(config)
    reports = tasks.analyze_corpora(context, corpora, Path(config.OUTPUT_DIR) / "coverage.json")
    text = reporting.coverage_table(reports)
    if args.distribution:
        for report in reports:
            text += f"\n{report.name}\n" + reporting.distribution_table(report, args.distribution)
    _emit(args, text, [report.model_dump(mode="json") for report in reports])


def cmd_combos(args, config):
    context = tasks.StageContext(config)
    out = args.output or Path(config.OUTPUT_DIR) / "combinations.jsonl"
    combos, stage = tasks.write_combinations(context, out)
    _emit(args, f"{len(combos)} combination(s) -> {out}", stage.model_dump(mode="json"))


def cmd_dbgen(args, config):
    context = tasks.StageContext(config)
    source = args.source_tables or config.data_path / tasks.SOURCE_TABLES
    pool, stage = asyncio.run(tasks.forge_databases(context, source, args.databases))
    _emit(args, f"{len(pool)} database(s) -> {context.pool_root}", stage.model_dump(mode="json"))


def cmd_seed(args, config):
    context = tasks.StageContext(config)
    combos_path = args.combinations or Path(config.OUTPUT_DIR) / "combinations.jsonl"
    combos = read_jsonl(combos_path, Combination)
    seeds, stage = asyncio.run(tasks.seed_stage(context, combos, _pool(args, config), args.corpus,
                                                args.corpus_schema))
    _emit(args, f"{len(seeds)} seed(s) for {len(combos)} combination(s)", stage.model_dump(mode="json"))


def cmd_expand(args, config):
    context = tasks.StageContext(config)
    seeds = read_jsonl(args.seeds or Path(config.OUTPUT_DIR) / "seeds.jsonl", SeedRecord)
    result, stage = asyncio.run(tasks.expand_stage(context, seeds, _pool(args, config)))
    _emit(args, f"{len(result.records)} record(s), {len(result.quarantined)} quarantined",
          stage.model_dump(mode="json"))


def cmd_evaluate(args, config):
    context = tasks.StageContext(config)
    report = tasks.evaluate_predictions(context, args.predictions, args.gold, _pool(args, config), args.breakdown_by)
    write_json(Path(config.OUTPUT_DIR) / "execution_report.json", report)
    if args.chart:
        reporting.breakdown_chart(report, args.chart)
    _emit(args, reporting.execution_table(report), report.model_dump(mode="json"))


def cmd_quality(args, config):
    context = tasks.StageContext(config)
    records = _load_records(args.records)
    report = asyncio.run(tasks.judge_records(context, records, _pool(args, config), args.judge_sample))
    write_json(Path(config.OUTPUT_DIR) / "quality_report.json", report)
    _emit(args, reporting.quality_table(report), report.model_dump(mode="json"))


def cmd_stats(args, config):
    context = tasks.StageContext(config)
    stats, diversity = tasks.corpus_report(context, _load_records(args.records), by_path=args.by_path)
    document = {"stats": stats.model_dump(mode="json"), "diversity": [d.model_dump(mode="json") for d in diversity]}
    write_json(Path(config.OUTPUT_DIR) / "stats.json", document)
    _emit(args, reporting.stats_table(stats, args.records.stem, diversity), document)


def cmd_pipeline(args, config):
    source, databases = args.source_tables, args.databases
    if args.replay:
        config, extras = tasks.replay_settings(args.replay)
        run_dir = args.replay.resolve().parent
        out = args.out or run_dir.with_name(f"{run_dir.name}-replay")
        config = _config_from(argparse.Namespace(out=out), config)
        source = source or extras["source_tables"]
        databases = databases or extras["databases"]
    context = tasks.StageContext(config)
    manifest = asyncio.run(tasks.run_pipeline(context, source, databases))
    lines = [f"run {manifest.run_id} -> {context.out_dir}"]
    for name, stage in manifest.stages.items():
        counters = " ".join(f"{key}={value}" for key, value in stage.counters.items())
        lines.append(f"  {name}: {counters}")
    _emit(args, "\n".join(lines), manifest.model_dump(mode="json"))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="taxonomy configuration file")
    common.add_argument("--prompts-dir", type=Path)
    common.add_argument("--provider", choices=("mock", "remote"))
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--timeout-secs", type=float)
    common.add_argument("--out", type=Path, help="run directory")
    common.add_argument("--format", choices=("text", "structured"), default="text")
    common.add_argument("--log-level", default="INFO")

    parser = argparse.ArgumentParser(prog="sqlsynth", description="Taxonomy-guided text-to-SQL synthesis toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", parents=[common], help="label text-SQL pairs")
    p.add_argument("input", type=Path)
    p.add_argument("--schema", type=Path, help="schema document used to resolve unqualified columns")
    p.add_argument("--output", type=Path)
    p.set_defaults(handler=cmd_classify)

    p = sub.add_parser("analyze", parents=[common], help="taxonomy coverage of one or more corpora")
    p.add_argument("corpora", nargs="+", help="NAME=PATH or PATH")
    p.add_argument("--distribution", choices=BREAKDOWN_CHOICES[:4])
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("combos", parents=[common], help="enumerate valid combinations")
    p.add_argument("--output", type=Path)
    p.set_defaults(handler=cmd_combos)

    p = sub.add_parser("dbgen", parents=[common], help="generate databases from source tables")
    p.add_argument("--source-tables", type=Path)
    p.add_argument("--databases", type=int)
    p.set_defaults(handler=cmd_dbgen)

    p = sub.add_parser("seed", parents=[common], help="one verified seed per combination")
    p.add_argument("--combinations", type=Path)
    p.add_argument("--corpus", type=Path)
    p.add_argument("--corpus-schema", type=Path)
    p.add_argument("--pool", type=Path)
    p.set_defaults(handler=cmd_seed)

    p = sub.add_parser("expand", parents=[common], help="dual-path expansion of seeds")
    p.add_argument("--seeds", type=Path)
    p.add_argument("--pool", type=Path)
    p.add_argument("--sample-size", type=int)
    p.add_argument("--no-sql-path", action="store_true")
    p.add_argument("--no-question-path", action="store_true")
    p.set_defaults(handler=cmd_expand)

    p = sub.add_parser("evaluate", parents=[common], help="execution accuracy of predictions")
    p.add_argument("predictions", type=Path)
    p.add_argument("gold", type=Path)
    p.add_argument("--pool", type=Path)
    p.add_argument("--breakdown-by", choices=BREAKDOWN_CHOICES)
    p.add_argument("--chart", type=Path, help="write a per-category bar chart (PNG)")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("quality", parents=[common], help="judged quality report")
    p.add_argument("records", type=Path)
    p.add_argument("--pool", type=Path)
    p.add_argument("--sample-size", dest="judge_sample", type=int)
    p.set_defaults(handler=cmd_quality)

    p = sub.add_parser("stats", parents=[common], help="corpus statistics and diversity")
    p.add_argument("records", type=Path)
    p.add_argument("--by-path", action="store_true")
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("pipeline", parents=[common], help="run every stage end to end")
    p.add_argument("--source-tables", type=Path)
    p.add_argument("--databases", type=int)
    p.add_argument("--sample-size", type=int)
    p.add_argument("--no-sql-path", action="store_true")
    p.add_argument("--no-question-path", action="store_true")
    p.add_argument("--replay", type=Path,
                   help="manifest of an earlier run; without --out the replay writes to <run dir>-replay")
    p.set_defaults(handler=cmd_pipeline)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        try:
            config = _config_from(args)
            args.handler(args, config)
        except OSError as e:
            raise DatabaseIOError(f"{e.strerror or e}: {e.filename}" if e.filename else str(e),
                                  path=e.filename)
    except SynthError as e:
        print(json.dumps(e.to_dict(), ensure_ascii=False, indent=2, default=str), file=sys.stderr)
        return 1
    return 0
