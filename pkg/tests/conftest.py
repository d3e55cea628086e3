import json
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import pytest

from sqlsynth.core.config import settings
from sqlsynth.schemas.database import DatabaseSchema, SourceTable
from sqlsynth.schemas.gateway import PromptRequest
from sqlsynth.schemas.records import LabeledRecord
from sqlsynth.schemas.taxonomy import (
    Combination,
    ComplexityLevel,
    CoreIntent,
    StatementType,
    SyntaxStructure,
    TaxonomyConfig,
    TaxonomyLabels,
)
from sqlsynth.services.db_forge_service import DatabasePool, initialize_database
from sqlsynth.services.llm_service import LLMService
from sqlsynth.services.mock_provider import MockProvider
from sqlsynth.services.sql_analysis_service import SqlAnalysisService
from sqlsynth.services.taxonomy_service import TaxonomyService
from sqlsynth.utils.record_io import read_json, read_jsonl


DATA_DIR = settings.data_path


class ScriptedProvider:
    """Replays canned responses in order; Exception items are raised instead of returned"""

    name = "scripted"

    def __init__(self, responses: Sequence[Union[str, dict, Exception]]):
        self.responses = list(responses)
        self.requests: List[PromptRequest] = []

    async def complete(self, request: PromptRequest) -> str:
        self.requests.append(request)
        if not self.responses:
            raise AssertionError(f"No scripted response left for {request.template}")
        response = self.responses.pop(0)
        if isinstance(response, Exception):
            raise response
        if isinstance(response, dict):
            return json.dumps(response)
        return response


class TableEmbedder:
    """Looks vectors up by text; unknown texts get the fallback vector"""

    def __init__(self, vectors: Dict[str, Sequence[float]], fallback: Sequence[float] = None):
        self.vectors = {text: np.asarray(vector, dtype=float) for text, vector in vectors.items()}
        self.fallback = None if fallback is None else np.asarray(fallback, dtype=float)

    def generate_embeddings(self, texts: List[str]) -> np.ndarray:
        return np.vstack([self.vectors.get(text, self.fallback) for text in texts])


@pytest.fixture(scope="session")
def analyzer() -> SqlAnalysisService:
    return SqlAnalysisService()


@pytest.fixture
def taxonomy(analyzer) -> TaxonomyService:
    """Taxonomy over the full category lists with the default weights"""
    return TaxonomyService(config=TaxonomyConfig(), analyzer=analyzer)


@pytest.fixture
def retail_schema() -> DatabaseSchema:
    return read_json(DATA_DIR / "blueprint_schema.json", DatabaseSchema)


@pytest.fixture
def retail_db(tmp_path, retail_schema) -> Path:
    return initialize_database(retail_schema, tmp_path / "retail.sqlite")


@pytest.fixture
def retail_pool(tmp_path, retail_schema) -> DatabasePool:
    pool = DatabasePool(tmp_path / "pool")
    pool.add(retail_schema)
    return pool


@pytest.fixture
def blueprint_pairs() -> List[dict]:
    return read_jsonl(DATA_DIR / "blueprints.jsonl")


@pytest.fixture
def source_tables() -> List[SourceTable]:
    return read_jsonl(DATA_DIR / "source_tables.jsonl", SourceTable)


@pytest.fixture
def gateway(tmp_path) -> LLMService:
    """Gateway over the offline provider with a call log in the test directory"""
    return LLMService(MockProvider(), call_log=tmp_path / "calls.jsonl", backoff_secs=0)


@pytest.fixture
def scripted_gateway(tmp_path):
    def make(responses, max_attempts: int = 3) -> LLMService:
        return LLMService(ScriptedProvider(responses), max_attempts=max_attempts, backoff_secs=0,
                          call_log=tmp_path / "scripted_calls.jsonl")

    return make


@pytest.fixture
def filtering_combo() -> Combination:
    """Condition filtering over a plain WHERE; scores 3 (simple)"""
    labels = TaxonomyLabels(core_intent=CoreIntent.CONDITION_FILTERING, statement_type=StatementType.SELECT,
                            syntax_structures=frozenset({SyntaxStructure.WHERE}))
    return Combination(labels=labels, complexity_level=ComplexityLevel.SIMPLE, complexity_score=3)


def labeled(record_id: str, labels: TaxonomyLabels, question: str = "q", sql: str = "SELECT 1",
            complexity: ComplexityLevel = None) -> LabeledRecord:
    return LabeledRecord(id=record_id, db_id="retail", question=question, sql=sql, labels=labels,
                         complexity=complexity)
