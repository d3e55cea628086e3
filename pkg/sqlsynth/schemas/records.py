import hashlib
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field

from sqlsynth.schemas.taxonomy import Combination, ComplexityLevel, TaxonomyLabels


def stable_id(*parts: object, length: int = 16) -> str:
    """Deterministic identifier derived from its parts"""
    payload = "\x1f".join(str(part) for part in parts)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:length]


class LabeledRecord(BaseModel):
    """A classified text-SQL pair from any corpus"""

    id: str
    db_id: str = ""
    question: str
    sql: str
    labels: TaxonomyLabels
    complexity: Optional[ComplexityLevel] = None
    complexity_score: Optional[int] = None


class SeedStatus(str, Enum):
    REUSED = "reused"
    GENERATED = "generated"
    REPAIRED = "repaired"


class SeedRecord(BaseModel):
    id: str
    db_id: str
    question: str
    sql: str
    combination: Combination
    blueprint_ids: List[str] = []
    status: SeedStatus = SeedStatus.GENERATED
    sampling_seed: Optional[str] = None
    call_ids: List[str] = []
    attempts: int = 1


class KnowledgeKind(str, Enum):
    VALUE_MAPPING = "value_mapping"
    NUMERIC_CALCULATION = "numeric_calculation"


class KnowledgeItem(BaseModel):
    kind: KnowledgeKind
    text: str = Field(min_length=1)
    value: Optional[str] = None  # referenced schema/content value for value_mapping


class ExpansionPath(str, Enum):
    SQL_ORIENTED = "sql_oriented"
    QUESTION_ORIENTED = "question_oriented"


class Provenance(BaseModel):
    seed_id: str
    path: ExpansionPath
    position: int
    call_ids: List[str] = []


class DatasetRecord(BaseModel):
    id: str
    db_id: str
    question: str
    sql: str
    knowledge: List[KnowledgeItem] = []
    labels: TaxonomyLabels
    complexity: ComplexityLevel
    provenance: Provenance


class QuarantinedRecord(DatasetRecord):
    labels: Optional[TaxonomyLabels] = None
    complexity: Optional[ComplexityLevel] = None
    reasons: List[str] = []
