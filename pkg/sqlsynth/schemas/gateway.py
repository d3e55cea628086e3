from datetime import datetime
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field


TEMPLATE_NAMES = (
    "database_generation",
    "database_enhancement",
    "question_generation",
    "knowledge_generation",
    "sql_generation",
    "seed_modification",
    "seed_repair",
    "intent_classification",
    "semantic_validation",
    "quality_judge",
)


class PromptTemplate(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    body: str
    placeholders: Tuple[str, ...]


class PromptRequest(BaseModel):
    """What a provider receives: the rendered prompt plus the structured bindings"""

    template: str
    prompt: str
    bindings: Dict[str, Any] = {}
    attempt: int = 1


class GatewayCall(BaseModel):
    call_id: str
    template: str
    prompt: str
    provider: str
    response: Optional[str] = None
    latency_ms: float = 0.0
    attempts: int = 1
    errors: List[str] = []
    created_at: datetime = Field(default_factory=datetime.utcnow)


# Structured shapes expected back from the model, one per template

class GeneratedSql(BaseModel):
    sql: str


class GeneratedQuestion(BaseModel):
    question: str


class GeneratedPair(BaseModel):
    question: str
    sql: str


class IntentAnswer(BaseModel):
    intent: str


class SemanticVerdict(BaseModel):
    consistent: bool
    reason: str = ""


class KnowledgeAnswer(BaseModel):
    knowledge: List[Dict[str, Any]] = []


class JudgeAnswer(BaseModel):
    verdicts: List[Dict[str, Any]]
