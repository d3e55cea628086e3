from datetime import datetime
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field


class StageRecord(BaseModel):
    inputs: Dict[str, str] = {}
    outputs: Dict[str, str] = {}
    counters: Dict[str, int] = {}
    started_at: Optional[datetime] = None
    finished_at: Optional[datetime] = None


class RunManifest(BaseModel):
    run_id: str
    seed: int
    config: Dict[str, Any] = {}
    stages: Dict[str, StageRecord] = Field(default_factory=dict)
    started_at: datetime = Field(default_factory=datetime.utcnow)
    finished_at: Optional[datetime] = None
