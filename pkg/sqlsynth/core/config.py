from pathlib import Path
from typing import List, Optional
import os

from pydantic_settings import BaseSettings


PACKAGE_DIR = Path(__file__).resolve().parent.parent


class Settings(BaseSettings):
    # Gateway
    PROVIDER: str = "mock"  # "mock" or "remote"
    LLM_ENDPOINT: Optional[str] = None
    LLM_MODEL: str = "gpt-4o"
    LLM_KEY: Optional[str] = None
    LLM_TEMPERATURE: float = 0.2
    LLM_MAX_TOKENS: int = 2048
    LLM_MAX_ATTEMPTS: int = 3
    LLM_BACKOFF_SECS: float = 0.5
    RATE_LIMIT_CONCURRENCY: int = 4
    RATE_LIMIT_PER_MINUTE: int = 60

    # Files
    PROMPTS_DIR: Optional[str] = None
    FIXTURES_DIR: Optional[str] = None
    TAXONOMY_CONFIG: Optional[str] = None
    FUNCTION_TABLE: Optional[str] = None
    OUTPUT_DIR: str = "runs"

    # Execution
    TIMEOUT_SECS: float = 10.0
    JOBS: int = os.cpu_count() or 1
    SEED: int = 0

    # SQL analysis
    DIALECT: str = "sqlite"
    TEMPORAL_FORMATS: str = "YYYY-MM-DD HH:MM:SS,YYYY-MM-DD,HH:MM:SS,YYYY"

    # Database forge
    SAMPLE_ROWS: int = 5
    SCHEMA_ATTEMPTS: int = 3

    # Seeding
    BLUEPRINT_TOP_K: int = 5
    SEED_ATTEMPTS: int = 3
    REPAIR_BUDGET: int = 3

    # Expansion
    EXPANSION_SAMPLE_SIZE: int = 50
    ENABLE_SQL_PATH: bool = True
    ENABLE_QUESTION_PATH: bool = True

    # Evaluation
    EMBEDDER: str = "hashed"  # "hashed" or "sentence-transformers"
    EMBEDDING_MODEL: str = "all-MiniLM-L6-v2"
    EMBEDDING_DIM: int = 256
    SEMANTIC_THRESHOLD: float = 0.8
    DIVERSITY_SAMPLE_SIZE: int = 2000
    FLOAT_TOLERANCE: float = 1e-6

    @property
    def prompts_path(self) -> Path:
        """Directory holding the prompt template files"""
        return Path(self.PROMPTS_DIR) if self.PROMPTS_DIR else PACKAGE_DIR / "prompts"

    @property
    def data_path(self) -> Path:
        return PACKAGE_DIR / "data"

    @property
    def taxonomy_config_path(self) -> Path:
        return Path(self.TAXONOMY_CONFIG) if self.TAXONOMY_CONFIG else self.data_path / "taxonomy_config.json"

    @property
    def function_table_path(self) -> Path:
        return Path(self.FUNCTION_TABLE) if self.FUNCTION_TABLE else self.data_path / "function_classes.json"

    @property
    def fixtures_path(self) -> Optional[Path]:
        return Path(self.FIXTURES_DIR) if self.FIXTURES_DIR else None

    @property
    def temporal_formats(self) -> List[str]:
        """Convert comma-separated temporal formats string to list"""
        return [fmt.strip() for fmt in self.TEMPORAL_FORMATS.split(",") if fmt.strip()]

    @property
    def is_remote_available(self) -> bool:
        """Check if the remote provider is configured"""
        return self.PROVIDER == "remote" and bool(self.LLM_ENDPOINT) and bool(self.LLM_KEY)

    class Config:
        env_file = ".env"
        env_prefix = "SYNTH_"
        case_sensitive = True
        extra = "ignore"


settings = Settings()
