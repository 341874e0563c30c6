from pydantic import Field
from pydantic_settings import BaseSettings
import os


class Settings(BaseSettings):
    # Worker pool cap (AWSP_THREADS)
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)

    # Where artifacts land when a run configuration gives relative paths
    artifacts_dir: str = "artifacts"

    # Training features above this size are spilled to a memory-mapped scratch file
    feature_memory_mb: int = Field(1024, ge=0)

    # Test suite used by the selftest command
    tests_dir: str = "tests"

    # Logging
    log_level: str = "info"

    class Config:
        env_prefix = "AWSP_"
        env_file = ".env"
        case_sensitive = False
        extra = "ignore"


settings = Settings()
