import logging
import os
import sys
from functools import lru_cache
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

# Load .env file from the backend directory
env_path = Path(__file__).parent / ".env"
load_dotenv(dotenv_path=env_path)

DEFAULT_DATABASE_URL = f"sqlite:///{Path(__file__).parent / 'runs.db'}"


class Settings(BaseModel):
    output_dir: Path = Field(default=Path("runs"), description="Default directory for run artifacts")
    database_url: str = DEFAULT_DATABASE_URL
    seed: int = 42
    lipschitz_samples: int = Field(default=100_000, ge=1)
    reference_iterations: int = Field(default=10_000, ge=1)
    workers: int = Field(default=1, ge=1)
    log_level: str = "INFO"
    langfuse_public_key: Optional[str] = None
    langfuse_secret_key: Optional[str] = None
    langfuse_host: str = "https://cloud.langfuse.com"

    @property
    def langfuse_configured(self) -> bool:
        return bool(self.langfuse_public_key and self.langfuse_secret_key)


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings(
        output_dir=Path(os.getenv("VI_BENCH_OUTPUT_DIR", "runs")),
        database_url=os.getenv("VI_BENCH_DATABASE_URL", DEFAULT_DATABASE_URL),
        seed=int(os.getenv("VI_BENCH_SEED", "42")),
        lipschitz_samples=int(os.getenv("VI_BENCH_LIPSCHITZ_SAMPLES", "100000")),
        reference_iterations=int(os.getenv("VI_BENCH_REFERENCE_ITERATIONS", "10000")),
        workers=int(os.getenv("VI_BENCH_WORKERS", "1")),
        log_level=os.getenv("VI_BENCH_LOG_LEVEL", "INFO"),
        langfuse_public_key=os.getenv("LANGFUSE_PUBLIC_KEY"),
        langfuse_secret_key=os.getenv("LANGFUSE_SECRET_KEY"),
        langfuse_host=os.getenv("LANGFUSE_HOST", "https://cloud.langfuse.com"),
    )


def configure_logging(level: Optional[str] = None) -> None:
    """Route all package logging to stderr with the [LEVEL] tag format."""
    root = logging.getLogger()
    level_name = (level or get_settings().log_level).upper()
    root.setLevel(getattr(logging, level_name, logging.INFO))
    if not any(getattr(h, "_vi_bench", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("[%(levelname)s] %(message)s"))
        handler._vi_bench = True
        root.addHandler(handler)
