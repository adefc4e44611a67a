"""
Shared fixtures for the benchmark test suite
"""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent.parent / 'backend'))

import config  # noqa: E402
import database  # noqa: E402
import tracing  # noqa: E402
from registry import build_problem  # noqa: E402

FAST_SAMPLES = 4000
FAST_REFERENCE_ITERATIONS = 3000


@pytest.fixture
def isolated_settings(monkeypatch, tmp_path):
    """Point output and history at tmp_path and disable tracing"""
    monkeypatch.setenv("VI_BENCH_OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("VI_BENCH_DATABASE_URL", f"sqlite:///{tmp_path / 'runs.db'}")
    monkeypatch.delenv("LANGFUSE_PUBLIC_KEY", raising=False)
    monkeypatch.delenv("LANGFUSE_SECRET_KEY", raising=False)
    config.get_settings.cache_clear()
    tracing.reset_client()
    settings = config.get_settings()
    database.init_db(settings.database_url)
    yield settings
    config.get_settings.cache_clear()
    tracing.reset_client()


_fast_cache = {}


def fast_problem(name):
    """Problem with constants from a reduced sample budget, cached per session"""
    if name not in _fast_cache:
        _fast_cache[name] = build_problem(
            name, samples=FAST_SAMPLES, seed=42, reference_iterations=FAST_REFERENCE_ITERATIONS, workers=1
        )
    return _fast_cache[name]


@pytest.fixture
def fast_registry(monkeypatch):
    """Route registry lookups in bench to the reduced-budget problems"""
    import bench

    monkeypatch.setattr(bench, "get_problem", fast_problem)
    return fast_problem
