"""
Langfuse spans around benchmark runs. Tracing is best effort: a missing
configuration disables it and any client failure is logged and swallowed.
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from typing import Any, Iterator, Optional

from langfuse import Langfuse

from config import get_settings

logger = logging.getLogger(__name__)

_client: Optional[Langfuse] = None
_initialized = False


def get_client() -> Optional[Langfuse]:
    global _client, _initialized
    if _initialized:
        return _client
    _initialized = True
    settings = get_settings()
    if not settings.langfuse_configured:
        logger.debug("Langfuse credentials not configured")
        return None
    try:
        _client = Langfuse(
            public_key=settings.langfuse_public_key,
            secret_key=settings.langfuse_secret_key,
            host=settings.langfuse_host,
        )
        logger.debug("Langfuse client initialized with host: %s", settings.langfuse_host)
    except Exception as e:
        logger.warning("Failed to initialize Langfuse client: %s", e)
        _client = None
    return _client


def reset_client() -> None:
    global _client, _initialized
    _client = None
    _initialized = False


class RunSpan:
    """Thin wrapper so callers never touch a span that failed to open."""

    def __init__(self, span: Any = None):
        self._span = span

    @property
    def active(self) -> bool:
        return self._span is not None

    def update(self, **fields: Any) -> None:
        if self._span is None:
            return
        try:
            self._span.update(**fields)
        except Exception as lf_error:
            logger.warning("Langfuse span update failed: %s", lf_error)

    def event(self, name: str, **fields: Any) -> None:
        if self._span is None:
            return
        try:
            self._span.create_event(name=name, **fields)
        except Exception as lf_error:
            logger.warning("Langfuse tracking failed: %s", lf_error)

    def end(self) -> None:
        if self._span is None:
            return
        try:
            self._span.end()
        except Exception as lf_error:
            logger.warning("Langfuse span end failed: %s", lf_error)


def _start(client: Langfuse, name: str, input: Any, metadata: dict) -> Any:
    if hasattr(client, "start_span"):
        return client.start_span(name=name, input=input, metadata=metadata)
    return client.trace(name=name, input=input, metadata=metadata)


@contextmanager
def run_span(name: str, input: Any = None, metadata: Optional[dict] = None) -> Iterator[RunSpan]:
    """Open a span for one command; errors inside the block are recorded as an event and re-raised."""
    client = get_client()
    span = RunSpan()
    if client is not None:
        try:
            span = RunSpan(_start(client, name, input, metadata or {}))
        except Exception as lf_error:
            logger.warning("Langfuse tracking failed: %s", lf_error)
    try:
        yield span
    except Exception as e:
        span.event("run_error", output={"error": str(e), "type": type(e).__name__})
        raise
    finally:
        span.end()


def flush() -> None:
    if _client is None:
        return
    try:
        _client.flush()
    except Exception as e:
        logger.warning("Langfuse flush failed: %s", e)
