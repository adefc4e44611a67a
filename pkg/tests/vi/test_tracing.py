"""
Tests for best-effort Langfuse tracing and the run history store
"""

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent.parent / 'backend'))

import config
import database
import tracing
from tracing import RunSpan, get_client, run_span


@pytest.fixture
def fake_client(mocker):
    client = mocker.MagicMock(spec=["start_span", "flush"])
    mocker.patch("tracing.get_client", return_value=client)
    return client


@pytest.mark.usefixtures("isolated_settings")
class TestTracing:
    """Test span handling with and without a Langfuse client"""

    def test_unconfigured_client(self):
        """Test that missing credentials disable tracing"""
        assert get_client() is None

    def test_client_created_from_settings(self, monkeypatch, mocker):
        """Test that credentials in the environment create one client"""
        monkeypatch.setenv("LANGFUSE_PUBLIC_KEY", "pk-test")
        monkeypatch.setenv("LANGFUSE_SECRET_KEY", "sk-test")
        monkeypatch.delenv("LANGFUSE_HOST", raising=False)
        config.get_settings.cache_clear()
        tracing.reset_client()
        langfuse = mocker.patch("tracing.Langfuse")
        assert get_client() is langfuse.return_value
        assert get_client() is langfuse.return_value
        langfuse.assert_called_once_with(public_key="pk-test", secret_key="sk-test", host="https://cloud.langfuse.com")

    def test_client_failure_is_a_warning(self, monkeypatch, mocker, caplog):
        """Test that a failing constructor leaves tracing off"""
        monkeypatch.setenv("LANGFUSE_PUBLIC_KEY", "pk-test")
        monkeypatch.setenv("LANGFUSE_SECRET_KEY", "sk-test")
        config.get_settings.cache_clear()
        tracing.reset_client()
        mocker.patch("tracing.Langfuse", side_effect=RuntimeError("no network"))
        assert get_client() is None
        assert "Failed to initialize Langfuse client" in caplog.text

    def test_span_without_client(self):
        """Test that the block runs with an inactive span"""
        with run_span("solve:plane3") as span:
            span.update(output={"ok": True})
            assert not span.active

    def test_span_lifecycle(self, fake_client):
        """Test that a span is opened, updated and ended"""
        with run_span("solve:plane3", input={"rho": 1.0}, metadata={"lipschitz": 5.0}) as span:
            span.update(output={"iterations": 3})
        fake_client.start_span.assert_called_once_with(name="solve:plane3", input={"rho": 1.0}, metadata={"lipschitz": 5.0})
        handle = fake_client.start_span.return_value
        handle.update.assert_called_once_with(output={"iterations": 3})
        handle.end.assert_called_once()

    def test_error_recorded_and_reraised(self, fake_client):
        """Test that an exception becomes a run_error event and propagates"""
        with pytest.raises(ValueError):
            with run_span("solve:plane3"):
                raise ValueError("bad lambda")
        handle = fake_client.start_span.return_value
        handle.create_event.assert_called_once_with(
            name="run_error", output={"error": "bad lambda", "type": "ValueError"}
        )
        handle.end.assert_called_once()

    def test_span_failures_only_warn(self, fake_client, caplog):
        """Test that client errors never reach the caller"""
        fake_client.start_span.side_effect = RuntimeError("rate limited")
        with run_span("solve:plane3") as span:
            span.update(output={})
            ran = True
        assert ran
        assert "Langfuse tracking failed" in caplog.text

    def test_wrapper_swallows_span_errors(self, mocker, caplog):
        """Test RunSpan against a span whose methods raise"""
        broken = mocker.MagicMock()
        broken.update.side_effect = RuntimeError("x")
        broken.end.side_effect = RuntimeError("y")
        span = RunSpan(broken)
        span.update(output={})
        span.end()
        assert "span update failed" in caplog.text
        assert "span end failed" in caplog.text

    def test_trace_fallback(self, mocker):
        """Test clients without start_span use trace"""
        client = mocker.MagicMock(spec=["trace"])
        mocker.patch("tracing.get_client", return_value=client)
        with run_span("flow:plane3"):
            pass
        client.trace.assert_called_once_with(name="flow:plane3", input=None, metadata={})


@pytest.mark.usefixtures("isolated_settings")
class TestRunHistory:
    """Test the run_records table helpers"""

    def test_record_and_serialize(self):
        """Test storing and reading back a run"""
        with database.session_factory()() as db:
            record = database.record_run(db, "plane3", "fbf", "tol_reached", 42, {"report": {"iterations": 42}})
            data = database.serialize_run(record)
        assert data["problem"] == "plane3"
        assert data["iterations"] == 42
        assert data["report"] == {"report": {"iterations": 42}}
        assert data["created_at"] is not None

    def test_try_record_returns_id(self):
        """Test the fire-and-forget helper"""
        run_id = database.try_record_run("fractional5", "fbf", "max_iter", 10, {"x": 1})
        with database.session_factory()() as db:
            stored = db.get(database.RunRecord, run_id)
            assert json.loads(stored.report) == {"x": 1}

    def test_try_record_failure_is_a_warning(self, caplog):
        """Test that an unserializable report is logged and skipped"""
        assert database.try_record_run("plane3", "fbf", "tol_reached", 1, {"bad": object()}) is None
        assert "Failed to save run to database" in caplog.text
