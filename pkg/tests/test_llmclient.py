import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chiselforge.llmclient import (
    ChatClient,
    ChatRequest,
    ChatResponse,
    ClientConfig,
    MockTransport,
    PermanentError,
    TransportError,
)


def req(text="hello", **kw):
    return ChatRequest.simple("m", text, **kw)


def client(transport, cache_dir=None, max_retries=5):
    return ChatClient(
        ClientConfig(model_name="m", cache_dir=str(cache_dir) if cache_dir else None,
                     base_delay_s=0.0, jitter=False, max_retries=max_retries),
        transport=transport,
    )


class FlakyTransport:
    """Fails with transient errors for the first `failures` calls."""

    def __init__(self, failures, status="transient"):
        self.failures = failures
        self.status = status
        self.calls = 0

    def send(self, request):
        self.calls += 1
        if self.calls <= self.failures:
            if self.status == "permanent":
                raise PermanentError("HTTP 401")
            raise TransportError("HTTP 500")
        return ChatResponse(content="ok")


class TestChatRequest:
    def test_empty_messages_rejected(self):
        with pytest.raises(ValueError):
            ChatRequest(model_name="m", messages=())

    def test_first_role_must_be_system_or_user(self):
        with pytest.raises(ValueError):
            ChatRequest(model_name="m", messages=(("assistant", "hi"),))

    def test_cache_key_sensitive_to_every_field(self):
        base = req("x")
        variants = [
            req("y"),
            req("x", temperature=0.9),
            req("x", max_output_tokens=4),
            req("x", seed_hint=3),
            ChatRequest.simple("other-model", "x"),
            ChatRequest.simple("m", "x", system="sys"),
        ]
        keys = {base.cache_key()} | {v.cache_key() for v in variants}
        assert len(keys) == 1 + len(variants)

    def test_cache_key_pure(self):
        assert req("x").cache_key() == req("x").cache_key()


class TestRetries:
    def test_success_after_two_failures(self):
        t = FlakyTransport(failures=2)
        resp = client(t).complete(req())
        assert resp.content == "ok"
        assert t.calls == 3

    def test_permanent_error_single_attempt(self):
        t = FlakyTransport(failures=10, status="permanent")
        with pytest.raises(PermanentError):
            client(t).complete(req())
        assert t.calls == 1

    def test_exhausted_retries(self):
        t = FlakyTransport(failures=10)
        with pytest.raises(TransportError, match="exhausted"):
            client(t, max_retries=3).complete(req())
        assert t.calls == 3


class TestCache:
    def test_second_call_served_from_cache(self, tmp_path):
        t = FlakyTransport(failures=0)
        c = client(t, cache_dir=tmp_path)
        first = c.complete(req())
        second = c.complete(req())
        assert not first.cached
        assert second.cached
        assert second.content == first.content
        assert t.calls == 1

    def test_cache_shared_between_clients(self, tmp_path):
        client(FlakyTransport(failures=0), cache_dir=tmp_path).complete(req())
        c2 = client(FlakyTransport(failures=10), cache_dir=tmp_path)
        assert c2.complete(req()).cached  # never hits the failing transport

    def test_corrupt_cache_bypassed(self, tmp_path):
        c = client(FlakyTransport(failures=0), cache_dir=tmp_path)
        c.complete(req())
        for p in tmp_path.rglob("*.json"):
            p.write_text("{not json")
        resp = c.complete(req())
        assert resp.content == "ok"
        assert not resp.cached

    def test_error_responses_not_cached(self, tmp_path):
        class ErrTransport:
            def send(self, request):
                return ChatResponse(content="boom", finish_reason="error")

        c = client(ErrTransport(), cache_dir=tmp_path)
        c.complete(req())
        assert list(tmp_path.rglob("*.json")) == []


class TestCompleteMany:
    def test_order_preserved(self):
        rules = [(f"^msg{i}$", f"reply{i}") for i in range(5)]
        c = client(MockTransport(rules, latency_s=0.01))
        reqs = [req(f"msg{i}") for i in range(5)]
        out = c.complete_many(reqs, parallelism=2)
        assert [r.content for r in out] == [f"reply{i}" for i in range(5)]

    def test_empty_batch(self):
        assert client(FlakyTransport(0)).complete_many([], parallelism=2) == []

    def test_failing_slot_isolated(self):
        rules = [("^good", "fine")]
        c = client(MockTransport(rules))
        out = c.complete_many([req("good1"), req("bad"), req("good2")], parallelism=3)
        assert [r.finish_reason for r in out] == ["stop", "error", "stop"]

    def test_parallelism_bound(self):
        active = 0
        peak = 0
        lock = threading.Lock()

        class CountingTransport:
            def send(self, request):
                nonlocal active, peak
                with lock:
                    active += 1
                    peak = max(peak, active)
                time.sleep(0.02)
                with lock:
                    active -= 1
                return ChatResponse(content="ok")

        client(CountingTransport()).complete_many([req(str(i)) for i in range(8)], parallelism=2)
        assert peak <= 2

    @settings(max_examples=20, deadline=None)
    @given(n=st.integers(0, 8), parallelism=st.integers(1, 4), seed=st.integers(0, 1000))
    def test_order_property_with_random_latencies(self, n, parallelism, seed):
        import random

        rng = random.Random(seed)
        delays = [rng.uniform(0, 0.01) for _ in range(n)]

        class JitterTransport:
            def send(self, request):
                idx = int(request.last_user_content())
                time.sleep(delays[idx])
                return ChatResponse(content=f"r{idx}")

        out = client(JitterTransport()).complete_many(
            [req(str(i)) for i in range(n)], parallelism=parallelism
        )
        assert [r.content for r in out] == [f"r{i}" for i in range(n)]


class TestMockTransport:
    def test_fixture_file(self, tmp_path):
        import json

        fixture = tmp_path / "rules.json"
        fixture.write_text(json.dumps([{"pattern": "ping", "response": "pong"}]))
        t = MockTransport.from_fixture(fixture)
        assert t.send(req("ping please")).content == "pong"

    def test_unmatched_prompt_is_permanent_error(self):
        with pytest.raises(PermanentError):
            MockTransport([]).send(req("anything"))
