"""Provider-agnostic chat-completion client.

Speaks the de-facto standard chat-completions JSON shape over HTTP, with
exponential-backoff retries, an optional token-bucket rate limiter, and a
content-addressed on-disk response cache keyed by the full request. A
mock transport (canned pattern -> response rules) stands in for the
network in tests and dry runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Protocol, Sequence, Tuple

logger = logging.getLogger(__name__)

API_KEY_ENV = "FORGE_API_KEY"


class TransportError(Exception):
    """Transient transport failure (retryable)."""


class PermanentError(Exception):
    """Non-retryable failure (e.g. HTTP 4xx)."""


@dataclass(frozen=True)
class ChatRequest:
    model_name: str
    messages: Tuple[Tuple[str, str], ...]  # (role, content) pairs
    temperature: float = 0.6
    max_output_tokens: int = 8192
    seed_hint: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0][0] not in ("system", "user"):
            raise ValueError("first message role must be system or user")
        for role, _ in self.messages:
            if role not in ("system", "user", "assistant"):
                raise ValueError(f"invalid role: {role}")

    @classmethod
    def simple(cls, model_name: str, user: str, system: Optional[str] = None, **kw) -> "ChatRequest":
        msgs: List[Tuple[str, str]] = []
        if system:
            msgs.append(("system", system))
        msgs.append(("user", user))
        return cls(model_name=model_name, messages=tuple(msgs), **kw)

    def cache_key(self) -> str:
        payload = json.dumps(
            {
                "model": self.model_name,
                "messages": list(self.messages),
                "temperature": self.temperature,
                "max_output_tokens": self.max_output_tokens,
                "seed_hint": self.seed_hint,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def last_user_content(self) -> str:
        for role, content in reversed(self.messages):
            if role == "user":
                return content
        return ""


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: str = "stop"  # stop | length | error
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cached: bool = False

    @property
    def truncated(self) -> bool:
        return self.finish_reason == "length"

    @property
    def ok(self) -> bool:
        return self.finish_reason in ("stop", "length")

    def as_dict(self) -> dict:
        return {
            "content": self.content,
            "finish_reason": self.finish_reason,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }


class Transport(Protocol):
    def send(self, req: ChatRequest) -> ChatResponse: ...


class HttpTransport:
    """POSTs the standard chat-completions payload to a configured endpoint."""

    def __init__(self, endpoint_url: str, api_key: Optional[str] = None, timeout_s: float = 120.0):
        self.endpoint_url = endpoint_url
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout_s = timeout_s

    def send(self, req: ChatRequest) -> ChatResponse:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": req.model_name,
            "messages": [{"role": r, "content": c} for r, c in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        if req.seed_hint is not None:
            payload["seed"] = req.seed_hint
        try:
            resp = requests.post(
                self.endpoint_url, json=payload, headers=headers, timeout=self.timeout_s
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if 400 <= resp.status_code < 500:
            raise PermanentError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code}")
        body = resp.json()
        choice = body["choices"][0]
        usage = body.get("usage", {})
        return ChatResponse(
            content=choice["message"]["content"],
            finish_reason=choice.get("finish_reason", "stop"),
            prompt_tokens=usage.get("prompt_tokens", 0),
            completion_tokens=usage.get("completion_tokens", 0),
        )


class MockTransport:
    """Canned responses for tests and dry runs.

    Rules are (regex pattern, response text) pairs matched against the
    last user message; first match wins. Loadable from a JSON fixture
    file: [{"pattern": ..., "response": ...}, ...].
    """

    def __init__(self, rules: Sequence[Tuple[str, str]], latency_s: float = 0.0):
        self.rules = [(re.compile(p, re.DOTALL), r) for p, r in rules]
        self.latency_s = latency_s
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_fixture(cls, path: str | Path) -> "MockTransport":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls([(d["pattern"], d["response"]) for d in data])

    def send(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
        if self.latency_s:
            time.sleep(random.uniform(0, self.latency_s))
        prompt = req.last_user_content()
        for pattern, response in self.rules:
            if pattern.search(prompt):
                return ChatResponse(content=response, prompt_tokens=len(prompt.split()))
        raise PermanentError("no mock rule matched request")


class TokenBucket:
    """Simple thread-safe token bucket; refills `rate` tokens per second."""

    def __init__(self, rate: float, burst: Optional[float] = None):
        self.rate = rate
        self.capacity = burst if burst is not None else rate
        self.tokens = self.capacity
        self.updated = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            time.sleep(wait)


@dataclass
class ClientConfig:
    endpoint_url: str = ""
    model_name: str = "deepseek-reasoner"
    timeout_s: float = 120.0
    max_retries: int = 5
    base_delay_s: float = 1.0
    backoff_factor: float = 2.0
    jitter: bool = True
    cache_dir: Optional[str] = None
    requests_per_second: Optional[float] = None
    temperature: float = 0.6  # teacher sampling default; unvalidated knob
    max_output_tokens: int = 8192
    mock_fixture: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "ClientConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


class ChatClient:
    """Retrying, rate-limited, cached chat client; safe to share across threads."""

    def __init__(self, config: ClientConfig, transport: Optional[Transport] = None):
        self.config = config
        if transport is not None:
            self.transport = transport
        elif config.mock_fixture:
            self.transport = MockTransport.from_fixture(config.mock_fixture)
        else:
            if not config.endpoint_url:
                raise ValueError("endpoint_url not configured and no mock fixture given")
            self.transport = HttpTransport(config.endpoint_url, timeout_s=config.timeout_s)
        self.cache_dir = Path(config.cache_dir) if config.cache_dir else None
        self.bucket = (
            TokenBucket(config.requests_per_second) if config.requests_per_second else None
        )

    # -- cache ---------------------------------------------------------

    def _cache_path(self, key: str) -> Optional[Path]:
        if self.cache_dir is None:
            return None
        return self.cache_dir / key[:2] / f"{key}.json"

    def _cache_get(self, key: str) -> Optional[ChatResponse]:
        path = self._cache_path(key)
        if path is None or not path.exists():
            return None
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
            return ChatResponse(cached=True, **d)
        except (json.JSONDecodeError, TypeError, OSError):
            logger.warning("corrupt cache entry bypassed: %s", path)
            return None

    def _cache_put(self, key: str, resp: ChatResponse) -> None:
        path = self._cache_path(key)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(resp.as_dict(), fh)
            os.replace(tmp, path)
        except OSError:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    # -- completion ----------------------------------------------------

    def complete(self, req: ChatRequest) -> ChatResponse:
        key = req.cache_key()
        cached = self._cache_get(key)
        if cached is not None:
            return cached

        delay = self.config.base_delay_s
        last_exc: Optional[Exception] = None
        for attempt in range(self.config.max_retries):
            if self.bucket is not None:
                self.bucket.acquire()
            try:
                resp = self.transport.send(req)
            except PermanentError:
                raise
            except (TransportError, Exception) as exc:  # noqa: BLE001 - network layer
                last_exc = exc
                if attempt + 1 < self.config.max_retries:
                    sleep = delay * (1 + random.random() * 0.25 if self.config.jitter else 1)
                    time.sleep(sleep)
                    delay *= self.config.backoff_factor
                continue
            if resp.ok:
                self._cache_put(key, resp)
            return resp
        raise TransportError(f"exhausted {self.config.max_retries} attempts: {last_exc}")

    def complete_many(self, reqs: Sequence[ChatRequest], parallelism: int = 4) -> List[ChatResponse]:
        """Complete a batch; responses come back in input order, at most
        `parallelism` in flight. Per-request failures become error
        responses instead of aborting the batch."""
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if not reqs:
            return []

        def one(req: ChatRequest) -> ChatResponse:
            try:
                return self.complete(req)
            except (TransportError, PermanentError) as exc:
                return ChatResponse(content=str(exc), finish_reason="error")

        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(one, reqs))

    # -- annotation adapter -------------------------------------------

    def annotate(self, prompt: str) -> str:
        """AnnotationClient adapter: single user-turn completion."""
        resp = self.complete(ChatRequest.simple(self.config.model_name, prompt,
                                                temperature=self.config.temperature,
                                                max_output_tokens=self.config.max_output_tokens))
        if not resp.ok:
            raise TransportError(resp.content)
        return resp.content
