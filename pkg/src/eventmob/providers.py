"""Chat-completion backends: an HTTP client and a scripted replay backend."""

from __future__ import annotations

import json
import logging
import math
import os
import random
import threading
import time
import urllib.error
import urllib.request
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "ELLMOB_API_KEY"
RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class ProviderError(RuntimeError):
    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


class ScriptExhausted(RuntimeError):
    """The scripted backend ran out of responses; the test script is too short."""


def estimate_tokens(text: str) -> int:
    """Rough token count: one token per four characters, rounded up."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = 0.1
    top_p: float = 1.0
    max_output_tokens: int = 2048
    tag: str = "default"

    def __post_init__(self):
        if not self.system_prompt or not self.user_prompt:
            raise ValueError("prompts must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    latency: float = 0.0


@dataclass
class TagUsage:
    calls: int = 0
    input_tokens: int = 0
    output_tokens: int = 0


class CallLedger:
    """Thread-safe per-tag accounting of logical provider calls."""

    def __init__(self):
        self._lock = threading.Lock()
        self._tags: dict[str, TagUsage] = {}
        self.wall_time = 0.0

    def record(self, tag: str, response: ChatResponse) -> None:
        with self._lock:
            usage = self._tags.setdefault(tag, TagUsage())
            usage.calls += 1
            usage.input_tokens += response.input_tokens
            usage.output_tokens += response.output_tokens
            self.wall_time += response.latency

    def calls(self, tag: Optional[str] = None) -> int:
        with self._lock:
            if tag is None:
                return sum(u.calls for u in self._tags.values())
            return self._tags.get(tag, TagUsage()).calls

    @property
    def total_tokens(self) -> int:
        with self._lock:
            return sum(u.input_tokens + u.output_tokens for u in self._tags.values())

    def snapshot(self) -> dict[str, TagUsage]:
        with self._lock:
            return {k: TagUsage(v.calls, v.input_tokens, v.output_tokens) for k, v in self._tags.items()}

    def to_dict(self) -> dict:
        snap = self.snapshot()
        return {
            "tags": {k: vars(v) for k, v in sorted(snap.items())},
            "calls": sum(v.calls for v in snap.values()),
            "input_tokens": sum(v.input_tokens for v in snap.values()),
            "output_tokens": sum(v.output_tokens for v in snap.values()),
            "wall_time_s": self.wall_time,
        }


class Provider:
    """Base class; subclasses implement ``_complete``."""

    def __init__(self):
        self.ledger = CallLedger()

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self._complete(request)
        self.ledger.record(request.tag, response)
        return response

    def _complete(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError


class ScriptedProvider(Provider):
    """Replays canned responses in order.

    ``script`` is either a list (one shared queue) or a mapping of tag to list
    (per-stage queues). Every request is kept in ``requests`` so tests can
    inspect the rendered prompts.
    """

    def __init__(self, script: Union[list, dict]):
        super().__init__()
        self._lock = threading.Lock()
        if isinstance(script, dict):
            self._queues = {tag: deque(items) for tag, items in script.items()}
            self._shared = None
        else:
            self._queues = None
            self._shared = deque(script)
        self.requests: list[ChatRequest] = []

    @classmethod
    def from_file(cls, path) -> "ScriptedProvider":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, (list, dict)):
            raise ValueError("script must be a JSON array or an object of arrays")
        return cls(data)

    def _complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(request)
            queue = self._shared if self._queues is None else self._queues.get(request.tag)
            if not queue:
                raise ScriptExhausted(f"no scripted response left for tag {request.tag!r}")
            text = queue.popleft()
        if not isinstance(text, str):
            text = json.dumps(text)
        prompt = request.system_prompt + request.user_prompt
        return ChatResponse(text, estimate_tokens(prompt), estimate_tokens(text), 0.0)


class HTTPProvider(Provider):
    """Minimal chat-completions client with bearer auth and bounded retries."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        max_attempts: int = 3,
        backoff: float = 1.0,
        timeout: float = 120.0,
        max_in_flight: int = 8,
        seed: Optional[int] = None,
        api_key: Optional[str] = None,
    ):
        super().__init__()
        self.url = base_url.rstrip("/")
        if not self.url.endswith("/chat/completions"):
            self.url += "/chat/completions"
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env)
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._rng = random.Random(seed)
        self._rng_lock = threading.Lock()
        self.attempts = 0

    def _payload(self, request: ChatRequest) -> bytes:
        return json.dumps(
            {
                "model": self.model,
                "messages": [
                    {"role": "system", "content": request.system_prompt},
                    {"role": "user", "content": request.user_prompt},
                ],
                "temperature": request.temperature,
                "top_p": request.top_p,
                "max_tokens": request.max_output_tokens,
            }
        ).encode()

    def _sleep(self, attempt: int) -> None:
        with self._rng_lock:
            jitter = self._rng.uniform(0.5, 1.0)
        time.sleep(self.backoff * 2 ** (attempt - 1) * jitter)

    def _complete(self, request: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = self._payload(request)
        status, detail = None, ""
        start = time.monotonic()
        with self._slots:
            for attempt in range(1, self.max_attempts + 1):
                self.attempts += 1
                req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
                try:
                    with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                        raw = resp.read()
                    break
                except urllib.error.HTTPError as exc:
                    status, detail = exc.code, exc.read().decode("utf-8", "replace")[:500]
                    if status not in RETRYABLE_STATUS:
                        raise ProviderError(f"HTTP {status}: {detail}", status) from exc
                except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                    status, detail = None, str(exc)
                log.warning("provider attempt %d/%d failed (%s)", attempt, self.max_attempts, status or detail)
                if attempt < self.max_attempts:
                    self._sleep(attempt)
            else:
                raise ProviderError(
                    f"gave up after {self.max_attempts} attempts: {status or ''} {detail}".strip(), status
                )
        try:
            data = json.loads(raw.decode("utf-8"))
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected response body: {raw[:200]!r}") from exc
        usage = data.get("usage") or {}
        prompt = request.system_prompt + request.user_prompt
        return ChatResponse(
            text,
            int(usage.get("prompt_tokens", estimate_tokens(prompt))),
            int(usage.get("completion_tokens", estimate_tokens(text))),
            time.monotonic() - start,
        )
