"""Chat-completion backends.

``LiveBackend`` talks to any OpenAI-compatible ``/v1/chat/completions``
endpoint; ``ScriptedBackend`` replays canned assistant replies so the
screening protocols can be tested without a network.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx

from .conversation import Conversation, Message, Role
from .errors import (
    AuthError,
    BackendError,
    BackendTimeout,
    MalformedResponse,
    MissingAPIKey,
    NetworkError,
    RateLimited,
    ScriptExhausted,
    ServerError,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "OPENAI_API_KEY"
BASE_URL_ENV = "SCREENR_BASE_URL"
DEFAULT_BASE_URL = "https://api.openai.com"
DEFAULT_MODEL = "gpt-4"


@dataclass(frozen=True)
class CompletionUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    def __add__(self, other: CompletionUsage) -> CompletionUsage:
        return CompletionUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )

    def to_dict(self) -> dict:
        return {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens}


@dataclass(frozen=True)
class BackendConfig:
    api_key: str = field(repr=False)
    base_url: str = DEFAULT_BASE_URL
    model_name: str = DEFAULT_MODEL
    temperature: float = 0.0
    max_retries: int = 5
    request_timeout: float = 120.0
    requests_per_minute: float = 60.0

    def __post_init__(self) -> None:
        if not self.model_name:
            raise ValueError("model_name must be non-empty")
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must lie in [0, 2]")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.requests_per_minute <= 0:
            raise ValueError("requests_per_minute must be positive")

    @property
    def endpoint(self) -> str:
        return self.base_url.rstrip("/") + "/v1/chat/completions"

    @classmethod
    def from_env(cls, api_key: str | None = None, base_url: str | None = None, **kwargs) -> BackendConfig:
        """Build a config, reading the key and base URL from the environment
        when they are not supplied explicitly."""
        key = api_key or os.environ.get(API_KEY_ENV, "").strip()
        if not key:
            raise MissingAPIKey(
                f"No API key found. Set the {API_KEY_ENV} environment variable "
                "(or pass --api-key-file) before screening with the live backend."
            )
        url = base_url or os.environ.get(BASE_URL_ENV) or DEFAULT_BASE_URL
        return cls(api_key=key, base_url=url, **kwargs)


class Backend(Protocol):
    model_name: str

    def complete(self, conv: Conversation) -> tuple[Message, CompletionUsage]: ...


class TokenBucket:
    """Thread-safe token bucket. ``acquire`` blocks until a token is free."""

    def __init__(
        self,
        rate_per_minute: float,
        capacity: float | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.rate = rate_per_minute / 60.0
        self.capacity = capacity if capacity is not None else max(1.0, rate_per_minute)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            self._sleep(wait)


_limiters: dict[float, TokenBucket] = {}
_limiters_lock = threading.Lock()


def shared_limiter(rate_per_minute: float) -> TokenBucket:
    """Process-wide limiter for a given request rate."""
    with _limiters_lock:
        if rate_per_minute not in _limiters:
            _limiters[rate_per_minute] = TokenBucket(rate_per_minute)
        return _limiters[rate_per_minute]


def backoff_delay(attempt: int, rng: random.Random, base: float = 1.0, factor: float = 2.0) -> float:
    """Full-jitter exponential backoff for the given zero-based retry."""
    return rng.uniform(0, base * factor**attempt)


def _classify(response: httpx.Response) -> BackendError | None:
    code = response.status_code
    if code in (401, 403):
        return AuthError(f"authentication rejected by server (HTTP {code})")
    if code == 429:
        return RateLimited("rate limited by server (HTTP 429)")
    if code >= 500:
        return ServerError(f"server error (HTTP {code})")
    if code >= 400:
        # other client errors will not improve on retry
        return BackendError(f"request rejected (HTTP {code})")
    return None


def parse_completion(body: dict) -> tuple[Message, CompletionUsage]:
    try:
        msg = body["choices"][0]["message"]
        content = msg["content"]
    except (KeyError, IndexError, TypeError):
        raise MalformedResponse("response has no choices[0].message.content") from None
    if msg.get("role", "assistant") != "assistant" or not isinstance(content, str) or not content.strip():
        raise MalformedResponse("response does not carry a non-empty assistant message")
    usage = body.get("usage") or {}
    return Message(Role.ASSISTANT, content), CompletionUsage(
        int(usage.get("prompt_tokens") or 0), int(usage.get("completion_tokens") or 0)
    )


class LiveBackend:
    """Blocking client for an OpenAI-compatible chat endpoint."""

    def __init__(
        self,
        config: BackendConfig,
        *,
        transport: httpx.BaseTransport | None = None,
        limiter: TokenBucket | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.config = config
        self.model_name = config.model_name
        self.limiter = limiter or shared_limiter(config.requests_per_minute)
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._rng_lock = threading.Lock()
        self._client = httpx.Client(
            transport=transport,
            timeout=httpx.Timeout(config.request_timeout),
            headers={"Authorization": f"Bearer {config.api_key}"},
        )
        self.attempts = 0

    def __repr__(self) -> str:
        return f"LiveBackend(endpoint={self.config.endpoint!r}, model={self.model_name!r})"

    def close(self) -> None:
        self._client.close()

    def request_body(self, conv: Conversation) -> dict:
        return {
            "model": self.config.model_name,
            "messages": conv.to_list(),
            "temperature": self.config.temperature,
        }

    def _attempt(self, body: dict) -> tuple[Message, CompletionUsage]:
        self.limiter.acquire()
        with self._rng_lock:
            self.attempts += 1
        try:
            response = self._client.post(self.config.endpoint, json=body)
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"request timed out ({type(exc).__name__})") from None
        except httpx.TransportError as exc:
            raise NetworkError(f"network failure ({type(exc).__name__})") from None
        err = _classify(response)
        if err is not None:
            raise err
        try:
            payload = response.json()
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise MalformedResponse("response body is not JSON") from None
        return parse_completion(payload)

    def complete(self, conv: Conversation) -> tuple[Message, CompletionUsage]:
        if not len(conv):
            raise ValueError("cannot complete an empty conversation")
        body = self.request_body(conv)
        retry = 0
        while True:
            try:
                return self._attempt(body)
            except BackendError as exc:
                if not exc.retryable or retry >= self.config.max_retries:
                    raise
                with self._rng_lock:
                    delay = backoff_delay(retry, self._rng)
                log.warning("%s; retrying in %.2fs (retry %d of %d)", exc, delay, retry + 1, self.config.max_retries)
                self._sleep(delay)
                retry += 1


class ScriptedBackend:
    """Replays a fixed list of assistant replies, one per ``complete`` call.

    Every conversation it receives is recorded in ``received``.
    """

    def __init__(self, script: Sequence[str], model_name: str = "scripted"):
        if not script:
            raise ValueError("script must contain at least one reply")
        self._script = list(script)
        self._pos = 0
        self._lock = threading.Lock()
        self.model_name = model_name
        self.received: list[Conversation] = []

    @property
    def calls(self) -> int:
        return len(self.received)

    @property
    def remaining(self) -> int:
        return len(self._script) - self._pos

    def complete(self, conv: Conversation) -> tuple[Message, CompletionUsage]:
        with self._lock:
            self.received.append(conv)
            if self._pos >= len(self._script):
                raise ScriptExhausted(f"script exhausted after {len(self._script)} replies")
            text = self._script[self._pos]
            self._pos += 1
        return Message(Role.ASSISTANT, text), CompletionUsage()

    @classmethod
    def from_file(cls, path: str | Path, model_name: str | None = None) -> ScriptedBackend:
        """Load a script: a JSON array of strings, or an object with a
        ``replies`` array and optional ``model``. An explicit ``model_name``
        wins over the file's; the fallback is ``"scripted"``."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, dict):
            return cls(data["replies"], model_name=model_name or data.get("model") or "scripted")
        return cls(data, model_name=model_name or "scripted")
