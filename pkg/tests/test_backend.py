import json
import logging
import random

import httpx
import pytest

from screenr.backend import (
    BackendConfig,
    CompletionUsage,
    LiveBackend,
    ScriptedBackend,
    TokenBucket,
    backoff_delay,
)
from screenr.conversation import Conversation, Role, assistant, system, user
from screenr.errors import (
    AuthError,
    BackendTimeout,
    MalformedResponse,
    MissingAPIKey,
    NetworkError,
    RateLimited,
    ScriptExhausted,
    ServerError,
)

SENTINEL = "sk-SENTINEL-7f3a9c1e55d04b"
CONV = Conversation((system("be brief"), user("hello")))


def ok_body(text="EXCLUDE", usage=True):
    body = {"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}
    if usage:
        body["usage"] = {"prompt_tokens": 12, "completion_tokens": 3, "total_tokens": 15}
    return body


class Server:
    """Replays a list of (status, body) responses and records requests."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(request)
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        status, body = item
        if isinstance(body, (dict, list)):
            return httpx.Response(status, json=body)
        return httpx.Response(status, text=body)


class NoLimit:
    def acquire(self):
        pass


def live(server, **cfg):
    sleeps = []
    backend = LiveBackend(
        BackendConfig(api_key=SENTINEL, base_url="http://llm.test", **cfg),
        transport=httpx.MockTransport(server),
        limiter=NoLimit(),
        sleep=sleeps.append,
        rng=random.Random(0),
    )
    return backend, sleeps


def test_success_parses_message_and_usage():
    server = Server([(200, ok_body("INCLUDE"))])
    backend, sleeps = live(server)
    msg, usage = backend.complete(CONV)
    assert msg == assistant("INCLUDE")
    assert usage == CompletionUsage(12, 3)
    assert sleeps == [] and backend.attempts == 1


def test_usage_defaults_to_zero():
    backend, _ = live(Server([(200, ok_body(usage=False))]))
    assert backend.complete(CONV)[1] == CompletionUsage(0, 0)


def test_wire_format():
    server = Server([(200, ok_body())])
    backend, _ = live(server, model_name="gpt-4", temperature=0.0)
    backend.complete(Conversation((system("s"), user("u"), assistant("a"), user("u2"))))
    req = server.requests[0]
    assert req.method == "POST"
    assert str(req.url) == "http://llm.test/v1/chat/completions"
    assert req.headers["authorization"] == f"Bearer {SENTINEL}"
    body = json.loads(req.content.decode("utf-8"))
    assert body == {
        "model": "gpt-4",
        "temperature": 0.0,
        "messages": [
            {"role": "system", "content": "s"},
            {"role": "user", "content": "u"},
            {"role": "assistant", "content": "a"},
            {"role": "user", "content": "u2"},
        ],
    }


def test_trailing_slash_in_base_url():
    assert BackendConfig(api_key="k", base_url="http://x/").endpoint == "http://x/v1/chat/completions"


@pytest.mark.parametrize("status", [401, 403])
def test_auth_error_fails_fast(status):
    server = Server([(status, {"error": "bad key"})] + [(200, ok_body())] * 5)
    backend, sleeps = live(server)
    with pytest.raises(AuthError):
        backend.complete(CONV)
    assert backend.attempts == 1 and sleeps == []


def test_rate_limit_twice_then_success():
    server = Server([(429, {}), (429, {}), (200, ok_body("EXCLUDE"))])
    backend, sleeps = live(server)
    msg, _ = backend.complete(CONV)
    assert msg.content == "EXCLUDE"
    assert backend.attempts == 3
    assert len(sleeps) == 2
    # full jitter: retry k sleeps somewhere in [0, 2**k)
    assert 0 <= sleeps[0] < 1 and 0 <= sleeps[1] < 2


@pytest.mark.parametrize(
    "failure, exc",
    [
        ((429, {}), RateLimited),
        ((500, "oops"), ServerError),
        ((503, "busy"), ServerError),
        (httpx.ReadTimeout("slow"), BackendTimeout),
        (httpx.ConnectError("refused"), NetworkError),
    ],
)
def test_retries_are_bounded(failure, exc):
    server = Server([failure] * 10)
    backend, sleeps = live(server, max_retries=3)
    with pytest.raises(exc):
        backend.complete(CONV)
    assert backend.attempts == 4
    assert len(sleeps) == 3


def test_zero_retries():
    backend, sleeps = live(Server([(500, "x")] * 3), max_retries=0)
    with pytest.raises(ServerError):
        backend.complete(CONV)
    assert backend.attempts == 1 and not sleeps


@pytest.mark.parametrize(
    "body",
    [
        {"choices": []},
        {"choices": [{"message": {"role": "assistant", "content": None}}]},
        {"choices": [{"message": {"role": "assistant", "content": "  "}}]},
        {"choices": [{"message": {"role": "user", "content": "hi"}}]},
        {"nothing": True},
        "not json at all",
    ],
)
def test_malformed_response_not_retried(body):
    server = Server([(200, body), (200, ok_body())])
    backend, sleeps = live(server)
    with pytest.raises(MalformedResponse):
        backend.complete(CONV)
    assert backend.attempts == 1


def test_other_client_errors_not_retried():
    backend, sleeps = live(Server([(400, {"error": "bad request"})] * 3))
    with pytest.raises(Exception) as info:
        backend.complete(CONV)
    assert "400" in str(info.value) and backend.attempts == 1


def test_backoff_bounds():
    rng = random.Random(1)
    for attempt in range(6):
        for _ in range(50):
            assert 0 <= backoff_delay(attempt, rng) <= 2**attempt


def test_token_bucket_throttles():
    now = [0.0]
    slept = []

    def sleep(dt):
        slept.append(dt)
        now[0] += dt

    bucket = TokenBucket(60, capacity=2, clock=lambda: now[0], sleep=sleep)
    for _ in range(5):
        bucket.acquire()
    # two free tokens, then one per second
    assert now[0] == pytest.approx(3.0)


def test_config_validation():
    with pytest.raises(ValueError):
        BackendConfig(api_key="k", model_name="")
    with pytest.raises(ValueError):
        BackendConfig(api_key="k", temperature=2.5)


def test_missing_key_message_names_env_var(monkeypatch):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    with pytest.raises(MissingAPIKey, match="OPENAI_API_KEY"):
        BackendConfig.from_env()


def test_key_and_base_url_from_env(monkeypatch):
    monkeypatch.setenv("OPENAI_API_KEY", SENTINEL)
    monkeypatch.setenv("SCREENR_BASE_URL", "http://local:8080")
    cfg = BackendConfig.from_env()
    assert cfg.api_key == SENTINEL and cfg.base_url == "http://local:8080"


def test_secret_never_formatted(caplog):
    caplog.set_level(logging.DEBUG)
    cfg = BackendConfig(api_key=SENTINEL, base_url="http://llm.test")
    backend, _ = live(Server([(429, {}), (401, {"error": SENTINEL[:3]})]))
    with pytest.raises(AuthError) as info:
        backend.complete(CONV)
    texts = [repr(cfg), str(cfg), repr(backend), str(info.value), repr(info.value), caplog.text]
    for text in texts:
        assert SENTINEL not in text


def test_scripted_fifo_and_recording():
    backend = ScriptedBackend(["a", "b"])
    assert backend.complete(CONV)[0] == assistant("a")
    assert backend.complete(CONV)[0] == assistant("b")
    assert backend.calls == 2 and backend.received == [CONV, CONV]


def test_scripted_exhaustion():
    backend = ScriptedBackend(["a"])
    backend.complete(CONV)
    with pytest.raises(ScriptExhausted):
        backend.complete(CONV)
    assert len(backend.received) == 2


def test_scripted_echo():
    msg, usage = ScriptedBackend(["EXCLUDE"]).complete(CONV)
    assert msg.role is Role.ASSISTANT and msg.content == "EXCLUDE"
    assert usage == CompletionUsage()


def test_scripted_needs_script():
    with pytest.raises(ValueError):
        ScriptedBackend([])


def test_scripted_from_file(tmp_path):
    (tmp_path / "a.json").write_text('["x", "y"]')
    (tmp_path / "b.json").write_text('{"model": "m1", "replies": ["z"]}')
    a = ScriptedBackend.from_file(tmp_path / "a.json")
    assert a.remaining == 2 and a.model_name == "scripted"
    b = ScriptedBackend.from_file(tmp_path / "b.json")
    assert b.model_name == "m1" and b.remaining == 1
    assert ScriptedBackend.from_file(tmp_path / "b.json", model_name="m2").model_name == "m2"
