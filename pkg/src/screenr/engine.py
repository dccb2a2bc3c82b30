"""Screening protocols and verdict parsing.

Two protocols share one parser:

* ``cot``: a guided conversation. The model first summarises the review's
  inclusion criteria, then assesses the source against each one, then gives
  a one-word recommendation.
* ``zeroshot``: one prompt carrying the criteria and the source, answered
  with a single word.

If the final answer carries no INCLUDE/EXCLUDE token the model is asked once
more; a second miss raises :class:`VerdictUnparseable`.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from functools import lru_cache
from importlib import resources
from string import Template

from .backend import Backend, CompletionUsage
from .conversation import Conversation, Message, Role, last_assistant, parse_transcript, render_transcript
from .errors import VerdictUnparseable
from .labels import Verdict
from .review import Source

__all__ = [
    "Method",
    "Verdict",
    "ScreeningResult",
    "TEMPLATE_VERSION",
    "content_hash",
    "parse_verdict",
    "screen_source",
    "screen_source_cot",
    "screen_source_zeroshot",
]


class Method(str, Enum):
    COT = "cot"
    ZEROSHOT = "zeroshot"


@lru_cache(maxsize=None)
def _template(name: str) -> str:
    return resources.files(__package__).joinpath("templates", name).read_text(encoding="utf-8").strip()


TEMPLATE_VERSION = _template("VERSION")


def prompt(name: str, **values: str) -> str:
    return Template(_template(f"{name}.txt")).substitute(values)


_TOKEN = re.compile(r"\b(INCLUDE|EXCLUDE)\b")


def parse_verdict(final_text: str) -> Verdict:
    """Return the verdict named by the last INCLUDE/EXCLUDE token in the text.

    Tokens are case-sensitive whole words; lowercase or inflected forms such
    as "include" or "EXCLUDED" do not count.
    """
    tokens = _TOKEN.findall(final_text)
    if not tokens:
        raise VerdictUnparseable(f"no INCLUDE or EXCLUDE token in response: {final_text[:80]!r}")
    return Verdict.INCLUDE if tokens[-1] == "INCLUDE" else Verdict.EXCLUDE


def content_hash(review_text: str, source: Source, method: Method | str, model_name: str) -> str:
    """Key identifying one screening's inputs; changes whenever any of them
    (or the prompt templates) change."""
    payload = json.dumps(
        [review_text, source.title, source.abstract, Method(method).value, model_name, TEMPLATE_VERSION],
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclass(frozen=True)
class ScreeningResult:
    source_id: str
    method: Method
    model_name: str
    verdict: Verdict | None
    transcript: Conversation
    content_hash: str
    usage: CompletionUsage = field(default_factory=CompletionUsage)
    started_at: str = ""
    finished_at: str = ""
    template_version: str = TEMPLATE_VERSION
    error: str | None = None  # error kind when verdict is None
    error_message: str | None = None

    @property
    def ok(self) -> bool:
        return self.verdict is not None

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "content_hash": self.content_hash,
            "method": self.method.value,
            "model_name": self.model_name,
            "template_version": self.template_version,
            "verdict": self.verdict.value if self.verdict else None,
            "error": self.error,
            "error_message": self.error_message,
            "usage": self.usage.to_dict(),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "transcript": render_transcript(self.transcript),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ScreeningResult:
        return cls(
            source_id=d["source_id"],
            method=Method(d["method"]),
            model_name=d["model_name"],
            verdict=Verdict(d["verdict"]) if d.get("verdict") else None,
            transcript=parse_transcript(d.get("transcript", "")),
            content_hash=d["content_hash"],
            usage=CompletionUsage(**d.get("usage", {})),
            started_at=d.get("started_at", ""),
            finished_at=d.get("finished_at", ""),
            template_version=d.get("template_version", ""),
            error=d.get("error"),
            error_message=d.get("error_message"),
        )


class _Session:
    """Accumulates a conversation and token usage for one screening."""

    def __init__(self, backend: Backend):
        self.backend = backend
        self.conv = Conversation()
        self.usage = CompletionUsage()

    def say(self, role: Role, text: str) -> None:
        self.conv = self.conv.append(Message(role, text))

    def reply(self) -> Message:
        msg, usage = self.backend.complete(self.conv)
        if msg.role is not Role.ASSISTANT:
            msg = Message(Role.ASSISTANT, msg.content)
        self.conv = self.conv.append(msg)
        self.usage = self.usage + usage
        return msg

    def verdict(self) -> Verdict | None:
        """Ask for the verdict turn, with one corrective retry."""
        try:
            return parse_verdict(self.reply().content)
        except VerdictUnparseable:
            pass
        self.say(Role.USER, prompt("corrective"))
        try:
            return parse_verdict(self.reply().content)
        except VerdictUnparseable:
            return None


def _run(backend: Backend, review_text: str, source: Source, method: Method, turns) -> ScreeningResult:
    if not review_text.strip():
        raise ValueError("review text must be non-empty")
    started = _now()
    session = _Session(backend)
    verdict = turns(session)
    result = ScreeningResult(
        source_id=source.id,
        method=method,
        model_name=backend.model_name,
        verdict=verdict,
        transcript=session.conv,
        content_hash=content_hash(review_text, source, method, backend.model_name),
        usage=session.usage,
        started_at=started,
        finished_at=_now(),
    )
    if verdict is None:
        last = last_assistant(session.conv)
        message = f"final answer for {source.id!r} named neither INCLUDE nor EXCLUDE: {last.content[:80]!r}"
        raise VerdictUnparseable(
            message, replace(result, error="VerdictUnparseable", error_message=message)
        )
    return result


def screen_source_cot(backend: Backend, review_text: str, source: Source) -> ScreeningResult:
    def turns(s: _Session) -> Verdict | None:
        s.say(Role.SYSTEM, prompt("cot_system"))
        s.say(Role.USER, prompt("cot_criteria", review=review_text))
        s.reply()
        s.say(Role.USER, prompt("cot_assess", title=source.title, abstract=source.abstract))
        s.reply()
        s.say(Role.USER, prompt("cot_verdict"))
        return s.verdict()

    return _run(backend, review_text, source, Method.COT, turns)


def screen_source_zeroshot(backend: Backend, review_text: str, source: Source) -> ScreeningResult:
    def turns(s: _Session) -> Verdict | None:
        s.say(Role.SYSTEM, prompt("zeroshot_system"))
        s.say(
            Role.USER,
            prompt("zeroshot_user", review=review_text, title=source.title, abstract=source.abstract),
        )
        return s.verdict()

    return _run(backend, review_text, source, Method.ZEROSHOT, turns)


def screen_source(backend: Backend, review_text: str, source: Source, method: Method | str = Method.COT) -> ScreeningResult:
    if Method(method) is Method.COT:
        return screen_source_cot(backend, review_text, source)
    return screen_source_zeroshot(backend, review_text, source)
