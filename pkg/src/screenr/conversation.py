"""Role-tagged chat messages and append-only transcripts.

A transcript renders to plain text, one block per message::

    SYSTEM:
    You are ...
    USER:
    ...

Content lines that would be mistaken for a header (optionally preceded by
backslashes) get one extra leading backslash, which parsing strips again.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .errors import EmptyContent, TranscriptFormatError


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Message:
    role: Role
    content: str

    def __post_init__(self) -> None:
        # accept plain strings for role, e.g. when loading JSON
        object.__setattr__(self, "role", Role(self.role))
        if not isinstance(self.content, str) or not self.content.strip():
            raise EmptyContent(f"{self.role.value} message has empty content")

    def to_dict(self) -> dict:
        return {"role": self.role.value, "content": self.content}

    @classmethod
    def from_dict(cls, data: dict) -> Message:
        return cls(Role(data["role"]), data["content"])


def system(content: str) -> Message:
    return Message(Role.SYSTEM, content)


def user(content: str) -> Message:
    return Message(Role.USER, content)


def assistant(content: str) -> Message:
    return Message(Role.ASSISTANT, content)


@dataclass(frozen=True)
class Conversation:
    messages: tuple[Message, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))

    def __len__(self) -> int:
        return len(self.messages)

    def __iter__(self):
        return iter(self.messages)

    def __getitem__(self, index):
        return self.messages[index]

    def append(self, msg: Message) -> Conversation:
        return append(self, msg)

    def to_list(self) -> list[dict]:
        return [m.to_dict() for m in self.messages]

    @classmethod
    def from_list(cls, items: Iterable[dict]) -> Conversation:
        return cls(tuple(Message.from_dict(d) for d in items))


def append(conv: Conversation, msg: Message) -> Conversation:
    """Return a new conversation with ``msg`` added at the end."""
    if not isinstance(msg, Message):
        raise TypeError(f"expected Message, got {type(msg).__name__}")
    return Conversation(conv.messages + (msg,))


def last_assistant(conv: Conversation) -> Message | None:
    for msg in reversed(conv.messages):
        if msg.role is Role.ASSISTANT:
            return msg
    return None


_HEADERS = {f"{r.value.upper()}:": r for r in Role}
_HEADER_LIKE = re.compile(r"^\\*(?:SYSTEM|USER|ASSISTANT):$")


def _escape(line: str) -> str:
    return "\\" + line if _HEADER_LIKE.match(line) else line


def _unescape(line: str) -> str:
    return line[1:] if _HEADER_LIKE.match(line) and line.startswith("\\") else line


def render_transcript(conv: Conversation) -> str:
    out = []
    for msg in conv.messages:
        body = "\n".join(_escape(line) for line in msg.content.split("\n"))
        out.append(f"{msg.role.value.upper()}:\n{body}\n")
    return "".join(out)


def parse_transcript(text: str) -> Conversation:
    """Inverse of :func:`render_transcript`."""
    if not text:
        return Conversation()
    if not text.endswith("\n"):
        raise TranscriptFormatError("transcript must end with a newline")
    lines = text.split("\n")[:-1]
    if lines[0] not in _HEADERS:
        raise TranscriptFormatError(f"expected a role header, found {lines[0]!r}")
    blocks: list[tuple[Role, list[str]]] = []
    for line in lines:
        role = _HEADERS.get(line)
        if role is not None:
            blocks.append((role, []))
        else:
            blocks[-1][1].append(_unescape(line))
    return Conversation(tuple(Message(role, "\n".join(body)) for role, body in blocks))
