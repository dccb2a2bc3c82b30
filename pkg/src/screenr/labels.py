from __future__ import annotations

from enum import Enum

from .errors import InvalidLabel


class Verdict(str, Enum):
    INCLUDE = "include"
    EXCLUDE = "exclude"


def parse_label(value: str) -> Verdict:
    """Read a human-entered include/exclude cell, ignoring case and padding."""
    try:
        return Verdict(str(value).strip().lower())
    except ValueError:
        raise InvalidLabel(f"expected 'include' or 'exclude', got {value!r}") from None
