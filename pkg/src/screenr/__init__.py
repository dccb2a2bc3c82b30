"""LLM-assisted title and abstract screening for scoping reviews."""

from .backend import BackendConfig, CompletionUsage, LiveBackend, ScriptedBackend
from .batch import BatchReport, load_cache, screen_sources
from .conversation import Conversation, Message, Role, append, last_assistant, parse_transcript, render_transcript
from .engine import (
    TEMPLATE_VERSION,
    Method,
    ScreeningResult,
    Verdict,
    parse_verdict,
    screen_source,
    screen_source_cot,
    screen_source_zeroshot,
)
from .metrics import ConfusionMatrix, aggregate, cohen_kappa, confusion, stats
from .review import ReviewDescription, Source, build_review_description, ingest_sources, load_gold, sample_sources

__all__ = [
    "BackendConfig",
    "BatchReport",
    "CompletionUsage",
    "ConfusionMatrix",
    "Conversation",
    "LiveBackend",
    "Message",
    "Method",
    "ReviewDescription",
    "Role",
    "ScreeningResult",
    "ScriptedBackend",
    "Source",
    "TEMPLATE_VERSION",
    "Verdict",
    "aggregate",
    "append",
    "build_review_description",
    "cohen_kappa",
    "confusion",
    "ingest_sources",
    "last_assistant",
    "load_cache",
    "load_gold",
    "parse_transcript",
    "parse_verdict",
    "render_transcript",
    "sample_sources",
    "screen_source",
    "screen_source_cot",
    "screen_source_zeroshot",
    "screen_sources",
    "stats",
]
