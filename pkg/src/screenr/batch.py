"""Batch screening with an append-only JSON-lines cache.

Each completed screening is appended to the cache as one self-contained
line before the batch moves on, so an interrupted run can be resumed and
only the sources without a live record are sent to the model again.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .backend import Backend
from .conversation import Conversation
from .engine import Method, ScreeningResult, content_hash, screen_source
from .errors import AuthError, BackendError, CacheCorrupt, VerdictUnparseable
from .review import Source

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

CacheKey = tuple[str, str]


@dataclass
class BatchReport:
    total: int = 0
    newly_screened: int = 0
    served_from_cache: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)

    def summary(self) -> str:
        return (
            f"{self.total} sources: {self.newly_screened} screened, "
            f"{self.served_from_cache} from cache, {len(self.failures)} failed"
        )


def encode_record(result: ScreeningResult) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **result.to_dict()}, ensure_ascii=False)


def decode_record(line: str) -> ScreeningResult:
    data = json.loads(line)
    if not isinstance(data, dict):
        raise ValueError("record is not a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version!r}")
    return ScreeningResult.from_dict(data)


def iter_cache(cache_path: str | Path, strict: bool = False):
    """Yield ``(line_number, result)`` for every readable record in file order."""
    path = Path(cache_path)
    if not path.exists():
        return
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield n, decode_record(line)
            except (ValueError, KeyError, TypeError) as exc:
                if strict:
                    raise CacheCorrupt(f"{path}:{n}: unreadable cache record ({exc})") from None
                log.warning("%s:%d: skipping unreadable cache record (%s)", path, n, exc)


def load_cache(cache_path: str | Path, strict: bool = False) -> dict[CacheKey, ScreeningResult]:
    """Map (source_id, content_hash) to the latest record for that key.

    A missing file is an empty cache. Failed screenings are included;
    check ``result.ok`` to tell them apart.
    """
    return {(r.source_id, r.content_hash): r for _, r in iter_cache(cache_path, strict)}


class CacheWriter:
    """Serialised appender; one full line per ``write`` call, flushed and
    synced before returning."""

    def __init__(self, cache_path: str | Path):
        self.path = Path(cache_path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        needs_newline = False
        if self.path.exists() and self.path.stat().st_size:
            with open(self.path, "rb") as fh:
                fh.seek(-1, os.SEEK_END)
                needs_newline = fh.read(1) != b"\n"
        self._fh = open(self.path, "a", encoding="utf-8")
        if needs_newline:
            # an earlier run died mid-line; keep that fragment on its own line
            self._fh.write("\n")

    def write(self, result: ScreeningResult) -> None:
        line = encode_record(result) + "\n"
        with self._lock:
            self._fh.write(line)
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> CacheWriter:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _attempt(backend: Backend, review_text: str, source: Source, method: Method, key_hash: str) -> ScreeningResult:
    """Screen one source, converting recoverable failures into error results."""
    try:
        return screen_source(backend, review_text, source, method)
    except VerdictUnparseable as exc:
        return exc.result
    except AuthError:
        raise
    except BackendError as exc:
        return ScreeningResult(
            source_id=source.id,
            method=method,
            model_name=backend.model_name,
            verdict=None,
            transcript=Conversation(),
            content_hash=key_hash,
            error=type(exc).__name__,
            error_message=str(exc),
        )


def screen_sources(
    backend: Backend,
    review_text: str,
    sources: Sequence[Source],
    method: Method | str,
    cache_path: str | Path,
    concurrency: int = 1,
    *,
    strict_cache: bool = False,
    retry_failures: bool = True,
    progress: Callable[[ScreeningResult, bool], None] | None = None,
) -> tuple[list[ScreeningResult], BatchReport]:
    """Screen every source, reusing live cache records.

    Results come back in input order. Failed screenings are recorded in the
    cache and the report but do not stop the batch, except for an
    authentication failure, which aborts it. ``progress`` is called with
    each result and whether it came from the cache.
    """
    method = Method(method)
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    ids = [s.id for s in sources]
    if len(set(ids)) != len(ids):
        raise ValueError("source ids must be unique within a batch")

    cache = load_cache(cache_path, strict=strict_cache)
    report = BatchReport(total=len(sources))
    results: list[ScreeningResult | None] = [None] * len(sources)
    pending: list[tuple[int, Source, str]] = []

    for i, source in enumerate(sources):
        h = content_hash(review_text, source, method, backend.model_name)
        hit = cache.get((source.id, h))
        if hit is not None and (hit.ok or not retry_failures):
            results[i] = hit
            if hit.ok:
                report.served_from_cache += 1
            else:
                report.failures.append((source.id, hit.error or "unknown"))
            if progress:
                progress(hit, True)
        else:
            pending.append((i, source, h))

    def finish(i: int, result: ScreeningResult) -> None:
        writer.write(result)
        results[i] = result
        if result.ok:
            report.newly_screened += 1
        else:
            report.failures.append((result.source_id, result.error or "unknown"))
        if progress:
            progress(result, False)

    with CacheWriter(cache_path) as writer:
        if concurrency == 1 or len(pending) <= 1:
            for i, source, h in pending:
                finish(i, _attempt(backend, review_text, source, method, h))
        else:
            _run_pool(backend, review_text, method, pending, concurrency, finish)

    # failures are listed in input order regardless of completion order
    order = {sid: n for n, sid in enumerate(ids)}
    report.failures.sort(key=lambda f: order[f[0]])
    return results, report  # type: ignore[return-value]


def _run_pool(backend, review_text, method, pending, concurrency, finish) -> None:
    abort: AuthError | None = None
    with ThreadPoolExecutor(max_workers=concurrency, thread_name_prefix="screenr") as pool:
        futures = {
            pool.submit(_attempt, backend, review_text, source, method, h): i for i, source, h in pending
        }
        remaining = set(futures)
        try:
            while remaining:
                done, remaining = wait(remaining, return_when=FIRST_COMPLETED)
                for fut in done:
                    if fut.cancelled():
                        continue
                    try:
                        result = fut.result()
                    except AuthError as exc:
                        if abort is None:
                            abort = exc
                            for other in remaining:
                                other.cancel()
                        continue
                    finish(futures[fut], result)
        except BaseException:
            for fut in remaining:
                fut.cancel()
            raise
    if abort is not None:
        raise abort
