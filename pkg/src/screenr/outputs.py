"""Files written by a screening run: verdict table, transcripts, manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import re
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Sequence

from .conversation import render_transcript
from .engine import TEMPLATE_VERSION, ScreeningResult
from .errors import MissingColumn, UnreadableFile
from .labels import Verdict, parse_label

VERDICT_COLUMNS = ["id", "verdict", "method", "model", "hash", "error"]
ERROR_VERDICT = "error"


def package_version() -> str:
    try:
        return version("screenr")
    except PackageNotFoundError:
        return "unknown"


def write_verdicts(results: Sequence[ScreeningResult], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(VERDICT_COLUMNS)
        for r in results:
            w.writerow(
                [
                    r.source_id,
                    r.verdict.value if r.verdict else ERROR_VERDICT,
                    r.method.value,
                    r.model_name,
                    r.content_hash,
                    r.error or "",
                ]
            )


def read_verdicts(path: str | Path) -> dict[str, Verdict | None]:
    """Read a verdict table; failed screenings map to None."""
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8-sig", newline="")
    except OSError as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        for col in ("id", "verdict"):
            if col not in (reader.fieldnames or []):
                raise MissingColumn(f"{path}: verdict file needs an {col!r} column")
        out: dict[str, Verdict | None] = {}
        for row in reader:
            cell = row["verdict"].strip().lower()
            out[row["id"].strip()] = None if cell == ERROR_VERDICT else parse_label(cell)
    return out


_UNSAFE = re.compile(r"[^A-Za-z0-9._-]")


def transcript_filename(source_id: str) -> str:
    safe = _UNSAFE.sub("_", source_id)[:80] or "_"
    if safe != source_id:
        safe += "-" + hashlib.sha1(source_id.encode("utf-8")).hexdigest()[:8]
    return safe + ".txt"


def write_transcripts(results: Sequence[ScreeningResult], directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for r in results:
        header = (
            f"# source: {r.source_id}\n"
            f"# method: {r.method.value}  model: {r.model_name}  template: {r.template_version}\n"
            f"# verdict: {r.verdict.value if r.verdict else ERROR_VERDICT}"
            + (f"  ({r.error}: {r.error_message})" if r.error else "")
            + "\n\n"
        )
        (directory / transcript_filename(r.source_id)).write_text(
            header + render_transcript(r.transcript), encoding="utf-8"
        )


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(path: Path, command: str, config: dict, started_at: str, **extra) -> None:
    manifest = {
        "command": command,
        "screenr_version": package_version(),
        "template_version": TEMPLATE_VERSION,
        "config": config,
        "started_at": started_at,
        "finished_at": now(),
        **extra,
    }
    path.write_text(json.dumps(manifest, indent=2, ensure_ascii=False, default=str) + "\n", encoding="utf-8")
