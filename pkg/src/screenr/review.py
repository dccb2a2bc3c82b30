"""Review descriptions, candidate sources and gold-standard labels."""

from __future__ import annotations

import csv
import io
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import IncompleteDescription, InvalidLabel, MissingColumn, SampleTooLarge, UnreadableFile
from .labels import Verdict, parse_label

DEFAULT_COLUMNS = {"id": "id", "title": "title", "abstract": "abstract"}


@dataclass(frozen=True)
class ReviewDescription:
    title: str = ""
    objective: str = ""
    population: str = ""
    concept: str = ""
    context: str = ""
    extra_criteria: tuple[str, ...] = ()
    rendered_override: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "extra_criteria", tuple(self.extra_criteria))

    @property
    def missing_fields(self) -> list[str]:
        return [
            name
            for name in ("objective", "population", "concept", "context")
            if not getattr(self, name).strip()
        ]


def build_review_description(parts: ReviewDescription) -> str:
    """Render a review description as prompt text.

    A non-blank ``rendered_override`` is returned untouched. Otherwise the
    objective and the three PCC fields are all required and are laid out
    as labelled sections in a fixed order.
    """
    if parts.rendered_override is not None and parts.rendered_override.strip():
        return parts.rendered_override
    missing = parts.missing_fields
    if missing:
        raise IncompleteDescription("review description is missing: " + ", ".join(missing))

    sections = []
    if parts.title.strip():
        sections.append(("Title", parts.title.strip()))
    sections += [
        ("Objective", parts.objective.strip()),
        ("Population", parts.population.strip()),
        ("Concept", parts.concept.strip()),
        ("Context", parts.context.strip()),
    ]
    extra = [c.strip() for c in parts.extra_criteria if c.strip()]
    if extra:
        sections.append(("Additional criteria", "\n".join(f"- {c}" for c in extra)))
    return "\n\n".join(f"{label}:\n{body}" for label, body in sections) + "\n"


@dataclass(frozen=True)
class Source:
    id: str
    title: str
    abstract: str

    def __post_init__(self) -> None:
        if not self.title.strip():
            raise ValueError(f"source {self.id!r} has an empty title")
        if not self.abstract.strip():
            raise ValueError(f"source {self.id!r} has an empty abstract")


@dataclass(frozen=True)
class DroppedRow:
    row: int  # 1-based data row, header excluded
    source_id: str
    reason: str


@dataclass
class IngestReport:
    path: str
    rows_read: int = 0
    dropped: list[DroppedRow] = field(default_factory=list)

    @property
    def kept(self) -> int:
        return self.rows_read - len(self.dropped)

    def summary(self) -> str:
        lines = [f"{self.path}: {self.rows_read} rows read, {self.kept} kept, {len(self.dropped)} dropped"]
        lines += [f"  row {d.row} ({d.source_id}): {d.reason}" for d in self.dropped]
        return "\n".join(lines)


def _normalise(text: str) -> str:
    return " ".join(text.lower().split())


def _open_table(path: Path) -> tuple[list[str], list[dict[str, str]]]:
    try:
        text = path.read_text(encoding="utf-8-sig")
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}") from None
    first = text.splitlines()[0] if text else ""
    if path.suffix.lower() in (".tsv", ".tab") or ("\t" in first and "," not in first):
        delimiter = "\t"
    else:
        delimiter = ","
    reader = csv.DictReader(io.StringIO(text, newline=""), delimiter=delimiter)
    if not reader.fieldnames:
        raise UnreadableFile(f"{path} has no header row")
    header = [h.strip() for h in reader.fieldnames]
    reader.fieldnames = header
    try:
        rows = [{k: (v or "") for k, v in row.items() if k is not None} for row in reader]
    except csv.Error as exc:
        raise UnreadableFile(f"cannot parse {path}: {exc}") from None
    return header, rows


def ingest_sources(
    path: str | Path, mapping: Mapping[str, str] | None = None
) -> tuple[list[Source], IngestReport]:
    """Read sources from a CSV or TSV file with a header row.

    ``mapping`` maps the logical fields ``id``, ``title`` and ``abstract`` to
    column names in the file. Without an id column, ids are synthesised as
    ``row-<n>``. Rows lacking a title or abstract, and duplicates by id or by
    normalised title+abstract, are dropped and listed in the report.
    """
    path = Path(path)
    cols = {**DEFAULT_COLUMNS, **(mapping or {})}
    header, rows = _open_table(path)
    for key in ("title", "abstract"):
        if cols[key] not in header:
            raise MissingColumn(f"{path}: column {cols[key]!r} (for {key}) not found in header {header}")
    has_id = cols["id"] in header
    if cols["id"] != DEFAULT_COLUMNS["id"] and not has_id:
        raise MissingColumn(f"{path}: column {cols['id']!r} (for id) not found in header {header}")

    report = IngestReport(str(path), rows_read=len(rows))
    sources: list[Source] = []
    seen_ids: set[str] = set()
    seen_content: set[tuple[str, str]] = set()
    for n, row in enumerate(rows, start=1):
        sid = row.get(cols["id"], "").strip() if has_id else ""
        sid = sid or f"row-{n}"
        title = row[cols["title"]].strip()
        abstract = row[cols["abstract"]].strip()
        if not title:
            reason = "missing title"
        elif not abstract:
            reason = "missing abstract"
        elif sid in seen_ids:
            reason = "duplicate id"
        elif (_normalise(title), _normalise(abstract)) in seen_content:
            reason = "duplicate"
        else:
            reason = None
        if reason:
            report.dropped.append(DroppedRow(n, sid, reason))
            continue
        seen_ids.add(sid)
        seen_content.add((_normalise(title), _normalise(abstract)))
        sources.append(Source(sid, title, abstract))
    return sources, report


def sample_sources(sources: Sequence[Source], n: int, seed: int) -> list[Source]:
    """Uniform sample without replacement; keeps the input's relative order."""
    if n < 0:
        raise ValueError("sample size must be non-negative")
    if n > len(sources):
        raise SampleTooLarge(f"cannot sample {n} of {len(sources)} sources")
    picked = sorted(random.Random(seed).sample(range(len(sources)), n))
    return [sources[i] for i in picked]


def write_sources(sources: Sequence[Source], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "title", "abstract"])
        for s in sources:
            w.writerow([s.id, s.title, s.abstract])


@dataclass(frozen=True)
class GoldLabel:
    source_id: str
    consensus: Verdict
    reviewer_decisions: Mapping[str, Verdict | None] = field(default_factory=dict)


_REVIEWER_COL = re.compile(r"^reviewer_(.+)$")


def load_gold(path: str | Path, id_column: str = "id", consensus_column: str = "consensus") -> dict[str, GoldLabel]:
    """Read gold labels; ``reviewer_<name>`` columns hold individual decisions
    (blank cells mean that reviewer did not screen the source)."""
    path = Path(path)
    header, rows = _open_table(path)
    for col in (id_column, consensus_column):
        if col not in header:
            raise MissingColumn(f"{path}: column {col!r} not found in header {header}")
    reviewers = {m.group(1): col for col in header if (m := _REVIEWER_COL.match(col))}
    gold: dict[str, GoldLabel] = {}
    for n, row in enumerate(rows, start=1):
        sid = row[id_column].strip()
        if not sid:
            raise InvalidLabel(f"{path}: row {n} has no id")
        if sid in gold:
            raise InvalidLabel(f"{path}: duplicate id {sid!r} at row {n}")
        try:
            consensus = parse_label(row[consensus_column])
            decisions = {
                name: parse_label(row[col]) if row[col].strip() else None for name, col in reviewers.items()
            }
        except InvalidLabel as exc:
            raise InvalidLabel(f"{path}: row {n}: {exc}") from None
        gold[sid] = GoldLabel(sid, consensus, decisions)
    return gold
