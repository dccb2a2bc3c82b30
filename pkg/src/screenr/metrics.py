"""Agreement statistics for validating screening verdicts against gold labels.

Include is the positive class throughout. Statistics whose denominator is
zero are ``None`` and are left out of weighted averages rather than being
counted as 0.
"""

from __future__ import annotations

import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

from .errors import EmptyInput, EmptyMatrix, LengthMismatch, UnlabelledSource
from .labels import Verdict

REPORT_SCHEMA = "screenr.metrics/1"
STATS = ("accuracy", "sensitivity", "specificity")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def denominators(self) -> dict[str, int]:
        return {"accuracy": self.n, "sensitivity": self.tp + self.fn, "specificity": self.tn + self.fp}

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion(verdicts: Mapping[str, Verdict], gold: Mapping[str, Verdict]) -> ConfusionMatrix:
    """Count model verdicts against gold labels. Callers drop sources whose
    screening failed before calling this."""
    tp = fp = tn = fn = 0
    for sid, v in verdicts.items():
        if sid not in gold:
            raise UnlabelledSource(f"no gold label for source {sid!r}")
        g = Verdict(gold[sid])
        v = Verdict(v)
        if v is Verdict.INCLUDE:
            if g is Verdict.INCLUDE:
                tp += 1
            else:
                fp += 1
        elif g is Verdict.EXCLUDE:
            tn += 1
        else:
            fn += 1
    return ConfusionMatrix(tp, fp, tn, fn)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def stats(m: ConfusionMatrix) -> tuple[float, float | None, float | None]:
    """(accuracy, sensitivity, specificity) for a non-empty matrix."""
    if m.n == 0:
        raise EmptyMatrix("confusion matrix has no observations")
    return (m.tp + m.tn) / m.n, _ratio(m.tp, m.tp + m.fn), _ratio(m.tn, m.tn + m.fp)


def _kappa(n: int, agree: int, chance: int) -> float:
    """Kappa from integer counts: ``agree`` = diagonal total, ``chance`` =
    sum over categories of the product of the two raters' marginal counts.

    Equivalent to (p_o - p_e) / (1 - p_e) with p_o = agree/n and
    p_e = chance/n^2, but exact up to the final division.
    """
    if chance == n * n:
        # both raters used one and the same category throughout
        return 1.0
    return (agree * n - chance) / (n * n - chance)


def cohen_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Unweighted Cohen's kappa between two raters' paired decisions."""
    if len(a) != len(b):
        raise LengthMismatch(f"rater sequences differ in length ({len(a)} vs {len(b)})")
    n = len(a)
    if n == 0:
        raise EmptyInput("cohen_kappa needs at least one paired decision")
    agree = sum(x == y for x, y in zip(a, b))
    ca, cb = Counter(a), Counter(b)
    return _kappa(n, agree, sum(ca[k] * cb[k] for k in ca))


def kappa_from_matrix(m: ConfusionMatrix) -> float:
    """Model-vs-gold kappa from a confusion matrix."""
    if m.n == 0:
        raise EmptyMatrix("confusion matrix has no observations")
    chance = (m.tp + m.fp) * (m.tp + m.fn) + (m.tn + m.fn) * (m.tn + m.fp)
    return _kappa(m.n, m.tp + m.tn, chance)


def human_kappa(decisions: Iterable[Mapping[str, Verdict | None]]) -> tuple[float, int] | None:
    """Mean pairwise kappa between named reviewers, plus the number of
    sources it rests on. Only sources rated by both members of a pair count.
    Returns None when no pair shares a rated source."""
    rows = list(decisions)
    names = sorted({name for row in rows for name in row})
    kappas, sizes = [], []
    for r1, r2 in itertools.combinations(names, 2):
        pairs = [(row[r1], row[r2]) for row in rows if row.get(r1) is not None and row.get(r2) is not None]
        if pairs:
            kappas.append(cohen_kappa([p[0] for p in pairs], [p[1] for p in pairs]))
            sizes.append(len(pairs))
    if not kappas:
        return None
    return sum(kappas) / len(kappas), max(sizes)


@dataclass(frozen=True)
class ReviewScore:
    review_name: str
    matrix: ConfusionMatrix
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    kappa_model_vs_gold: float | None
    kappa_human_vs_human: float | None = None
    human_n: int = 0
    parse_failures: int = 0

    @classmethod
    def from_matrix(
        cls,
        name: str,
        m: ConfusionMatrix,
        kappa_human: tuple[float, int] | None = None,
        parse_failures: int = 0,
    ) -> ReviewScore:
        acc, sens, spec = stats(m) if m.n else (None, None, None)
        return cls(
            review_name=name,
            matrix=m,
            accuracy=acc,
            sensitivity=sens,
            specificity=spec,
            kappa_model_vs_gold=kappa_from_matrix(m) if m.n else None,
            kappa_human_vs_human=kappa_human[0] if kappa_human else None,
            human_n=kappa_human[1] if kappa_human else 0,
            parse_failures=parse_failures,
        )


@dataclass(frozen=True)
class AggregateScore:
    matrix: ConfusionMatrix
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    kappa_model_vs_gold: float | None
    kappa_human_vs_human: float | None
    pooled: dict[str, float | None] = field(default_factory=dict)
    parse_failures: int = 0


def weighted_mean(pairs: Iterable[tuple[float | None, int]]) -> float | None:
    """Weighted mean over (value, weight) pairs, skipping undefined values."""
    num = den = 0
    for value, weight in pairs:
        if value is not None and weight > 0:
            num += value * weight
            den += weight
    return num / den if den else None


def aggregate(scores: Sequence[ReviewScore]) -> AggregateScore:
    """Combine per-review scores.

    Each statistic is averaged with its own per-review denominator as the
    weight (n for accuracy and kappa, gold positives for sensitivity, gold
    negatives for specificity), which makes the three ratios equal to those
    of the pooled matrix.
    """
    if not scores:
        raise EmptyInput("aggregate needs at least one review score")
    pooled = sum((s.matrix for s in scores), ConfusionMatrix())
    weighted = {
        name: weighted_mean((getattr(s, name), s.matrix.denominators()[name]) for s in scores) for name in STATS
    }
    pooled_stats = dict(zip(STATS, stats(pooled))) if pooled.n else dict.fromkeys(STATS)
    return AggregateScore(
        matrix=pooled,
        kappa_model_vs_gold=weighted_mean((s.kappa_model_vs_gold, s.matrix.n) for s in scores),
        kappa_human_vs_human=weighted_mean((s.kappa_human_vs_human, s.human_n) for s in scores),
        pooled=pooled_stats,
        parse_failures=sum(s.parse_failures for s in scores),
        **weighted,
    )


# reporting

DECIMALS = 4
UNDEFINED = "—"


def _num(x: float | None) -> float | None:
    return None if x is None else round(x, DECIMALS)


def _cell(x: float | None) -> str:
    return UNDEFINED if x is None else f"{x:.{DECIMALS}f}"


def _stat_fields(obj) -> dict:
    out = {}
    for name in (*STATS, "kappa_model_vs_gold", "kappa_human_vs_human"):
        value = _num(getattr(obj, name))
        if value is not None:
            out[name] = value
    return out


def report_data(scores: Sequence[ReviewScore], agg: AggregateScore, label: str | None = None) -> dict:
    """Machine-readable report. Undefined statistics are omitted."""
    data = {
        "schema": REPORT_SCHEMA,
        "decimals": DECIMALS,
        "reviews": [
            {
                "review": s.review_name,
                **s.matrix.to_dict(),
                "n": s.matrix.n,
                "parse_failures": s.parse_failures,
                **_stat_fields(s),
            }
            for s in scores
        ],
        "aggregate": {
            **agg.matrix.to_dict(),
            "n": agg.matrix.n,
            "parse_failures": agg.parse_failures,
            "weighting": "per-statistic denominator",
            **_stat_fields(agg),
            "pooled": {k: _num(v) for k, v in agg.pooled.items() if v is not None},
        },
    }
    if label:
        data["label"] = label
    return data


_COLUMNS = [
    ("review", 14),
    ("n", 5),
    ("tp", 5),
    ("fp", 5),
    ("tn", 5),
    ("fn", 5),
    ("accuracy", 9),
    ("sensitivity", 11),
    ("specificity", 11),
    ("kappa", 8),
    ("kappa_h", 8),
    ("failed", 6),
]


def _row(name: str, m: ConfusionMatrix, obj, failures: int) -> list[str]:
    return [
        name,
        str(m.n),
        str(m.tp),
        str(m.fp),
        str(m.tn),
        str(m.fn),
        _cell(obj.accuracy),
        _cell(obj.sensitivity),
        _cell(obj.specificity),
        _cell(obj.kappa_model_vs_gold),
        _cell(obj.kappa_human_vs_human),
        str(failures),
    ]


def report(scores: Sequence[ReviewScore], agg: AggregateScore, label: str | None = None) -> tuple[str, dict]:
    """Render a per-review table with an aggregate row, and the matching
    machine-readable dict. Both carry the same rounded numbers."""
    header = [name for name, _ in _COLUMNS]
    rows = [_row(s.review_name, s.matrix, s, s.parse_failures) for s in scores]
    rows.append(_row("AGGREGATE", agg.matrix, agg, agg.parse_failures))
    widths = [max(w, *(len(r[i]) for r in rows)) for i, (_, w) in enumerate(_COLUMNS)]

    def fmt(cells):
        return "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))

    lines = []
    if label:
        lines.append(label)
    lines += [fmt(header), fmt(["-" * w for w in widths])]
    lines += [fmt(r) for r in rows[:-1]]
    lines += [fmt(["-" * w for w in widths]), fmt(rows[-1])]
    lines.append("kappa = model vs gold; kappa_h = between human reviewers; aggregate weighted by each statistic's denominator")
    return "\n".join(lines) + "\n", report_data(scores, agg, label)


def dump_report(data: dict) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"
