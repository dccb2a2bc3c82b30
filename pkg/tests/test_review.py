import pytest

from screenr.errors import IncompleteDescription, InvalidLabel, MissingColumn, SampleTooLarge, UnreadableFile
from screenr.labels import Verdict
from screenr.review import (
    ReviewDescription,
    Source,
    build_review_description,
    ingest_sources,
    load_gold,
    sample_sources,
    write_sources,
)

from conftest import make_sources

ALPACA = ReviewDescription(
    title="Alpacas in aged care",
    objective="Map research on therapy alpacas.",
    population="Residents of aged care facilities",
    concept="Animal-assisted therapy with alpacas",
    context="Residential aged care",
)


def test_description_sections_in_order():
    text = build_review_description(ALPACA)
    labels = ["Title:", "Objective:", "Population:", "Concept:", "Context:"]
    positions = [text.index(label) for label in labels]
    assert positions == sorted(positions)
    assert "Residents of aged care facilities" in text
    assert "Additional criteria" not in text


def test_description_is_deterministic():
    assert build_review_description(ALPACA) == build_review_description(ALPACA)


def test_extra_criteria_section():
    parts = ReviewDescription(**{**vars(ALPACA), "extra_criteria": ("English only", "Primary research")})
    text = build_review_description(parts)
    assert text.index("Context:") < text.index("Additional criteria:")
    assert "- English only\n- Primary research" in text


def test_override_passthrough():
    raw = "  Anything goes here.\nEven *markdown*.\n"
    assert build_review_description(ReviewDescription(rendered_override=raw)) == raw


def test_incomplete_description():
    with pytest.raises(IncompleteDescription):
        build_review_description(ReviewDescription())
    with pytest.raises(IncompleteDescription, match="concept"):
        build_review_description(ReviewDescription(objective="o", population="p", context="c"))


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_ingest_drops_missing_abstract(tmp_path):
    rows = "\n".join(f"{i},Title {i},Abstract {i}" for i in range(1, 5))
    path = write(tmp_path, "s.csv", f"id,title,abstract\n{rows}\n5,Title 5,\n")
    sources, report = ingest_sources(path)
    assert [s.id for s in sources] == ["1", "2", "3", "4"]
    assert report.rows_read == 5 and report.kept == 4
    assert [(d.row, d.source_id, d.reason) for d in report.dropped] == [(5, "5", "missing abstract")]


def test_ingest_dedup_is_case_and_space_insensitive(tmp_path):
    path = write(
        tmp_path,
        "s.csv",
        'id,title,abstract\na,"Alpacas  Help",Some   text\nb,alpacas help,"some text "\n',
    )
    sources, report = ingest_sources(path)
    assert [s.id for s in sources] == ["a"]
    assert report.dropped[0].reason == "duplicate" and report.dropped[0].source_id == "b"


def test_ingest_missing_title_and_duplicate_id(tmp_path):
    path = write(tmp_path, "s.csv", "id,title,abstract\na,,x\nb,T,x\nb,U,y\n")
    sources, report = ingest_sources(path)
    assert [s.id for s in sources] == ["b"]
    assert [d.reason for d in report.dropped] == ["missing title", "duplicate id"]


def test_ingest_missing_column(tmp_path):
    path = write(tmp_path, "s.csv", "id,title,summary\n1,T,A\n")
    with pytest.raises(MissingColumn):
        ingest_sources(path)
    sources, _ = ingest_sources(path, {"abstract": "summary"})
    assert sources == [Source("1", "T", "A")]


def test_ingest_synthesises_ids(tmp_path):
    path = write(tmp_path, "s.csv", "title,abstract\nT1,A1\nT2,A2\n")
    sources, _ = ingest_sources(path)
    assert [s.id for s in sources] == ["row-1", "row-2"]


def test_ingest_explicit_id_column_must_exist(tmp_path):
    path = write(tmp_path, "s.csv", "title,abstract\nT1,A1\n")
    with pytest.raises(MissingColumn):
        ingest_sources(path, {"id": "record"})


def test_ingest_tsv_and_multiline(tmp_path):
    path = write(tmp_path, "s.tsv", 'id\ttitle\tabstract\nx\tA title\t"line one\nline two"\n')
    sources, _ = ingest_sources(path)
    assert sources == [Source("x", "A title", "line one\nline two")]


def test_ingest_unreadable(tmp_path):
    with pytest.raises(UnreadableFile):
        ingest_sources(tmp_path / "nope.csv")
    with pytest.raises(UnreadableFile):
        ingest_sources(write(tmp_path, "empty.csv", ""))


def test_ingest_idempotent(tmp_path):
    path = write(tmp_path, "s.csv", "id,title,abstract\n1,T,A\n2,T,A\n3,,A\n")
    assert ingest_sources(path) == ingest_sources(path)


def test_write_then_ingest_round_trip(tmp_path):
    sources = make_sources(5) + [Source("q", 'Quoted "title", with comma', "multi\nline")]
    write_sources(sources, tmp_path / "out.csv")
    assert ingest_sources(tmp_path / "out.csv")[0] == sources


def test_sample_full():
    sources = make_sources(7)
    assert sample_sources(sources, 7, seed=3) == sources


def test_sample_deterministic_and_ordered():
    sources = make_sources(100)
    a = sample_sources(sources, 10, seed=1)
    assert a == sample_sources(sources, 10, seed=1)
    assert len(a) == 10 and len(set(a)) == 10
    idx = [sources.index(s) for s in a]
    assert idx == sorted(idx)


def test_sample_too_large():
    with pytest.raises(SampleTooLarge):
        sample_sources(make_sources(3), 4, seed=0)


def test_load_gold_with_reviewers(tmp_path):
    path = write(
        tmp_path,
        "g.csv",
        "id,consensus,reviewer_A,reviewer_B\n1,Include,include,exclude\n2, EXCLUDE ,exclude,\n",
    )
    gold = load_gold(path)
    assert gold["1"].consensus is Verdict.INCLUDE
    assert gold["1"].reviewer_decisions == {"A": Verdict.INCLUDE, "B": Verdict.EXCLUDE}
    assert gold["2"].consensus is Verdict.EXCLUDE
    assert gold["2"].reviewer_decisions == {"A": Verdict.EXCLUDE, "B": None}


def test_load_gold_rejects_bad_labels(tmp_path):
    with pytest.raises(InvalidLabel, match="row 1"):
        load_gold(write(tmp_path, "g.csv", "id,consensus\n1,maybe\n"))
    with pytest.raises(InvalidLabel, match="duplicate"):
        load_gold(write(tmp_path, "h.csv", "id,consensus\n1,include\n1,exclude\n"))
    with pytest.raises(MissingColumn):
        load_gold(write(tmp_path, "i.csv", "id,label\n1,include\n"))
