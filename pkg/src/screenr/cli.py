"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 finished with
failed screenings.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
from click.core import ParameterSource

from . import metrics
from .backend import API_KEY_ENV, DEFAULT_MODEL, BackendConfig, LiveBackend, ScriptedBackend
from .batch import iter_cache, screen_sources
from .engine import Method
from .errors import AuthError, ScreenrError, SourceSetMismatch
from .outputs import now, read_verdicts, write_manifest, write_transcripts, write_verdicts
from .review import ReviewDescription, build_review_description, ingest_sources, load_gold, sample_sources, write_sources

log = logging.getLogger("screenr")

EXIT_OK, EXIT_USAGE, EXIT_FAILURES = 0, 1, 2


def _column_options(f):
    f = click.option("--abstract-column", default="abstract", show_default=True)(f)
    f = click.option("--title-column", default="title", show_default=True)(f)
    f = click.option("--id-column", default="id", show_default=True)(f)
    return f


def _mapping(id_column: str, title_column: str, abstract_column: str) -> dict:
    return {"id": id_column, "title": title_column, "abstract": abstract_column}


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def cli(verbose: int) -> None:
    """Screen scoping-review sources with an LLM and score the verdicts."""
    logging.basicConfig(
        level=logging.WARNING - 10 * min(verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


# describe


@cli.command()
@click.option("--title", default="")
@click.option("--objective")
@click.option("--population")
@click.option("--concept")
@click.option("--context")
@click.option("--criterion", "criteria", multiple=True, help="Additional criterion; repeatable.")
@click.option("--free-text", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Use this file's text verbatim as the review description.")
@click.option("--interactive", is_flag=True, help="Prompt for any PCC field not given as a flag.")
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
def describe(title, objective, population, concept, context, criteria, free_text, interactive, out) -> int:
    """Write a review description file for use with `screen`."""
    started = now()
    if free_text is not None:
        if any((objective, population, concept, context, criteria)):
            raise click.UsageError("--free-text cannot be combined with PCC flags")
        parts = ReviewDescription(rendered_override=free_text.read_text(encoding="utf-8"))
    else:
        fields = {"objective": objective, "population": population, "concept": concept, "context": context}
        for name, value in fields.items():
            if not value and interactive:
                fields[name] = click.prompt(name.capitalize())
        missing = [name for name, value in fields.items() if not value]
        if missing:
            raise click.UsageError("missing " + ", ".join(f"--{m}" for m in missing) + " (or use --free-text)")
        parts = ReviewDescription(title=title, extra_criteria=criteria, **fields)
    text = build_review_description(parts)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    write_manifest(
        out.with_name(out.name + ".manifest.json"),
        "describe",
        {"out": str(out), "free_text": str(free_text) if free_text else None},
        started,
    )
    click.echo(f"wrote {out}")
    return EXIT_OK


# screen


def _make_backend(spec: str, model: str, api_key_file, base_url, rpm, temperature, max_retries):
    if spec.startswith("scripted:"):
        explicit = click.get_current_context().get_parameter_source("model") is not ParameterSource.DEFAULT
        return ScriptedBackend.from_file(spec.split(":", 1)[1], model_name=model if explicit else None)
    if spec != "live":
        raise click.UsageError(f"--backend must be 'live' or 'scripted:PATH', got {spec!r}")
    key = api_key_file.read_text(encoding="utf-8").strip() if api_key_file else None
    config = BackendConfig.from_env(
        api_key=key,
        base_url=base_url,
        model_name=model,
        temperature=temperature,
        max_retries=max_retries,
        requests_per_minute=rpm,
    )
    return LiveBackend(config)


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--review", "review_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--method", type=click.Choice([m.value for m in Method]), default="cot", show_default=True)
@click.option("--model", default=DEFAULT_MODEL, show_default=True)
@click.option("--sample", "sample_n", type=click.IntRange(min=1), help="Screen a random subset of N sources.")
@click.option("--seed", type=int, help="Seed for --sample.")
@click.option("--cache", "cache_path", type=click.Path(dir_okay=False, path_type=Path),
              help="Cache file [default: OUT/cache.jsonl].")
@click.option("--concurrency", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--backend", "backend_spec", default="live", show_default=True, help="live or scripted:PATH")
@click.option("--strict-cache", is_flag=True, help="Abort on unreadable cache lines instead of skipping them.")
@click.option("--retry-failures/--no-retry-failures", default=True, show_default=True,
              help="Re-screen sources whose cached screening failed.")
@click.option("--api-key-file", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help=f"Read the API key from this file instead of ${API_KEY_ENV}.")
@click.option("--base-url", help="OpenAI-compatible server root [default: $SCREENR_BASE_URL or OpenAI].")
@click.option("--rpm", type=click.FloatRange(min=0, min_open=True), default=60.0, show_default=True,
              help="Request rate limit per minute.")
@click.option("--temperature", type=click.FloatRange(0, 2), default=0.0, show_default=True)
@click.option("--max-retries", type=click.IntRange(min=0), default=5, show_default=True)
@_column_options
def screen(input_path, review_path, method, model, sample_n, seed, cache_path, concurrency, out_dir,
           backend_spec, strict_cache, retry_failures, api_key_file, base_url, rpm, temperature, max_retries,
           id_column, title_column, abstract_column) -> int:
    """Screen every source in INPUT against the review description."""
    started = now()
    if seed is not None and sample_n is None:
        raise click.UsageError("--seed only applies together with --sample")
    if sample_n is not None and seed is None:
        raise click.UsageError("--sample needs --seed so the subset can be reproduced")

    review_text = review_path.read_text(encoding="utf-8")
    if not review_text.strip():
        raise click.UsageError(f"review description {review_path} is empty")
    sources, ingest = ingest_sources(input_path, _mapping(id_column, title_column, abstract_column))
    if ingest.dropped:
        click.echo(ingest.summary(), err=True)
    if sample_n is not None:
        sources = sample_sources(sources, sample_n, seed)

    backend = _make_backend(backend_spec, model, api_key_file, base_url, rpm, temperature, max_retries)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_path = cache_path or out_dir / "cache.jsonl"

    def progress(result, cached):
        state = result.verdict.value if result.verdict else f"failed ({result.error})"
        log.info("%s: %s%s", result.source_id, state, " [cached]" if cached else "")

    try:
        results, report = screen_sources(
            backend, review_text, sources, method, cache_path, concurrency,
            strict_cache=strict_cache, retry_failures=retry_failures, progress=progress,
        )
    finally:
        if isinstance(backend, LiveBackend):
            backend.close()

    write_verdicts(results, out_dir / "verdicts.csv")
    write_transcripts(results, out_dir / "transcripts")
    config = {
        "input": str(input_path),
        "review": str(review_path),
        "method": method,
        "model": backend.model_name,
        "backend": "live" if backend_spec == "live" else "scripted",
        "sample": sample_n,
        "seed": seed,
        "cache": str(cache_path),
        "concurrency": concurrency,
        "columns": _mapping(id_column, title_column, abstract_column),
        "strict_cache": strict_cache,
        "retry_failures": retry_failures,
        "temperature": temperature,
        "max_retries": max_retries,
        "rpm": rpm,
    }
    write_manifest(
        out_dir / "manifest.json", "screen", config, started,
        model=backend.model_name, seed=seed,
        sources=[s.id for s in sources],
        ingest={"rows_read": ingest.rows_read, "dropped": [vars(d) for d in ingest.dropped]},
        batch={"total": report.total, "newly_screened": report.newly_screened,
               "served_from_cache": report.served_from_cache, "failures": report.failures},
    )
    click.echo(report.summary())
    for sid, kind in report.failures:
        click.echo(f"  failed: {sid} ({kind})", err=True)
    return EXIT_FAILURES if report.failures else EXIT_OK


# sample


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("-n", "--size", "n", required=True, type=click.IntRange(min=0))
@click.option("--seed", required=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
@_column_options
def sample(input_path, n, seed, out, id_column, title_column, abstract_column) -> int:
    """Write a reproducible random subset of the sources to OUT."""
    started = now()
    sources, ingest = ingest_sources(input_path, _mapping(id_column, title_column, abstract_column))
    subset = sample_sources(sources, n, seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sources(subset, out)
    write_manifest(out.with_name(out.name + ".manifest.json"), "sample",
                   {"input": str(input_path), "n": n, "seed": seed}, started, seed=seed)
    click.echo(f"wrote {len(subset)} of {len(sources)} sources to {out}")
    return EXIT_OK


# validate / compare


def _names(names, golds) -> list[str]:
    if names:
        if len(names) != len(golds):
            raise click.UsageError("give one --name per --gold file")
        return list(names)
    stems = [Path(g).stem for g in golds]
    if len(set(stems)) != len(stems):
        return [f"{s}-{i + 1}" for i, s in enumerate(stems)]
    return stems


def score_review(name: str, verdicts: dict, gold: dict) -> metrics.ReviewScore:
    """Score one review's verdict table against its gold labels."""
    for sid in verdicts:
        if sid not in gold:
            raise metrics.UnlabelledSource(f"{name}: no gold label for source {sid!r}")
    ok = {sid: v for sid, v in verdicts.items() if v is not None}
    failures = len(verdicts) - len(ok)
    m = metrics.confusion(ok, {sid: g.consensus for sid, g in gold.items()})
    human = None
    if any(g.reviewer_decisions for g in gold.values()):
        human = metrics.human_kappa(gold[sid].reviewer_decisions for sid in verdicts)
    return metrics.ReviewScore.from_matrix(name, m, human, failures)


def _write_report(out_dir: Path, stem: str, text: str, data: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.txt").write_text(text, encoding="utf-8")
    (out_dir / f"{stem}.json").write_text(metrics.dump_report(data), encoding="utf-8")


@cli.command()
@click.option("--verdicts", "verdict_paths", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--gold", "gold_paths", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--name", "names", multiple=True, help="Review name per --gold file, in order.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
def validate(verdict_paths, gold_paths, names, out_dir) -> int:
    """Score verdict files against gold labels, one review per --verdicts/--gold pair."""
    started = now()
    if len(verdict_paths) != len(gold_paths):
        raise click.UsageError("give one --gold file per --verdicts file")
    names = _names(names, gold_paths)
    scores = [
        score_review(name, read_verdicts(v), load_gold(g)) for name, v, g in zip(names, verdict_paths, gold_paths)
    ]
    text, data = metrics.report(scores, metrics.aggregate(scores))
    _write_report(out_dir, "report", text, data)
    write_manifest(out_dir / "manifest.json", "validate",
                   {"verdicts": [str(p) for p in verdict_paths], "gold": [str(p) for p in gold_paths],
                    "names": names}, started)
    click.echo(text, nl=False)
    return EXIT_OK


def _paired_table(cot: list, zs: list, agg_cot, agg_zs) -> str:
    stats = ("accuracy", "sensitivity", "specificity", "kappa_model_vs_gold")
    header = f"{'review':<14}  {'statistic':<20}  {'cot':>8}  {'zeroshot':>8}"
    lines = [header, "-" * len(header)]
    for name, a, b in [(c.review_name, c, z) for c, z in zip(cot, zs)] + [("AGGREGATE", agg_cot, agg_zs)]:
        for stat in stats:
            lines.append(
                f"{name:<14}  {stat:<20}  {metrics._cell(getattr(a, stat)):>8}  {metrics._cell(getattr(b, stat)):>8}"
            )
    return "\n".join(lines) + "\n"


@cli.command()
@click.option("--cot", "cot_paths", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--zeroshot", "zs_paths", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--gold", "gold_paths", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--name", "names", multiple=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
def compare(cot_paths, zs_paths, gold_paths, names, out_dir) -> int:
    """Score chain-of-thought and zero-shot verdicts side by side."""
    started = now()
    if not len(cot_paths) == len(zs_paths) == len(gold_paths):
        raise click.UsageError("give matching numbers of --cot, --zeroshot and --gold files")
    names = _names(names, gold_paths)
    cot_scores, zs_scores = [], []
    for name, c, z, g in zip(names, cot_paths, zs_paths, gold_paths):
        gold = load_gold(g)
        cv, zv = read_verdicts(c), read_verdicts(z)
        if set(cv) != set(zv):
            diff = sorted(set(cv) ^ set(zv))
            raise SourceSetMismatch(
                f"{name}: cot and zeroshot verdicts cover different sources ({len(diff)} differ, e.g. {diff[:3]})"
            )
        cot_scores.append(score_review(name, cv, gold))
        zs_scores.append(score_review(name, zv, gold))
    agg_c, agg_z = metrics.aggregate(cot_scores), metrics.aggregate(zs_scores)
    cot_text, cot_data = metrics.report(cot_scores, agg_c, label="method: cot")
    zs_text, zs_data = metrics.report(zs_scores, agg_z, label="method: zeroshot")
    paired = _paired_table(cot_scores, zs_scores, agg_c, agg_z)
    text = paired + "\n" + cot_text + "\n" + zs_text
    data = {"schema": "screenr.compare/1", "cot": cot_data, "zeroshot": zs_data}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "compare.txt").write_text(text, encoding="utf-8")
    (out_dir / "compare.json").write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    write_manifest(out_dir / "manifest.json", "compare",
                   {"cot": [str(p) for p in cot_paths], "zeroshot": [str(p) for p in zs_paths],
                    "gold": [str(p) for p in gold_paths], "names": names}, started)
    click.echo(text, nl=False)
    return EXIT_OK


# cache


@cli.group()
def cache() -> None:
    """Work with screening cache files."""


@cache.command("inspect")
@click.argument("path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--strict", is_flag=True, help="Fail on unreadable lines.")
def cache_inspect(path, strict) -> int:
    """List the records in a cache file, marking superseded ones."""
    records = list(iter_cache(path, strict=strict))
    latest = {(r.source_id, r.content_hash): n for n, r in records}
    click.echo(f"{'line':>5}  {'source':<20}  {'method':<8}  {'model':<14}  {'verdict':<8}  {'hash':<12}  note")
    for n, r in records:
        note = [] if latest[(r.source_id, r.content_hash)] == n else ["superseded"]
        if r.error:
            note.append(r.error)
        verdict = r.verdict.value if r.verdict else "error"
        click.echo(
            f"{n:>5}  {r.source_id:<20}  {r.method.value:<8}  {r.model_name:<14}  {verdict:<8}  "
            f"{r.content_hash[:12]:<12}  {', '.join(note)}"
        )
    live = len(latest)
    failed = sum(1 for n, r in records if latest[(r.source_id, r.content_hash)] == n and not r.ok)
    click.echo(f"{len(records)} records, {live} live keys, {failed} live failures")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="screenr", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except AuthError as exc:
        click.echo(f"error: {exc}; check {API_KEY_ENV}", err=True)
        return EXIT_USAGE
    except ScreenrError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
