"""`forge` command line: one subcommand per pipeline stage.

Configuration precedence is flags > config file > defaults. Every
non-dry run writes a run manifest (command line, config hash, tool
versions, timestamps, output hashes) next to its outputs. Exit codes:
0 success, 1 user error, 2 environment/tool error.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import logging
import platform
import shlex
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import click

from . import __version__, corpus, dataset, distill, docindex, evalharness, judge
from .llmclient import ChatClient, ClientConfig, PermanentError, TransportError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USER = 1
EXIT_ENV = 2


class EnvironmentFailure(click.ClickException):
    exit_code = EXIT_ENV


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise click.ClickException(f"config file not found: {path}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise click.ClickException(f"invalid config JSON: {exc}")


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


class RunManifest:
    def __init__(self, cfg: dict):
        self.data = {
            "command_line": shlex.join(sys.argv),
            "config_hash": _config_hash(cfg),
            "tool_versions": {
                "chiselforge": __version__,
                "python": platform.python_version(),
            },
            "started_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "output_artifacts": [],
        }

    def add_output(self, path: Path) -> None:
        self.data["output_artifacts"].append({"path": str(path), "sha256_16": _hash_file(path)})

    def write(self, near: Path) -> None:
        self.data["finished_at"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
        manifest_path = near.parent / (near.name + ".run.json")
        manifest_path.write_text(
            json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def _client_from_config(cfg: dict, section: str, mock: Optional[str] = None) -> ChatClient:
    merged = dict(cfg.get("llm", {}))
    merged.update(cfg.get(section, {}))
    if mock:
        merged["mock_fixture"] = mock
    try:
        return ChatClient(ClientConfig.from_dict(merged))
    except (ValueError, OSError) as exc:
        raise EnvironmentFailure(f"LLM client not usable: {exc}")


def _require_input(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise click.ClickException(f"input not found: {path}")
    return p


@click.group(name="forge")
@click.option("--config", "config_path", type=str, default=None, help="Shared JSON config file.")
@click.option("--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str], verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, stream=sys.stderr)
    ctx.obj = _load_config(config_path)


# ---------------------------------------------------------------- corpus


@cli.group(name="corpus")
def corpus_group() -> None:
    """Corpus ingestion and filtering."""


@corpus_group.command("ingest")
@click.option("--root", required=True, help="Directory tree or JSONL corpus dump.")
@click.option("--lang", type=click.Choice(["chisel", "verilog"]), required=True)
@click.option("--task", type=click.Choice(["completion", "decompile"]), default=None,
              help="Defaults to completion for chisel, decompile for verilog.")
@click.option("--out", "out_path", required=True)
@click.option("--mock-llm", default=None, help="Mock annotator fixture file.")
@click.option("--dry-run", is_flag=True)
@click.pass_obj
def corpus_ingest(cfg: dict, root: str, lang: str, task: Optional[str], out_path: str,
                  mock_llm: Optional[str], dry_run: bool) -> None:
    """Ingest raw files, filter them, and emit CodeSample JSONL."""
    _require_input(root)
    tag = corpus.LanguageTag(lang)
    task_kind = corpus.TaskKind(task) if task else (
        corpus.TaskKind.COMPLETION if tag is corpus.LanguageTag.CHISEL else corpus.TaskKind.DECOMPILE
    )
    fcfg_dict = cfg.get("filter", {})
    try:
        fcfg = corpus.FilterConfig(**{
            k: tuple(v) if k == "banned_substrings" else v for k, v in fcfg_dict.items()
        })
    except (TypeError, ValueError) as exc:
        raise click.ClickException(f"invalid filter config: {exc}")

    files = list(corpus.ingest(root, tag))
    kept, report = corpus.filter_files(files, fcfg)

    if dry_run:
        click.echo(f"plan: ingest {len(files)} files -> keep {len(kept)}, task={task_kind.value}")
        click.echo(report.render())
        return

    annotator = None
    if task_kind is corpus.TaskKind.COMPLETION and (mock_llm or cfg.get("llm")):
        annotator = _client_from_config(cfg, "annotator", mock=mock_llm)
    cache: dict = {}
    samples = [corpus.to_base_sample(f, task_kind, annotator, cache) for f in kept]

    out = Path(out_path)
    manifest = RunManifest(cfg)
    corpus.write_samples_jsonl(samples, out)
    report_path = out.with_suffix(out.suffix + ".report.txt")
    report_path.write_text(report.render() + "\n", encoding="utf-8")
    manifest.add_output(out)
    manifest.add_output(report_path)
    manifest.write(out)
    degraded = sum(1 for s in samples if s.degraded)
    click.echo(f"wrote {len(samples)} samples ({degraded} degraded) to {out}")


# ---------------------------------------------------------------- docs


@cli.group()
def docs() -> None:
    """Documentation index construction."""


@docs.command("build")
@click.option("--root", required=True, help="Directory of markdown files.")
@click.option("--out", "out_path", required=True)
@click.option("--depth", default=3, show_default=True, help="Max heading depth to split at.")
@click.option("--summary-chars", default=400, show_default=True)
@click.option("--dry-run", is_flag=True)
@click.pass_obj
def docs_build(cfg: dict, root: str, out_path: str, depth: int, summary_chars: int,
               dry_run: bool) -> None:
    """Split markdown docs into citable fragments with chapter IDs."""
    _require_input(root)
    try:
        index = docindex.build_index(
            root, docindex.SplitConfig(max_heading_depth=depth, summary_chars=summary_chars)
        )
    except ValueError as exc:
        raise click.ClickException(str(exc))
    if dry_run:
        click.echo(f"plan: index {len(index.fragments)} fragments from {root}")
        return
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg)
    with out.open("w", encoding="utf-8") as fh:
        for frag in index.ordered_fragments():
            fh.write(json.dumps(frag.as_dict(), sort_keys=True) + "\n")
    index_doc_path = out.with_suffix(out.suffix + ".index.txt")
    index_doc_path.write_text(index.index_document + "\n", encoding="utf-8")
    manifest.add_output(out)
    manifest.add_output(index_doc_path)
    manifest.write(out)
    click.echo(f"wrote {len(index.fragments)} fragments to {out}")


def load_index_jsonl(path: str | Path) -> docindex.DocIndex:
    frags = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                frags[d["chapter_id"]] = docindex.DocFragment(**d)
    return docindex.DocIndex(fragments=frags)


# ---------------------------------------------------------------- distill


@cli.command("distill")
@click.option("--task", "task_name", type=click.Choice(["s2c", "d2c"]), required=True)
@click.option("--in", "in_path", required=True, help="CodeSample JSONL.")
@click.option("--docs", "docs_path", default=None, help="DocFragment JSONL (s2c only).")
@click.option("--out", "out_path", required=True)
@click.option("--max-docs", default=10, show_default=True)
@click.option("--mock-llm", default=None, help="Mock teacher fixture file.")
@click.option("--retry-rejected", default=0, show_default=True)
@click.option("--parallelism", default=4, show_default=True)
@click.option("--dry-run", is_flag=True)
@click.pass_obj
def distill_cmd(cfg: dict, task_name: str, in_path: str, docs_path: Optional[str],
                out_path: str, max_docs: int, mock_llm: Optional[str],
                retry_rejected: int, parallelism: int, dry_run: bool) -> None:
    """Synthesize reasoning traces through the teacher model."""
    _require_input(in_path)
    samples = corpus.read_samples_jsonl(in_path)
    task_kind = corpus.TaskKind.COMPLETION if task_name == "s2c" else corpus.TaskKind.DECOMPILE
    samples = [s for s in samples if s.task is task_kind and not s.degraded]
    index = load_index_jsonl(_require_input(docs_path)) if docs_path else None

    if dry_run:
        click.echo(f"plan: distill {len(samples)} {task_name} samples"
                   + (f" with {len(index.fragments)} doc fragments" if index else ""))
        return

    teacher = _client_from_config(cfg, "teacher", mock=mock_llm)
    dcfg = distill.DistillConfig(
        retry_rejected=retry_rejected,
        **{k: v for k, v in cfg.get("distill", {}).items()
           if k in ("benchmark_overlap_threshold", "template_dir")},
    )
    catalog = distill.load_feature_catalog()

    doc_counts: List[int] = []

    def bundle_for(sample: corpus.CodeSample) -> distill.GuidanceBundle:
        if task_kind is corpus.TaskKind.DECOMPILE:
            return distill.GuidanceBundle(
                task=task_kind, require_variants=True, feature_catalog=catalog
            )
        frags: Tuple = ()
        if index is not None:
            matches = docindex.annotate_and_match(sample, index, teacher)
            frags = tuple(docindex.select_context_docs(matches, index, max_docs))
        doc_counts.append(len(frags))
        # the original complete code serves as the benchmark answer
        return distill.GuidanceBundle(
            task=task_kind, doc_fragments=frags, benchmark_answer=sample.source_code
        )

    examples = [distill.synthesize(s, bundle_for(s), teacher, dcfg) for s in samples]

    out = Path(out_path)
    reject_path = out.with_suffix(out.suffix + ".rejects.jsonl")
    manifest = RunManifest(cfg)
    n_ok, n_rej = distill.write_examples_jsonl(examples, out, reject_path)
    manifest.add_output(out)
    manifest.add_output(reject_path)
    manifest.write(out)
    msg = f"accepted {n_ok}, rejected {n_rej} -> {out}"
    if doc_counts:
        msg += f"; mean docs/sample {sum(doc_counts) / len(doc_counts):.1f}"
    click.echo(msg)


# ---------------------------------------------------------------- dataset


@cli.group(name="dataset")
def dataset_group() -> None:
    """Dataset mixing and statistics."""


@dataset_group.command("mix")
@click.option("--completion", "completion_path", required=True)
@click.option("--decompile", "decompile_path", required=True)
@click.option("--ratio", default="3:7", show_default=True, help="completion:decompile parts.")
@click.option("--total", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True)
@click.option("--dry-run", is_flag=True)
@click.pass_obj
def dataset_mix(cfg: dict, completion_path: str, decompile_path: str, ratio: str,
                total: int, seed: int, out_path: str, dry_run: bool) -> None:
    """Mix the two task datasets at the configured sampling ratio."""
    _require_input(completion_path)
    _require_input(decompile_path)
    try:
        c_parts, d_parts = (int(x) for x in ratio.split(":"))
        c_quota, d_quota = dataset.split_quota(total, c_parts, d_parts)
    except ValueError as exc:
        raise click.ClickException(f"bad ratio/total: {exc}")
    if dry_run:
        click.echo(f"plan: {c_quota} + {d_quota}")
        return
    try:
        _, manifest = dataset.mix(
            completion_path, decompile_path, (c_parts, d_parts), total, seed, out_path
        )
    except ValueError as exc:
        raise click.ClickException(str(exc))
    run = RunManifest(cfg)
    run.add_output(Path(out_path))
    run.write(Path(out_path))
    click.echo(f"wrote {manifest.records} records to {out_path}"
               + (f" (shortfalls: {manifest.shortfalls})" if manifest.shortfalls else ""))


@dataset_group.command("stats")
@click.option("--in", "in_path", required=True)
@click.option("--json", "as_json", is_flag=True)
def dataset_stats(in_path: str, as_json: bool) -> None:
    """Token statistics of a distilled dataset."""
    _require_input(in_path)
    try:
        st = dataset.stats(in_path)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    if as_json:
        click.echo(json.dumps(st.as_dict(), sort_keys=True))
    else:
        click.echo(f"mean {st.mean:.1f}  median {st.median:.1f}  p95 {st.p95:.1f}  max {st.max:.0f}")


# ---------------------------------------------------------------- eval


@cli.command("eval")
@click.option("--in", "in_path", required=True, help="Completions JSONL.")
@click.option("--k", "ks", default="1,5", show_default=True)
@click.option("--jobs", default=4, show_default=True, help="Worker pool size.")
@click.option("--out", "out_path", default=None, help="Verdicts JSONL output.")
@click.option("--json", "as_json", is_flag=True)
@click.option("--dry-run", is_flag=True)
@click.pass_obj
def eval_cmd(cfg: dict, in_path: str, ks: str, jobs: int, out_path: Optional[str],
             as_json: bool, dry_run: bool) -> None:
    """Run the compile/elaborate/simulate chain and report P@k / Syn(%)."""
    _require_input(in_path)
    try:
        k_list = [int(x) for x in ks.split(",") if x]
    except ValueError:
        raise click.ClickException(f"bad --k list: {ks}")
    toolchain = evalharness.ToolchainConfig(**cfg.get("toolchain", {}))
    eval_jobs = evalharness.jobs_from_jsonl(in_path, cfg.get("timeouts"))
    if dry_run:
        click.echo(f"plan: {len(eval_jobs)} jobs, k={k_list}, workers={jobs}")
        return
    verdict_map = evalharness.run_batch(eval_jobs, toolchain, workers=jobs)
    if any(
        v.status is evalharness.StageStatus.TOOL_MISSING
        for chain in verdict_map.values()
        for v in chain
    ):
        raise EnvironmentFailure("toolchain binary missing; check toolchain config")
    results = evalharness.results_from_verdicts(verdict_map)
    try:
        report = evalharness.aggregate(results, k_list)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    if out_path:
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", encoding="utf-8") as fh:
            for (pid, idx), chain in sorted(verdict_map.items()):
                fh.write(json.dumps(
                    {"problem_id": pid, "attempt_index": idx,
                     "verdicts": [v.as_dict() for v in chain]}, sort_keys=True) + "\n")
        run = RunManifest(cfg)
        run.add_output(out)
        run.write(out)
    click.echo(json.dumps(report.as_dict(), sort_keys=True) if as_json else report.render())


# ---------------------------------------------------------------- judge


@cli.command("judge")
@click.option("--in", "in_path", required=True, help="Completions JSONL with spec text.")
@click.option("--rubric", "rubric_path", default=None, help="Rubric text file.")
@click.option("--repeats", default=3, show_default=True)
@click.option("--out", "out_path", default=None, help="JudgeRecord JSONL output.")
@click.option("--mock-llm", default=None, help="Mock judge fixture file.")
@click.option("--json", "as_json", is_flag=True)
@click.option("--dry-run", is_flag=True)
@click.pass_obj
def judge_cmd(cfg: dict, in_path: str, rubric_path: Optional[str], repeats: int,
              out_path: Optional[str], mock_llm: Optional[str], as_json: bool,
              dry_run: bool) -> None:
    """Variability scoring via repeated judge calls with variance filtering."""
    _require_input(in_path)
    rubric = (
        Path(rubric_path).read_text(encoding="utf-8") if rubric_path else judge.DEFAULT_RUBRIC
    )
    jcfg_dict = cfg.get("judge", {})
    jcfg = judge.JudgeConfig(repeats=repeats, **{
        k: v for k, v in jcfg_dict.items()
        if k in ("score_min", "score_max", "variance_threshold", "temperature")
    })
    records_in = []
    with Path(in_path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records_in.append(json.loads(line))
    if dry_run:
        n_attempts = sum(len(r["completions"]) for r in records_in)
        click.echo(f"plan: judge {n_attempts} attempts x {repeats} repeats")
        return
    client = _client_from_config(cfg, "judge_llm", mock=mock_llm)
    out_records: List[judge.JudgeRecord] = []
    for rec in records_in:
        spec = rec.get("prompt") or rec.get("spec_text") or ""
        try:
            baselines = tuple(judge.generate_baseline_variants(spec, client))
        except (ValueError, TransportError, PermanentError) as exc:
            raise EnvironmentFailure(f"baseline variant generation failed: {exc}")
        for idx, completion in enumerate(rec["completions"]):
            task = judge.JudgeTask(
                problem_id=rec["problem_id"],
                spec_text=spec,
                candidate_code=evalharness.extract_code(completion),
                baseline_variants=baselines,
                rubric=rubric,
                attempt_index=idx,
            )
            out_records.append(judge.score_attempt(task, client, jcfg))
    try:
        report = judge.aggregate_scores(out_records, jcfg)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    if out_path:
        out = Path(out_path)
        judge.write_records_jsonl(out_records, out)
        run = RunManifest(cfg)
        run.add_output(out)
        run.write(out)
    click.echo(json.dumps(report.as_dict(), sort_keys=True) if as_json else report.render())


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except EnvironmentFailure as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_ENV
    except click.UsageError as exc:
        message = exc.format_message()
        if exc.ctx is not None and not message.startswith("Usage:"):
            click.echo(exc.ctx.get_usage(), err=True)
            message = f"error: {message}"
        click.echo(message, err=True)
        return EXIT_USER
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return exc.exit_code if exc.exit_code != 1 else EXIT_USER
    except click.exceptions.Abort:
        return EXIT_USER
    except OSError as exc:
        click.echo(f"environment error: {exc}", err=True)
        return EXIT_ENV


if __name__ == "__main__":
    sys.exit(main())
