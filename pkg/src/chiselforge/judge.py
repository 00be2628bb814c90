"""Judge-based variability scoring.

Every candidate is scored repeatedly against a shared rubric and a fixed
set of baseline design variants generated once per problem. Repeated
scores are averaged; attempts whose scores spread too widely (sample
stdev above the threshold) are filtered out of the reported means.
"""

from __future__ import annotations

import json
import logging
import re
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from .distill import VariantKind
from .llmclient import ChatClient, ChatRequest, PermanentError, TransportError

logger = logging.getLogger(__name__)

SCORE_RE = re.compile(r"SCORE:\s*(-?\d+(?:\.\d+)?)")

DEFAULT_RUBRIC = """\
Score the candidate Chisel implementation for design variability on a
0-10 scale: how cheaply could it be adapted to each baseline variant?
0-2: rigid, hard-coded design; every variant needs a rewrite.
3-5: some structure, but variants require invasive edits.
6-8: parameterized or abstracted; most variants are small edits.
9-10: variants are covered by configuration or small extensions.
End your verdict with a line of the form: SCORE: <number>
"""


@dataclass
class JudgeConfig:
    score_min: float = 0.0
    score_max: float = 10.0
    variance_threshold: float = 1.5  # sample stdev above this is filtered
    repeats: int = 3
    temperature: float = 0.3


@dataclass(frozen=True)
class JudgeTask:
    problem_id: str
    spec_text: str
    candidate_code: str
    baseline_variants: Tuple[Tuple[VariantKind, str], ...]
    rubric: str
    attempt_index: int = 0

    def __post_init__(self) -> None:
        if not self.baseline_variants:
            raise ValueError("baseline_variants must be non-empty")


@dataclass
class JudgeRecord:
    problem_id: str
    attempt_index: int
    scores: List[float]
    mean: float
    stdev: float
    filtered: bool
    usable: bool = True

    @classmethod
    def from_scores(
        cls, problem_id: str, attempt_index: int, scores: Sequence[float], cfg: JudgeConfig
    ) -> "JudgeRecord":
        scores = list(scores)
        if len(scores) < 2:
            return cls(problem_id, attempt_index, scores, 0.0, 0.0, False, usable=False)
        mean = statistics.fmean(scores)
        stdev = statistics.stdev(scores)
        return cls(
            problem_id,
            attempt_index,
            scores,
            mean,
            stdev,
            filtered=stdev > cfg.variance_threshold,
        )

    def as_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "attempt_index": self.attempt_index,
            "scores": self.scores,
            "mean": self.mean,
            "stdev": self.stdev,
            "filtered": self.filtered,
            "usable": self.usable,
        }


_VARIANT_PROMPT = """\
For the following hardware design specification, propose three design
variants, one per line, in exactly this format:

variant: Configurable - <description>
variant: Functional - <description>
variant: Structural - <description>

## Specification
{spec}
"""

_VARIANT_LINE_RE = re.compile(r"variant:\s*(\w+)\s*[-—:]\s*(.*)")


def generate_baseline_variants(
    spec: str, generator: ChatClient
) -> List[Tuple[VariantKind, str]]:
    """One Configurable, Functional, and Structural variant description
    per spec. Responses go through the client cache, so every judged
    model sees identical baselines."""
    if not spec or not spec.strip():
        raise ValueError("empty specification")
    req = ChatRequest.simple(
        generator.config.model_name,
        _VARIANT_PROMPT.format(spec=spec),
        temperature=0.0,
    )
    resp = generator.complete(req)
    if not resp.ok:
        raise TransportError(f"baseline variant generation failed: {resp.content}")
    found: Dict[VariantKind, str] = {}
    for line in resp.content.splitlines():
        m = _VARIANT_LINE_RE.match(line.strip())
        if not m:
            continue
        try:
            kind = VariantKind(m.group(1).capitalize())
        except ValueError:
            continue
        found.setdefault(kind, m.group(2).strip())
    missing = [k for k in VariantKind if k not in found]
    if missing:
        raise ValueError(f"generator omitted variants: {[k.value for k in missing]}")
    return [(k, found[k]) for k in VariantKind]


def _judge_prompt(task: JudgeTask) -> str:
    variants = "\n".join(f"- {k.value}: {d}" for k, d in task.baseline_variants)
    return (
        f"## Evaluation standard\n{task.rubric}\n\n"
        f"## Design specification\n{task.spec_text}\n\n"
        f"## Baseline variants\n{variants}\n\n"
        f"## Candidate implementation\n```scala\n{task.candidate_code}\n```\n"
    )


class ScoreParseError(ValueError):
    pass


def parse_score(verdict: str, cfg: JudgeConfig) -> float:
    m = None
    for m in SCORE_RE.finditer(verdict):
        pass  # keep the last sentinel in the verdict
    if m is None:
        raise ScoreParseError("no SCORE sentinel in judge verdict")
    value = float(m.group(1))
    clamped = min(max(value, cfg.score_min), cfg.score_max)
    if clamped != value:
        logger.warning("judge score %s clamped to [%s, %s]", value, cfg.score_min, cfg.score_max)
    return clamped


def score_once(task: JudgeTask, judge: ChatClient, cfg: JudgeConfig, repeat_index: int = 0) -> float:
    """Single judge call -> parsed, clamped score. Raises ScoreParseError
    on an unusable verdict (caller drops that repeat, never scores zero)."""
    req = ChatRequest.simple(
        judge.config.model_name,
        _judge_prompt(task),
        temperature=cfg.temperature,
        seed_hint=repeat_index,
    )
    resp = judge.complete(req)
    if not resp.ok:
        raise ScoreParseError(f"judge call failed: {resp.content}")
    return parse_score(resp.content, cfg)


def score_attempt(task: JudgeTask, judge: ChatClient, cfg: JudgeConfig) -> JudgeRecord:
    """Score one attempt cfg.repeats times and fold into a JudgeRecord."""
    if cfg.repeats < 2:
        raise ValueError("repeats must be >= 2")
    scores: List[float] = []
    for i in range(cfg.repeats):
        try:
            scores.append(score_once(task, judge, cfg, repeat_index=i))
        except (ScoreParseError, TransportError, PermanentError) as exc:
            logger.warning(
                "dropping unusable judge verdict for %s#%d: %s",
                task.problem_id,
                task.attempt_index,
                exc,
            )
    return JudgeRecord.from_scores(task.problem_id, task.attempt_index, scores, cfg)


@dataclass
class JudgeReport:
    per_problem_mean: Dict[str, float]
    overall_mean: float
    overall_variance: float
    used: int
    filtered: int
    unusable: int
    variance_threshold: float = 1.5

    def as_dict(self) -> dict:
        return {
            "per_problem_mean": self.per_problem_mean,
            "overall_mean": self.overall_mean,
            "overall_variance": self.overall_variance,
            "counts": {"used": self.used, "filtered": self.filtered, "unusable": self.unusable},
            "variance_threshold": self.variance_threshold,
        }

    def render(self) -> str:
        lines = [
            f"# variance filter threshold (stdev): {self.variance_threshold}",
            f"overall mean: {self.overall_mean:.2f}",
            f"overall variance: {self.overall_variance:.2f}",
            f"records used / filtered / unusable: {self.used} / {self.filtered} / {self.unusable}",
        ]
        for pid in sorted(self.per_problem_mean):
            lines.append(f"  {pid}: {self.per_problem_mean[pid]:.2f}")
        return "\n".join(lines)


def aggregate_scores(
    records: Sequence[JudgeRecord], cfg: JudgeConfig = JudgeConfig()
) -> JudgeReport:
    """Average unfiltered records per problem, then average the
    per-problem means. Order-independent."""
    usable = [r for r in records if r.usable and not r.filtered]
    n_filtered = sum(1 for r in records if r.usable and r.filtered)
    n_unusable = sum(1 for r in records if not r.usable)
    if not usable:
        raise ValueError("no usable judgments")
    by_problem: Dict[str, List[float]] = {}
    for r in usable:
        by_problem.setdefault(r.problem_id, []).append(r.mean)
    per_problem = {pid: statistics.fmean(means) for pid, means in by_problem.items()}
    overall_values = list(per_problem.values())
    overall_mean = statistics.fmean(overall_values)
    overall_var = statistics.pvariance(overall_values) if len(overall_values) > 1 else 0.0
    return JudgeReport(
        per_problem_mean=per_problem,
        overall_mean=overall_mean,
        overall_variance=overall_var,
        used=len(usable),
        filtered=n_filtered,
        unusable=n_unusable,
        variance_threshold=cfg.variance_threshold,
    )


def write_records_jsonl(records: Sequence[JudgeRecord], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.as_dict(), sort_keys=True) + "\n")
    return len(records)
