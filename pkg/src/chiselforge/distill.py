"""Prompt-guided reasoning-trace distillation.

Builds task-specific teacher prompts (docs + benchmark answer for
spec-to-Chisel; variant rules + feature catalog for decompile-to-Chisel),
calls the teacher, parses the <think>/answer structure, and validates
traces against the structural requirements. Guidance never reaches the
student-facing prompt.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .corpus import CodeSample, TaskKind
from .docindex import DocFragment
from .llmclient import ChatClient, ChatRequest, PermanentError, TransportError
from .tokens import word_tokens

logger = logging.getLogger(__name__)

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"

_CODE_BLOCK_RE = re.compile(r"```(?:scala|chisel)?\s*\n(.*?)```", re.DOTALL)
_VARIANT_BLOCK_RE = re.compile(r"```variants\s*\n(.*?)```", re.DOTALL)
_VARIANT_LINE_RE = re.compile(r"variant:\s*(\w+)\s*[-—:]\s*(.*)")
_MODULE_DEF_RE = re.compile(r"\b(?:class|object)\s+\w+", re.MULTILINE)


class VariantKind(str, enum.Enum):
    CONFIGURABLE = "Configurable"
    FUNCTIONAL = "Functional"
    STRUCTURAL = "Structural"


@dataclass(frozen=True)
class GuidanceBundle:
    task: TaskKind
    doc_fragments: Tuple[DocFragment, ...] = ()
    benchmark_answer: Optional[str] = None
    require_variants: bool = False
    feature_catalog: str = ""

    def __post_init__(self) -> None:
        if self.task is TaskKind.COMPLETION and self.require_variants:
            raise ValueError("completion bundles carry no variant requirements")
        if self.task is TaskKind.DECOMPILE and (self.doc_fragments or self.benchmark_answer):
            raise ValueError("decompile bundles carry no docs or benchmark answer")


@dataclass(frozen=True)
class ReasoningTrace:
    think_text: str
    answer_code: str
    declared_variants: Tuple[Tuple[VariantKind, str], ...] = ()

    def variant_kinds(self) -> List[VariantKind]:
        return [k for k, _ in self.declared_variants]


@dataclass(frozen=True)
class Validation:
    accepted: bool
    reason: str = ""  # empty iff accepted

    @classmethod
    def ok(cls) -> "Validation":
        return cls(accepted=True)

    @classmethod
    def rejected(cls, reason: str) -> "Validation":
        return cls(accepted=False, reason=reason)


@dataclass(frozen=True)
class DistilledExample:
    sample_id: str
    task: TaskKind
    prompt_text: str  # student-facing, guidance stripped
    trace: ReasoningTrace
    teacher_model: str
    validation: Validation

    def as_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "task": self.task.value,
            "prompt_text": self.prompt_text,
            "think_text": self.trace.think_text,
            "answer_code": self.trace.answer_code,
            "declared_variants": [[k.value, d] for k, d in self.trace.declared_variants],
            "teacher_model": self.teacher_model,
            "accepted": self.validation.accepted,
            "reject_reason": self.validation.reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DistilledExample":
        return cls(
            sample_id=d["sample_id"],
            task=TaskKind(d["task"]),
            prompt_text=d["prompt_text"],
            trace=ReasoningTrace(
                think_text=d["think_text"],
                answer_code=d["answer_code"],
                declared_variants=tuple(
                    (VariantKind(k), desc) for k, desc in d.get("declared_variants", [])
                ),
            ),
            teacher_model=d["teacher_model"],
            validation=(
                Validation.ok() if d["accepted"] else Validation.rejected(d["reject_reason"])
            ),
        )


def _template(name: str) -> str:
    return resources.files("chiselforge.templates").joinpath(name).read_text(encoding="utf-8")


def load_feature_catalog() -> str:
    return _template("feature_catalog.txt")


@dataclass
class DistillConfig:
    benchmark_overlap_threshold: float = 0.5
    retry_rejected: int = 0
    template_dir: Optional[str] = None  # override shipped templates

    def template(self, name: str) -> str:
        if self.template_dir:
            custom = Path(self.template_dir) / name
            if custom.exists():
                return custom.read_text(encoding="utf-8")
        return _template(name)


def build_s2c_prompt(
    sample: CodeSample,
    docs: Sequence[DocFragment],
    benchmark: str,
    cfg: DistillConfig = DistillConfig(),
) -> Tuple[str, str]:
    """Teacher prompt with citable docs + reference answer; student prompt
    with the spec/context only."""
    if sample.task is not TaskKind.COMPLETION:
        raise ValueError("spec-to-Chisel prompts require a completion sample")
    if not benchmark or not benchmark.strip():
        raise ValueError("benchmark answer must be non-empty")
    if not sample.spec_text or not sample.spec_text.strip():
        raise ValueError("sample lacks specification")

    docs_section = ""
    if docs:
        parts = ["\n## Documentation references"]
        for frag in docs:
            parts.append(f"### [{frag.chapter_id}] {frag.title}\n{frag.body}")
        docs_section = "\n\n".join(parts) + "\n"
    benchmark_section = (
        "\n## Reference answer (for guidance only, do not copy verbatim)\n"
        f"```scala\n{benchmark}\n```\n"
    )
    teacher = cfg.template("s2c_teacher.txt").format(
        spec_text=sample.spec_text,
        context_text=sample.context_text or "(none)",
        docs_section=docs_section,
        benchmark_section=benchmark_section,
    )
    student = cfg.template("s2c_student.txt").format(
        spec_text=sample.spec_text,
        context_text=sample.context_text or "(none)",
    )
    return teacher, student


def build_d2c_prompt(
    sample: CodeSample,
    feature_catalog: Optional[str] = None,
    cfg: DistillConfig = DistillConfig(),
) -> Tuple[str, str]:
    """Teacher prompt with variant rules + feature catalog; student prompt
    with the Verilog and task statement only."""
    if sample.task is not TaskKind.DECOMPILE:
        raise ValueError("decompile-to-Chisel prompts require a decompile sample")
    if not sample.source_code or not sample.source_code.strip():
        raise ValueError("sample has empty Verilog source")
    catalog = feature_catalog if feature_catalog is not None else load_feature_catalog()
    teacher = cfg.template("d2c_teacher.txt").format(
        verilog_source=sample.source_code, feature_catalog=catalog
    )
    student = cfg.template("d2c_student.txt").format(verilog_source=sample.source_code)
    return teacher, student


def parse_teacher_output(text: str) -> ReasoningTrace:
    """Extract think text, declared variants, and the final code block.

    Raises ValueError when the think block or a code block is missing;
    callers map that to a parse rejection.
    """
    open_idx = text.find(THINK_OPEN)
    close_idx = text.find(THINK_CLOSE)
    if open_idx < 0 or close_idx < 0 or close_idx < open_idx:
        raise ValueError("missing-think")
    think_text = text[open_idx + len(THINK_OPEN) : close_idx].strip()
    tail = text[close_idx + len(THINK_CLOSE) :]

    variants: List[Tuple[VariantKind, str]] = []
    vm = _VARIANT_BLOCK_RE.search(tail)
    if vm:
        for line in vm.group(1).splitlines():
            lm = _VARIANT_LINE_RE.match(line.strip())
            if lm:
                try:
                    kind = VariantKind(lm.group(1).capitalize())
                except ValueError:
                    continue
                variants.append((kind, lm.group(2).strip()))
        tail = tail[: vm.start()] + tail[vm.end() :]

    code_blocks = _CODE_BLOCK_RE.findall(tail)
    if not code_blocks:
        raise ValueError("missing-code")
    return ReasoningTrace(
        think_text=think_text,
        answer_code=code_blocks[-1].strip(),
        declared_variants=tuple(variants),
    )


def token_overlap(a: str, b: str) -> float:
    """Normalized token-multiset overlap in [0, 1]."""
    ca, cb = Counter(word_tokens(a)), Counter(word_tokens(b))
    if not ca or not cb:
        return 0.0
    inter = sum((ca & cb).values())
    return inter / max(sum(ca.values()), sum(cb.values()))


def validate_trace(
    trace: ReasoningTrace, bundle: GuidanceBundle, cfg: DistillConfig = DistillConfig()
) -> Validation:
    """Structural checks, in order: think present, code with a module
    definition, variant constraint (decompile), benchmark similarity
    (completion with a reference answer)."""
    if not trace.think_text.strip():
        return Validation.rejected("missing-think")
    if not trace.answer_code.strip():
        return Validation.rejected("missing-code")
    if not _MODULE_DEF_RE.search(trace.answer_code):
        return Validation.rejected("missing-module")
    if bundle.task is TaskKind.DECOMPILE and bundle.require_variants:
        kinds = trace.variant_kinds()
        if VariantKind.CONFIGURABLE not in kinds:
            return Validation.rejected("missing-configurable")
        n_fs = sum(1 for k in kinds if k in (VariantKind.FUNCTIONAL, VariantKind.STRUCTURAL))
        if n_fs != 1 or len(kinds) != 2:
            return Validation.rejected("variant-count")
    if bundle.task is TaskKind.COMPLETION and bundle.benchmark_answer:
        overlap = token_overlap(trace.answer_code, bundle.benchmark_answer)
        if overlap < cfg.benchmark_overlap_threshold:
            return Validation.rejected("diverged-from-benchmark")
    return Validation.ok()


def synthesize(
    sample: CodeSample,
    bundle: GuidanceBundle,
    teacher: ChatClient,
    cfg: DistillConfig = DistillConfig(),
) -> DistilledExample:
    """One teacher call: build prompts, parse the trace, validate."""
    if bundle.task is TaskKind.COMPLETION:
        teacher_prompt, student_prompt = build_s2c_prompt(
            sample, bundle.doc_fragments, bundle.benchmark_answer or "", cfg
        )
    else:
        teacher_prompt, student_prompt = build_d2c_prompt(sample, bundle.feature_catalog, cfg)

    def reject(reason: str) -> DistilledExample:
        return DistilledExample(
            sample_id=sample.id,
            task=sample.task,
            prompt_text=student_prompt,
            trace=ReasoningTrace(think_text="", answer_code=""),
            teacher_model=teacher.config.model_name,
            validation=Validation.rejected(reason),
        )

    attempts = 1 + max(0, cfg.retry_rejected)
    result: Optional[DistilledExample] = None
    for attempt in range(attempts):
        req = ChatRequest.simple(
            teacher.config.model_name,
            teacher_prompt,
            temperature=teacher.config.temperature,
            max_output_tokens=teacher.config.max_output_tokens,
            seed_hint=attempt if attempt else None,
        )
        try:
            resp = teacher.complete(req)
        except (TransportError, PermanentError):
            result = reject("transport")
            continue
        if not resp.ok:
            result = reject("transport")
            continue
        try:
            trace = parse_teacher_output(resp.content)
        except ValueError as exc:
            result = reject(str(exc) if str(exc) in ("missing-think", "missing-code") else "parse")
            continue
        verdict = validate_trace(trace, bundle, cfg)
        result = DistilledExample(
            sample_id=sample.id,
            task=sample.task,
            prompt_text=student_prompt,
            trace=trace,
            teacher_model=teacher.config.model_name,
            validation=verdict,
        )
        if verdict.accepted:
            break
    assert result is not None
    return result


def check_leakage(example: DistilledExample, bundle: GuidanceBundle) -> List[str]:
    """Substring scan of the student prompt for guidance text; returns a
    list of leak descriptions (empty when clean)."""
    leaks = []
    for frag in bundle.doc_fragments:
        if frag.body.strip() and frag.body.strip() in example.prompt_text:
            leaks.append(f"doc-fragment:{frag.chapter_id}")
    if bundle.benchmark_answer and bundle.benchmark_answer.strip() in example.prompt_text:
        leaks.append("benchmark-answer")
    if bundle.feature_catalog and bundle.feature_catalog.strip() in example.prompt_text:
        leaks.append("feature-catalog")
    return leaks


def write_examples_jsonl(
    examples: Sequence[DistilledExample], out_path: str | Path, reject_path: str | Path
) -> Tuple[int, int]:
    """Accepted examples to out_path, rejected to the reject log."""
    out_path, reject_path = Path(out_path), Path(reject_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    reject_path.parent.mkdir(parents=True, exist_ok=True)
    n_ok = n_rej = 0
    with out_path.open("w", encoding="utf-8") as ok_fh, reject_path.open(
        "w", encoding="utf-8"
    ) as rej_fh:
        for ex in examples:
            line = json.dumps(ex.as_dict(), sort_keys=True) + "\n"
            if ex.validation.accepted:
                ok_fh.write(line)
                n_ok += 1
            else:
                rej_fh.write(line)
                n_rej += 1
    return n_ok, n_rej


def read_examples_jsonl(path: str | Path) -> List[DistilledExample]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(DistilledExample.from_dict(json.loads(line)))
    return out
