"""Corpus ingestion and filtering.

Raw Chisel/Verilog files come in from a directory tree or a JSONL dump,
get screened by substring bans, line/token length bounds, a Chisel3-import
check, and exact normalized dedup, then are converted into task samples
(QA pairs for completion, verbatim Verilog for decompilation).
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Protocol, Tuple

from .tokens import Tokenizer, word_tokens

logger = logging.getLogger(__name__)


class LanguageTag(str, enum.Enum):
    CHISEL = "chisel"
    VERILOG = "verilog"
    OTHER = "other"


class TaskKind(str, enum.Enum):
    COMPLETION = "completion"
    DECOMPILE = "decompile"


EXTENSIONS = {
    LanguageTag.CHISEL: {".scala"},
    LanguageTag.VERILOG: {".v", ".sv"},
}


@dataclass(frozen=True)
class RawFile:
    path: str
    content: str
    language_tag: LanguageTag
    byte_len: int

    @classmethod
    def from_text(cls, path: str, content: str, language_tag: LanguageTag) -> "RawFile":
        return cls(
            path=path,
            content=content,
            language_tag=language_tag,
            byte_len=len(content.encode("utf-8")),
        )


@dataclass(frozen=True)
class FilterConfig:
    banned_substrings: Tuple[str, ...] = ("chiseltest", "scalatest")
    min_lines: int = 10
    max_lines: int = 2000
    min_tokens: int = 32
    max_tokens: int = 8192
    dedupe: bool = True
    require_chisel3_import: bool = True

    def __post_init__(self) -> None:
        if self.min_lines >= self.max_lines:
            raise ValueError("min_lines must be < max_lines")
        if self.min_tokens >= self.max_tokens:
            raise ValueError("min_tokens must be < max_tokens")


@dataclass
class FilterReport:
    input_count: int = 0
    kept: int = 0
    banned: int = 0
    too_short: int = 0
    too_long: int = 0
    too_few_tokens: int = 0
    too_many_tokens: int = 0
    not_chisel3: int = 0
    duplicates: int = 0

    def rejected_total(self) -> int:
        return (
            self.banned
            + self.too_short
            + self.too_long
            + self.too_few_tokens
            + self.too_many_tokens
            + self.not_chisel3
            + self.duplicates
        )

    def as_dict(self) -> dict:
        return dict(self.__dict__)

    def render(self) -> str:
        lines = [f"input files: {self.input_count}", f"kept: {self.kept}"]
        for reason in (
            "banned",
            "too_short",
            "too_long",
            "too_few_tokens",
            "too_many_tokens",
            "not_chisel3",
            "duplicates",
        ):
            lines.append(f"rejected ({reason.replace('_', ' ')}): {getattr(self, reason)}")
        return "\n".join(lines)


@dataclass(frozen=True)
class CodeSample:
    id: str
    task: TaskKind
    source_code: str
    spec_text: Optional[str] = None
    context_text: Optional[str] = None
    provenance: str = ""
    degraded: bool = False

    @staticmethod
    def compute_id(task: TaskKind, source_code: str, spec_text: Optional[str]) -> str:
        h = hashlib.sha256()
        h.update(task.value.encode("utf-8"))
        h.update(b"\x00")
        h.update(source_code.encode("utf-8"))
        h.update(b"\x00")
        h.update((spec_text or "").encode("utf-8"))
        return h.hexdigest()[:16]

    @classmethod
    def create(
        cls,
        task: TaskKind,
        source_code: str,
        spec_text: Optional[str] = None,
        context_text: Optional[str] = None,
        provenance: str = "",
        degraded: bool = False,
    ) -> "CodeSample":
        return cls(
            id=cls.compute_id(task, source_code, spec_text),
            task=task,
            source_code=source_code,
            spec_text=spec_text,
            context_text=context_text,
            provenance=provenance,
            degraded=degraded,
        )

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "task": self.task.value,
            "source_code": self.source_code,
            "spec_text": self.spec_text,
            "context_text": self.context_text,
            "provenance": self.provenance,
            "degraded": self.degraded,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodeSample":
        return cls(
            id=d["id"],
            task=TaskKind(d["task"]),
            source_code=d["source_code"],
            spec_text=d.get("spec_text"),
            context_text=d.get("context_text"),
            provenance=d.get("provenance", ""),
            degraded=d.get("degraded", False),
        )


def _tag_for(path: Path) -> LanguageTag:
    suffix = path.suffix.lower()
    for tag, exts in EXTENSIONS.items():
        if suffix in exts:
            return tag
    return LanguageTag.OTHER


def ingest(root: str | Path, lang: LanguageTag) -> Iterator[RawFile]:
    """Yield every file under `root` matching the language's extensions.

    `root` may be a directory tree or a JSONL dump with one record per
    file ({path, content, lang}). Order is deterministic (lexicographic
    by path). Non-UTF-8 files are skipped with a warning.
    """
    root = Path(root)
    if not root.exists():
        raise FileNotFoundError(f"corpus locator not found: {root}")
    exts = EXTENSIONS[lang]

    if root.is_file():
        records = []
        with root.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                tag = LanguageTag(rec["lang"]) if "lang" in rec else _tag_for(Path(rec["path"]))
                if tag is lang:
                    records.append((rec["path"], rec["content"], tag))
        records.sort(key=lambda r: r[0])
        for path, content, tag in records:
            yield RawFile.from_text(path, content, tag)
        return

    paths = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in exts)
    for p in paths:
        try:
            content = p.read_text(encoding="utf-8")
        except UnicodeDecodeError:
            logger.warning("skipping non-UTF-8 file: %s", p)
            continue
        yield RawFile.from_text(str(p.relative_to(root)), content, lang)


def _normalized(content: str) -> str:
    return "\n".join(line.strip() for line in content.splitlines())


def _imports_chisel3(content: str) -> bool:
    # Accept files with an `import chisel3...` line; files importing only
    # the legacy `Chisel._` package (or nothing) are rejected.
    for line in content.splitlines():
        stripped = line.strip()
        if stripped.startswith("import") and stripped[len("import") :].strip().startswith("chisel3"):
            return True
    return False


def filter_files(
    files: Iterable[RawFile],
    cfg: FilterConfig,
    tokenizer: Tokenizer = word_tokens,
) -> Tuple[List[RawFile], FilterReport]:
    """Apply banned-substring, length, Chisel3-import, and dedup rules.

    Each rejected file is counted under exactly one reason (first failing
    rule in check order), so kept + rejected reconciles with the input.
    """
    report = FilterReport()
    kept: List[RawFile] = []
    seen: set[str] = set()
    for f in files:
        report.input_count += 1
        if any(b in f.content for b in cfg.banned_substrings):
            report.banned += 1
            continue
        n_lines = len(f.content.splitlines())
        if n_lines < cfg.min_lines:
            report.too_short += 1
            continue
        if n_lines > cfg.max_lines:
            report.too_long += 1
            continue
        n_tokens = len(tokenizer(f.content))
        if n_tokens < cfg.min_tokens:
            report.too_few_tokens += 1
            continue
        if n_tokens > cfg.max_tokens:
            report.too_many_tokens += 1
            continue
        if (
            cfg.require_chisel3_import
            and f.language_tag is LanguageTag.CHISEL
            and not _imports_chisel3(f.content)
        ):
            report.not_chisel3 += 1
            continue
        if cfg.dedupe:
            norm = _normalized(f.content)
            if norm in seen:
                report.duplicates += 1
                continue
            seen.add(norm)
        kept.append(f)
        report.kept += 1
    return kept, report


class AnnotationClient(Protocol):
    """Anything that can turn a prompt into annotation text."""

    def annotate(self, prompt: str) -> str: ...


def mask_code(content: str, keep_head_lines: int = 3) -> str:
    """Partial view of a source file for QA context: head lines kept,
    body replaced by a placeholder."""
    lines = content.splitlines()
    if len(lines) <= keep_head_lines:
        return content
    return "\n".join(lines[:keep_head_lines] + ["// ... (implementation elided) ..."])


_SPEC_PROMPT = (
    "Read the following Chisel source file and write a concise design "
    "specification describing the module's purpose, interface, and behavior. "
    "Reply with the specification text only.\n\n```scala\n{code}\n```"
)


def to_base_sample(
    file: RawFile,
    task: TaskKind,
    annotator: Optional[AnnotationClient] = None,
    cache: Optional[dict] = None,
) -> CodeSample:
    """Convert a filtered RawFile into a CodeSample.

    Completion samples get an annotator-produced design specification and
    a masked context; decompile samples carry the Verilog verbatim. An
    annotator failure or empty reply marks the sample degraded (excluded
    from downstream synthesis, not fatal).
    """
    if task is TaskKind.DECOMPILE:
        return CodeSample.create(
            task=task, source_code=file.content, provenance=file.path
        )

    sample_id = CodeSample.compute_id(task, file.content, None)
    spec_text: Optional[str] = None
    degraded = False
    if cache is not None and sample_id in cache:
        spec_text = cache[sample_id]
    elif annotator is not None:
        try:
            spec_text = annotator.annotate(_SPEC_PROMPT.format(code=file.content))
        except Exception:
            logger.warning("annotator failed for %s; marking degraded", file.path)
            spec_text = None
    if spec_text is not None and cache is not None:
        cache[sample_id] = spec_text
    if not spec_text or not spec_text.strip():
        degraded = True
        spec_text = None
    return CodeSample.create(
        task=task,
        source_code=file.content,
        spec_text=spec_text,
        context_text=mask_code(file.content),
        provenance=file.path,
        degraded=degraded,
    )


def write_samples_jsonl(samples: Iterable[CodeSample], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.as_dict(), sort_keys=True) + "\n")
            n += 1
    return n


def read_samples_jsonl(path: str | Path) -> List[CodeSample]:
    samples = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                samples.append(CodeSample.from_dict(json.loads(line)))
    return samples
