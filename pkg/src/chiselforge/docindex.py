"""Citable documentation index.

Markdown docs are split at heading boundaries into fragments, each with a
hierarchical chapter ID ("1", "1.1", "1.2.3", ...). The rendered index
document (ID + title + summary per fragment) is handed to an annotator
that marks code lines with `// [doc:<id>]` comments; markers are then
resolved back against the index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .corpus import AnnotationClient, CodeSample

DOC_MARKER_RE = re.compile(r"//\s*\[doc:([0-9.]+)\]")
_HEADING_RE = re.compile(r"^(#{1,6})\s+(.*)$")


@dataclass(frozen=True)
class SplitConfig:
    max_heading_depth: int = 3
    summary_chars: int = 400


@dataclass(frozen=True)
class DocFragment:
    chapter_id: str
    title: str
    summary: str
    body: str

    def as_dict(self) -> dict:
        return {
            "chapter_id": self.chapter_id,
            "title": self.title,
            "summary": self.summary,
            "body": self.body,
        }


def _chapter_sort_key(chapter_id: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in chapter_id.split("."))


@dataclass(frozen=True)
class DocIndex:
    fragments: Dict[str, DocFragment]

    def __post_init__(self) -> None:
        ids = list(self.fragments)
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate chapter_id in index")

    @property
    def index_document(self) -> str:
        lines = ["# Documentation Index", ""]
        for cid in sorted(self.fragments, key=_chapter_sort_key):
            frag = self.fragments[cid]
            lines.append(f"[{cid}] {frag.title}: {frag.summary}")
        return "\n".join(lines)

    def get(self, chapter_id: str) -> Optional[DocFragment]:
        return self.fragments.get(chapter_id)

    def ordered_fragments(self) -> List[DocFragment]:
        return [self.fragments[cid] for cid in sorted(self.fragments, key=_chapter_sort_key)]


@dataclass(frozen=True)
class AnnotationMatch:
    sample_id: str
    line_no: int
    chapter_id: str
    resolved: bool


def _summarize(body: str, limit: int) -> str:
    for para in re.split(r"\n\s*\n", body.strip()):
        text = " ".join(para.split())
        if text:
            return text[:limit]
    return ""


class _Counter:
    """Hierarchical chapter counter shared across files."""

    def __init__(self) -> None:
        self.path: List[int] = []

    def next_id(self, depth: int) -> str:
        if depth <= len(self.path):
            self.path = self.path[:depth]
            self.path[-1] += 1
        else:
            while len(self.path) < depth:
                self.path.append(1)
        return ".".join(str(n) for n in self.path)


def build_index(doc_root: str | Path, cfg: SplitConfig = SplitConfig()) -> DocIndex:
    """Split every markdown file under doc_root into citable fragments.

    Headings up to cfg.max_heading_depth start a new fragment; deeper
    headings stay inside their parent. Counters continue across files so
    a second file's first top-level heading gets the next top-level ID.
    A file with no headings becomes a single fragment titled by filename.
    """
    doc_root = Path(doc_root)
    files = sorted(doc_root.rglob("*.md")) if doc_root.is_dir() else [doc_root]
    files = [f for f in files if f.is_file()]
    if not files:
        raise ValueError("empty documentation corpus")

    counter = _Counter()
    fragments: Dict[str, DocFragment] = {}

    def flush(cid: Optional[str], title: str, body_lines: List[str]) -> None:
        if cid is None:
            return
        body = "\n".join(body_lines).strip()
        fragments[cid] = DocFragment(
            chapter_id=cid,
            title=title,
            summary=_summarize(body, cfg.summary_chars) or title,
            body=body,
        )

    saw_any = False
    for path in files:
        text = path.read_text(encoding="utf-8")
        cur_id: Optional[str] = None
        cur_title = ""
        cur_body: List[str] = []
        # depth of the file's shallowest heading maps to the next level
        # below wherever the counter currently sits at top level
        depths = [len(m.group(1)) for m in map(_HEADING_RE.match, text.splitlines()) if m]
        base_depth = min(depths) if depths else None
        if base_depth is None:
            cid = counter.next_id(1)
            flush(cid, path.stem, text.splitlines())
            saw_any = True
            continue
        for line in text.splitlines():
            m = _HEADING_RE.match(line)
            depth = len(m.group(1)) - base_depth + 1 if m else None
            if m and depth is not None and depth <= cfg.max_heading_depth:
                flush(cur_id, cur_title, cur_body)
                cur_id = counter.next_id(depth)
                cur_title = m.group(2).strip()
                cur_body = []
                saw_any = True
            else:
                cur_body.append(line)
        flush(cur_id, cur_title, cur_body)
    if not saw_any:
        raise ValueError("empty documentation corpus")
    return DocIndex(fragments=fragments)


_ANNOTATE_PROMPT = (
    "Below is an index of documentation fragments, then a source file. "
    "Re-emit the source with line comments of the form // [doc:<chapter_id>] "
    "on every line that relies on a documented feature.\n\n"
    "{index_document}\n\n```scala\n{code}\n```"
)


def extract_markers(annotated_code: str, sample_id: str, index: DocIndex) -> List[AnnotationMatch]:
    """Scan annotated code for `// [doc:<id>]` markers, in line order."""
    matches: List[AnnotationMatch] = []
    for line_no, line in enumerate(annotated_code.splitlines(), 1):
        for m in DOC_MARKER_RE.finditer(line):
            cid = m.group(1)
            matches.append(
                AnnotationMatch(
                    sample_id=sample_id,
                    line_no=line_no,
                    chapter_id=cid,
                    resolved=index.get(cid) is not None,
                )
            )
    return matches


def annotate_and_match(
    sample: CodeSample, index: DocIndex, annotator: AnnotationClient
) -> List[AnnotationMatch]:
    """Ask the annotator to mark the sample's code, then resolve markers."""
    if not index.fragments:
        raise ValueError("empty documentation index")
    try:
        annotated = annotator.annotate(
            _ANNOTATE_PROMPT.format(index_document=index.index_document, code=sample.source_code)
        )
    except Exception:
        return []
    return extract_markers(annotated, sample.id, index)


def select_context_docs(
    matches: Sequence[AnnotationMatch], index: DocIndex, max_docs: int = 10
) -> List[DocFragment]:
    """Distinct resolved fragments by descending match frequency, ties by
    chapter order, truncated to max_docs."""
    if max_docs < 1:
        raise ValueError("max_docs must be >= 1")
    freq: Dict[str, int] = {}
    for m in matches:
        if m.resolved:
            freq[m.chapter_id] = freq.get(m.chapter_id, 0) + 1
    ordered = sorted(freq, key=lambda cid: (-freq[cid], _chapter_sort_key(cid)))
    return [index.fragments[cid] for cid in ordered[:max_docs]]
