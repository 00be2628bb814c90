"""Training-dataset assembly: mixing completion/decompile pools at a
configured ratio and reporting token statistics."""

from __future__ import annotations

import hashlib
import json
import logging
import random
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .tokens import Tokenizer, word_tokens

logger = logging.getLogger(__name__)


@dataclass
class TokenStats:
    mean: float = 0.0
    median: float = 0.0
    p95: float = 0.0
    max: float = 0.0

    def as_dict(self) -> dict:
        return {"mean": self.mean, "median": self.median, "p95": self.p95, "max": self.max}


@dataclass
class DatasetManifest:
    name: str
    records: int
    mix_ratio: Tuple[int, int]  # (completion_parts, decompile_parts)
    seed: Optional[int] = None
    token_stats: TokenStats = field(default_factory=TokenStats)
    source_hashes: List[str] = field(default_factory=list)
    shortfalls: Dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "records": self.records,
            "mix_ratio": list(self.mix_ratio),
            "seed": self.seed,
            "token_stats": self.token_stats.as_dict(),
            "source_hashes": self.source_hashes,
            "shortfalls": self.shortfalls,
        }


def _read_jsonl(path: Path) -> List[dict]:
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: malformed JSONL line") from exc
    return records


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def split_quota(total: int, c_parts: int, d_parts: int) -> Tuple[int, int]:
    """Largest-remainder split of `total` into the two ratio parts; the
    two quotas always sum to total."""
    if total <= 0:
        raise ValueError("total must be positive")
    if c_parts < 0 or d_parts < 0 or c_parts + d_parts == 0:
        raise ValueError("ratio parts must be non-negative with a positive sum")
    exact_c = total * c_parts / (c_parts + d_parts)
    c_quota = int(exact_c)
    if exact_c - c_quota >= 0.5:
        c_quota += 1
    return c_quota, total - c_quota


def record_tokens(record: dict, tokenizer: Tokenizer = word_tokens) -> int:
    """Token count of a distilled record: student prompt + think + answer."""
    text = "\n".join(
        str(record.get(k) or "") for k in ("prompt_text", "think_text", "answer_code")
    )
    return len(tokenizer(text))


def compute_stats(records: Sequence[dict], tokenizer: Tokenizer = word_tokens) -> TokenStats:
    counts = [record_tokens(r, tokenizer) for r in records]
    if not counts:
        return TokenStats()
    ordered = sorted(counts)
    # nearest-rank percentile: deterministic, no interpolation
    p95_idx = max(0, -(-95 * len(ordered) // 100) - 1)
    return TokenStats(
        mean=statistics.fmean(counts),
        median=float(statistics.median(counts)),
        p95=float(ordered[p95_idx]),
        max=float(ordered[-1]),
    )


def stats(dataset_path: str | Path, tokenizer: Tokenizer = word_tokens) -> TokenStats:
    return compute_stats(_read_jsonl(Path(dataset_path)), tokenizer)


def mix(
    completion_path: str | Path,
    decompile_path: str | Path,
    ratio: Tuple[int, int],
    total: int,
    seed: int,
    out_path: Optional[str | Path] = None,
    name: str = "mixed",
    tokenizer: Tokenizer = word_tokens,
) -> Tuple[List[dict], DatasetManifest]:
    """Sample without replacement from both pools at the given ratio and
    interleave with a seeded shuffle.

    A pool smaller than its quota is taken whole and the shortfall is
    recorded in the manifest rather than failing the run.
    """
    completion_path, decompile_path = Path(completion_path), Path(decompile_path)
    c_pool = _read_jsonl(completion_path)
    d_pool = _read_jsonl(decompile_path)
    if not c_pool or not d_pool:
        raise ValueError("both dataset pools must be non-empty")
    c_quota, d_quota = split_quota(total, *ratio)

    rng = random.Random(seed)
    shortfalls: Dict[str, int] = {}

    def take(pool: List[dict], quota: int, label: str) -> List[dict]:
        if len(pool) < quota:
            shortfalls[label] = quota - len(pool)
            logger.warning("%s pool short by %d records", label, quota - len(pool))
            return list(pool)
        return rng.sample(pool, quota)

    chosen = take(c_pool, c_quota, "completion") + take(d_pool, d_quota, "decompile")
    rng.shuffle(chosen)

    manifest = DatasetManifest(
        name=name,
        records=len(chosen),
        mix_ratio=ratio,
        seed=seed,
        token_stats=compute_stats(chosen, tokenizer),
        source_hashes=[_file_hash(completion_path), _file_hash(decompile_path)],
        shortfalls=shortfalls,
    )

    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with out_path.open("w", encoding="utf-8") as fh:
            for rec in chosen:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        manifest_path = out_path.with_suffix(out_path.suffix + ".manifest.json")
        manifest_path.write_text(
            json.dumps(manifest.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return chosen, manifest


def to_chat_records(records: Sequence[dict], system_prompt: str = "") -> List[dict]:
    """Export records as plain chat messages with the think text inlined
    into the assistant turn."""
    out = []
    for rec in records:
        assistant = f"<think>\n{rec.get('think_text', '')}\n</think>\n\n```scala\n{rec.get('answer_code', '')}\n```"
        messages = []
        if system_prompt:
            messages.append({"role": "system", "content": system_prompt})
        messages.append({"role": "user", "content": rec.get("prompt_text", "")})
        messages.append({"role": "assistant", "content": assistant})
        out.append({"messages": messages})
    return out
