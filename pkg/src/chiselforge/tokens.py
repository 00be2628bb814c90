"""Tokenizer abstraction shared by corpus screening and dataset statistics.

The default tokenizer is a deterministic word/punctuation splitter so the
pipeline is reproducible without any model assets. Anything callable with
the same signature (e.g. a model tokenizer's encode wrapped to return a
list) can be substituted wherever a tokenizer is accepted.
"""

from __future__ import annotations

import re
from typing import Callable, List

Tokenizer = Callable[[str], List[str]]

_WORD_RE = re.compile(r"\w+|[^\w\s]")


def word_tokens(text: str) -> List[str]:
    """Split text into word and single-punctuation tokens."""
    return _WORD_RE.findall(text)


def count_tokens(text: str, tokenizer: Tokenizer = word_tokens) -> int:
    return len(tokenizer(text))
