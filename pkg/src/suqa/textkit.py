"""Tokenization, answer normalization, n-grams and set coverage.

Every reward and metric goes through these helpers so that lengths and
n-gram sets are computed the same way everywhere.
"""

from __future__ import annotations

import re
import string
import unicodedata
from dataclasses import dataclass, field
from typing import Collection, Iterable, Iterator, Sequence

from suqa.errors import InvalidArgument

SOURCE_KINDS = ("question", "paragraph", "explanation", "answer")

_ARTICLES = re.compile(r"\b(a|an|the)\b", re.UNICODE)
_ASCII_PUNCT = frozenset(string.punctuation)


def is_punct(ch: str) -> bool:
    return ch in _ASCII_PUNCT or unicodedata.category(ch).startswith("P")


@dataclass(frozen=True)
class TokenSequence(Sequence[str]):
    """Lowercased tokens plus a tag saying where they came from."""

    tokens: tuple[str, ...]
    source_kind: str = "paragraph"

    def __post_init__(self) -> None:
        if self.source_kind not in SOURCE_KINDS:
            raise InvalidArgument(f"unknown source kind {self.source_kind!r}")
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, idx):  # type: ignore[override]
        return self.tokens[idx]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tokens)

    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class NGramSet:
    n: int
    grams: frozenset[tuple[str, ...]] = field(default_factory=frozenset)

    def __len__(self) -> int:
        return len(self.grams)

    def __iter__(self):
        return iter(self.grams)

    def __contains__(self, gram) -> bool:
        return gram in self.grams


def _split_word(word: str) -> list[str]:
    lead: list[str] = []
    trail: list[str] = []
    start, end = 0, len(word)
    while start < end and is_punct(word[start]):
        lead.append(word[start])
        start += 1
    while end > start and is_punct(word[end - 1]):
        trail.append(word[end - 1])
        end -= 1
    core = [word[start:end]] if end > start else []
    return lead + core + trail[::-1]


def tokenize(text: str, kind: str = "paragraph") -> TokenSequence:
    """Lowercase, split on whitespace, detach leading/trailing punctuation.

    >>> tokenize("The Golden Compass.").tokens
    ('the', 'golden', 'compass', '.')
    """
    tokens: list[str] = []
    for word in text.lower().split():
        tokens.extend(_split_word(word))
    return TokenSequence(tuple(tokens), kind)


def normalize_answer(text: str) -> TokenSequence:
    """SQuAD-style normalization: lowercase, drop punctuation and articles."""
    text = text.lower()
    text = "".join(ch for ch in text if not is_punct(ch))
    text = _ARTICLES.sub(" ", text)
    return TokenSequence(tuple(text.split()), "answer")


def ngrams(seq: Sequence[str], n: int) -> NGramSet:
    if n <= 0:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    toks = tuple(seq)
    grams = frozenset(toks[i : i + n] for i in range(len(toks) - n + 1))
    return NGramSet(n, grams)


def words(seq: Sequence[str]) -> frozenset[str]:
    """Distinct unigrams as plain strings."""
    return frozenset(seq)


def _as_set(items) -> frozenset:
    if isinstance(items, NGramSet):
        return items.grams
    if isinstance(items, (set, frozenset)):
        return frozenset(items)
    return frozenset(items)


def coverage(P: Collection | NGramSet, Q: Collection | NGramSet) -> float:
    """|P & Q| / |Q|; an empty Q is vacuously covered."""
    p, q = _as_set(P), _as_set(Q)
    if not q:
        return 1.0
    return len(p & q) / len(q)


def contains_span(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    n = len(needle)
    if n == 0:
        return True
    hay = tuple(haystack)
    target = tuple(needle)
    return any(hay[i : i + n] == target for i in range(len(hay) - n + 1))


def join_tokens(parts: Iterable[Sequence[str]], kind: str = "paragraph") -> TokenSequence:
    out: list[str] = []
    for part in parts:
        out.extend(part)
    return TokenSequence(tuple(out), kind)


def split_sentences(seq: Sequence[str]) -> list[list[str]]:
    """Cut a token stream after every '.', '!' or '?' token."""
    sents: list[list[str]] = []
    cur: list[str] = []
    for tok in seq:
        cur.append(tok)
        if tok in (".", "!", "?"):
            sents.append(cur)
            cur = []
    if cur:
        sents.append(cur)
    return sents
