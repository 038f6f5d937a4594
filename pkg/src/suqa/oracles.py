"""Answer oracles: produce an answer from (question, explanation) only.

None of these take paragraphs; an answer that depends on anything but the
explanation text cannot be produced through this interface.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Protocol, Sequence

from suqa import remote
from suqa.errors import InvalidArgument
from suqa.textkit import is_punct, split_sentences, tokenize

AUXILIARIES = frozenset(
    {"is", "are", "was", "were", "do", "does", "did", "can", "could", "has", "have", "had", "will", "would", "should"}
)
NEGATIONS = frozenset({"not", "no", "never", "n't", "neither", "nor", "none", "cannot", "nobody", "nothing"})
EARLIER_CUES = frozenset({"first", "earlier", "earliest", "older", "oldest", "before"})
LATER_CUES = frozenset({"later", "latest", "last", "younger", "youngest", "after", "recently"})
STOPWORDS = frozenset(
    """a an the of in on at to for from by with and or but as than into about after before
    is are was were be been being has have had do does did which what who whom whose where when
    why how that this these those it its he she they his her their him them there here
    also not no yes both same either neither other another one ones same such""".split()
) | EARLIER_CUES | LATER_CUES
MONTHS = {
    m: i + 1
    for i, m in enumerate(
        "january february march april may june july august september october november december".split()
    )
}
_YEAR = re.compile(r"^(1[0-9]{3}|20[0-9]{2})$")
_DAY = re.compile(r"^([1-9]|[12][0-9]|3[01])$")


class AnswerOracle(Protocol):
    def answer(self, question: str, explanation: str) -> str: ...


def _is_content(tok: str) -> bool:
    return tok not in STOPWORDS and not all(is_punct(c) for c in tok)


def _is_negation(tok: str) -> bool:
    return tok in NEGATIONS or tok.endswith("n't")


def _trim(span: tuple[str, ...], q_words: set[str]) -> tuple[str, ...]:
    """Drop question words from both ends of a span ("kite called amber" -> "amber")."""
    lo, hi = 0, len(span)
    while lo < hi and span[lo] in q_words:
        lo += 1
    while hi > lo and span[hi - 1] in q_words:
        hi -= 1
    return span[lo:hi]


def _candidate_spans(sent: Sequence[str]) -> list[tuple[int, tuple[str, ...]]]:
    spans, cur, start = [], [], 0
    for i, tok in enumerate(sent):
        if _is_content(tok):
            if not cur:
                start = i
            cur.append(tok)
        elif cur:
            spans.append((start, tuple(cur)))
            cur = []
    if cur:
        spans.append((start, tuple(cur)))
    return spans


def _date_key(sent: Sequence[str]) -> tuple[int, int, int] | None:
    year = month = day = None
    for tok in sent:
        if year is None and _YEAR.match(tok):
            year = int(tok)
        elif month is None and tok in MONTHS:
            month = MONTHS[tok]
        elif day is None and _DAY.match(tok):
            day = int(tok)
    if year is None:
        return None
    return (year, month or 0, day or 0)


def _options(q: Sequence[str]) -> tuple[tuple[str, ...], tuple[str, ...]] | None:
    if "or" not in q:
        return None
    k = len(q) - 1 - list(reversed(q)).index("or")
    left: list[str] = []
    for tok in reversed(q[:k]):
        if not _is_content(tok):
            break
        left.insert(0, tok)
    right: list[str] = []
    for tok in q[k + 1 :]:
        if not _is_content(tok):
            break
        right.append(tok)
    if not left or not right:
        return None
    return tuple(left), tuple(right)


def _compare(q: Sequence[str], sents: list[list[str]]) -> str | None:
    cue = set(q)
    if cue & EARLIER_CUES:
        pick_earlier = True
    elif cue & LATER_CUES:
        pick_earlier = False
    else:
        return None
    opts = _options(q)
    if opts is None:
        return None
    dates = []
    for opt in opts:
        key = None
        for s in sents:
            if opt[0] in s:
                key = _date_key(s)
                if key is not None:
                    break
        if key is None:
            return None
        dates.append(key)
    if dates[0] == dates[1]:
        return None
    first_is_earlier = dates[0] < dates[1]
    winner = opts[0] if first_is_earlier == pick_earlier else opts[1]
    return " ".join(winner)


def span_matcher_answer(question: str, explanation: str) -> str:
    """Deterministic lexical reader.

    Rules, in order: empty explanation -> ""; yes/no question (leading
    auxiliary) -> "no" if the explanation has a negation cue, else "yes";
    "X or Y" question with an earlier/later cue -> the option whose
    sentence carries the earlier/later date; otherwise the content-word
    span not made of question words (question words trimmed from its
    ends), preferring spans that occur once in
    the explanation, then sentences sharing more question words, then
    later positions.
    """
    e = list(tokenize(explanation, "explanation"))
    if not e:
        return ""
    q = list(tokenize(question, "question"))
    sents = split_sentences(e)
    if q and q[0] in AUXILIARIES and "or" not in q:
        return "no" if any(_is_negation(t) for t in e) else "yes"
    compared = _compare(q, sents)
    if compared is not None:
        return compared
    q_words = set(q)
    focus = {t for t in q if _is_content(t)}
    flat = " " + " ".join(e) + " "
    best, best_key = "", None
    pos = 0
    for s in sents:
        overlap = len(focus & set(s))
        for start, span in _candidate_spans(s):
            span = _trim(span, q_words)
            if not span:
                continue
            text = " ".join(span)
            unique = flat.count(" " + text + " ") == 1
            key = (unique, overlap, pos + start)
            if best_key is None or key > best_key:
                best, best_key = text, key
        pos += len(s)
    return best


class SpanMatcherOracle:
    kind = "span_matcher"

    def answer(self, question: str, explanation: str) -> str:
        return span_matcher_answer(question, explanation)


class SyntheticRuleOracle:
    kind = "synthetic_rule"

    def answer(self, question: str, explanation: str) -> str:
        from suqa.corpus import synthetic_answer_oracle

        return synthetic_answer_oracle(question, explanation)


@dataclass
class RemoteOracle:
    endpoint: str
    timeout: float = remote.DEFAULT_TIMEOUT
    kind: str = "remote"

    def answer(self, question: str, explanation: str) -> str:
        return remote.request_answer(self.endpoint, question, explanation, self.timeout)


def make_oracle(kind: str, endpoint: str | None = None, timeout: float = remote.DEFAULT_TIMEOUT) -> AnswerOracle:
    if kind == "synthetic_rule":
        return SyntheticRuleOracle()
    if kind == "span_matcher":
        return SpanMatcherOracle()
    if kind == "remote":
        if not endpoint:
            raise InvalidArgument("remote oracle needs an endpoint")
        return RemoteOracle(endpoint, timeout)
    raise InvalidArgument(f"unknown oracle kind {kind!r}")
