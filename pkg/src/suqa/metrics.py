"""Evaluation measures: answer F1/EM, ROUGE-2, Cm/Abs, sufficiency and XF1."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from suqa.errors import InvalidArgument, UndefinedMetric
from suqa.rewards import reward_abstractiveness
from suqa.textkit import normalize_answer

SUF_LABELS = ("yes", "likely", "no", "unsure")


def answer_f1(prediction: str, gold: str) -> dict[str, float]:
    pred = normalize_answer(prediction).tokens
    ref = normalize_answer(gold).tokens
    em = float(pred == ref)
    if not pred or not ref:
        return {"f1": float(pred == ref), "em": em}
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return {"f1": 0.0, "em": em}
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return {"f1": 2 * precision * recall / (precision + recall), "em": em}


def _bigram_counts(tokens: Sequence[str]) -> Counter:
    toks = list(tokens)
    return Counter(zip(toks, toks[1:]))


def rouge2(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Balanced F-measure over bigram multisets; 0 if either side has no bigrams."""
    cand = _bigram_counts(candidate)
    ref = _bigram_counts(reference)
    if not cand or not ref:
        return 0.0
    overlap = sum((cand & ref).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(cand.values())
    recall = overlap / sum(ref.values())
    return 2 * precision * recall / (precision + recall)


def conciseness_metrics(explanation: Sequence[str], paragraphs: Sequence[str]) -> dict[str, float]:
    """Compression ratio len(c)/len(e) and n-gram abstractiveness of e w.r.t. c."""
    if len(explanation) == 0:
        raise UndefinedMetric("Cm and Abs are undefined for an empty explanation")
    return {
        "cm": len(paragraphs) / len(explanation),
        "abs": reward_abstractiveness(explanation, paragraphs),
    }


@dataclass(frozen=True)
class SufficiencyJudgement:
    worker_id: str
    label: str
    worker_answer: str
    gold_answer: str

    def __post_init__(self) -> None:
        if self.label not in SUF_LABELS:
            raise InvalidArgument(f"label must be one of {SUF_LABELS}, got {self.label!r}")


def effective_label(j: SufficiencyJudgement) -> str:
    """Per-worker preprocessing before aggregation: wrong answer or unsure -> no, likely -> yes."""
    if j.label == "unsure":
        return "no"
    if answer_f1(j.worker_answer, j.gold_answer)["em"] == 0.0:
        return "no"
    if j.label == "likely":
        return "yes"
    return j.label


def aggregate_sufficiency(judgements: Iterable[SufficiencyJudgement]) -> int:
    """Majority vote over preprocessed labels; ties count as insufficient."""
    labels = [effective_label(j) for j in judgements]
    if not labels:
        raise InvalidArgument("need at least one judgement")
    yes = labels.count("yes")
    return int(yes > len(labels) - yes)


def xf1(rows: Iterable[dict]) -> float:
    rows = list(rows)
    if not rows:
        raise InvalidArgument("xf1 of an empty list")
    return sum(float(r["suf"]) * float(r["f1"]) for r in rows) / len(rows)


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


@dataclass
class MetricsReport:
    per_instance: list[dict] = field(default_factory=list)
    corpus: dict = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows: list[dict]) -> "MetricsReport":
        """Average each per-instance column over rows where it is defined.

        ``xf1`` and ``suf_rate`` are only present when every row carries a
        sufficiency label; ``mean_abs`` is reported in percent.
        """
        def col(name):
            return [float(r[name]) for r in rows if r.get(name) is not None]

        corpus: dict = {
            "n": len(rows),
            "mean_f1": _mean(col("f1")),
            "mean_em": _mean(col("em")),
            "mean_cm": _mean(col("cm")),
            "mean_abs": _mean(col("abs")),
            "mean_rg2": _mean(col("rg2")),
        }
        if corpus["mean_abs"] is not None:
            corpus["abs_percent"] = 100.0 * corpus["mean_abs"]
        suf = col("suf")
        if rows and len(suf) == len(rows):
            corpus["suf_rate"] = _mean(suf)
            corpus["xf1"] = xf1(rows)
        return cls(per_instance=list(rows), corpus=corpus)

    def to_dict(self) -> dict:
        return {"per_instance": self.per_instance, "corpus": self.corpus}
