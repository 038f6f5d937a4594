"""End-to-end run: rank paragraphs, explain, answer from the explanation, score."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from suqa.corpus import QAInstance
from suqa.errors import InvalidArgument, UndefinedMetric
from suqa.explainer.losses import encode_input
from suqa.explainer.model import ExplainerModel
from suqa.explainer.training import context_tokens
from suqa.metrics import MetricsReport, answer_f1, conciseness_metrics, rouge2
from suqa.oracles import AnswerOracle
from suqa.ranker import RankerModel, rank_topk
from suqa.rewards import RewardBreakdown, RewardEngine
from suqa.textkit import tokenize

logger = logging.getLogger(__name__)

EXPLANATION_SOURCES = ("model", "gold_xp", "gold_sf")


@dataclass
class PipelineConfig:
    k: int = 3
    max_explanation_tokens: int = 256
    max_input_len: int = 200
    explanation_source: str = "model"
    max_workers: int = 1

    def __post_init__(self) -> None:
        if self.explanation_source not in EXPLANATION_SOURCES:
            raise InvalidArgument(f"explanation_source must be one of {EXPLANATION_SOURCES}")
        if self.k < 1 or self.max_explanation_tokens < 1:
            raise InvalidArgument("k and max_explanation_tokens must be >= 1")


@dataclass
class PipelineResult:
    id: str
    explanation: str
    answer: str
    reward_breakdown: RewardBreakdown | None
    metrics: dict
    selected: list[int] = field(default_factory=list)
    error: str | None = None

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "explanation": self.explanation,
            "answer": self.answer,
            "rewards": self.reward_breakdown.to_dict() if self.reward_breakdown else None,
            "metrics": self.metrics,
            "selected": self.selected,
            "error": self.error,
        }


def _explain(inst: QAInstance, paragraphs, explainer: ExplainerModel | None, config: PipelineConfig) -> tuple[list[str], float]:
    if config.explanation_source == "gold_xp":
        if inst.gold_explanation is None:
            raise InvalidArgument(f"{inst.id}: no gold explanation to pass through")
        return list(tokenize(" ".join(inst.gold_explanation), "explanation")), 0.0
    if config.explanation_source == "gold_sf":
        return list(tokenize(" ".join(inst.supporting_fact_sentences()), "explanation")), 0.0
    if explainer is None:
        raise InvalidArgument("explanation_source='model' needs an explainer")
    q = tokenize(inst.question, "question")
    enc = encode_input(q, context_tokens(paragraphs), explainer.vocab, config.max_input_len)
    out = explainer.decode([enc.ids], config.max_explanation_tokens)
    return explainer.vocab.decode(out["ids"][0]), out["seq_logprob"][0]


def run_instance(
    instance: QAInstance,
    ranker: RankerModel | None,
    explainer: ExplainerModel | None,
    oracle: AnswerOracle,
    config: PipelineConfig | None = None,
    engine: RewardEngine | None = None,
) -> PipelineResult:
    """Top-k paragraphs -> greedy explanation -> oracle answer -> rewards and metrics.

    The oracle only ever sees the question and the explanation text.
    Failures are returned as a result with ``error`` set.
    """
    config = config or PipelineConfig()
    try:
        if ranker is not None:
            selected = rank_topk(ranker, instance.question, instance.paragraphs, config.k)
        else:
            selected = list(range(len(instance.paragraphs)))
        paragraphs = [instance.paragraphs[i] for i in selected]
        tokens, seq_logprob = _explain(instance, paragraphs, explainer, config)
        explanation = " ".join(tokens)
        answer = oracle.answer(instance.question, explanation)
        c = context_tokens(paragraphs)
        q = tokenize(instance.question, "question")
        scores = answer_f1(answer, instance.gold_answer)
        metrics: dict = {"id": instance.id, "f1": scores["f1"], "em": scores["em"], "suf": None}
        try:
            metrics.update(conciseness_metrics(tokens, c))
        except UndefinedMetric:
            metrics.update(cm=None, abs=None)
        if instance.gold_explanation is not None:
            metrics["rg2"] = rouge2(tokens, tokenize(" ".join(instance.gold_explanation), "explanation"))
        else:
            metrics["rg2"] = None
        breakdown = None
        if engine is not None and len(c) > 0:
            breakdown = engine.score(instance.question, q, c, tokens, instance.gold_answer, seq_logprob, predicted_answer=answer)
        return PipelineResult(instance.id, explanation, answer, breakdown, metrics, selected)
    except Exception as exc:  # recorded per instance; the corpus run continues
        logger.warning("instance %s failed: %s", instance.id, exc)
        return PipelineResult(instance.id, "", "", None, {"id": instance.id}, [], error=f"{type(exc).__name__}: {exc}")


def run_corpus(
    instances: Sequence[QAInstance],
    ranker: RankerModel | None,
    explainer: ExplainerModel | None,
    oracle: AnswerOracle,
    config: PipelineConfig | None = None,
    engine: RewardEngine | None = None,
) -> list[PipelineResult]:
    config = config or PipelineConfig()

    def one(inst):
        return run_instance(inst, ranker, explainer, oracle, config, engine)

    if config.max_workers <= 1:
        return [one(inst) for inst in instances]
    with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
        return list(pool.map(one, instances))


def attach_sufficiency(results: Sequence[PipelineResult], suf_labels: Mapping[str, int]) -> None:
    ids = {r.id for r in results}
    unknown = set(suf_labels) - ids
    if unknown:
        raise InvalidArgument(f"sufficiency labels for unknown ids: {sorted(unknown)[:5]}")
    for r in results:
        if r.id in suf_labels:
            r.metrics["suf"] = int(suf_labels[r.id])


def metrics_report(results: Sequence[PipelineResult]) -> MetricsReport:
    rows = [r.metrics for r in results if r.error is None]
    return MetricsReport.from_rows(rows)


def sufficiency_correctness_matrix(results: Sequence[PipelineResult], suf_labels: Mapping[str, int]) -> dict:
    """Counts over {sufficient, insufficient} x {correct (F1 > 0.5), wrong}."""
    ids = [r.id for r in results]
    if set(ids) != set(suf_labels) or len(ids) != len(set(ids)):
        raise InvalidArgument("sufficiency labels must cover exactly the result ids")
    out = {"sufficient": {"correct": 0, "wrong": 0}, "insufficient": {"correct": 0, "wrong": 0}}
    for r in results:
        row = "sufficient" if suf_labels[r.id] else "insufficient"
        col = "correct" if r.metrics.get("f1", 0.0) > 0.5 else "wrong"
        out[row][col] += 1
    return out
