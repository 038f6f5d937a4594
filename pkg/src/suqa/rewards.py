"""Elemental rewards and their geometric-mean combination.

Nine elemental rewards are computed for a generated explanation ``e`` given
the question ``q``, the input paragraphs ``c`` and the gold answer. Each one
lies in [0, 1]; the combined reward is their geometric mean, so any single
zero annihilates the whole reward.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

from suqa import remote
from suqa.errors import InvalidArgument, RewardUnavailable
from suqa.textkit import contains_span, coverage, ngrams, normalize_answer, words

if TYPE_CHECKING:
    from suqa.oracles import AnswerOracle

ELEMENT_NAMES = (
    "compression",
    "abstractiveness",
    "relevance",
    "question_coverage",
    "qam_f1",
    "span_exists",
    "acceptability",
    "noisiness_ok",
    "well_formed",
)
BINARY_ELEMENTS = frozenset({"span_exists", "noisiness_ok", "well_formed"})

PRONOUNS = frozenset(
    {"he", "she", "it", "they", "his", "her", "its", "their", "this", "that", "these", "those"}
)
MAX_WORD_CHARS = 25
REPEAT_NGRAM = 4


@dataclass(frozen=True)
class RLConfig:
    lambda_ml: float = 0.1
    sample_temperature: float = 0.4
    advantage_clip_min: float = -0.001
    noisiness_threshold_T: float = -50.0
    max_explanation_tokens: int = 256
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.sample_temperature <= 0:
            raise InvalidArgument("sample_temperature must be > 0")
        if self.max_explanation_tokens < 1:
            raise InvalidArgument("max_explanation_tokens must be >= 1")
        if self.lambda_ml < 0:
            raise InvalidArgument("lambda_ml must be >= 0")


@dataclass(frozen=True)
class ScorerHandle:
    """Where a model-backed reward comes from: ``builtin`` or an HTTP URL."""

    kind: str
    endpoint: str = "builtin"
    timeout: float = remote.DEFAULT_TIMEOUT

    def __post_init__(self) -> None:
        if self.kind not in ("acceptability", "answer_oracle"):
            raise InvalidArgument(f"unknown scorer kind {self.kind!r}")

    @property
    def is_builtin(self) -> bool:
        return self.endpoint == "builtin"


@dataclass
class RewardBreakdown:
    compression: float
    abstractiveness: float
    relevance: float
    question_coverage: float
    qam_f1: float
    span_exists: float
    acceptability: float
    noisiness_ok: float
    well_formed: float
    combined: float = 0.0
    flags: tuple[str, ...] = ()
    predicted_answer: str | None = None

    def elements(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in ELEMENT_NAMES}

    def to_dict(self) -> dict:
        out = asdict(self)
        out["flags"] = list(self.flags)
        return out


# ------------------------------------------------------------------ elements


def reward_compression(explanation: Sequence[str], paragraphs: Sequence[str]) -> float:
    if len(paragraphs) == 0:
        raise InvalidArgument("paragraphs must be nonempty")
    value = 1.0 - len(explanation) / len(paragraphs)
    return min(1.0, max(0.0, value))


def reward_abstractiveness(explanation: Sequence[str], paragraphs: Sequence[str]) -> float:
    """Mean over n=1..4 of the share of explanation n-grams absent from the paragraphs.

    An empty explanation scores 0; the reward engine flags it.
    """
    if len(explanation) == 0:
        return 0.0
    total = 0.0
    for n in range(1, 5):
        total += 1.0 - coverage(ngrams(paragraphs, n), ngrams(explanation, n))
    return total / 4.0


def reward_relevance(explanation: Sequence[str], paragraphs: Sequence[str]) -> float:
    return coverage(words(paragraphs), words(explanation))


def reward_question_coverage(explanation: Sequence[str], question: Sequence[str]) -> float:
    return coverage(words(explanation), words(question))


def reward_span_exists(explanation: Sequence[str], gold_answer: str | Sequence[str]) -> float:
    gold = normalize_answer(gold_answer if isinstance(gold_answer, str) else " ".join(gold_answer))
    if len(gold) == 0:
        return 1.0
    expl = normalize_answer(" ".join(explanation))
    return 1.0 if contains_span(expl, gold) else 0.0


def reward_qam_f1(
    explanation: Sequence[str],
    question: str,
    gold_answer: str,
    oracle: "AnswerOracle",
) -> tuple[float, str]:
    """Answer F1 of the oracle's prediction from (question, explanation) alone.

    Returns the F1 and the predicted answer. Oracle failures propagate as
    RewardUnavailable instead of turning into a silent zero.
    """
    from suqa.metrics import answer_f1

    try:
        predicted = oracle.answer(question, " ".join(explanation))
    except RewardUnavailable:
        raise
    except Exception as exc:  # an oracle bug must not read as a zero reward
        raise RewardUnavailable(f"answer oracle failed: {exc}") from exc
    return answer_f1(predicted, gold_answer)["f1"], predicted


def reward_noisiness(seq_logprob: float, config: RLConfig) -> float:
    return 1.0 if seq_logprob > config.noisiness_threshold_T else 0.0


def well_formedness_triggers(explanation: Sequence[str]) -> list[str]:
    toks = list(explanation)
    if not toks:
        return ["empty"]
    fired = []
    grams = [tuple(toks[i : i + REPEAT_NGRAM]) for i in range(len(toks) - REPEAT_NGRAM + 1)]
    if len(grams) != len(set(grams)):
        fired.append("repetition")
    if any(len(t) > MAX_WORD_CHARS for t in toks):
        fired.append("long_word")
    if toks[0] in PRONOUNS:
        fired.append("pronoun_start")
    if toks[-1] != ".":
        fired.append("no_final_period")
    return fired


def reward_well_formed(explanation: Sequence[str]) -> float:
    return 0.0 if well_formedness_triggers(explanation) else 1.0


def reward_acceptability(explanation: Sequence[str], scorer: ScorerHandle) -> float:
    if scorer.is_builtin:
        return 1.0
    return remote.request_score(scorer.endpoint, " ".join(explanation), scorer.timeout)


# ---------------------------------------------------------------- combine


def combine(values: dict[str, float] | Sequence[float]) -> RewardBreakdown:
    """Geometric mean of the nine elemental rewards."""
    if isinstance(values, dict):
        missing = [n for n in ELEMENT_NAMES if n not in values]
        if missing:
            raise InvalidArgument(f"missing elemental rewards: {missing}")
        vals = {n: float(values[n]) for n in ELEMENT_NAMES}
    else:
        seq = [float(v) for v in values]
        if len(seq) != len(ELEMENT_NAMES):
            raise InvalidArgument(f"expected {len(ELEMENT_NAMES)} values, got {len(seq)}")
        vals = dict(zip(ELEMENT_NAMES, seq))
    for name, v in vals.items():
        if not (0.0 <= v <= 1.0) or math.isnan(v):
            raise InvalidArgument(f"{name}={v} outside [0, 1]")
        if name in BINARY_ELEMENTS and v not in (0.0, 1.0):
            raise InvalidArgument(f"{name} must be 0 or 1, got {v}")
    return RewardBreakdown(**vals, combined=gmean(vals.values()))


def gmean(values: Iterable[float]) -> float:
    vals = list(values)
    if any(v == 0.0 for v in vals):
        return 0.0
    return math.exp(sum(math.log(v) for v in vals) / len(vals))


# ----------------------------------------------------------------- engine


@dataclass
class RewardEngine:
    """Scores explanations against every elemental reward.

    ``oracle`` answers from (question, explanation) only; ``acceptability``
    is builtin (constant 1) unless it points at a remote scorer.
    """

    oracle: "AnswerOracle"
    acceptability: ScorerHandle = field(default_factory=lambda: ScorerHandle("acceptability"))
    config: RLConfig = field(default_factory=RLConfig)
    max_workers: int = 1

    def score(
        self,
        question: str,
        question_tokens: Sequence[str],
        paragraphs: Sequence[str],
        explanation: Sequence[str],
        gold_answer: str,
        seq_logprob: float = 0.0,
        predicted_answer: str | None = None,
    ) -> RewardBreakdown:
        flags = []
        if len(explanation) == 0:
            flags.append("empty_explanation")
        if not normalize_answer(gold_answer).tokens:
            flags.append("empty_gold_answer")
        if predicted_answer is None:
            qam, predicted_answer = reward_qam_f1(explanation, question, gold_answer, self.oracle)
        else:
            from suqa.metrics import answer_f1

            qam = answer_f1(predicted_answer, gold_answer)["f1"]
        values = {
            "compression": reward_compression(explanation, paragraphs),
            "abstractiveness": reward_abstractiveness(explanation, paragraphs),
            "relevance": reward_relevance(explanation, paragraphs),
            "question_coverage": reward_question_coverage(explanation, question_tokens),
            "qam_f1": qam,
            "span_exists": reward_span_exists(explanation, gold_answer),
            "acceptability": reward_acceptability(explanation, self.acceptability),
            "noisiness_ok": reward_noisiness(seq_logprob, self.config),
            "well_formed": reward_well_formed(explanation),
        }
        out = combine(values)
        out.flags = tuple(flags)
        out.predicted_answer = predicted_answer
        return out

    def score_many(self, requests: list[dict]) -> list[RewardBreakdown]:
        """Score a batch; remote calls fan out over ``max_workers`` threads."""
        if self.max_workers <= 1 or len(requests) <= 1:
            return [self.score(**r) for r in requests]
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            return list(pool.map(lambda r: self.score(**r), requests))
