"""Lexical paragraph ranker: logistic regression over overlap features.

Trained with binary cross-entropy: supporting paragraphs are positives,
the question's distractors are negatives, and one supporting paragraph
borrowed from another question is an extra negative per question.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from suqa.corpus import Paragraph, QAInstance
from suqa.errors import InvalidArgument, SuqaError
from suqa.textkit import coverage, ngrams, tokenize, words

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "question_unigram_coverage",
    "paragraph_unigram_coverage",
    "question_bigram_coverage",
    "idf_overlap",
    "log_length",
    "title_in_question",
)


class RankerTrainingError(SuqaError):
    exit_code = 4


@dataclass
class RankerConfig:
    k: int = 3
    learning_rate: float = 0.5
    epochs: int = 300
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InvalidArgument("k must be >= 1")
        if self.learning_rate <= 0 or self.epochs < 1:
            raise InvalidArgument("learning_rate and epochs must be positive")


@dataclass
class RankerModel:
    weights: np.ndarray
    bias: float = 0.0
    feature_names: tuple[str, ...] = FEATURE_NAMES
    history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.feature_names),):
            raise InvalidArgument("weights and feature_names differ in length")

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RankerModel":
        return cls(np.array(d["weights"], dtype=np.float64), float(d["bias"]), tuple(d["feature_names"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RankerModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def score_features(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights + self.bias


def idf_table(paragraphs: Sequence[Sequence[str]]) -> dict[str, float]:
    """Smoothed idf over the candidate set of one question."""
    n = len(paragraphs)
    df: dict[str, int] = {}
    for p in paragraphs:
        for t in set(p):
            df[t] = df.get(t, 0) + 1
    return {t: math.log((n + 1) / (c + 1)) + 1.0 for t, c in df.items()}


def featurize(
    question: Sequence[str],
    paragraph: Sequence[str],
    title: Sequence[str] | None = None,
    idf: Mapping[str, float] | None = None,
) -> np.ndarray:
    q_words, p_words = words(question), words(paragraph)
    shared = q_words & p_words
    if idf is None:
        idf_overlap = coverage(p_words, q_words)
    else:
        denom = sum(idf.get(t, 1.0) for t in q_words)
        idf_overlap = sum(idf.get(t, 1.0) for t in shared) / denom if denom else 1.0
    title_toks = tuple(title or ())
    title_hit = 0.0
    if title_toks:
        n = len(title_toks)
        q = tuple(question)
        title_hit = float(any(q[i : i + n] == title_toks for i in range(len(q) - n + 1)))
    return np.array(
        [
            coverage(p_words, q_words),
            coverage(q_words, p_words),
            coverage(ngrams(paragraph, 2), ngrams(question, 2)),
            idf_overlap,
            math.log1p(len(paragraph)),
            title_hit,
        ],
        dtype=np.float64,
    )


def _paragraph_tokens(p: Paragraph) -> tuple[list[str], list[str]]:
    return list(tokenize(p.text())), list(tokenize(p.title))


def featurize_candidates(question: str, paragraphs: Sequence[Paragraph]) -> np.ndarray:
    q = list(tokenize(question, "question"))
    toks = [_paragraph_tokens(p) for p in paragraphs]
    idf = idf_table([t for t, _ in toks])
    if not toks:
        return np.zeros((0, len(FEATURE_NAMES)))
    return np.stack([featurize(q, body, title, idf) for body, title in toks])


def _bce(z: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^z) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def build_training_set(instances: Sequence[QAInstance], rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, int]:
    """Feature matrix, labels and the number of cross-question negatives."""
    X_rows, y_rows = [], []
    n_cross = 0
    for qi, inst in enumerate(instances):
        sup = set(inst.supporting_indices())
        paras = list(inst.paragraphs)
        labels = [1.0 if i in sup else 0.0 for i in range(len(paras))]
        if len(instances) > 1:
            other = int(rng.integers(len(instances) - 1))
            other += other >= qi
            donor = instances[other]
            donor_sup = donor.supporting_indices()
            if donor_sup:
                paras.append(donor.paragraphs[donor_sup[int(rng.integers(len(donor_sup)))]])
                labels.append(0.0)
                n_cross += 1
        X_rows.append(featurize_candidates(inst.question, paras))
        y_rows.extend(labels)
    if not X_rows:
        raise RankerTrainingError("no training instances")
    return np.vstack(X_rows), np.array(y_rows), n_cross


def train_ranker(instances: Sequence[QAInstance], config: RankerConfig | None = None) -> RankerModel:
    """Full-batch gradient descent on mean BCE."""
    config = config or RankerConfig()
    for inst in instances:
        sup = inst.supporting_indices()
        if not sup or len(sup) == len(inst.paragraphs):
            raise RankerTrainingError(f"{inst.id}: need >= 1 supporting and >= 1 distractor paragraph")
    rng = np.random.default_rng(config.rng_seed)
    X, y, _ = build_training_set(instances, rng)
    if y.min() == y.max():
        raise RankerTrainingError("training labels are all one class")
    w = np.zeros(X.shape[1])
    b = 0.0
    history = []
    n = len(y)
    for _ in range(config.epochs):
        z = X @ w + b
        history.append(_bce(z, y))
        g = 1.0 / (1.0 + np.exp(-z)) - y
        w -= config.learning_rate * (X.T @ g) / n
        b -= config.learning_rate * float(g.sum()) / n
    history.append(_bce(X @ w + b, y))
    model = RankerModel(w, b)
    model.history = history
    return model


def rank_topk(model: RankerModel, question: str, paragraphs: Sequence[Paragraph], k: int = 3) -> list[int]:
    """Indices of the k best-scoring paragraphs, best first; ties favour lower indices."""
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    if len(paragraphs) < k:
        logger.warning("only %d paragraphs for k=%d; returning all", len(paragraphs), k)
    if not paragraphs:
        return []
    scores = model.score_features(featurize_candidates(question, paragraphs))
    return order_by_score(scores)[:k]


def order_by_score(scores: Sequence[float]) -> list[int]:
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def recall_at_k(model: RankerModel, instances: Sequence[QAInstance], k: int = 3) -> float:
    if not instances:
        return 0.0
    hits = 0
    for inst in instances:
        top = set(rank_topk(model, inst.question, inst.paragraphs, k))
        hits += set(inst.supporting_indices()) <= top
    return hits / len(instances)
