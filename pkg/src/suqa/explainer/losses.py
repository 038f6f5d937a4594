"""Input encoding, teacher-forcing loss, self-critical loss and the joint update."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from suqa.errors import InvalidArgument, InvalidState
from suqa.explainer.model import BOS, EOS, SEP, ExplainerModel, Vocab
from suqa.rewards import RLConfig


class EncodedInput(NamedTuple):
    ids: list[int]
    truncated: bool
    n_unknown: int


def encode_input(question: Sequence[str], paragraphs: Sequence[str], vocab: Vocab, max_len: int = 200) -> EncodedInput:
    """``[bos] q [sep] p [eos]``, with the paragraph side cut to fit ``max_len``."""
    if len(question) == 0:
        raise InvalidArgument("question must be nonempty")
    if max_len < 4:
        raise InvalidArgument("max_len must leave room for the special tokens")
    q_ids, q_unk = vocab.encode(question)
    p_ids, p_unk = vocab.encode(paragraphs)
    ids = [BOS] + q_ids + [SEP] + p_ids
    truncated = len(ids) + 1 > max_len
    if truncated:
        ids = ids[: max_len - 1]
    return EncodedInput(ids + [EOS], truncated, q_unk + p_unk)


def encode_target(explanation: Sequence[str], vocab: Vocab, limit: int = 256) -> list[int]:
    ids, _ = vocab.encode(explanation)
    return ids[: max(0, limit - 1)] + [EOS]


@dataclass
class TrainingBatch:
    inputs: list[list[int]]
    gold: list[list[int]] | None = None
    sampled: list[list[int]] | None = None
    sampled_logprobs: list[list[float]] | None = None
    greedy: list[list[int]] | None = None
    greedy_logprob: list[float] | None = None
    snapshot: int | None = None
    meta: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.inputs)


def _weights_for(seqs: Sequence[Sequence[int]], per_seq: np.ndarray) -> np.ndarray:
    n = max(1, max(len(s) for s in seqs))
    W = np.zeros((len(seqs), n))
    for b, s in enumerate(seqs):
        W[b, : len(s)] = per_seq[b]
    return W


def loss_ml(model: ExplainerModel, batch: TrainingBatch, need_grad: bool = True, encoded=None):
    """Mean per-token NLL of the gold explanations under teacher forcing."""
    if not batch.gold or any(len(g) == 0 for g in batch.gold):
        raise InvalidArgument("loss_ml needs nonempty gold sequences")
    n_tok = sum(len(g) for g in batch.gold)
    W = _weights_for(batch.gold, np.full(len(batch.gold), 1.0 / n_tok))
    loss, _, grads = model.sequence_nll(batch.inputs, batch.gold, W, 1.0, need_grad, encoded)
    return loss, grads


def advantages(rewards_sampled: Sequence[float], rewards_greedy: Sequence[float], config: RLConfig) -> np.ndarray:
    adv = np.asarray(rewards_sampled, dtype=np.float64) - np.asarray(rewards_greedy, dtype=np.float64)
    return np.maximum(adv, config.advantage_clip_min)


def loss_rl(
    model: ExplainerModel,
    batch: TrainingBatch,
    rewards_sampled: Sequence[float],
    rewards_greedy: Sequence[float],
    config: RLConfig,
    need_grad: bool = True,
    encoded=None,
):
    """Self-critical loss, averaged over the batch.

    Per sequence: ``-(A / n) * sum_t log p(y'_t)`` with
    ``A = max(r(y') - r(y_hat), clip)``, log-probs under the
    temperature-scaled sampling distribution and A held constant.
    """
    if batch.sampled is None:
        raise InvalidArgument("batch has no sampled sequences")
    if batch.snapshot is not None and batch.snapshot != model.version:
        raise InvalidState(f"batch sampled from snapshot {batch.snapshot}, model is at {model.version}")
    if len(rewards_sampled) != len(batch) or len(rewards_greedy) != len(batch):
        raise InvalidArgument("one reward pair per batch element is required")
    A = advantages(rewards_sampled, rewards_greedy, config)
    lengths = np.array([max(1, len(s)) for s in batch.sampled], dtype=np.float64)
    per_seq = A / lengths / len(batch)
    seqs = [s if len(s) else [EOS] for s in batch.sampled]
    W = _weights_for(seqs, per_seq)
    for b, s in enumerate(batch.sampled):
        if not s:
            W[b] = 0.0
    loss, _, grads = model.sequence_nll(batch.inputs, seqs, W, config.sample_temperature, need_grad, encoded)
    return loss, grads


def add_grads(a: dict, b: dict, scale: float = 1.0) -> dict:
    return {k: a[k] + scale * b[k] for k in a}


def joint_loss(model, batch, rewards_sampled, rewards_greedy, config: RLConfig, encoded=None):
    """``L_RL + lambda * L_ML``; the ML term covers only rows that have gold."""
    l_rl, g_rl = loss_rl(model, batch, rewards_sampled, rewards_greedy, config, encoded=encoded)
    rows = [i for i, g in enumerate(batch.gold or []) if g is not None]
    if config.lambda_ml == 0.0 or not rows:
        return l_rl, g_rl, {"loss_rl": l_rl, "loss_ml": None}
    if len(rows) == len(batch):
        l_ml, g_ml = loss_ml(model, batch, encoded=encoded)
    else:
        sub = TrainingBatch([batch.inputs[i] for i in rows], gold=[batch.gold[i] for i in rows])
        l_ml, g_ml = loss_ml(model, sub)
    return l_rl + config.lambda_ml * l_ml, add_grads(g_rl, g_ml, config.lambda_ml), {"loss_rl": l_rl, "loss_ml": l_ml}
