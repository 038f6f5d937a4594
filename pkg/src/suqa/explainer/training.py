"""Supervised pretraining and self-critical RL fine-tuning of the explainer."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from suqa.corpus import Paragraph, QAInstance
from suqa.errors import InvalidArgument
from suqa.explainer.losses import TrainingBatch, encode_input, encode_target, joint_loss, loss_ml
from suqa.explainer.model import ExplainerModel, Vocab
from suqa.metrics import answer_f1
from suqa.rewards import ELEMENT_NAMES, RewardEngine, RLConfig
from suqa.textkit import TokenSequence, join_tokens, tokenize

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 3e-3
    batch_size: int = 16
    epochs: int = 30
    eval_every: int = 4096
    patience: int = 5
    clip_norm: float | None = 5.0
    seed: int = 0
    max_steps: int | None = None
    n_train_distractors: int = 1

    def __post_init__(self) -> None:
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidArgument(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1 or self.eval_every < 1:
            raise InvalidArgument("learning_rate, batch_size, epochs and eval_every must be positive")


# ---------------------------------------------------------------- examples


@dataclass
class Example:
    instance: QAInstance
    question_tokens: TokenSequence
    context_tokens: TokenSequence
    input_ids: list[int]
    gold_tokens: TokenSequence | None
    gold_ids: list[int] | None


def context_tokens(paragraphs: Sequence[Paragraph]) -> TokenSequence:
    return join_tokens((tokenize(p.text()) for p in paragraphs), "paragraph")


def training_paragraphs(inst: QAInstance, rng: np.random.Generator, n_distractors: int = 1) -> list[Paragraph]:
    """Gold supporting paragraphs plus randomly chosen distractors, in corpus order."""
    sup = inst.supporting_indices()
    others = [i for i in range(len(inst.paragraphs)) if i not in sup]
    k = min(n_distractors, len(others))
    picked = sorted(sup + [others[i] for i in rng.choice(len(others), size=k, replace=False)]) if k else sorted(sup)
    return [inst.paragraphs[i] for i in picked]


def make_example(inst: QAInstance, paragraphs: Sequence[Paragraph], vocab: Vocab, max_input_len: int, target_limit: int = 256) -> Example:
    q = tokenize(inst.question, "question")
    c = context_tokens(paragraphs)
    enc = encode_input(q, c, vocab, max_input_len)
    gold = None
    gold_ids = None
    if inst.gold_explanation is not None:
        gold = tokenize(" ".join(inst.gold_explanation), "explanation")
        gold_ids = encode_target(gold, vocab, target_limit)
    return Example(inst, q, c, enc.ids, gold, gold_ids)


def training_examples(instances: Sequence[QAInstance], vocab: Vocab, max_input_len: int, seed: int = 0, n_distractors: int = 1) -> list[Example]:
    rng = np.random.default_rng(seed)
    return [make_example(inst, training_paragraphs(inst, rng, n_distractors), vocab, max_input_len) for inst in instances]


def build_vocab(instances: Sequence[QAInstance]) -> Vocab:
    seqs = []
    for inst in instances:
        seqs.append(tokenize(inst.question))
        for p in inst.paragraphs:
            seqs.append(tokenize(p.text()))
        if inst.gold_explanation:
            seqs.append(tokenize(" ".join(inst.gold_explanation)))
    return Vocab.build(seqs)


# --------------------------------------------------------------- optimizers


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> None:
        for k, g in grads.items():
            params[k] -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**self.t)
            vhat = v / (1 - self.b2**self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(cfg: TrainConfig):
    return Adam(cfg.learning_rate) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)


def clip_grads(grads: dict, max_norm: float | None) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def apply_update(model: ExplainerModel, grads: dict, optimizer, clip_norm: float | None) -> float:
    norm = clip_grads(grads, clip_norm)
    optimizer.step(model.params, grads)
    model.bump()
    return norm


class EarlyStopping:
    """Tracks the best validation score; ``update`` returns True when patience runs out."""

    def __init__(self, patience: int = 5):
        if patience < 1:
            raise InvalidArgument("patience must be >= 1")
        self.patience = patience
        self.best: float | None = None
        self.bad_checks = 0

    def update(self, score: float) -> bool:
        if self.best is None or score > self.best:
            self.best = score
            self.bad_checks = 0
            return False
        self.bad_checks += 1
        return self.bad_checks >= self.patience


# --------------------------------------------------------------- supervised


def mean_nll(model: ExplainerModel, examples: Sequence[Example], batch_size: int = 64) -> float:
    total, n_tok = 0.0, 0
    for i in range(0, len(examples), batch_size):
        chunk = examples[i : i + batch_size]
        batch = TrainingBatch([e.input_ids for e in chunk], gold=[e.gold_ids for e in chunk])
        loss, _ = loss_ml(model, batch, need_grad=False)
        k = sum(len(g) for g in batch.gold)
        total += loss * k
        n_tok += k
    return total / max(n_tok, 1)


def train_supervised(
    model: ExplainerModel,
    train: Sequence[Example],
    valid: Sequence[Example],
    cfg: TrainConfig,
    validate: Callable[[ExplainerModel], float] | None = None,
) -> tuple[ExplainerModel, list[dict]]:
    """Minibatch teacher forcing with validation every ``eval_every`` steps.

    ``validate`` returns a higher-is-better score (default: negative
    validation NLL). Stops after ``patience`` checks without improvement
    and returns the best checkpoint.
    """
    if not valid:
        raise InvalidArgument("train_supervised needs a validation split")
    if any(e.gold_ids is None for e in train):
        raise InvalidArgument("every training example needs a gold explanation")
    validate = validate or (lambda m: -mean_nll(m, valid))
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg)
    stopper = EarlyStopping(cfg.patience)
    best = model.copy()
    log: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        for i in range(0, len(order), cfg.batch_size):
            chunk = [train[j] for j in order[i : i + cfg.batch_size]]
            batch = TrainingBatch([e.input_ids for e in chunk], gold=[e.gold_ids for e in chunk])
            loss, grads = loss_ml(model, batch)
            norm = apply_update(model, grads, opt, cfg.clip_norm)
            step += 1
            entry = {"step": step, "epoch": epoch, "loss_ml": loss, "grad_norm": norm}
            if step % cfg.eval_every == 0:
                score = validate(model)
                entry["valid"] = score
                improved = stopper.best is None or score > stopper.best
                stop = stopper.update(score)
                if improved:
                    best = model.copy()
                log.append(entry)
                if stop:
                    logger.info("early stop at step %d (best %.4f)", step, stopper.best)
                    return best, log
            else:
                log.append(entry)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    score = validate(model)
    log.append({"step": step, "valid": score, "final": True})
    if stopper.best is None or score > stopper.best:
        best = model.copy()
    return best, log


# ----------------------------------------------------------------------- RL


def _reward_requests(examples: Sequence[Example], seqs, logprobs, vocab: Vocab) -> list[dict]:
    reqs = []
    for ex, ids, lp in zip(examples, seqs, logprobs):
        reqs.append(
            {
                "question": ex.instance.question,
                "question_tokens": ex.question_tokens,
                "paragraphs": ex.context_tokens,
                "explanation": vocab.decode(ids),
                "gold_answer": ex.instance.gold_answer,
                "seq_logprob": lp,
            }
        )
    return reqs


def train_step_joint(
    model: ExplainerModel,
    examples: Sequence[Example],
    engine: RewardEngine,
    config: RLConfig,
    optimizer,
    rng: np.random.Generator,
    clip_norm: float | None = 5.0,
) -> dict:
    """One self-critical update on ``L_RL + lambda * L_ML``.

    Sampled and greedy explanations come from the same parameter snapshot.
    Reward failures propagate (RewardUnavailable) and no update is applied.
    """
    inputs = [e.input_ids for e in examples]
    E = model.encode(inputs)
    limit = config.max_explanation_tokens
    greedy = model.decode(inputs, limit, encoded=E)
    sampled = model.decode(inputs, limit, temperature=config.sample_temperature, rng=rng, encoded=E)
    r_greedy = engine.score_many(_reward_requests(examples, greedy["ids"], greedy["seq_logprob"], model.vocab))
    r_sampled = engine.score_many(_reward_requests(examples, sampled["ids"], sampled["seq_logprob"], model.vocab))
    batch = TrainingBatch(
        inputs,
        gold=[e.gold_ids for e in examples],
        sampled=sampled["ids"],
        sampled_logprobs=sampled["token_logprobs"],
        greedy=greedy["ids"],
        greedy_logprob=greedy["seq_logprob"],
        snapshot=E.version,
    )
    rs = [r.combined for r in r_sampled]
    rg = [r.combined for r in r_greedy]
    loss, grads, parts = joint_loss(model, batch, rs, rg, config, encoded=E)
    norm = apply_update(model, grads, optimizer, clip_norm)
    return {
        "loss": loss,
        **parts,
        "grad_norm": norm,
        "reward_sampled": float(np.mean(rs)),
        "reward_greedy": float(np.mean(rg)),
        "elements_sampled": {k: float(np.mean([r.elements()[k] for r in r_sampled])) for k in ELEMENT_NAMES},
        "elements_greedy": {k: float(np.mean([r.elements()[k] for r in r_greedy])) for k in ELEMENT_NAMES},
        "len_sampled": float(np.mean([len(s) for s in sampled["ids"]])),
        "len_greedy": float(np.mean([len(s) for s in greedy["ids"]])),
    }


@dataclass
class RLRunConfig:
    steps: int = 2000
    batch_size: int = 16
    optimizer: str = "adam"
    learning_rate: float = 5e-4
    clip_norm: float | None = 5.0
    eval_every: int | None = 250
    patience: int = 5
    seed: int = 0
    log_every: int = 1

    def __post_init__(self) -> None:
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidArgument(f"unknown optimizer {self.optimizer!r}")


def train_rl(
    model: ExplainerModel,
    examples: Sequence[Example],
    engine: RewardEngine,
    config: RLConfig,
    run: RLRunConfig,
    validate: Callable[[ExplainerModel], float] | None = None,
) -> tuple[ExplainerModel, list[dict]]:
    """Self-critical fine-tuning for ``run.steps`` updates.

    With ``validate`` and ``run.eval_every`` set, the best validated
    snapshot is returned and training stops after ``run.patience`` checks
    without improvement.
    """
    if not examples:
        raise InvalidArgument("no RL training examples")
    rng = np.random.default_rng(run.seed)
    opt = Adam(run.learning_rate) if run.optimizer == "adam" else SGD(run.learning_rate)
    stopper = EarlyStopping(run.patience)
    best = model.copy()
    log: list[dict] = []
    use_val = validate is not None and run.eval_every
    for step in range(1, run.steps + 1):
        idx = rng.choice(len(examples), size=min(run.batch_size, len(examples)), replace=False)
        diag = train_step_joint(model, [examples[i] for i in idx], engine, config, opt, rng, run.clip_norm)
        diag["step"] = step
        if use_val and step % run.eval_every == 0:
            score = validate(model)
            diag["valid"] = score
            improved = stopper.best is None or score > stopper.best
            stop = stopper.update(score)
            if improved:
                best = model.copy()
            if stop:
                log.append(diag)
                return best, log
        if step % run.log_every == 0 or step == run.steps:
            log.append(diag)
    if use_val:
        if run.steps % run.eval_every:
            score = validate(model)
            if stopper.best is None or score > stopper.best:
                best = model.copy()
        return best, log
    return model, log


def evaluate_explainer(
    model: ExplainerModel,
    examples: Sequence[Example],
    engine: RewardEngine | None,
    limit: int = 256,
    batch_size: int = 64,
) -> dict:
    """Greedy-decode ``examples`` and average rewards, accuracy and Cm.

    Without an engine only length and compression statistics are reported.
    Accuracy is exact match of the oracle's answer against gold.
    """
    if not examples:
        raise InvalidArgument("no examples to evaluate")
    outs: dict[str, list] = {"ids": [], "seq_logprob": []}
    for i in range(0, len(examples), batch_size):
        out = model.decode([e.input_ids for e in examples[i : i + batch_size]], limit)
        outs["ids"].extend(out["ids"])
        outs["seq_logprob"].extend(out["seq_logprob"])
    reqs = _reward_requests(examples, outs["ids"], outs["seq_logprob"], model.vocab)
    cms = [len(r["paragraphs"]) / len(r["explanation"]) for r in reqs if r["explanation"]]
    report: dict = {
        "n": len(examples),
        "mean_length": float(np.mean([len(r["explanation"]) for r in reqs])),
        "mean_cm": float(np.mean(cms)) if cms else None,
        "n_empty": len(reqs) - len(cms),
    }
    if engine is not None:
        rs = engine.score_many(reqs)
        report["mean_reward"] = float(np.mean([r.combined for r in rs]))
        report["elements"] = {k: float(np.mean([r.elements()[k] for r in rs])) for k in ELEMENT_NAMES}
        report["accuracy"] = float(
            np.mean([answer_f1(r.predicted_answer, ex.instance.gold_answer)["em"] for r, ex in zip(rs, examples)])
        )
    return report
