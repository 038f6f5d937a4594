"""Toy encoder-decoder in numpy with hand-written backprop.

Encoder: word embeddings followed by residual tanh convolutions.
Input positions carry a learned flag vector when their token also occurs
in the question. Decoder: GRU fed with the previous token embedding and
the previous attention context, dot-product attention over projected
encoder states, and an output layer tied to the embedding matrix. A copy
score per input position is merged with the generation logits in log
space, so the output distribution is proportional to
``exp(gen_w) + sum_{j: x_j = w} exp(copy_j)``.

All arrays are float64 so the analytic gradients can be checked against
finite differences.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from suqa.errors import InvalidArgument, InvalidState

SPECIALS = ("<pad>", "<bos>", "<eos>", "<sep>", "<unk>")
PAD, BOS, EOS, SEP, UNK = range(len(SPECIALS))
NEVER_EMITTED = (PAD, BOS, SEP)
CHECKPOINT_VERSION = 1


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise InvalidArgument("vocab must start with the special tokens")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise InvalidArgument("duplicate vocab entries")

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]], min_count: int = 1) -> "Vocab":
        counts: Counter = Counter()
        for seq in sequences:
            counts.update(seq)
        words = sorted((t for t, c in counts.items() if c >= min_count and t not in SPECIALS), key=lambda t: (-counts[t], t))
        return cls(list(SPECIALS) + words)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Iterable[str]) -> tuple[list[int], int]:
        ids, unk = [], 0
        for t in tokens:
            i = self.stoi.get(t, UNK)
            unk += i == UNK
            ids.append(i)
        return ids, unk

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS, SEP):
                continue
            out.append(self.itos[i])
        return out


@dataclass(frozen=True)
class ModelConfig:
    emb_dim: int = 32
    hidden_dim: int = 64
    conv_layers: int = 2
    kernel: int = 7
    max_input_len: int = 200
    init_seed: int = 0

    def __post_init__(self) -> None:
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise InvalidArgument("kernel must be a positive odd integer")
        if min(self.emb_dim, self.hidden_dim, self.max_input_len) < 1 or self.conv_layers < 0:
            raise InvalidArgument("model dimensions must be positive")


def init_params(vocab_size: int, cfg: ModelConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.init_seed)
    d, H, k = cfg.emb_dim, cfg.hidden_dim, cfg.kernel

    def mat(*shape, fan_in):
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)

    p = {"emb": rng.normal(0.0, 0.3, size=(vocab_size, d)), "match_emb": rng.normal(0.0, 0.3, size=d)}
    for layer in range(cfg.conv_layers):
        p[f"conv{layer}_w"] = mat(k, d, d, fan_in=k * d) * 0.5
        p[f"conv{layer}_b"] = np.zeros(d)
    p["att_w"] = mat(d, H, fan_in=d)
    p["copy_w"] = mat(d, H, fan_in=d)
    p["init_w"] = mat(d, H, fan_in=d)
    p["init_b"] = np.zeros(H)
    p["gru_wx"] = mat(2 * d, 3 * H, fan_in=2 * d)
    p["gru_wh"] = mat(H, 3 * H, fan_in=H)
    p["gru_b"] = np.zeros(3 * H)
    p["out_w"] = mat(H + d, d, fan_in=H + d)
    p["out_b"] = np.zeros(d)
    p["logit_b"] = np.zeros(vocab_size)
    return p


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_softmax(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def pad_batch(seqs: Sequence[Sequence[int]], fill: int = PAD) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    T = max(1, int(lengths.max())) if len(seqs) else 1
    arr = np.full((len(seqs), T), fill, dtype=np.int64)
    for i, s in enumerate(seqs):
        arr[i, : len(s)] = s
    return arr, lengths


@dataclass
class Encoded:
    """Encoder outputs for one batch; reused by every decode from the same snapshot."""

    enc: np.ndarray
    keys: np.ndarray
    copy_keys: np.ndarray
    neg_mask: np.ndarray
    copy_valid: np.ndarray
    flat_ids: np.ndarray
    s0: np.ndarray
    cache: dict
    version: int


def question_match(ids: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """1.0 at context positions (after the separator) whose token also occurs in the question."""
    B, T = ids.shape
    out = np.zeros((B, T))
    for b in range(B):
        row = ids[b, : lengths[b]]
        seps = np.flatnonzero(row == SEP)
        if not len(seps):
            continue
        cut = int(seps[0])
        q = set(int(t) for t in row[:cut]) - set(range(len(SPECIALS)))
        if q:
            ctx = row[cut + 1 :]
            out[b, cut + 1 : len(row)] = np.isin(ctx, list(q))
    return out


class ExplainerModel:
    """Parameters, vocab and the forward/backward passes."""

    def __init__(self, vocab: Vocab, config: ModelConfig | None = None, params: dict | None = None):
        self.vocab = vocab
        self.config = config or ModelConfig()
        self.params = params if params is not None else init_params(len(vocab), self.config)
        self.version = 0
        self.extra: dict = {}
        self.out_mask = np.zeros(len(vocab))
        self.out_mask[list(NEVER_EMITTED)] = -np.inf

    # ------------------------------------------------------------ bookkeeping

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def check_finite(self) -> None:
        for name, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise InvalidState(f"parameter {name} has non-finite entries")

    def bump(self) -> None:
        self.version += 1

    def copy(self) -> "ExplainerModel":
        m = ExplainerModel(self.vocab, self.config, {k: v.copy() for k, v in self.params.items()})
        m.version = self.version
        return m

    # ----------------------------------------------------------------- encoder

    def encode(self, inputs: Sequence[Sequence[int]]) -> Encoded:
        p, cfg = self.params, self.config
        V = len(self.vocab)
        ids, lengths = pad_batch(inputs)
        B, T = ids.shape
        mask = (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)
        qmatch = question_match(ids, lengths)
        h = (p["emb"][ids] + qmatch[..., None] * p["match_emb"]) * mask[..., None]
        r = cfg.kernel // 2
        layers = []
        for layer in range(cfg.conv_layers):
            W, b = p[f"conv{layer}_w"], p[f"conv{layer}_b"]
            hp = np.pad(h, ((0, 0), (r, r), (0, 0)))
            pre = b + sum(hp[:, i : i + T] @ W[i] for i in range(cfg.kernel))
            a = np.tanh(pre)
            layers.append((hp, a))
            h = (h + a) * mask[..., None]
        keys = h @ p["att_w"]
        copy_keys = h @ p["copy_w"]
        neg_mask = np.where(mask > 0, 0.0, -np.inf)
        copy_valid = (mask > 0) & ~np.isin(ids, NEVER_EMITTED)
        flat_ids = np.arange(B)[:, None] * V + ids
        denom = np.maximum(lengths, 1)[:, None].astype(np.float64)
        mean_enc = h.sum(axis=1) / denom
        s0 = np.tanh(mean_enc @ p["init_w"] + p["init_b"])
        cache = {"ids": ids, "mask": mask, "qmatch": qmatch, "layers": layers, "mean_enc": mean_enc, "denom": denom}
        return Encoded(h, keys, copy_keys, neg_mask, copy_valid, flat_ids, s0, cache, self.version)

    def _encoder_backward(self, E: Encoded, d_enc, d_keys, d_copy_keys, d_s0, g: dict) -> None:
        p, cfg = self.params, self.config
        c = E.cache
        mask = c["mask"]
        # s0 = tanh(mean_enc @ init_w + init_b)
        d_pre0 = d_s0 * (1.0 - E.s0**2)
        g["init_w"] += c["mean_enc"].T @ d_pre0
        g["init_b"] += d_pre0.sum(axis=0)
        d_mean = d_pre0 @ p["init_w"].T
        dh = d_enc + (d_mean / c["denom"])[:, None, :] * mask[..., None]
        g["att_w"] += np.einsum("btd,bth->dh", E.enc, d_keys)
        g["copy_w"] += np.einsum("btd,bth->dh", E.enc, d_copy_keys)
        dh = dh + d_keys @ p["att_w"].T + d_copy_keys @ p["copy_w"].T
        r = cfg.kernel // 2
        T = mask.shape[1]
        for layer in reversed(range(cfg.conv_layers)):
            hp, a = c["layers"][layer]
            W = p[f"conv{layer}_w"]
            dh = dh * mask[..., None]
            d_pre = dh * (1.0 - a**2)
            g[f"conv{layer}_b"] += d_pre.sum(axis=(0, 1))
            d_hp = np.zeros_like(hp)
            for i in range(cfg.kernel):
                g[f"conv{layer}_w"][i] += np.einsum("btd,bte->de", hp[:, i : i + T], d_pre)
                d_hp[:, i : i + T] += d_pre @ W[i].T
            dh = dh + d_hp[:, r : r + T]
        dh = dh * mask[..., None]
        np.add.at(g["emb"], c["ids"], dh)
        g["match_emb"] += np.einsum("bt,btd->d", c["qmatch"], dh)

    # ----------------------------------------------------------------- decoder

    def _step(self, E: Encoded, prev: np.ndarray, s_prev: np.ndarray, ctx_prev: np.ndarray):
        p = self.params
        H = self.config.hidden_dim
        B = prev.shape[0]
        V = len(self.vocab)
        x = np.concatenate([p["emb"][prev], ctx_prev], axis=1)
        a = x @ p["gru_wx"] + p["gru_b"]
        hh = s_prev @ p["gru_wh"]
        z = _sigmoid(a[:, :H] + hh[:, :H])
        r = _sigmoid(a[:, H : 2 * H] + hh[:, H : 2 * H])
        n = np.tanh(a[:, 2 * H :] + r * hh[:, 2 * H :])
        s = (1.0 - z) * n + z * s_prev
        scores = np.einsum("bth,bh->bt", E.keys, s) + E.neg_mask
        scores = scores - scores.max(axis=1, keepdims=True)
        alpha = np.exp(scores)
        alpha /= alpha.sum(axis=1, keepdims=True)
        ctx = np.einsum("bt,btd->bd", alpha, E.enc)
        so = np.concatenate([s, ctx], axis=1)
        o = np.tanh(so @ p["out_w"] + p["out_b"])
        gen = o @ p["emb"].T + p["logit_b"] + self.out_mask
        copy = np.where(E.copy_valid, np.einsum("bth,bh->bt", E.copy_keys, s), -np.inf)
        top = copy.max(axis=1)
        top = np.where(np.isfinite(top), top, 0.0)
        ex = np.exp(copy - top[:, None])
        summed = np.bincount(E.flat_ids.ravel(), weights=ex.ravel(), minlength=B * V).reshape(B, V)
        with np.errstate(divide="ignore"):
            copy_lse = np.log(summed) + top[:, None]
        logits = np.logaddexp(gen, copy_lse)
        cache = (prev, x, s_prev, z, r, n, hh, s, alpha, ctx, so, o, gen, copy, logits)
        return s, ctx, logits, cache

    def _step_backward(self, E: Encoded, cache, d_logits, ds_next, dctx_next, g, d_enc, d_keys, d_copy_keys):
        p = self.params
        H = self.config.hidden_dim
        d = self.config.emb_dim
        prev, x, s_prev, z, r, n, hh, s, alpha, ctx, so, o, gen, copy, logits = cache
        finite = np.isfinite(logits)
        with np.errstate(invalid="ignore"):
            d_gen = np.where(finite, d_logits * np.exp(gen - logits), 0.0)
        tgt_logits = logits.ravel()[E.flat_ids]
        with np.errstate(invalid="ignore"):
            d_copy = np.where(E.copy_valid, d_logits.ravel()[E.flat_ids] * np.exp(copy - tgt_logits), 0.0)
        ds_copy = np.einsum("bt,bth->bh", d_copy, E.copy_keys)
        d_copy_keys += d_copy[:, :, None] * s[:, None, :]
        g["logit_b"] += d_gen.sum(axis=0)
        g["emb"] += d_gen.T @ o
        d_o = d_gen @ p["emb"]
        d_preo = d_o * (1.0 - o**2)
        g["out_w"] += so.T @ d_preo
        g["out_b"] += d_preo.sum(axis=0)
        d_so = d_preo @ p["out_w"].T
        ds = ds_next + d_so[:, :H] + ds_copy
        dctx = dctx_next + d_so[:, H:]
        # attention
        d_enc += alpha[:, :, None] * dctx[:, None, :]
        d_alpha = np.einsum("btd,bd->bt", E.enc, dctx)
        d_scores = alpha * (d_alpha - np.sum(alpha * d_alpha, axis=1, keepdims=True))
        ds = ds + np.einsum("bt,bth->bh", d_scores, E.keys)
        d_keys += d_scores[:, :, None] * s[:, None, :]
        # GRU
        dn = ds * (1.0 - z)
        dz = ds * (s_prev - n)
        ds_prev = ds * z
        dn_pre = dn * (1.0 - n**2)
        dz_pre = dz * z * (1.0 - z)
        dr = dn_pre * hh[:, 2 * H :]
        dr_pre = dr * r * (1.0 - r)
        da = np.concatenate([dz_pre, dr_pre, dn_pre], axis=1)
        dhh = np.concatenate([dz_pre, dr_pre, dn_pre * r], axis=1)
        g["gru_wx"] += x.T @ da
        g["gru_b"] += da.sum(axis=0)
        g["gru_wh"] += s_prev.T @ dhh
        dx = da @ p["gru_wx"].T
        np.add.at(g["emb"], prev, dx[:, :d])
        ds_prev = ds_prev + dhh @ p["gru_wh"].T
        return ds_prev, dx[:, d:]

    # ------------------------------------------------------ teacher forcing

    def sequence_nll(
        self,
        inputs: Sequence[Sequence[int]],
        targets: Sequence[Sequence[int]],
        weights: np.ndarray,
        temperature: float = 1.0,
        need_grad: bool = True,
        encoded: Encoded | None = None,
    ) -> tuple[float, np.ndarray, dict | None]:
        """Weighted negative log-likelihood of ``targets`` under teacher forcing.

        ``weights[b, t]`` multiplies ``-log p(targets[b][t])``; entries past
        a sequence's end are ignored. Returns (loss, token log-probs, grads).
        """
        if temperature <= 0:
            raise InvalidArgument("temperature must be > 0")
        E = encoded if encoded is not None else self.encode(inputs)
        tgt, lengths = pad_batch(targets)
        B, n = tgt.shape
        W = np.zeros((B, n))
        w_in = np.asarray(weights, dtype=np.float64)
        W[:, : min(n, w_in.shape[1])] = w_in[:, :n]
        valid = np.arange(n)[None, :] < lengths[:, None]
        W = np.where(valid, W, 0.0)
        prev = np.full(B, BOS, dtype=np.int64)
        s, ctx = E.s0, np.zeros((B, self.config.emb_dim))
        caches, logps = [], np.zeros((B, n))
        loss = 0.0
        rows = np.arange(B)
        for t in range(n):
            s, ctx, logits, cache = self._step(E, prev, s, ctx)
            lp = log_softmax(logits / temperature)
            tok_lp = np.where(valid[:, t], lp[rows, tgt[:, t]], 0.0)
            logps[:, t] = tok_lp
            loss -= float(np.sum(W[:, t] * tok_lp))
            caches.append((cache, lp))
            prev = tgt[:, t]
        if not need_grad:
            return loss, logps, None
        g = {k: np.zeros_like(v) for k, v in self.params.items()}
        d_enc = np.zeros_like(E.enc)
        d_keys = np.zeros_like(E.keys)
        d_copy_keys = np.zeros_like(E.copy_keys)
        ds = np.zeros_like(E.s0)
        dctx = np.zeros((B, self.config.emb_dim))
        for t in reversed(range(n)):
            cache, lp = caches[t]
            d_lp = np.exp(lp)
            d_lp[rows, tgt[:, t]] -= 1.0
            d_logits = (W[:, t][:, None] * d_lp) / temperature
            ds, dctx = self._step_backward(E, cache, d_logits, ds, dctx, g, d_enc, d_keys, d_copy_keys)
        self._encoder_backward(E, d_enc, d_keys, d_copy_keys, ds, g)
        return loss, logps, g

    # ----------------------------------------------------------------- decode

    def decode(
        self,
        inputs: Sequence[Sequence[int]],
        limit: int,
        temperature: float | None = None,
        rng: np.random.Generator | None = None,
        encoded: Encoded | None = None,
        record_probs: bool = False,
    ) -> dict:
        """Greedy decoding when ``temperature`` is None, else multinomial sampling.

        Token ids include the terminating eos when one was produced.
        Log-probs are under the distribution actually used: unscaled for
        greedy, temperature-scaled for sampling.
        """
        if limit < 1:
            raise InvalidArgument("limit must be >= 1")
        if temperature is not None:
            if temperature <= 0:
                raise InvalidArgument("temperature must be > 0")
            if rng is None:
                raise InvalidArgument("sampling needs an rng")
        E = encoded if encoded is not None else self.encode(inputs)
        B = E.s0.shape[0]
        prev = np.full(B, BOS, dtype=np.int64)
        s, ctx = E.s0, np.zeros((B, self.config.emb_dim))
        done = np.zeros(B, dtype=bool)
        seqs: list[list[int]] = [[] for _ in range(B)]
        logps: list[list[float]] = [[] for _ in range(B)]
        step_probs = []
        rows = np.arange(B)
        for _ in range(limit):
            s, ctx, logits, _ = self._step(E, prev, s, ctx)
            lp = log_softmax(logits if temperature is None else logits / temperature)
            if temperature is None:
                choice = np.argmax(lp, axis=1)
            else:
                probs = np.exp(lp)
                cdf = np.cumsum(probs, axis=1)
                u = rng.random(B) * cdf[:, -1]
                choice = np.minimum((cdf <= u[:, None]).sum(axis=1), probs.shape[1] - 1)
                # never land on a zero-probability id through rounding
                bad = probs[rows, choice] == 0.0
                if np.any(bad):
                    choice[bad] = np.argmax(probs[bad], axis=1)
            if record_probs:
                step_probs.append(np.exp(lp))
            chosen_lp = lp[rows, choice]
            for b in range(B):
                if not done[b]:
                    seqs[b].append(int(choice[b]))
                    logps[b].append(float(chosen_lp[b]))
            done |= choice == EOS
            prev = choice
            if done.all():
                break
        out = {
            "ids": seqs,
            "token_logprobs": logps,
            "seq_logprob": [float(sum(x)) for x in logps],
            "version": E.version,
        }
        if record_probs:
            out["step_probs"] = step_probs
        return out

    # ------------------------------------------------------------ checkpoint

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {
            "version": CHECKPOINT_VERSION,
            "vocab": self.vocab.itos,
            "model_config": asdict(self.config),
            "param_version": self.version,
            "extra": extra or {},
        }
        arrays = {f"param__{k}": v for k, v in sorted(self.params.items())}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "ExplainerModel":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise InvalidState(f"unsupported checkpoint version {meta.get('version')}")
            params = {k[len("param__") :]: data[k].copy() for k in data.files if k.startswith("param__")}
        model = cls(Vocab(meta["vocab"]), ModelConfig(**meta["model_config"]), params)
        model.version = meta["param_version"]
        model.extra = meta.get("extra", {})
        return model
