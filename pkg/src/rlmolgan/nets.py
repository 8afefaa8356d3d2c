"""Generator (decoder variant) and discriminator (encoder variant)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Parameter, Tensor
from .diversify import Vocab
from .posenc import linear_position, scaffold_ids, sinusoidal, target_ids

NEG_INF = -1e9
OUTPUT_INIT_SCALE = 0.5


class BatchTooSmall(ValueError):
    pass


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True):
        self.weight = Parameter(ad.xavier_uniform(rng, d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight)
        return ad.add(y, self.bias) if self.bias is not None else y


class Embedding(Module):
    def __init__(self, rng, n: int, d: int):
        self.weight = Parameter(ad.xavier_uniform(rng, n, d))

    def __call__(self, ids) -> Tensor:
        return ad.embedding_lookup(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layernorm(x, self.gamma, self.beta)


class MultiHeadAttention(Module):
    def __init__(self, rng, d_model: int, n_heads: int):
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        self.n_heads = n_heads
        self.q = Linear(rng, d_model, d_model)
        self.k = Linear(rng, d_model, d_model)
        self.v = Linear(rng, d_model, d_model)
        self.o = Linear(rng, d_model, d_model)

    def _heads(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return ad.transpose(ad.reshape(x, (b, n, self.n_heads, d // self.n_heads)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, mask_bias: np.ndarray) -> Tensor:
        b, n, d = x.shape
        q, k, v = self._heads(self.q(x)), self._heads(self.k(x)), self._heads(self.v(x))
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d // self.n_heads))
        attn = ad.softmax(ad.add(scores, Tensor(mask_bias)), axis=-1)
        ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (b, n, d))
        return self.o(ctx)


class Block(Module):
    """Pre-norm transformer block."""

    def __init__(self, rng, d_model: int, n_heads: int, d_ff: int, dropout: float):
        self.ln1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(rng, d_model, n_heads)
        self.ln2 = LayerNorm(d_model)
        self.ff1 = Linear(rng, d_model, d_ff)
        self.ff2 = Linear(rng, d_ff, d_model)
        self.dropout = dropout

    def __call__(self, x: Tensor, mask_bias: np.ndarray, rng) -> Tensor:
        h = ad.dropout(self.attn(self.ln1(x), mask_bias), self.dropout, rng, self.training)
        x = ad.add(x, h)
        h = self.ff2(ad.relu(self.ff1(self.ln2(x))))
        return ad.add(x, ad.dropout(h, self.dropout, rng, self.training))


@dataclass
class GeneratorConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 100
    dropout: float = 0.1
    alpha: int = 31
    max_len: int = 30


@dataclass
class DiscriminatorConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 200
    dropout: float = 0.1
    mode: str = "probability"  # or "critic"


def _init_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


class Generator(Module):
    """Single-stream decoder over [source | target] with a block attention mask.

    Source tokens attend to each other freely; target tokens see the whole
    source and the target prefix up to themselves.
    """

    def __init__(self, cfg: GeneratorConfig, seed: int = 0):
        rng = _init_rng(seed)
        self.cfg = cfg
        self.embed = Embedding(rng, cfg.vocab_size, cfg.d_model)
        self.blocks = [Block(rng, cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.dropout) for _ in range(cfg.n_layers)]
        self.ln_f = LayerNorm(cfg.d_model)
        self.out = Linear(rng, cfg.d_model, cfg.vocab_size)
        # near-uniform next-token distribution at initialisation
        self.out.weight.data *= OUTPUT_INIT_SCALE

    def hparams(self) -> dict:
        return asdict(self.cfg)

    def forward(self, src_ids, src_pos, src_pad, tgt_ids, tgt_pos, tgt_pad, rng=None) -> Tensor:
        src_ids = np.asarray(src_ids)
        tgt_ids = np.asarray(tgt_ids)
        if src_ids.ndim != 2 or tgt_ids.ndim != 2 or src_ids.shape[0] != tgt_ids.shape[0]:
            raise ad.ShapeMismatch(f"source {src_ids.shape} / target {tgt_ids.shape}")
        ls, lt = src_ids.shape[1], tgt_ids.shape[1]
        ids = np.concatenate([src_ids, tgt_ids], axis=1)
        pos = np.concatenate([np.asarray(src_pos), np.asarray(tgt_pos)], axis=1)
        pad = np.concatenate([np.asarray(src_pad, bool), np.asarray(tgt_pad, bool)], axis=1)
        x = ad.add(self.embed(ids), Tensor(sinusoidal(pos, self.cfg.d_model, ad.get_dtype())))
        x = ad.dropout(x, self.cfg.dropout, rng, self.training)
        bias = generator_mask(ls, lt, pad)
        for block in self.blocks:
            x = block(x, bias, rng)
        x = self.ln_f(x)
        return self.out(ad.slice_(x, (slice(None), slice(ls, None))))

    __call__ = forward


def generator_mask(ls: int, lt: int, pad: np.ndarray) -> np.ndarray:
    """Additive attention bias of shape [B, 1, L, L]."""
    n = ls + lt
    allowed = np.zeros((n, n), dtype=bool)
    allowed[:, :ls] = True
    allowed[:ls, ls:] = False
    allowed[ls:, ls:] = np.tril(np.ones((lt, lt), dtype=bool))
    allowed = allowed[None] & ~pad[:, None, :]
    # a padded query row may end up fully masked; let it see itself
    idx = np.arange(n)
    allowed[:, idx, idx] |= ~allowed.any(axis=-1)
    bias = np.where(allowed, 0.0, NEG_INF).astype(ad.get_dtype())
    return bias[:, None, :, :]


def minibatch_feature(h: Tensor) -> Tensor:
    """Append the batch-std scalar (std over the batch, averaged over features)."""
    if h.shape[0] < 2:
        raise BatchTooSmall(f"mini-batch discrimination needs B >= 2, got {h.shape[0]}")
    scalar = ad.mean(ad.std(h, axis=0))
    col = ad.mul(Tensor(np.ones((h.shape[0], 1))), scalar)
    return ad.concat([h, col], axis=1)


class Discriminator(Module):
    def __init__(self, cfg: DiscriminatorConfig, seed: int = 0):
        if cfg.mode not in ("probability", "critic"):
            raise ValueError(f"unknown discriminator mode {cfg.mode!r}")
        rng = _init_rng(seed)
        self.cfg = cfg
        self.embed = Embedding(rng, cfg.vocab_size, cfg.d_model)
        self.blocks = [Block(rng, cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.dropout) for _ in range(cfg.n_layers)]
        self.ln_f = LayerNorm(cfg.d_model)
        self.head = Linear(rng, cfg.d_model + 1, 1)

    def hparams(self) -> dict:
        return asdict(self.cfg)

    def raw(self, ids, pad, rng=None) -> Tensor:
        """Unsquashed scores [B, 1]."""
        ids = np.asarray(ids)
        pad = np.asarray(pad, dtype=bool)
        if ids.ndim != 2 or ids.shape != pad.shape:
            raise ad.ShapeMismatch(f"ids {ids.shape} vs pad {pad.shape}")
        b, n = ids.shape
        pos = np.broadcast_to(np.arange(n), (b, n))
        x = ad.add(self.embed(ids), Tensor(sinusoidal(pos, self.cfg.d_model, ad.get_dtype())))
        x = ad.dropout(x, self.cfg.dropout, rng, self.training)
        allowed = np.broadcast_to(~pad[:, None, :], (b, n, n)).copy()
        idx = np.arange(n)
        allowed[:, idx, idx] |= ~allowed.any(axis=-1)
        bias = np.where(allowed, 0.0, NEG_INF).astype(ad.get_dtype())[:, None]
        for block in self.blocks:
            x = block(x, bias, rng)
        x = self.ln_f(x)
        keep = (~pad).astype(ad.get_dtype())
        counts = np.maximum(keep.sum(axis=1, keepdims=True), 1.0)
        pooled = ad.sum_(ad.mul(x, Tensor(keep[:, :, None])), axis=1)
        h = ad.mul(pooled, Tensor(1.0 / counts))
        return self.head(minibatch_feature(h))

    def forward(self, ids, pad, rng=None) -> Tensor:
        out = self.raw(ids, pad, rng)
        return ad.sigmoid(out) if self.cfg.mode == "probability" else out

    __call__ = forward


# ---------------------------------------------------------------- batching


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = 0, length: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    n = length if length is not None else max(len(s) for s in seqs)
    ids = np.full((len(seqs), n), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
    pad = ids == pad_id
    for i, s in enumerate(seqs):
        pad[i, :len(s)] = False
    return ids, pad


def source_batch(sources: Sequence[Sequence[str]], vocab: Vocab, alpha: int):
    ids, pad = pad_batch([vocab.encode(s) for s in sources], vocab.pad_id)
    pos = np.zeros_like(ids)
    for i, s in enumerate(sources):
        pos[i, :len(s)] = linear_position(scaffold_ids(s), alpha)
    return ids, pos, pad


def target_positions(tgt_in: np.ndarray, alpha: int, max_len: int | None = None) -> np.ndarray:
    b, n = tgt_in.shape
    pos = np.asarray(linear_position(target_ids(n, None if max_len is None else max_len + 1), alpha))
    return np.broadcast_to(pos, (b, n)).copy()


def teacher_batch(targets: Sequence[Sequence[str]], vocab: Vocab, alpha: int):
    """Decoder inputs [START, y...] and outputs [y..., END] with pads."""
    encoded = [vocab.encode(t) for t in targets]
    tgt_in, _ = pad_batch([[vocab.start_id] + e for e in encoded], vocab.pad_id)
    tgt_out, out_pad = pad_batch([e + [vocab.end_id] for e in encoded], vocab.pad_id)
    in_pad = out_pad.copy()
    return tgt_in, target_positions(tgt_in, alpha), in_pad, tgt_out, out_pad


# ---------------------------------------------------------------- sampling


def _blocked_ids(vocab_size: int) -> list[int]:
    # PAD, START and the attachment marker are never emitted
    return [i for i in (0, 1, 3) if i < vocab_size]


def sample_batch(
    model: Generator,
    src_ids: np.ndarray,
    src_pos: np.ndarray,
    src_pad: np.ndarray,
    max_len: int,
    rng: np.random.Generator | None = None,
    temperature: float = 1.0,
    greedy: bool = False,
    prefixes: Sequence[Sequence[int]] | None = None,
    start_id: int = 1,
    end_id: int = 2,
) -> list[list[int]]:
    """Autoregressive sampling of target ids (START/END stripped).

    ``prefixes`` (all the same length) are held fixed and continued.
    """
    b = src_ids.shape[0]
    prefix_len = 0 if prefixes is None else len(prefixes[0])
    seqs = np.full((b, 1 + max_len), start_id, dtype=np.int64)
    if prefixes is not None:
        if any(len(p) != prefix_len for p in prefixes):
            raise ValueError("prefixes must share a length")
        if prefix_len:
            seqs[:, 1:1 + prefix_len] = np.asarray(prefixes, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    if prefixes is not None:
        for i, p in enumerate(prefixes):
            done[i] = end_id in p
    was_training = model.training
    model.eval()
    blocked = _blocked_ids(model.cfg.vocab_size)
    alpha = model.cfg.alpha
    with ad.no_grad():
        for t in range(prefix_len, max_len):
            if done.all():
                break
            tgt = seqs[:, :t + 1]
            pos = target_positions(tgt, alpha)
            logits = model.forward(src_ids, src_pos, src_pad, tgt, pos, np.zeros_like(tgt, dtype=bool)).data[:, -1, :]
            logits = logits.astype(np.float64)
            logits[:, blocked] = -np.inf
            if greedy:
                nxt = logits.argmax(axis=-1)
            else:
                z = logits / temperature
                z -= z.max(axis=-1, keepdims=True)
                p = np.exp(z)
                p /= p.sum(axis=-1, keepdims=True)
                u = rng.random(b)
                nxt = np.minimum((p.cumsum(axis=-1) < u[:, None]).sum(axis=-1), p.shape[1] - 1)
            nxt = np.where(done, end_id, nxt)
            seqs[:, t + 1] = nxt
            done |= nxt == end_id
    model.train(was_training)
    out = []
    for i in range(b):
        row = seqs[i, 1:]
        k = np.nonzero(row == end_id)[0]
        out.append(row[: k[0] if len(k) else max_len].tolist())
    return out


def sample(model: Generator, vocab: Vocab, source: Sequence[str], max_len: int, temperature: float = 1.0,
           seed: int = 0, greedy: bool = False, n: int = 1) -> list[list[str]]:
    """Sample ``n`` target token lists for one source."""
    src_ids, src_pos, src_pad = source_batch([source] * n, vocab, model.cfg.alpha)
    rng = np.random.default_rng(seed)
    ids = sample_batch(model, src_ids, src_pos, src_pad, max_len, rng, temperature, greedy)
    return [vocab.decode(s) for s in ids]
