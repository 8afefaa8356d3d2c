"""Duplicate penalty, baseline, blended action-value reward, rollouts, PG loss."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .chem import MolGraph, SmilesError, canonical, tokenize
from .diversify import Vocab, assemble
from .nets import Discriminator, Generator, pad_batch, sample_batch, source_batch
from .scorers import ExternalScores, ScorerLike, canonicalize_or_raw, score


class SnapshotMutated(RuntimeError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass
class RewardConfig:
    lam: float = 0.5
    K: int = 8
    baseline_mode: str = "batch_mean"  # or "constant"
    baseline_value: float = 0.0
    scorer: str = "validity"
    max_len: int = 30
    seed: int = 0
    external_path: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.baseline_mode not in ("batch_mean", "constant"):
            raise ValueError(f"unknown baseline mode {self.baseline_mode!r}")


def penalty(batch: Sequence[str], z: str) -> float:
    """#unique / (#SMILES * #repeats of z), counted on canonical forms."""
    keys = [canonicalize_or_raw(s) for s in batch]
    counts = Counter(keys)
    repeats = max(counts[canonicalize_or_raw(z)], 1)
    return len(counts) / (len(keys) * repeats)


def blend(d: float, r: float, p: float, b: float, lam: float) -> float:
    return lam * d + (1.0 - lam) * (r * p - b)


class BatchContext:
    """Statistics of one generated batch used by every reward in an update."""

    def __init__(self, generated: Sequence[str], cfg: RewardConfig, scorer: ScorerLike | None = None,
                 external: ExternalScores | None = None):
        self.cfg = cfg
        self.scorer = scorer if scorer is not None else cfg.scorer
        self.external = external
        keys = [canonicalize_or_raw(s) for s in generated]
        self.counts = Counter(keys)
        self.n = len(keys)
        self.n_unique = len(self.counts)
        self._cache: dict[str, float] = {}
        if cfg.baseline_mode == "constant":
            self.baseline = cfg.baseline_value
        elif self.n:
            self.baseline = float(np.mean([self.property(k) * self.penalty(k) for k in keys]))
        else:
            self.baseline = 0.0

    def penalty(self, key: str) -> float:
        if not self.n:
            return 1.0
        return self.n_unique / (self.n * max(self.counts.get(key, 0), 1))

    def property(self, key: str, graph: MolGraph | None = None) -> float:
        if key not in self._cache:
            self._cache[key] = score(graph if graph is not None else key, self.scorer, self.external).normalized
        return self._cache[key]

    def term(self, text: str, graph: MolGraph | None, d: float) -> float:
        key = canonical(graph) if graph is not None else text
        r = self.property(key, graph) if graph is not None else 0.0
        return blend(d, r, self.penalty(key), self.baseline, self.cfg.lam)


def reward_complete(z: str, d_score: float, cfg: RewardConfig, ctx: BatchContext, graph: MolGraph | None = None) -> float:
    if graph is None:
        key = canonicalize_or_raw(z)
        r = ctx.property(key)
    else:
        key = canonical(graph)
        r = ctx.property(key, graph)
    return blend(d_score, r, ctx.penalty(key), ctx.baseline, cfg.lam)


def discriminator_scores(disc: Discriminator | None, vocab: Vocab, texts: Sequence[str], tokens: Sequence[Sequence[str]]) -> np.ndarray:
    """Scores for complete molecules (no tape, eval mode)."""
    if disc is None:
        return np.zeros(len(texts))
    ids = []
    for toks in tokens:
        ids.append([vocab.index.get(t, vocab.pad_id) for t in toks] or [vocab.end_id])
    single = len(ids) == 1
    if single:
        # the batch statistic needs two rows; a lone molecule is scored beside its copy
        ids = ids * 2
    batch, pad = pad_batch(ids, vocab.pad_id)
    was = disc.training
    disc.eval()
    with ad.no_grad():
        out = disc(batch, pad).data[:, 0].astype(np.float64)
    disc.train(was)
    return out[:1] if single else out


def _complete(source: Sequence[str], group_ids: Sequence[int], vocab: Vocab):
    group = vocab.decode(group_ids)
    text, graph = assemble(source, group)
    return text, graph


def _molecule_tokens(text: str) -> list[str]:
    try:
        return tokenize(text)
    except SmilesError:
        return list(text)


def evaluate_completions(sources, groups, disc, vocab, cfg: RewardConfig, ctx: BatchContext) -> np.ndarray:
    """Blended reward for each (source, group id list)."""
    done = [_complete(s, g, vocab) for s, g in zip(sources, groups)]
    if cfg.lam > 0 and disc is not None:
        d = discriminator_scores(disc, vocab, [t for t, _ in done], [_molecule_tokens(t) for t, _ in done])
    else:
        d = np.zeros(len(done))
    return np.array([ctx.term(text, graph, float(dv)) for (text, graph), dv in zip(done, d)])


def rollout_reward(prefix: Sequence[int], source: Sequence[str], generator: Generator, disc: Discriminator | None,
                   vocab: Vocab, cfg: RewardConfig, ctx: BatchContext, rng: np.random.Generator,
                   greedy: bool = False) -> float:
    """Average blended reward over K policy completions of a fixed prefix."""
    before = ad.parameter_hash(generator.parameters())
    src = source_batch([source] * cfg.K, vocab, generator.cfg.alpha)
    groups = sample_batch(generator, *src, cfg.max_len, rng, greedy=greedy, prefixes=[list(prefix)] * cfg.K)
    if ad.parameter_hash(generator.parameters()) != before:
        raise SnapshotMutated("generator changed during rollout")
    return float(evaluate_completions([source] * cfg.K, groups, disc, vocab, cfg, ctx).mean())


def step_rewards(sources: Sequence[Sequence[str]], actions: Sequence[Sequence[int]], generator: Generator,
                 disc: Discriminator | None, vocab: Vocab, cfg: RewardConfig, ctx: BatchContext,
                 seed: int, workers: int = 1) -> np.ndarray:
    """Per-step rewards [B, T]; T counts every emitted action including END.

    The final action of each sequence gets the complete-sequence reward; every
    earlier step j averages K rollouts continuing Y_1:j.  Rollouts for step j
    draw from a generator seeded by (seed, j), so the result does not depend
    on how the work is scheduled.
    """
    b = len(actions)
    lengths = [len(a) for a in actions]
    rewards = np.zeros((b, max(lengths)), dtype=np.float64)
    before = ad.parameter_hash(generator.parameters())

    groups = [[t for t in a if t != vocab.end_id] for a in actions]
    final = evaluate_completions(sources, groups, disc, vocab, cfg, ctx)
    for i in range(b):
        rewards[i, lengths[i] - 1] = final[i]

    def run(j: int):
        rows = [i for i in range(b) if j < lengths[i]]
        if not rows:
            return j, rows, None
        rng = np.random.default_rng([seed, j])
        srcs = [sources[i] for i in rows for _ in range(cfg.K)]
        prefixes = [list(actions[i][:j]) for i in rows for _ in range(cfg.K)]
        src = source_batch(srcs, vocab, generator.cfg.alpha)
        done = sample_batch(generator, *src, cfg.max_len, rng, prefixes=prefixes)
        vals = evaluate_completions(srcs, done, disc, vocab, cfg, ctx)
        return j, rows, vals.reshape(len(rows), cfg.K).mean(axis=1)

    steps = range(1, max(lengths))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, steps))
    else:
        results = [run(j) for j in steps]
    for j, rows, vals in results:
        for i, v in zip(rows, vals if vals is not None else []):
            rewards[i, j - 1] = v
    if ad.parameter_hash(generator.parameters()) != before:
        raise SnapshotMutated("generator changed during rollouts")
    return rewards


def policy_gradient_loss(logits: Tensor, actions, rewards, mask) -> Tensor:
    """Negated (1/m) sum_j R_j log G(y_j | ...), averaged over the batch.

    ``mask`` is True on real (non-pad) steps; ``m`` is each sequence's length.
    """
    actions = np.asarray(actions, dtype=np.int64)
    rewards = np.asarray(rewards, dtype=ad.get_dtype())
    mask = np.asarray(mask, dtype=bool)
    if not (logits.shape[:-1] == actions.shape == rewards.shape == mask.shape):
        raise AlignmentError(
            f"logits {logits.shape}, actions {actions.shape}, rewards {rewards.shape}, mask {mask.shape}")
    logp = ad.gather_last(ad.log_softmax(logits, -1), actions)
    lengths = np.maximum(mask.sum(axis=1, keepdims=True), 1)
    weights = np.where(mask, rewards, 0.0) / lengths / actions.shape[0]
    return ad.scale(ad.sum_(ad.mul(logp, Tensor(weights))), -1.0)
