"""End-to-end training: MLE pretraining, discriminator pretraining, adversarial loop."""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .chem import MARKER, read_corpus, tokenize, SmilesError
from .config import Config, dump_config
from .diversify import (
    DatasetConfig,
    DatasetEntry,
    Vocab,
    assemble,
    build_dataset,
    read_dataset,
    write_dataset,
)
from .evalkit import METRIC_COLUMNS, canonical_set, metrics, metrics_row
from .nets import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    pad_batch,
    sample_batch,
    source_batch,
    target_positions,
    teacher_batch,
)
from .posenc import scaffold_ids
from .rewards import BatchContext, RewardConfig, policy_gradient_loss, step_rewards
from .scorers import ExternalScores, score

log = logging.getLogger(__name__)


class Divergence(RuntimeError):
    pass


class DatasetVocabMismatch(ValueError):
    pass


@dataclass
class Sample:
    source: tuple[str, ...]
    actions: list[int]  # emitted ids, END included when emitted
    text: str
    valid: bool


@dataclass
class RunState:
    gen_epochs_done: int = 0
    disc_epochs_done: int = 0
    adv_epochs_done: int = 0
    bad_epochs: int = 0
    rng: dict = field(default_factory=dict)
    gen_history: list = field(default_factory=list)
    disc_history: list = field(default_factory=list)


def compute_alpha(entries: Sequence[DatasetEntry], max_len: int) -> int:
    """Smallest alpha keeping positions unique in both streams."""
    longest = max_len
    for e in entries:
        longest = max(longest, max(scaffold_ids(e.source).offset))
    return longest + 1


def dataset_config(cfg: Config) -> DatasetConfig:
    return DatasetConfig(cfg.max_len, cfg.variants, cfg.max_heavy_atoms, cfg.seed)


def molecule_tokens(text: str) -> list[str]:
    try:
        return tokenize(text)
    except SmilesError:
        return list(text)


class Trainer:
    def __init__(self, cfg: Config, run_dir: str | Path, resume: bool = False):
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        (self.run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        (self.run_dir / "samples").mkdir(exist_ok=True)
        (self.run_dir / "config.resolved").write_text(dump_config(cfg), encoding="utf-8")

        self.entries, self.vocab = self._load_data()
        self.real = [assemble(e.source, e.target)[0] for e in self.entries]
        self.training_set = canonical_set(self.real)
        self.alpha = compute_alpha(self.entries, cfg.max_len)

        self.rng = np.random.default_rng(cfg.seed)
        self.generator = Generator(GeneratorConfig(
            len(self.vocab), cfg.gen_d_model, cfg.gen_layers, cfg.gen_heads, cfg.gen_ff,
            cfg.dropout, self.alpha, cfg.max_len), seed=cfg.seed)
        self.disc = Discriminator(DiscriminatorConfig(
            len(self.vocab), cfg.disc_d_model, cfg.disc_layers, cfg.disc_heads, cfg.disc_ff,
            cfg.dropout, "probability" if cfg.mode == "gan" else "critic"), seed=cfg.seed + 1)
        self.g_opt = ad.Adam(self.generator.parameters(), lr=cfg.lr_pretrain)
        self.pg_opt = ad.Adam(self.generator.parameters(), lr=cfg.lr_adv)
        self.d_opt = ad.Adam(self.disc.parameters(), lr=cfg.disc_lr)
        self.reward_cfg = RewardConfig(cfg.lam, cfg.K, cfg.baseline_mode, cfg.baseline_value, cfg.scorer,
                                       cfg.max_len, cfg.seed, cfg.external_scores or None)
        self.external = ExternalScores(cfg.external_scores) if cfg.external_scores else None
        self.state = RunState()
        if cfg.mode == "wgan":
            ad.clip_weights(self.disc.parameters(), cfg.clip_c)
        if resume and (self.run_dir / "state.json").exists():
            self.load()

    # ------------------------------------------------------------ data

    def _load_data(self) -> tuple[list[DatasetEntry], Vocab]:
        data_path = self.run_dir / "dataset.tsv"
        vocab_path = self.run_dir / "vocab.txt"
        if data_path.exists() and vocab_path.exists():
            entries, vocab = read_dataset(data_path), Vocab.load(vocab_path)
            for e in entries:
                missing = set(e.source + e.target) - set(vocab.tokens)
                if missing:
                    raise DatasetVocabMismatch(f"tokens {sorted(missing)} missing from {vocab_path}")
            return entries, vocab
        if not self.cfg.corpus:
            raise FileNotFoundError("no dataset in the run directory and no corpus configured")
        entries, vocab = build_dataset(read_corpus(self.cfg.corpus), self.cfg.task, dataset_config(self.cfg))
        write_dataset(data_path, entries)
        vocab.save(vocab_path)
        return entries, vocab

    # ------------------------------------------------------------ persistence

    def _ckpt(self, name: str) -> Path:
        return self.run_dir / "checkpoints" / name

    def save(self):
        gen_arrays = dict(self.generator.state_dict())
        gen_arrays.update({f"pretrain/{k}": v for k, v in self.g_opt.state_arrays().items()})
        gen_arrays.update({f"adversarial/{k}": v for k, v in self.pg_opt.state_arrays().items()})
        ad.save_checkpoint(self._ckpt("generator.ckpt"), gen_arrays, self.vocab.tokens,
                           {"model": self.generator.hparams(), "pretrain_t": self.g_opt.t, "adversarial_t": self.pg_opt.t})
        disc_arrays = dict(self.disc.state_dict())
        disc_arrays.update(self.d_opt.state_arrays())
        ad.save_checkpoint(self._ckpt("discriminator.ckpt"), disc_arrays, self.vocab.tokens,
                           {"model": self.disc.hparams(), "t": self.d_opt.t})
        self.state.rng = self.rng.bit_generator.state
        (self.run_dir / "state.json").write_text(json.dumps(asdict(self.state), indent=1), encoding="utf-8")

    def load(self):
        raw = json.loads((self.run_dir / "state.json").read_text(encoding="utf-8"))
        self.state = RunState(**raw)
        if self._ckpt("generator.ckpt").exists():
            self.load_generator(self._ckpt("generator.ckpt"), with_optimizer=True)
        if self._ckpt("discriminator.ckpt").exists():
            arrays, vocab, hp = ad.load_checkpoint(self._ckpt("discriminator.ckpt"))
            self._check_vocab(vocab)
            self.disc.load_state_dict(arrays)
            self.d_opt.load_state_arrays(arrays, hp["t"])
        if self.state.rng:
            self.rng.bit_generator.state = self.state.rng

    def load_generator(self, path, with_optimizer: bool = False):
        arrays, vocab, hp = ad.load_checkpoint(path)
        self._check_vocab(vocab)
        self.generator.load_state_dict(arrays)
        if with_optimizer:
            self.g_opt.load_state_arrays({k[len("pretrain/"):]: v for k, v in arrays.items() if k.startswith("pretrain/")},
                                         hp["pretrain_t"])
            self.pg_opt.load_state_arrays({k[len("adversarial/"):]: v for k, v in arrays.items()
                                           if k.startswith("adversarial/")}, hp["adversarial_t"])

    def _check_vocab(self, tokens):
        if list(tokens) != self.vocab.tokens:
            raise DatasetVocabMismatch("checkpoint vocabulary differs from the run vocabulary")

    # ------------------------------------------------------------ sampling

    def _draw_sources(self, n: int) -> list[tuple[str, ...]]:
        if self.cfg.task == "de_novo":
            return [(MARKER,)] * n
        picks = self.rng.integers(0, len(self.entries), size=n)
        return [self.entries[i].source for i in picks]

    def generate(self, n: int, chunk: int = 256) -> list[Sample]:
        sources = self._draw_sources(n)
        out: list[Sample] = []
        for lo in range(0, n, chunk):
            srcs = sources[lo:lo + chunk]
            batch = source_batch(srcs, self.vocab, self.alpha)
            ids = sample_batch(self.generator, *batch, self.cfg.max_len, self.rng, self.cfg.temperature)
            for src, seq in zip(srcs, ids):
                actions = seq + [self.vocab.end_id] if len(seq) < self.cfg.max_len else list(seq)
                text, graph = assemble(src, self.vocab.decode(seq))
                out.append(Sample(src, actions, text, graph is not None))
        return out

    # ------------------------------------------------------------ generator MLE

    def nll(self, batch: Sequence[DatasetEntry], training: bool = True) -> ad.Tensor:
        self.generator.train(training)
        src = source_batch([e.source for e in batch], self.vocab, self.alpha)
        tgt_in, tgt_pos, tgt_pad, tgt_out, out_pad = teacher_batch([e.target for e in batch], self.vocab, self.alpha)
        logits = self.generator(*src, tgt_in, tgt_pos, tgt_pad, rng=self.rng)
        return ad.cross_entropy(logits, tgt_out, out_pad)

    def pretrain_generator(self, epochs: int | None = None) -> list[float]:
        epochs = self.cfg.f_epochs if epochs is None else epochs
        bs = self.cfg.batch_size
        ran = False
        while self.state.gen_epochs_done < epochs:
            ran = True
            perm = self.rng.permutation(len(self.entries))
            total, count = 0.0, 0
            for lo in range(0, len(perm), bs):
                batch = [self.entries[i] for i in perm[lo:lo + bs]]
                loss = self.nll(batch)
                self.g_opt.zero_grad()
                loss.backward()
                self.g_opt.step()
                total += loss.item() * len(batch)
                count += len(batch)
            self.state.gen_epochs_done += 1
            self.state.gen_history.append(total / count)
            log.info("pretrain-gen epoch %d nll %.4f", self.state.gen_epochs_done, total / count)
            self.save()
        if ran or not self._ckpt("generator_pretrained.ckpt").exists():
            self.save()
            shutil.copyfile(self._ckpt("generator.ckpt"), self._ckpt("generator_pretrained.ckpt"))
        return list(self.state.gen_history)

    # ------------------------------------------------------------ discriminator

    def _encode_molecules(self, texts: Sequence[str]):
        ids = [[self.vocab.index.get(t, self.vocab.pad_id) for t in molecule_tokens(s)] or [self.vocab.end_id]
               for s in texts]
        return pad_batch(ids, self.vocab.pad_id)

    def d_update(self, texts: Sequence[str], labels: np.ndarray) -> dict:
        ids, pad = self._encode_molecules(texts)
        self.disc.train()
        raw = self.disc.raw(ids, pad, rng=self.rng)
        labels = np.asarray(labels, dtype=float)
        if self.cfg.mode == "gan":
            loss = ad.bce_with_logits(raw, labels)
        else:
            n_real = max(labels.sum(), 1.0)
            n_fake = max((1 - labels).sum(), 1.0)
            w = np.where(labels > 0.5, 1.0 / n_real, -1.0 / n_fake)[:, None]
            loss = ad.scale(ad.sum_(ad.mul(raw, ad.Tensor(w))), -1.0)
        self.d_opt.zero_grad()
        loss.backward()
        self.d_opt.step()
        if self.cfg.mode == "wgan":
            ad.clip_weights(self.disc.parameters(), self.cfg.clip_c)
        scores = raw.data[:, 0]
        real, fake = scores[labels > 0.5], scores[labels < 0.5]
        return {
            "loss": loss.item(),
            "accuracy": float(np.mean((scores > 0) == (labels > 0.5))),
            "gap": float((real.mean() if len(real) else 0.0) - (fake.mean() if len(fake) else 0.0)),
        }

    def pretrain_discriminator(self, epochs: int | None = None) -> list[dict]:
        epochs = self.cfg.d_epochs if epochs is None else epochs
        if self.state.disc_epochs_done >= epochs:
            return list(self.state.disc_history)
        fake = [s.text for s in self.generate(len(self.real))]
        texts = list(self.real) + fake
        labels = np.array([1.0] * len(self.real) + [0.0] * len(fake))
        bs = self.cfg.batch_size
        while self.state.disc_epochs_done < epochs:
            perm = self.rng.permutation(len(texts))
            stats = []
            for lo in range(0, len(perm), bs):
                idx = perm[lo:lo + bs]
                if len(idx) < 2:
                    continue
                stats.append(self.d_update([texts[i] for i in idx], labels[idx]))
            summary = {k: float(np.mean([s[k] for s in stats])) for k in stats[0]}
            self.state.disc_epochs_done += 1
            self.state.disc_history.append(summary)
            log.info("pretrain-disc epoch %d %s", self.state.disc_epochs_done, summary)
            self.save()
        return list(self.state.disc_history)

    # ------------------------------------------------------------ adversarial

    def policy_step(self) -> float:
        samples = self.generate(self.cfg.batch_size)
        ctx = BatchContext([s.text for s in samples], self.reward_cfg, external=self.external)
        disc = self.disc if self.cfg.lam > 0 else None
        sources = [s.source for s in samples]
        actions = [s.actions for s in samples]
        rewards = step_rewards(sources, actions, self.generator, disc, self.vocab, self.reward_cfg, ctx,
                               seed=int(self.rng.integers(2 ** 31)), workers=self.cfg.workers)
        return self.apply_policy_gradient(sources, actions, rewards)

    def apply_policy_gradient(self, sources, actions, rewards) -> float:
        self.generator.train()
        src = source_batch(sources, self.vocab, self.alpha)
        tgt_in, _ = pad_batch([[self.vocab.start_id] + a[:-1] for a in actions], self.vocab.pad_id)
        acts, act_pad = pad_batch(actions, self.vocab.pad_id)
        in_pad = act_pad.copy()
        logits = self.generator(*src, tgt_in, target_positions(tgt_in, self.alpha), in_pad, rng=self.rng)
        loss = policy_gradient_loss(logits, acts, rewards, ~act_pad)
        self.pg_opt.zero_grad()
        loss.backward()
        self.pg_opt.step()
        return loss.item()

    def discriminator_step(self) -> dict:
        n = self.cfg.batch_size
        fake = [s.text for s in self.generate(n)]
        real = [self.real[i] for i in self.rng.integers(0, len(self.real), size=n)]
        texts = real + fake
        labels = np.array([1.0] * n + [0.0] * n)
        perm = self.rng.permutation(len(texts))
        return self.d_update([texts[i] for i in perm], labels[perm])

    def evaluate(self, epoch: int, loss: float) -> dict:
        samples = self.generate(self.cfg.n_samples)
        texts = [s.text for s in samples]
        (self.run_dir / "samples" / f"epoch_{epoch}.smi").write_text("\n".join(texts) + "\n", encoding="utf-8")
        m = metrics(texts, self.training_set, epoch=epoch)
        mean_prop = float(np.mean([score(t, self.cfg.scorer, self.external).normalized for t in texts]))
        path = self.run_dir / "metrics.tsv"
        if epoch == 0 or not path.exists():
            path.write_text("\t".join(METRIC_COLUMNS) + "\n", encoding="utf-8")
        with open(path, "a", encoding="utf-8") as fh:
            fh.write("\t".join(metrics_row(m, mean_prop, loss)) + "\n")
        log.info("epoch %d validity %.3f unique %.3f novelty %.3f property %.3f",
                 epoch, m.validity, m.uniqueness, m.novelty, mean_prop)
        return {"validity": m.validity, "unique": m.uniqueness, "novelty": m.novelty,
                "total": m.total, "mean_property": mean_prop, "loss": loss}

    def adversarial_loop(self, epochs: int | None = None) -> None:
        epochs = self.cfg.epochs if epochs is None else epochs
        if self.state.adv_epochs_done == 0 and not (self.run_dir / "metrics.tsv").exists():
            self.evaluate(0, float("nan"))
            self.save()
        while self.state.adv_epochs_done < epochs:
            losses = [self.policy_step() for _ in range(self.cfg.f_steps)]
            for _ in range(self.cfg.d_steps):
                self.discriminator_step()
            epoch = self.state.adv_epochs_done + 1
            row = self.evaluate(epoch, float(np.mean(losses)))
            self.state.adv_epochs_done = epoch
            self.state.bad_epochs = self.state.bad_epochs + 1 if row["validity"] < 0.01 else 0
            self.save()
            if self.cfg.divergence_guard and self.state.bad_epochs >= 3:
                raise Divergence(f"validity below 1% for 3 consecutive epochs (epoch {epoch})")

    def train(self) -> None:
        """Full pipeline: pretrain generator, pretrain discriminator, adversarial epochs."""
        self.pretrain_generator()
        self.pretrain_discriminator()
        self.adversarial_loop()


def read_metrics(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        for line in fh:
            rows.append(dict(zip(header, line.rstrip("\n").split("\t"))))
    return rows
