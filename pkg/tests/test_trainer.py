import hashlib
import math

import numpy as np
import pytest

from toys import toy_config
from rlmolgan import autodiff as ad
from rlmolgan.diversify import DatasetEntry, Vocab
from rlmolgan.trainer import DatasetVocabMismatch, Divergence, Trainer, read_metrics


def small(corpus, **kw):
    kw.setdefault("n_samples", 64)
    kw.setdefault("K", 2)
    kw.setdefault("batch_size", 16)
    return toy_config(corpus, **kw)


def test_initial_nll_near_uniform(toy_corpus_path, tmp_path):
    t = Trainer(small(toy_corpus_path), tmp_path)
    nll = t.nll(t.entries, training=False).item()
    assert abs(nll - math.log(len(t.vocab))) < 0.05 * math.log(len(t.vocab))


def test_pretraining_reduces_nll(toy_corpus_path, tmp_path):
    t = Trainer(toy_config(toy_corpus_path), tmp_path)
    before = t.nll(t.entries, training=False).item()
    history = t.pretrain_generator(5)
    after = t.nll(t.entries, training=False).item()
    assert all(b < a for a, b in zip(history, history[1:]))
    assert after <= 0.8 * before
    assert (tmp_path / "checkpoints" / "generator_pretrained.ckpt").exists()


def test_single_sequence_overfit(tmp_path):
    corpus = tmp_path / "one.smi"
    corpus.write_text("CC(N)=O\n", encoding="utf-8")
    t = Trainer(small(corpus, dropout=0.0, lr_pretrain=3e-3, batch_size=1), tmp_path / "run")
    t.pretrain_generator(200)
    assert t.nll(t.entries, training=False).item() < 0.01


def test_discriminator_pretraining_balanced(toy_corpus_path, tmp_path, monkeypatch):
    t = Trainer(small(toy_corpus_path, d_epochs=1), tmp_path)
    seen = []
    original = t.d_update

    def spy(texts, labels):
        seen.append(np.asarray(labels))
        return original(texts, labels)

    monkeypatch.setattr(t, "d_update", spy)
    t.pretrain_discriminator()
    labels = np.concatenate(seen)
    assert labels.sum() == len(labels) / 2 == len(t.real)


def test_discriminator_learns_separable_data(toy_corpus_path, tmp_path):
    t = Trainer(small(toy_corpus_path, dropout=0.0), tmp_path)
    real = ["C" * k for k in range(2, 10)] * 4
    fake = ["O" * k for k in range(2, 10)] * 4
    texts = real + fake
    labels = np.array([1.0] * len(real) + [0.0] * len(fake))
    rng = np.random.default_rng(0)
    for _ in range(10):
        perm = rng.permutation(len(texts))
        for lo in range(0, len(perm), 16):
            idx = perm[lo:lo + 16]
            t.d_update([texts[i] for i in idx], labels[idx])
    ids, pad = t._encode_molecules(texts)
    t.disc.eval()
    with ad.no_grad():
        scores = t.disc.raw(ids, pad).data[:, 0]
    assert np.mean((scores > 0) == (labels > 0.5)) > 0.95


def test_wgan_clip_after_every_step(toy_corpus_path, tmp_path, monkeypatch):
    t = Trainer(small(toy_corpus_path, mode="wgan", f_epochs=1, d_epochs=1, epochs=2), tmp_path)
    c = t.cfg.clip_c
    checks = []
    original = t.d_update

    def checked(texts, labels):
        out = original(texts, labels)
        checks.append(max(float(np.abs(p.data).max()) for p in t.disc.parameters()))
        return out

    monkeypatch.setattr(t, "d_update", checked)
    t.train()
    assert checks and max(checks) <= c


def test_lambda_zero_skips_discriminator(toy_corpus_path, tmp_path, monkeypatch):
    t = Trainer(small(toy_corpus_path, lam=0.0, f_epochs=1, d_epochs=1), tmp_path)
    t.pretrain_generator()

    def boom(*a, **k):
        raise AssertionError("discriminator used in the reward")

    monkeypatch.setattr(t.disc, "forward", boom)
    monkeypatch.setattr(t.disc, "raw", boom)
    t.policy_step()


def test_policy_update_matches_reinforce(toy_corpus_path, tmp_path, monkeypatch):
    """lam=1, K=1, zero dropout: the output-bias gradient equals -(1/B) sum (1/m) R (onehot - p)."""
    t = Trainer(small(toy_corpus_path, lam=1.0, K=1, dropout=0.0, batch_size=6, f_epochs=1, d_epochs=1), tmp_path)
    t.pretrain_generator()
    captured = {}
    monkeypatch.setattr(t.pg_opt, "step", lambda: captured.setdefault("g", t.generator.out.bias.grad.copy()))
    samples = t.generate(6)
    sources = [s.source for s in samples]
    actions = [s.actions for s in samples]
    rewards = np.random.default_rng(0).random((6, max(len(a) for a in actions)))
    t.apply_policy_gradient(sources, actions, rewards)

    expected = np.zeros(len(t.vocab))
    with ad.no_grad():
        for src, act, r in zip(sources, actions, rewards):
            from rlmolgan.nets import source_batch, target_positions, pad_batch
            s = source_batch([src], t.vocab, t.alpha)
            tgt_in, tgt_pad = pad_batch([[t.vocab.start_id] + act[:-1]], t.vocab.pad_id)
            logits = t.generator(*s, tgt_in, target_positions(tgt_in, t.alpha), tgt_pad).data[0].astype(np.float64)
            p = np.exp(logits - logits.max(-1, keepdims=True))
            p /= p.sum(-1, keepdims=True)
            for j, a in enumerate(act):
                onehot = np.eye(len(t.vocab))[a]
                expected -= r[j] * (onehot - p[j]) / len(act) / len(sources)
    assert np.allclose(captured["g"], expected, atol=1e-5)


def test_divergence_guard(toy_corpus_path, tmp_path, monkeypatch):
    t = Trainer(small(toy_corpus_path, divergence_guard=True, f_epochs=1, d_epochs=1, epochs=10), tmp_path)
    t.pretrain_generator()
    t.pretrain_discriminator()
    monkeypatch.setattr(t, "policy_step", lambda: 0.0)
    monkeypatch.setattr(t, "discriminator_step", lambda: {})
    monkeypatch.setattr(t, "generate", lambda n: [])
    monkeypatch.setattr(t, "evaluate", lambda epoch, loss: {"validity": 0.0})
    (tmp_path / "metrics.tsv").write_text("epoch\n", encoding="utf-8")
    with pytest.raises(Divergence):
        t.adversarial_loop()
    assert t.state.adv_epochs_done == 3


def _digest(run_dir):
    h = hashlib.sha256()
    for name in ("metrics.tsv", "checkpoints/generator.ckpt", "checkpoints/discriminator.ckpt"):
        h.update((run_dir / name).read_bytes())
    return h.hexdigest()


def test_determinism_and_resume(toy_corpus_path, tmp_path):
    cfg = small(toy_corpus_path, f_epochs=2, d_epochs=1, epochs=4)
    Trainer(cfg, tmp_path / "a").train()
    Trainer(cfg, tmp_path / "b").train()
    first = Trainer(small(toy_corpus_path, f_epochs=2, d_epochs=1, epochs=2), tmp_path / "c")
    first.train()
    Trainer(cfg, tmp_path / "c", resume=True).train()
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b") == _digest(tmp_path / "c")
    rows = read_metrics(tmp_path / "a" / "metrics.tsv")
    assert [r["epoch"] for r in rows] == ["0", "1", "2", "3", "4"]
    assert (tmp_path / "a" / "samples" / "epoch_4.smi").exists()


def test_vocab_mismatch_detected(toy_corpus_path, tmp_path):
    Trainer(small(toy_corpus_path), tmp_path)
    Vocab(["<pad>", "<bos>", "<eos>", "*", "C"]).save(tmp_path / "vocab.txt")
    with pytest.raises(DatasetVocabMismatch):
        Trainer(small(toy_corpus_path), tmp_path)


def test_metrics_rows_are_consistent(toy_corpus_path, tmp_path):
    cfg = small(toy_corpus_path, f_epochs=1, d_epochs=1, epochs=1)
    Trainer(cfg, tmp_path).train()
    for row in read_metrics(tmp_path / "metrics.tsv"):
        v, u, n, total = (float(row[k]) for k in ("validity", "unique", "novelty", "total"))
        assert abs(total - v * u * n) < 2e-6
