import random

import numpy as np
import pytest

from rlmolgan.chem import canonicalize
from rlmolgan.evalkit import (
    EmptyInput,
    canonical_set,
    histogram,
    histogram_bars,
    histogram_report,
    histogram_tsv,
    metrics,
    metrics_row,
    top_k_table,
)


def test_hand_counted_batch():
    gen = ["CCO", "OCC", "CN", "NC", "CCC", "C#N", "c1ccccc1", "CF", "C(", "c1cccc1"]
    train = canonical_set(["CCC", "N#C", "c1ccccc1"])
    m = metrics(gen, train)
    assert m.validity == pytest.approx(8 / 10)
    assert m.uniqueness == pytest.approx(6 / 8)
    assert m.novelty == pytest.approx(3 / 6)
    assert m.total == pytest.approx(m.validity * m.uniqueness * m.novelty)


def test_generated_equals_training(corpus):
    m = metrics(corpus[:50], canonical_set(corpus[:50]))
    assert m.validity == 1.0 and m.uniqueness == 1.0 and m.novelty == 0.0


def test_order_insensitive(corpus):
    gen = corpus[:40] + corpus[:10] + ["C(", "CFC"]
    shuffled = gen[:]
    random.Random(1).shuffle(shuffled)
    train = canonical_set(corpus[30:60])
    assert metrics(gen, train) == metrics(shuffled, train)


def test_empty_input():
    with pytest.raises(EmptyInput):
        metrics([], set())


def test_property_means():
    m = metrics(["CCO", "C("], set(), scorers=["validity"])
    assert m.property_means == {"validity": 0.5}


def test_top_k_constant_and_clipped(corpus):
    t = top_k_table(corpus[:20], lambda g: 0.3, k=5)
    assert t.mean == pytest.approx(0.3) and not t.clipped
    t = top_k_table(corpus[:20], lambda g: 0.3, k=1000)
    assert t.clipped and t.k == 20


def test_top_k_matches_sort_oracle(corpus):
    rng = np.random.default_rng(0)
    mols = corpus[:200]
    values = {canonicalize(s): float(v) for s, v in zip(mols, rng.random(len(mols)))}
    from rlmolgan.chem import canonical
    t = top_k_table(mols + mols[:30], lambda g: values[canonical(g)], k=17)
    assert t.mean == pytest.approx(np.mean(sorted(values.values(), reverse=True)[:17]))


def test_histogram_properties():
    rng = np.random.default_rng(0)
    a, b = rng.random(300), rng.random(120) ** 2
    h = histogram(a, b, bins=10)
    assert h.original.sum() == 300 and h.generated.sum() == 120
    assert abs(h.mean_shift - (b.mean() - a.mean())) < 1e-9
    assert histogram(a, a).mean_shift == 0.0
    assert histogram([1.0], [0.0], bins=4).original.tolist() == [0, 0, 0, 1]


def test_histogram_report_outputs(corpus):
    h = histogram_report(corpus[:100], corpus[100:150] + ["C("], "logp_norm", bins=5)
    tsv = histogram_tsv(h)
    assert tsv.splitlines()[0] == "bin_lo\tbin_hi\toriginal\tgenerated"
    assert len(tsv.splitlines()) == 6
    assert "shift" in histogram_bars(h, label="logp")


def test_metrics_row_format():
    m = metrics(["CCO"], set(), epoch=3)
    assert metrics_row(m, 0.5, 1.25) == ["3", "1.000000", "1.000000", "1.000000", "1.000000", "0.500000", "1.250000"]
