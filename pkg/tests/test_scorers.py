import logging

import pytest

from rlmolgan.chem import parse
from rlmolgan.scorers import (
    CRIPPEN_LOGP,
    SCORERS,
    ExternalScores,
    ScorerFileMissing,
    atom_types,
    crippen_logp,
    ring_count,
    score,
)


def test_invalid_scores_zero():
    for bad in ("C(", "c1cccc1", "CFC", "", "c1ccc(*)cc1"):
        for name in ("validity", "logp_norm", "qed_proxy", "sa_proxy"):
            assert score(bad, name).normalized == 0.0


def test_methane_logp_by_hand():
    raw = CRIPPEN_LOGP["C1"] + 4 * CRIPPEN_LOGP["H1"]
    s = score("C", "logp_norm")
    assert s.raw == pytest.approx(raw)
    assert s.normalized == pytest.approx((raw + 2) / 8)


def test_atom_typing_examples():
    types = [t for t, _, _ in atom_types(parse("CC(N)=O"))]
    assert types == ["C1", "C5", "N1", "O9"]
    assert {t for t, _, _ in atom_types(parse("c1ccccc1"))} == {"C18"}
    assert crippen_logp(parse("CCO")) < crippen_logp(parse("CCC"))


def test_all_scores_normalised_over_corpus(corpus):
    for smiles in corpus:
        for name in ("validity", "logp_norm", "qed_proxy", "sa_proxy"):
            assert 0.0 <= score(smiles, name).normalized <= 1.0


def test_ring_count():
    assert ring_count(parse("CCO")) == 0
    assert ring_count(parse("c1ccc2ccccc2c1")) == 2


def test_callable_scorer_is_clamped():
    assert score("CC", lambda g: 3.0).normalized == 1.0
    assert score("CC", lambda g: len(g.atoms) / 4).normalized == 0.5


def test_external_scores(tmp_path, caplog):
    path = tmp_path / "ext.tsv"
    path.write_text("# smiles\tscore\nOCC\t0.7\nc1ccccc1\t1.5\n", encoding="utf-8")
    ext = ExternalScores(path)
    assert score("CCO", "external", ext).normalized == 0.7
    assert score("c1ccccc1", "external", ext).normalized == 1.0
    with caplog.at_level(logging.WARNING):
        assert score("CCN", "external", ext).normalized == 0.0
    assert "no external score" in caplog.text
    with pytest.raises(ScorerFileMissing):
        ExternalScores(tmp_path / "missing.tsv")
    with pytest.raises(ScorerFileMissing):
        score("CCO", "external")


def test_unknown_scorer():
    with pytest.raises(ValueError):
        score("CCO", "bogus")
    assert "validity" in SCORERS
