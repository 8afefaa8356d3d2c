import numpy as np
import pytest

from rlmolgan.chem import tokenize
from rlmolgan.diversify import SCAFFOLD, DatasetConfig, build_dataset
from rlmolgan.posenc import (
    AlphaTooSmall,
    LengthOverflow,
    PositionIds,
    linear_position,
    scaffold_ids,
    sinusoidal,
    target_ids,
)
from rlmolgan.trainer import compute_alpha


def test_marker_opens_new_segment():
    ids = scaffold_ids(["x1", "x2", "*", "x3"])
    assert ids.segment == (0, 0, 1, 1)
    assert ids.offset == (0, 1, 0, 1)


def test_no_marker():
    ids = scaffold_ids(tokenize("CCO"))
    assert ids.segment == (0, 0, 0) and ids.offset == (0, 1, 2)


def test_two_markers():
    ids = scaffold_ids(["C", "C", "*", "C", "*", "C"])
    assert ids.segment == (0, 0, 1, 1, 2, 2)
    assert ids.offset == (0, 1, 0, 1, 0, 1)
    assert max(ids.segment) == 2


def test_scaffold_from_example():
    ids = scaffold_ids(tokenize("c1ccc(*)cc1"))
    assert ids.segment == (0,) * 6 + (1,) * 5
    assert ids.offset == (0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4)


def test_target_ids():
    ids = target_ids(["C", "C", "O"])
    assert ids.segment == (1, 1, 1) and ids.offset == (0, 1, 2)
    assert target_ids([]) == PositionIds((1,), (0,))
    with pytest.raises(LengthOverflow):
        target_ids(5, max_len=4)


def test_de_novo_source_is_zero():
    assert scaffold_ids(["*"]) == PositionIds((0,), (0,))


def test_linear_position():
    assert linear_position(PositionIds((0,), (3,)), 10) == [3]
    assert linear_position(PositionIds((1, 1), (0, 1)), 5) == [5, 6]
    with pytest.raises(AlphaTooSmall):
        linear_position(PositionIds((0, 0, 1), (0, 1, 0)), 1)
    assert PositionIds((1, 1), (0, 1)).with_alpha(5).position == (5, 6)


def test_positions_unique_over_dataset(corpus):
    entries, _ = build_dataset(corpus[:200], SCAFFOLD, DatasetConfig())
    alpha = compute_alpha(entries, 30)
    for e in entries:
        pos = linear_position(scaffold_ids(e.source), alpha)
        assert len(set(pos)) == len(pos)


def test_sinusoidal_values():
    pe = sinusoidal([0], 8)
    assert np.array_equal(pe[0], np.array([0, 1, 0, 1, 0, 1, 0, 1], dtype=np.float32))
    big = sinusoidal(np.arange(0, 10001, 7), 16)
    assert np.all(np.abs(big) <= 1.0)


def test_sinusoidal_derivative_column_zero():
    # column 0 is sin(pos) with unit frequency
    h = 1e-4
    for p in (0.0, 0.5, 1.0, 2.0):
        a = sinusoidal([p + h], 4, dtype=np.float64)[0, 0]
        b = sinusoidal([p - h], 4, dtype=np.float64)[0, 0]
        assert abs((a - b) / (2 * h) - np.cos(p)) < 1e-3


def test_odd_dimension_rejected():
    with pytest.raises(ValueError):
        sinusoidal([0], 5)
