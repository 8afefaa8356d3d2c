"""Segment/offset position ids and their sinusoidal embedding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chem import MARKER


class LengthOverflow(ValueError):
    pass


class AlphaTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class PositionIds:
    segment: tuple[int, ...]
    offset: tuple[int, ...]
    alpha: int | None = None

    @property
    def position(self) -> tuple[int, ...]:
        if self.alpha is None:
            raise ValueError("alpha not set")
        return tuple(self.alpha * s + o for s, o in zip(self.segment, self.offset))

    def with_alpha(self, alpha: int) -> PositionIds:
        return PositionIds(self.segment, self.offset, alpha)


def scaffold_ids(scaffold: Sequence[str]) -> PositionIds:
    """Segment ids count attachment markers; offsets restart at each marker.

    A marker opens the next segment and takes its offset 0.  A marker that
    is the very first token has no preceding segment to close, so it stays
    in segment 0; this makes the de novo source ["*"] map to (0, 0).
    """
    seg, off = 0, 0
    segments, offsets = [], []
    for k, tok in enumerate(scaffold):
        if tok == MARKER and k > 0:
            seg += 1
            off = 0
        segments.append(seg)
        offsets.append(off)
        off += 1
    return PositionIds(tuple(segments), tuple(offsets))


def target_ids(target: Sequence[str] | int, max_len: int | None = None) -> PositionIds:
    """Segment 1 throughout, offsets 0..len-1 (a bare START slot when empty)."""
    n = target if isinstance(target, int) else len(target)
    n = max(n, 1)
    if max_len is not None and n > max_len:
        raise LengthOverflow(f"target stream of length {n} exceeds {max_len}")
    return PositionIds((1,) * n, tuple(range(n)))


def linear_position(ids: PositionIds, alpha: int) -> list[int]:
    pos = [alpha * s + o for s, o in zip(ids.segment, ids.offset)]
    if len(set(pos)) != len(pos):
        raise AlphaTooSmall(f"alpha={alpha} makes positions collide (max offset {max(ids.offset)})")
    return pos


def sinusoidal(pos: Sequence[int] | np.ndarray, d_model: int, dtype=np.float32) -> np.ndarray:
    if d_model % 2:
        raise ValueError("d_model must be even")
    pos = np.asarray(pos, dtype=np.float64)
    freq = np.power(10000.0, -np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    angles = pos[..., None] * freq
    out = np.empty(pos.shape + (d_model,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out.astype(dtype)
