"""Generation metrics, top-k property summaries and distribution reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .chem import canonicalize
from .scorers import ExternalScores, ScorerLike, score


class EmptyInput(ValueError):
    pass


@dataclass
class RunMetrics:
    validity: float
    uniqueness: float
    novelty: float
    property_means: dict[str, float] = field(default_factory=dict)
    top_k_mean: float | None = None
    epoch: int = 0

    @property
    def total(self) -> float:
        return self.validity * self.uniqueness * self.novelty


def canonical_set(smiles: Iterable[str]) -> set[str]:
    out = set()
    for s in smiles:
        c = canonicalize(s)
        if c is not None:
            out.add(c)
    return out


def metrics(generated: Sequence[str], training_set: set[str], scorers: Sequence[ScorerLike] = (),
            external: ExternalScores | None = None, epoch: int = 0) -> RunMetrics:
    """Validity over all generated, uniqueness over valid, novelty over unique.

    ``training_set`` must already hold canonical SMILES.  Property means are
    taken over every generated string, invalid ones counting as 0.
    """
    if not generated:
        raise EmptyInput("no generated molecules")
    canon = [canonicalize(s) for s in generated]
    valid = [c for c in canon if c is not None]
    unique = set(valid)
    novel = unique - training_set
    validity = len(valid) / len(generated)
    uniqueness = len(unique) / len(valid) if valid else 0.0
    novelty = len(novel) / len(unique) if unique else 0.0
    means = {}
    for sc in scorers:
        name = sc if isinstance(sc, str) else getattr(sc, "__name__", "custom")
        means[name] = float(np.mean([score(c, sc, external).normalized if c else 0.0 for c in canon]))
    return RunMetrics(validity, uniqueness, novelty, means, epoch=epoch)


@dataclass
class TopK:
    mean: float
    k: int
    clipped: bool


def top_k_table(generated: Sequence[str], scorer: ScorerLike, k: int = 1000,
                external: ExternalScores | None = None) -> TopK:
    """Mean normalised score of the k best unique valid molecules."""
    scores = sorted((score(c, scorer, external).normalized for c in canonical_set(generated)), reverse=True)
    clipped = k > len(scores)
    used = scores[:k]
    return TopK(float(np.mean(used)) if used else 0.0, len(used), clipped)


@dataclass
class Histogram:
    edges: np.ndarray
    original: np.ndarray
    generated: np.ndarray
    original_mean: float
    generated_mean: float

    @property
    def mean_shift(self) -> float:
        return self.generated_mean - self.original_mean


def _bin_counts(values: np.ndarray, bins: int) -> np.ndarray:
    idx = np.minimum((np.clip(values, 0.0, 1.0) * bins).astype(int), bins - 1)
    return np.bincount(idx, minlength=bins)


def histogram(original_scores: Sequence[float], generated_scores: Sequence[float], bins: int = 10) -> Histogram:
    a = np.asarray(original_scores, dtype=float)
    b = np.asarray(generated_scores, dtype=float)
    if not len(a) or not len(b):
        raise EmptyInput("both populations must be non-empty")
    return Histogram(np.linspace(0.0, 1.0, bins + 1), _bin_counts(a, bins), _bin_counts(b, bins),
                     float(a.mean()), float(b.mean()))


def histogram_report(original: Sequence[str], generated: Sequence[str], scorer: ScorerLike = "logp_norm",
                     bins: int = 10, external: ExternalScores | None = None) -> Histogram:
    orig = [score(s, scorer, external).normalized for s in original]
    gen = [score(s, scorer, external).normalized for s in generated]
    return histogram(orig, gen, bins)


def histogram_tsv(h: Histogram) -> str:
    rows = ["bin_lo\tbin_hi\toriginal\tgenerated"]
    for lo, hi, a, b in zip(h.edges[:-1], h.edges[1:], h.original, h.generated):
        rows.append(f"{lo:.2f}\t{hi:.2f}\t{a}\t{b}")
    return "\n".join(rows) + "\n"


def histogram_bars(h: Histogram, width: int = 40, label: str = "") -> str:
    peak = max(int(h.original.max()), int(h.generated.max()), 1)
    lines = [f"{label} distribution (o = original, g = generated)"]
    for lo, hi, a, b in zip(h.edges[:-1], h.edges[1:], h.original, h.generated):
        lines.append(f"[{lo:.1f},{hi:.1f}) o {'#' * round(width * a / peak):<{width}} {a}")
        lines.append(f"{'':11} g {'#' * round(width * b / peak):<{width}} {b}")
    lines.append(f"mean original {h.original_mean:.4f}  generated {h.generated_mean:.4f}  shift {h.mean_shift:+.4f}")
    return "\n".join(lines) + "\n"


METRIC_COLUMNS = ("epoch", "validity", "unique", "novelty", "total", "mean_property", "loss")


def metrics_row(m: RunMetrics, mean_property: float, loss: float) -> list[str]:
    return [str(m.epoch), f"{m.validity:.6f}", f"{m.uniqueness:.6f}", f"{m.novelty:.6f}",
            f"{m.total:.6f}", f"{mean_property:.6f}", f"{loss:.6f}"]
