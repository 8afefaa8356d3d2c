"""Property scorers normalised to [0, 1].

``logp_norm`` sums Wildman-Crippen atom contributions (a bundled subset of
the published table covering C/N/O/F/H environments).  ``qed_proxy`` and
``sa_proxy`` are deliberately simple descriptor curves, not the full
published models.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

from .chem import BondOrder, MolGraph, canonical, implicit_hydrogens, parse_smiles, validate_valence

log = logging.getLogger(__name__)

# Wildman & Crippen (1999) logP contributions, subset for C/N/O/F + H.
CRIPPEN_LOGP = {
    "C1": 0.1441,   # CH4, CH3R, CH2R2
    "C2": 0.0000,   # CH(R)3, C(R)4
    "C3": -0.2035,  # CH3X, CH2RX, CH2X2
    "C4": -0.2051,  # CH(R)2X ... C(X)4
    "C5": -0.2783,  # C = heteroatom
    "C6": 0.1551,   # C = C aliphatic
    "C7": 0.0017,   # acetylene / nitrile carbon
    "C8": 0.08452,  # CH3 on aromatic carbon
    "C9": -0.1444,  # CH3 on aromatic heteroatom
    "C10": -0.0516,  # CH2 on aromatic
    "C11": 0.1193,  # CH on aromatic
    "C12": -0.0967,  # C on aromatic
    "C14": 0.0000,  # aromatic C-F
    "C18": 0.1581,  # aromatic CH
    "C19": 0.2955,  # aromatic bridgehead
    "C20": 0.2713,  # aromatic C bonded to aromatic atom (biphenyl)
    "C21": 0.1360,  # aromatic C-C(aliphatic)
    "C22": 0.4619,  # aromatic C-N
    "C23": 0.5437,  # aromatic C-O
    "C25": -0.8186,  # aromatic C=X exocyclic
    "C26": 0.2640,  # C=C attached to aromatic
    "N1": -1.0190,  # primary amine
    "N2": -0.7096,  # secondary amine
    "N3": -1.0270,  # primary aromatic amine
    "N4": -0.5188,  # secondary aromatic amine
    "N5": 0.08387,  # imine NH
    "N6": 0.1836,   # substituted imine
    "N7": -0.3187,  # tertiary amine
    "N8": -0.4458,  # tertiary aromatic amine
    "N9": 0.01508,  # nitrile N
    "N11": -0.3239,  # aromatic N
    "NS": -0.4806,
    "O1": 0.1552,   # aromatic O
    "O2": -0.2893,  # alcohol
    "O3": -0.0684,  # aliphatic ether
    "O4": -0.4195,  # aromatic ether
    "O5": 0.0335,   # oxide (O= on N or O)
    "O8": 0.1788,   # aromatic carbonyl
    "O9": -0.1526,  # aliphatic carbonyl
    "O10": 0.1129,  # carbonyl next to aromatic
    "O11": 0.4833,  # carbonyl between heteroatoms
    "F": 0.4202,
    "H1": 0.1230,   # hydrocarbon
    "H2": -0.2677,  # alcohol
    "H3": 0.2142,   # amine
    "H4": 0.2980,   # acid / enol
}

HETERO = {"N", "O", "F"}


class ScorerFileMissing(FileNotFoundError):
    pass


@dataclass(frozen=True)
class PropertyScore:
    raw: float
    normalized: float


def _clamp(x: float, lo: float = 0.0, hi: float = 1.0) -> float:
    return max(lo, min(hi, x))


def _carbon_type(g: MolGraph, i: int, h: int) -> str:
    atom = g.atoms[i]
    nbrs = g.adjacency[i]
    if atom.aromatic:
        if h:
            return "C18"
        exo = [(j, o) for j, o in nbrs if o is not BondOrder.AROMATIC]
        if not exo:
            return "C19"
        j, o = exo[0]
        other = g.atoms[j]
        if o is not BondOrder.SINGLE:
            return "C25"
        if other.aromatic:
            return "C20"
        return {"C": "C21", "N": "C22", "O": "C23", "F": "C14"}.get(other.element, "C21")
    orders = [o for _, o in nbrs]
    if BondOrder.TRIPLE in orders:
        return "C7"
    doubles = [j for j, o in nbrs if o is BondOrder.DOUBLE]
    if doubles:
        if any(g.atoms[j].element != "C" for j in doubles):
            return "C5"
        if any(g.atoms[j].aromatic for j, _ in nbrs):
            return "C26"
        return "C6"
    arom = [j for j, _ in nbrs if g.atoms[j].aromatic]
    if arom:
        if h >= 3:
            return "C8" if any(g.atoms[j].element == "C" for j in arom) else "C9"
        return {2: "C10", 1: "C11"}.get(h, "C12")
    if any(g.atoms[j].element in HETERO for j, _ in nbrs):
        return "C3" if h >= 2 else "C4"
    return "C1" if h >= 2 else "C2"


def _nitrogen_type(g: MolGraph, i: int, h: int) -> str:
    atom = g.atoms[i]
    nbrs = g.adjacency[i]
    if atom.aromatic:
        return "N11"
    orders = [o for _, o in nbrs]
    if BondOrder.TRIPLE in orders:
        return "N9"
    if BondOrder.DOUBLE in orders:
        return "N5" if h else "N6"
    arom = any(g.atoms[j].aromatic for j, _ in nbrs)
    if h >= 3:
        return "NS"
    if h == 2:
        return "N3" if arom else "N1"
    if h == 1:
        return "N4" if arom else "N2"
    return "N8" if arom else "N7"


def _oxygen_type(g: MolGraph, i: int, h: int) -> str:
    atom = g.atoms[i]
    nbrs = g.adjacency[i]
    if atom.aromatic:
        return "O1"
    for j, o in nbrs:
        if o is BondOrder.DOUBLE:
            partner = g.atoms[j]
            if partner.element in ("N", "O"):
                return "O5"
            if partner.aromatic:
                return "O8"
            others = [k for k, _ in g.adjacency[j] if k != i]
            if any(g.atoms[k].aromatic for k in others):
                return "O10"
            if len(others) >= 2 and all(g.atoms[k].element in HETERO for k in others):
                return "O11"
            return "O9"
    if h:
        return "O2"
    if any(g.atoms[j].aromatic for j, _ in nbrs):
        return "O4"
    return "O3"


def _hydrogen_type(g: MolGraph, i: int) -> str:
    el = g.atoms[i].element
    if el == "C":
        return "H1"
    if el == "N":
        return "H3"
    if el == "O":
        for j, _ in g.adjacency[i]:
            if any(o is BondOrder.DOUBLE for _, o in g.adjacency[j]):
                return "H4"
        return "H2"
    return "H1"


def atom_types(g: MolGraph) -> list[tuple[str, int, str]]:
    """(heavy type, hydrogen count, hydrogen type) per atom."""
    out = []
    for i, atom in enumerate(g.atoms):
        h = implicit_hydrogens(g, i)
        if atom.element == "C":
            t = _carbon_type(g, i, h)
        elif atom.element == "N":
            t = _nitrogen_type(g, i, h)
        elif atom.element == "O":
            t = _oxygen_type(g, i, h)
        elif atom.element == "F":
            t = "F"
        else:
            raise ValueError(f"no logP type for element {atom.element}")
        out.append((t, h, _hydrogen_type(g, i)))
    return out


def crippen_logp(g: MolGraph) -> float:
    total = 0.0
    for heavy, h, htype in atom_types(g):
        total += CRIPPEN_LOGP[heavy] + h * CRIPPEN_LOGP[htype]
    return total


def ring_count(g: MolGraph) -> int:
    """Cyclomatic number E - V + 1 of the connected graph."""
    return len(g.bonds) - len(g.atoms) + 1


def _gauss(x: float, mu: float, sigma: float) -> float:
    return math.exp(-0.5 * ((x - mu) / sigma) ** 2)


def qed_proxy(g: MolGraph) -> float:
    heavy = g.heavy_atom_count
    rings = ring_count(g)
    hetero = sum(1 for a in g.atoms if a.element in HETERO) / max(heavy, 1)
    d_size = _gauss(heavy, 8.0, 3.0)
    d_rings = {0: 0.55, 1: 1.0, 2: 0.8}.get(rings, 0.4)
    d_hetero = _gauss(hetero, 0.25, 0.2)
    return (d_size * d_rings * d_hetero) ** (1.0 / 3.0)


SA_CAP = 6.0


def sa_penalty(g: MolGraph) -> float:
    rings = ring_count(g)
    branch = sum(1 for i in range(len(g.atoms)) if g.degree(i) >= 3)
    spiro_or_fused = sum(1 for i in range(len(g.atoms)) if sum(g.is_ring_bond(i, j) for j, _ in g.adjacency[i]) >= 3)
    small = 0
    for b in g.bonds:
        # triple bonds and cumulated double bonds are awkward to make
        if b.order is BondOrder.TRIPLE:
            small += 1
    cumulated = sum(1 for i in range(len(g.atoms))
                    if sum(o is BondOrder.DOUBLE for _, o in g.adjacency[i]) >= 2)
    return 0.5 * rings + 0.4 * branch + 0.8 * spiro_or_fused + 0.5 * small + 1.0 * cumulated + 0.05 * max(0, g.heavy_atom_count - 9)


def sa_proxy(g: MolGraph) -> float:
    return 1.0 - _clamp(sa_penalty(g) / SA_CAP)


class ExternalScores:
    """Canonical SMILES -> score lookup read from a two-column TSV."""

    def __init__(self, path):
        path = Path(path)
        if not path.exists():
            raise ScorerFileMissing(str(path))
        self.table: dict[str, float] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                smiles, value = line.split("\t")[:2]
                key = canonicalize_or_raw(smiles)
                self.table[key] = _clamp(float(value))

    def __call__(self, g: MolGraph) -> float:
        key = canonical(g)
        if key not in self.table:
            log.warning("no external score for %s; using 0", key)
            return 0.0
        return self.table[key]


def canonicalize_or_raw(smiles: str) -> str:
    g = parse_smiles(smiles, allow_placeholder=False)
    if g is None or not validate_valence(g):
        return smiles
    return canonical(g)


SCORERS = ("validity", "qed_proxy", "logp_norm", "sa_proxy", "external")

ScorerLike = Union[str, Callable[[MolGraph], float]]


def score(z: MolGraph | str | None, scorer: ScorerLike = "validity", external: ExternalScores | None = None) -> PropertyScore:
    """Score a molecule; anything unparseable or invalid scores 0."""
    if isinstance(z, str):
        z = parse_smiles(z, allow_placeholder=False)
    if z is None or z.has_placeholder or not validate_valence(z):
        return PropertyScore(0.0, 0.0)
    if callable(scorer):
        v = float(scorer(z))
        return PropertyScore(v, _clamp(v))
    if scorer == "validity":
        return PropertyScore(1.0, 1.0)
    if scorer == "logp_norm":
        raw = crippen_logp(z)
        return PropertyScore(raw, _clamp((raw + 2.0) / 8.0))
    if scorer == "qed_proxy":
        v = qed_proxy(z)
        return PropertyScore(v, _clamp(v))
    if scorer == "sa_proxy":
        raw = sa_penalty(z)
        return PropertyScore(raw, 1.0 - _clamp(raw / SA_CAP))
    if scorer == "external":
        if external is None:
            raise ScorerFileMissing("external scorer selected without a score file")
        v = external(z)
        return PropertyScore(v, v)
    raise ValueError(f"unknown scorer {scorer!r}")
