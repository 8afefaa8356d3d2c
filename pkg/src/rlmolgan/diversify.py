"""Variant SMILES, scaffold/functional-group splitting, reattachment, datasets."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .chem import (
    DEFAULT_ALPHABET,
    END,
    MARKER,
    PAD,
    SPECIAL_TOKENS,
    START,
    Atom,
    Bond,
    BondOrder,
    MolGraph,
    SmilesError,
    _canonical_search,
    _dense_ranks,
    _initial_invariants,
    canonical,
    canonical_any,
    parse,
    tokenize,
    validate_valence,
    write_smiles,
)

log = logging.getLogger(__name__)

DE_NOVO = "de_novo"
SCAFFOLD = "scaffold"


class ValenceOverflow(ValueError):
    pass


class EmptyGroup(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class VocabError(KeyError):
    pass


@dataclass(frozen=True)
class ScaffoldPair:
    scaffold_tokens: tuple[str, ...]
    group_tokens: tuple[str, ...]
    attachment_index: int = 1  # 1-based: the marker follows attachment_index - 1 scaffold atoms

    @property
    def scaffold(self) -> str:
        return "".join(self.scaffold_tokens)

    @property
    def group(self) -> str:
        return "".join(self.group_tokens)


@dataclass(frozen=True)
class DatasetEntry:
    mode: str
    source: tuple[str, ...]
    target: tuple[str, ...]


@dataclass
class DatasetConfig:
    max_len: int = 30
    variants: int = 1
    max_heavy_atoms: int = 9
    seed: int = 0
    alphabet: tuple[str, ...] = DEFAULT_ALPHABET


class Vocab:
    """Token <-> id bijection with the special tokens pinned to ids 0..3."""

    def __init__(self, tokens: Iterable[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise VocabError(f"vocabulary must start with {SPECIAL_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise VocabError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]]) -> Vocab:
        seen = set()
        for seq in sequences:
            seen.update(seq)
        return cls(list(SPECIAL_TOKENS) + sorted(seen - set(SPECIAL_TOKENS)))

    pad_id = 0
    start_id = 1
    end_id = 2
    marker_id = 3

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, tokens: Sequence[str]) -> list[int]:
        try:
            return [self.index[t] for t in tokens]
        except KeyError as e:
            raise VocabError(f"token {e.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        """Tokens up to the first END, with PAD and START dropped."""
        out = []
        for i in ids:
            i = int(i)
            if i == self.end_id:
                break
            if i in (self.pad_id, self.start_id):
                continue
            out.append(self.tokens[i])
        return out

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path) -> Vocab:
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


# ---------------------------------------------------------------- variants


def enumerate_variants(g: MolGraph, count: int, seed: int) -> list[str]:
    """Up to ``count`` distinct traversal-order SMILES of ``g``."""
    rng = random.Random(seed)
    out: list[str] = []
    seen = set()
    for _ in range(max(20 * count, 50)):
        s = write_smiles(g, rng.getrandbits(32))
        if s not in seen:
            seen.add(s)
            out.append(s)
            if len(out) == count:
                break
    return out


# ---------------------------------------------------------------- scaffolds


def _subgraph(g: MolGraph, keep: Sequence[int], extra_atoms=(), extra_bonds=()) -> tuple[MolGraph, dict[int, int]]:
    remap = {old: new for new, old in enumerate(keep)}
    atoms = [Atom(g.atoms[old].element, g.atoms[old].aromatic, new, g.atoms[old].hcount) for old, new in remap.items()]
    bonds = [Bond(remap[b.a], remap[b.b], b.order) for b in g.bonds if b.a in remap and b.b in remap]
    for el in extra_atoms:
        atoms.append(Atom(el, False, len(atoms)))
    bonds.extend(extra_bonds(remap) if callable(extra_bonds) else extra_bonds)
    return MolGraph(tuple(atoms), tuple(bonds)), remap


def canonical_rooted(g: MolGraph, root: int) -> str:
    """Canonical string of ``g`` forced to start at atom ``root``."""
    ranks = [2 * r + 1 for r in _dense_ranks(_initial_invariants(g))]
    ranks[root] = -1
    return _canonical_search(g, ranks)


def _side(g: MolGraph, start: int, cut: frozenset[int]) -> list[int]:
    seen = {start}
    stack = [start]
    while stack:
        i = stack.pop()
        for j, _ in g.adjacency[i]:
            if j in seen or frozenset((i, j)) == cut:
                continue
            seen.add(j)
            stack.append(j)
    return sorted(seen)


def acyclic_single_bonds(g: MolGraph) -> list[Bond]:
    return [
        b for b in g.bonds
        if b.order is BondOrder.SINGLE
        and not g.is_ring_bond(b.a, b.b)
        and not g.atoms[b.a].is_placeholder
        and not g.atoms[b.b].is_placeholder
    ]


def _marker_attachment_index(tokens: Sequence[str], marker_ordinal: int = 0) -> int:
    atoms_before = 0
    seen = 0
    for tok in tokens:
        if tok == MARKER:
            if seen == marker_ordinal:
                return atoms_before + 1
            seen += 1
        if tok.startswith("[") or tok[0].isalpha() or tok == MARKER:
            atoms_before += 1
    raise ValueError("marker not found")


def split_scaffold(g: MolGraph, max_group_len: int | None = None) -> list[ScaffoldPair]:
    """Cut every acyclic single bond; both sides take a turn as the scaffold."""
    if g.has_placeholder:
        raise ValueError("split_scaffold expects a complete molecule")
    pairs = []
    for bond in acyclic_single_bonds(g):
        cut = frozenset((bond.a, bond.b))
        for anchor, head in ((bond.a, bond.b), (bond.b, bond.a)):
            scaffold_atoms = _side(g, anchor, cut)
            group_atoms = _side(g, head, cut)
            scaffold, remap = _subgraph(
                g, scaffold_atoms, extra_atoms=(MARKER,),
                extra_bonds=lambda rm, a=anchor, n=len(scaffold_atoms): [Bond(rm[a], n, BondOrder.SINGLE)],
            )
            group, gmap = _subgraph(g, group_atoms)
            group_tokens = tuple(tokenize(canonical_rooted(group, gmap[head])))
            if max_group_len is not None and len(group_tokens) > max_group_len:
                continue
            scaffold_tokens = tuple(tokenize(canonical_any(scaffold)))
            pairs.append(ScaffoldPair(scaffold_tokens, group_tokens, _marker_attachment_index(scaffold_tokens)))
    return pairs


def _graft(scaffold: MolGraph, marker: int, group: MolGraph) -> MolGraph:
    nbrs = scaffold.adjacency[marker]
    keep = [i for i in range(len(scaffold.atoms)) if i != marker]
    atoms = [scaffold.atoms[i] for i in keep] + list(group.atoms)
    remap = {old: new for new, old in enumerate(keep)}
    shift = len(keep)
    atoms = [Atom(a.element, a.aromatic, k, a.hcount) for k, a in enumerate(atoms)]
    bonds = [Bond(remap[b.a], remap[b.b], b.order) for b in scaffold.bonds if marker not in (b.a, b.b)]
    bonds += [Bond(b.a + shift, b.b + shift, b.order) for b in group.bonds]
    if len(nbrs) > 1:
        raise ValenceOverflow("attachment marker has more than one neighbour")
    for nbr, order in nbrs:
        bonds.append(Bond(remap[nbr], shift, order if order is not BondOrder.AROMATIC else BondOrder.SINGLE))
    return MolGraph(tuple(atoms), tuple(bonds))


def attach_many(scaffold_tokens: Sequence[str], groups: Sequence[Sequence[str]]) -> MolGraph:
    """Fill the scaffold's markers left to right, one group per marker."""
    scaffold = parse(list(scaffold_tokens), allow_placeholder=True)
    markers = [i for i, a in enumerate(scaffold.atoms) if a.is_placeholder]
    if len(markers) != len(groups):
        raise ValueError(f"{len(markers)} markers but {len(groups)} groups")
    graph = scaffold
    for group_tokens in groups:
        if not group_tokens:
            raise EmptyGroup("functional group is empty")
        group = parse(list(group_tokens), allow_placeholder=False)
        marker = next(i for i, a in enumerate(graph.atoms) if a.is_placeholder)
        graph = _graft(graph, marker, group)
    if not validate_valence(graph):
        raise ValenceOverflow("attached molecule violates valence")
    return graph


def attach(pair: ScaffoldPair) -> MolGraph:
    """Replace the scaffold marker at ``attachment_index`` by the group's first atom."""
    if not pair.group_tokens:
        raise EmptyGroup("functional group is empty")
    scaffold = parse(list(pair.scaffold_tokens), allow_placeholder=True)
    marker = pair.attachment_index - 1
    if not (0 <= marker < len(scaffold.atoms)) or not scaffold.atoms[marker].is_placeholder:
        raise ValueError(f"no attachment marker at index {pair.attachment_index}")
    group = parse(list(pair.group_tokens), allow_placeholder=False)
    graph = _graft(scaffold, marker, group)
    if not validate_valence(graph):
        raise ValenceOverflow("attached molecule violates valence")
    return graph


def splice_tokens(scaffold_tokens: Sequence[str], group_tokens: Sequence[str]) -> list[str]:
    """Token-level splice [X_1:i-1, Y, X_i:n] at the first marker."""
    k = list(scaffold_tokens).index(MARKER)
    return list(scaffold_tokens[:k]) + list(group_tokens) + list(scaffold_tokens[k + 1:])


def assemble(scaffold_tokens: Sequence[str], group_tokens: Sequence[str]) -> tuple[str, MolGraph | None]:
    """Complete molecule as text plus its graph (None when invalid).

    Valid molecules come back in canonical form; otherwise the raw token
    splice is returned so a discriminator still has something to read.
    """
    try:
        pair = ScaffoldPair(tuple(scaffold_tokens), tuple(group_tokens),
                            _marker_attachment_index(scaffold_tokens))
        g = attach(pair)
        if not g.has_placeholder:
            return canonical(g), g
    except (SmilesError, ValueError):
        pass
    return "".join(splice_tokens(scaffold_tokens, group_tokens)), None


# ---------------------------------------------------------------- datasets


def load_molecules(corpus: Iterable[str], config: DatasetConfig) -> list[MolGraph]:
    graphs = []
    for lineno, smiles in enumerate(corpus, 1):
        g = parse(smiles, alphabet=config.alphabet, allow_placeholder=False)
        if not validate_valence(g):
            raise ValueError(f"corpus line {lineno}: {smiles!r} fails valence validation")
        if g.heavy_atom_count > config.max_heavy_atoms:
            log.debug("skipping %s: %d heavy atoms", smiles, g.heavy_atom_count)
            continue
        graphs.append(g)
    return graphs


def build_dataset(corpus: Iterable[str], mode: str, config: DatasetConfig) -> tuple[list[DatasetEntry], Vocab]:
    """Training entries (shuffled with ``config.seed``) and their vocabulary."""
    if mode not in (DE_NOVO, SCAFFOLD):
        raise ValueError(f"unknown mode {mode!r}")
    entries: list[DatasetEntry] = []
    graphs = load_molecules(corpus, config)
    for k, g in enumerate(graphs):
        if mode == DE_NOVO:
            forms = [canonical(g)]
            if config.variants > 1:
                for s in enumerate_variants(g, config.variants * 2, seed=config.seed * 1_000_003 + k):
                    if len(forms) == config.variants:
                        break
                    if s not in forms:
                        forms.append(s)
            for s in forms:
                target = tuple(tokenize(s))
                if len(target) <= config.max_len:
                    entries.append(DatasetEntry(DE_NOVO, (MARKER,), target))
        else:
            for pair in split_scaffold(g, config.max_len):
                entries.append(DatasetEntry(SCAFFOLD, pair.scaffold_tokens, pair.group_tokens))
    if not entries:
        raise EmptyDataset("no training entries survived filtering")
    random.Random(config.seed).shuffle(entries)
    # complete molecules are tokenised too: the discriminator reads them
    whole = [tokenize(canonical(g)) for g in graphs]
    vocab = Vocab.build([e.source for e in entries] + [e.target for e in entries] + whole)
    return entries, vocab


def write_dataset(path, entries: Sequence[DatasetEntry]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write("".join(e.source) + "\t" + "".join(e.target) + "\n")


def read_dataset(path) -> list[DatasetEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            source, target = line.split("\t")
            src = tuple(tokenize(source))
            mode = DE_NOVO if src == (MARKER,) else SCAFFOLD
            entries.append(DatasetEntry(mode, src, tuple(tokenize(target))))
    return entries


__all__ = [
    "DE_NOVO", "SCAFFOLD", "PAD", "START", "END", "MARKER",
    "ScaffoldPair", "DatasetEntry", "DatasetConfig", "Vocab",
    "enumerate_variants", "split_scaffold", "attach", "attach_many", "assemble",
    "splice_tokens", "build_dataset", "write_dataset", "read_dataset",
    "ValenceOverflow", "EmptyGroup", "EmptyDataset", "VocabError",
]
