"""SMILES tokenizer, parser, valence checker and writers.

Graphs are hydrogen-suppressed: implicit hydrogens fill whatever valence
is left after the explicit bonds.  Only the organic subset needed for the
small-molecule regime is modelled (no charges, isotopes or stereo).
"""

from __future__ import annotations

import random
import re
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable, Sequence

PAD = "<pad>"
START = "<bos>"
END = "<eos>"
MARKER = "*"
SPECIAL_TOKENS = (PAD, START, END, MARKER)

DEFAULT_ALPHABET = ("C", "N", "O", "F")
DEFAULT_MAX_ATOMS = 64

MAX_VALENCE = {
    "C": 4, "N": 3, "O": 2, "F": 1, "*": 1,
    # only reachable when the alphabet is extended
    "B": 3, "P": 3, "S": 2, "Cl": 1, "Br": 1, "I": 1,
}

AROMATIC_SYMBOLS = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}


class SmilesError(ValueError):
    """Base class for every tokenizer/parser failure; carries a position."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        where = "" if position is None else f" at position {position}"
        super().__init__(f"{message}{where}")


class UnknownCharacter(SmilesError):
    pass


class UnclosedBracket(SmilesError):
    pass


class BranchMismatch(SmilesError):
    pass


class UnclosedParenthesis(BranchMismatch):
    pass


class RingBondMismatch(SmilesError):
    pass


class AlphabetViolation(SmilesError):
    pass


class SyntaxViolation(SmilesError):
    """Grammatical error not covered by a more specific class."""


class DisconnectedGraph(SmilesError):
    pass


class TooManyAtoms(SmilesError):
    pass


class PlaceholderPresent(SmilesError):
    pass


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence(self) -> float:
        return 1.5 if self is BondOrder.AROMATIC else float(self.value)


BOND_SYMBOLS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}
_BOND_TEXT = {BondOrder.DOUBLE: "=", BondOrder.TRIPLE: "#", BondOrder.AROMATIC: ":"}


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    index: int = 0
    hcount: int | None = None  # explicit H from a bracket atom; None means implicit

    @property
    def is_placeholder(self) -> bool:
        return self.element == MARKER


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: BondOrder = BondOrder.SINGLE


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    adjacency: tuple[tuple[tuple[int, BondOrder], ...], ...] = field(init=False, repr=False, compare=False)
    ring_bonds: frozenset[frozenset[int]] = field(init=False, repr=False, compare=False)
    ring_membership: tuple[bool, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.atoms)
        if n == 0:
            raise ValueError("graph has no atoms")
        adj: list[list[tuple[int, BondOrder]]] = [[] for _ in range(n)]
        seen = set()
        for bond in self.bonds:
            if bond.a == bond.b:
                raise ValueError(f"bond endpoints coincide: {bond.a}")
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise ValueError(f"bond endpoint out of range: {bond}")
            key = frozenset((bond.a, bond.b))
            if key in seen:
                raise ValueError(f"duplicate bond between {bond.a} and {bond.b}")
            seen.add(key)
            adj[bond.a].append((bond.b, bond.order))
            adj[bond.b].append((bond.a, bond.order))
        object.__setattr__(self, "adjacency", tuple(tuple(a) for a in adj))
        rings = _ring_bonds(adj)
        object.__setattr__(self, "ring_bonds", rings)
        member = [False] * n
        for key in rings:
            for i in key:
                member[i] = True
        object.__setattr__(self, "ring_membership", tuple(member))

    def __len__(self) -> int:
        return len(self.atoms)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def bond_order(self, i: int, j: int) -> BondOrder | None:
        for k, order in self.adjacency[i]:
            if k == j:
                return order
        return None

    def is_ring_bond(self, i: int, j: int) -> bool:
        return frozenset((i, j)) in self.ring_bonds

    @property
    def has_placeholder(self) -> bool:
        return any(a.is_placeholder for a in self.atoms)

    @property
    def heavy_atom_count(self) -> int:
        return sum(1 for a in self.atoms if not a.is_placeholder)

    def is_connected(self) -> bool:
        return len(_component(self.adjacency, 0)) == len(self.atoms)

    def relabel(self, perm: Sequence[int]) -> MolGraph:
        """Return the same molecule with atom ``i`` moved to index ``perm[i]``."""
        atoms = [None] * len(self.atoms)
        for old, atom in enumerate(self.atoms):
            atoms[perm[old]] = Atom(atom.element, atom.aromatic, perm[old], atom.hcount)
        bonds = tuple(Bond(perm[b.a], perm[b.b], b.order) for b in self.bonds)
        return MolGraph(tuple(atoms), bonds)


def _component(adj, start: int) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        i = stack.pop()
        for j, _ in adj[i]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return seen


def _ring_bonds(adj) -> frozenset[frozenset[int]]:
    """Bonds that are not bridges (iterative Tarjan lowlink)."""
    n = len(adj)
    disc = [-1] * n
    low = [0] * n
    bridges = set()
    t = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = t
        t += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            node, parent, it = stack[-1]
            advanced = False
            for nbr, _ in it:
                if nbr == parent:
                    continue
                if disc[nbr] == -1:
                    disc[nbr] = low[nbr] = t
                    t += 1
                    stack.append((nbr, node, iter(adj[nbr])))
                    advanced = True
                    break
                low[node] = min(low[node], disc[nbr])
            if not advanced:
                stack.pop()
                if parent >= 0:
                    low[parent] = min(low[parent], low[node])
                    if low[node] > disc[parent]:
                        bridges.add(frozenset((node, parent)))
    all_bonds = {frozenset((i, j)) for i in range(n) for j, _ in adj[i]}
    return frozenset(all_bonds - bridges)


# ---------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(r"Cl|Br|%\d\d|[BCNOPSFI]|[bcnops]|[*()=#\-:/\\.$]|\d")


def tokenize(smiles: str) -> list[str]:
    """Split a SMILES string into tokens (bracket atoms stay whole)."""
    if not smiles:
        raise SyntaxViolation("empty SMILES", 0)
    tokens = []
    depth = 0
    pos = 0
    n = len(smiles)
    while pos < n:
        ch = smiles[pos]
        if ch == "[":
            close = smiles.find("]", pos + 1)
            if close == -1:
                raise UnclosedBracket("bracket atom never closed", pos)
            inner = smiles[pos + 1:close]
            if "[" in inner:
                raise UnclosedBracket("nested bracket", pos)
            tokens.append(smiles[pos:close + 1])
            pos = close + 1
            continue
        m = _TOKEN_RE.match(smiles, pos)
        if m is None:
            raise UnknownCharacter(f"unexpected character {ch!r}", pos)
        tok = m.group()
        if tok == "(":
            depth += 1
        elif tok == ")":
            depth -= 1
            if depth < 0:
                raise BranchMismatch("unmatched ')'", pos)
        tokens.append(tok)
        pos = m.end()
    if depth:
        raise UnclosedParenthesis("unclosed '('", n)
    return tokens


# ---------------------------------------------------------------- parser

_BRACKET_RE = re.compile(
    r"^\[(?P<iso>\d+)?(?P<sym>\*|[A-Z][a-z]?|[a-z]{1,2})(?P<chiral>@+)?"
    r"(?P<h>H\d*)?(?P<charge>[+-]+\d*)?(?P<cls>:\d+)?\]$"
)


def _atom_from_token(tok: str, pos: int, alphabet: Iterable[str], allow_placeholder: bool) -> Atom:
    hcount = None
    if tok.startswith("["):
        m = _BRACKET_RE.match(tok)
        if m is None:
            raise AlphabetViolation(f"unsupported bracket atom {tok}", pos)
        if m.group("iso") or m.group("chiral") or m.group("charge") or m.group("cls"):
            raise AlphabetViolation(f"isotope/charge/stereo not supported: {tok}", pos)
        sym = m.group("sym")
        if m.group("h"):
            hcount = int(m.group("h")[1:] or 1)
        else:
            hcount = 0
    else:
        sym = tok
    if sym == MARKER:
        if not allow_placeholder:
            raise AlphabetViolation("attachment marker not allowed here", pos)
        return Atom(MARKER)
    aromatic = sym[0].islower()
    element = AROMATIC_SYMBOLS.get(sym) if aromatic else sym
    if element is None or element not in alphabet:
        raise AlphabetViolation(f"element {sym!r} outside alphabet", pos)
    return Atom(element, aromatic, 0, hcount)


def _is_atom_token(tok: str) -> bool:
    return tok.startswith("[") or tok == MARKER or tok[0].isalpha()


def parse(
    tokens: Sequence[str] | str,
    alphabet: Iterable[str] = DEFAULT_ALPHABET,
    max_atoms: int = DEFAULT_MAX_ATOMS,
    allow_placeholder: bool = True,
) -> MolGraph:
    """Build a molecular graph from SMILES tokens (or a raw string)."""
    if isinstance(tokens, str):
        tokens = tokenize(tokens)
    alphabet = frozenset(alphabet)
    atoms: list[Atom] = []
    bonds: dict[frozenset[int], Bond] = {}
    prev = None
    pending: BondOrder | None = None
    branch_stack: list[int] = []
    open_rings: dict[str, tuple[int, BondOrder | None, int]] = {}

    def add_bond(i: int, j: int, order: BondOrder | None, pos: int, ring: bool = False):
        if order is None:
            order = BondOrder.AROMATIC if atoms[i].aromatic and atoms[j].aromatic else BondOrder.SINGLE
        key = frozenset((i, j))
        if i == j or key in bonds:
            err = RingBondMismatch if ring else SyntaxViolation
            raise err("duplicate or self bond", pos)
        bonds[key] = Bond(i, j, order)

    if not tokens:
        raise SyntaxViolation("empty token sequence", 0)
    for pos, tok in enumerate(tokens):
        if tok in (PAD, START, END):
            raise SyntaxViolation(f"special token {tok} inside SMILES body", pos)
        if _is_atom_token(tok):
            atom = _atom_from_token(tok, pos, alphabet, allow_placeholder)
            idx = len(atoms)
            if idx >= max_atoms:
                raise TooManyAtoms(f"more than {max_atoms} atoms", pos)
            atoms.append(Atom(atom.element, atom.aromatic, idx, atom.hcount))
            if prev is not None:
                add_bond(prev, idx, pending, pos)
            elif pending is not None:
                raise SyntaxViolation("bond symbol without preceding atom", pos)
            pending = None
            prev = idx
        elif tok in BOND_SYMBOLS:
            if pending is not None or prev is None:
                raise SyntaxViolation(f"misplaced bond symbol {tok!r}", pos)
            pending = BOND_SYMBOLS[tok]
        elif tok in ("/", "\\"):
            raise AlphabetViolation("directional (stereo) bonds not supported", pos)
        elif tok == "$":
            raise AlphabetViolation("quadruple bonds not supported", pos)
        elif tok == "(":
            if prev is None or pending is not None:
                raise BranchMismatch("branch without preceding atom", pos)
            branch_stack.append(prev)
        elif tok == ")":
            if not branch_stack:
                raise BranchMismatch("unmatched ')'", pos)
            if pending is not None:
                raise SyntaxViolation("dangling bond before ')'", pos)
            prev = branch_stack.pop()
        elif tok == ".":
            raise DisconnectedGraph("multi-fragment input", pos)
        elif tok.isdigit() or tok.startswith("%"):
            if prev is None:
                raise RingBondMismatch("ring closure without atom", pos)
            label = tok.lstrip("%")
            if label in open_rings:
                other, order, _ = open_rings.pop(label)
                if order is not None and pending is not None and order != pending:
                    raise RingBondMismatch("conflicting ring bond orders", pos)
                add_bond(other, prev, pending if pending is not None else order, pos, ring=True)
            else:
                open_rings[label] = (prev, pending, pos)
            pending = None
        else:
            raise SyntaxViolation(f"unexpected token {tok!r}", pos)
    if branch_stack:
        raise UnclosedParenthesis("unclosed '('", len(tokens))
    if pending is not None:
        raise SyntaxViolation("dangling bond at end", len(tokens))
    if open_rings:
        label, (_, _, pos) = next(iter(open_rings.items()))
        raise RingBondMismatch(f"ring closure {label} never closed", pos)
    if not atoms:
        raise SyntaxViolation("no atoms", 0)
    g = MolGraph(tuple(atoms), tuple(bonds.values()))
    if not g.is_connected():
        raise DisconnectedGraph("graph is not connected")
    return g


def parse_smiles(smiles: str, **kwargs) -> MolGraph | None:
    """Parse, returning None on any SMILES error."""
    try:
        return parse(tokenize(smiles), **kwargs)
    except SmilesError:
        return None


# ---------------------------------------------------------------- valence


def bond_valence_sum(g: MolGraph, i: int) -> float:
    """Valence used by explicit bonds.

    An aromatic atom with k aromatic bonds contributes k + 1 (one formal
    double bond in any Kekule structure); for the usual k = 2 this equals
    the 1.5-per-bond count.
    """
    total = 0.0
    n_arom = 0
    for _, order in g.adjacency[i]:
        if order is BondOrder.AROMATIC:
            n_arom += 1
        else:
            total += order.value
    if n_arom == 1:
        total += 1.5
    elif n_arom:
        total += n_arom + 1
    return total


def implicit_hydrogens(g: MolGraph, i: int) -> int:
    atom = g.atoms[i]
    if atom.hcount is not None:
        return atom.hcount
    if atom.is_placeholder:
        return 0
    return max(0, int(MAX_VALENCE.get(atom.element, 0) - bond_valence_sum(g, i)))


def _smallest_aromatic_cycle(g: MolGraph, i: int) -> int | None:
    """Length of the shortest cycle through ``i`` made only of aromatic bonds."""
    best = None
    for start, order in g.adjacency[i]:
        if order is not BondOrder.AROMATIC:
            continue
        # shortest path start -> i avoiding the direct edge
        dist = {start: 1}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            if best is not None and dist[u] >= best:
                break
            for v, o in g.adjacency[u]:
                if o is not BondOrder.AROMATIC or v in dist:
                    continue
                if u == start and v == i:
                    continue
                if v == i:
                    length = dist[u] + 1
                    if best is None or length < best:
                        best = length
                    continue
                dist[v] = dist[u] + 1
                queue.append(v)
    return best


def validate_valence(g: MolGraph) -> bool:
    """True when every atom respects its maximum valence and aromaticity is plausible."""
    for i, atom in enumerate(g.atoms):
        limit = MAX_VALENCE.get(atom.element)
        if limit is None:
            return False
        used = bond_valence_sum(g, i) + (atom.hcount or 0)
        if used > limit:
            return False
        has_arom_bond = any(o is BondOrder.AROMATIC for _, o in g.adjacency[i])
        if has_arom_bond and not atom.aromatic:
            return False
        if atom.aromatic:
            if not g.ring_membership[i]:
                return False
            cycle = _smallest_aromatic_cycle(g, i)
            if cycle is None or cycle % 2:
                return False
    for b in g.bonds:
        if b.order is BondOrder.AROMATIC and not g.is_ring_bond(b.a, b.b):
            return False
    return True


def is_valid_smiles(smiles: str, max_atoms: int = DEFAULT_MAX_ATOMS) -> bool:
    g = parse_smiles(smiles, max_atoms=max_atoms, allow_placeholder=False)
    return g is not None and validate_valence(g)


# ---------------------------------------------------------------- writers


def _atom_text(atom: Atom) -> str:
    if atom.is_placeholder:
        return MARKER
    sym = atom.element.lower() if atom.aromatic else atom.element
    if atom.hcount is None:
        return sym
    h = "" if atom.hcount == 0 else ("H" if atom.hcount == 1 else f"H{atom.hcount}")
    return f"[{sym}{h}]"


def _bond_text(g: MolGraph, i: int, j: int, order: BondOrder) -> str:
    if order is BondOrder.SINGLE:
        return "-" if g.atoms[i].aromatic and g.atoms[j].aromatic else ""
    if order is BondOrder.AROMATIC and g.atoms[i].aromatic and g.atoms[j].aromatic:
        return ""
    return _BOND_TEXT[order]


def _emit(g: MolGraph, root: int, order_of: Callable[[int], list[int]]) -> str:
    """Depth-first SMILES emission; ``order_of(i)`` ranks the neighbours of ``i``."""
    n = len(g.atoms)
    visited = [False] * n
    preorder: list[int] = []
    children: list[list[int]] = [[] for _ in range(n)]
    ring_edges: list[list[int]] = [[] for _ in range(n)]
    tree = set()

    stack = [(root, -1)]
    # explicit stack replicating recursive DFS order
    while stack:
        node, parent = stack.pop()
        if visited[node]:
            continue
        visited[node] = True
        preorder.append(node)
        if parent >= 0:
            children[parent].append(node)
            tree.add(frozenset((node, parent)))
        for nbr in reversed(order_of(node)):
            if not visited[nbr]:
                stack.append((nbr, node))
    for b in g.bonds:
        if frozenset((b.a, b.b)) not in tree:
            ring_edges[b.a].append(b.b)
            ring_edges[b.b].append(b.a)

    position = {a: k for k, a in enumerate(preorder)}
    out: list[str] = []
    free_digits: list[int] = []
    next_digit = 1
    open_digit: dict[frozenset[int], int] = {}

    def digit_text(d: int) -> str:
        return str(d) if d < 10 else f"%{d}"

    def write(node: int, parent: int):
        nonlocal next_digit
        if parent >= 0:
            out.append(_bond_text(g, parent, node, g.bond_order(parent, node)))
        out.append(_atom_text(g.atoms[node]))
        closes = sorted((p for p in ring_edges[node] if position[p] < position[node]),
                        key=lambda p: open_digit[frozenset((p, node))])
        opens = [p for p in order_of(node) if p in ring_edges[node] and position[p] > position[node]]
        for p in closes:
            d = open_digit.pop(frozenset((p, node)))
            out.append(digit_text(d))
            free_digits.append(d)
            free_digits.sort()
        for p in opens:
            if free_digits:
                d = free_digits.pop(0)
            else:
                d = next_digit
                next_digit += 1
            open_digit[frozenset((p, node))] = d
            out.append(_bond_text(g, node, p, g.bond_order(node, p)) + digit_text(d))
        kids = children[node]
        for k, child in enumerate(kids):
            if k < len(kids) - 1:
                out.append("(")
                write(child, node)
                out.append(")")
            else:
                write(child, node)

    write(root, -1)
    return "".join(out)


def write_smiles(g: MolGraph, traversal_seed: int) -> str:
    """A random (but seed-determined) SMILES string for ``g``."""
    rng = random.Random(traversal_seed)
    candidates = [i for i, a in enumerate(g.atoms) if not a.is_placeholder] or [0]
    root = rng.choice(candidates)
    orders = []
    for i in range(len(g.atoms)):
        nbrs = [j for j, _ in g.adjacency[i]]
        rng.shuffle(nbrs)
        orders.append(nbrs)
    return _emit(g, root, orders.__getitem__)


def _initial_invariants(g: MolGraph) -> list[tuple]:
    return [
        (a.is_placeholder, a.element, a.aromatic, g.degree(i), -1 if a.hcount is None else a.hcount)
        for i, a in enumerate(g.atoms)
    ]


def _dense_ranks(keys: list) -> list[int]:
    order = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def _refine(g: MolGraph, ranks: list[int]) -> list[int]:
    adj = g.adjacency
    n_classes = len(set(ranks))
    while True:
        keys = [
            (ranks[i], tuple(sorted((ranks[j], int(o)) for j, o in adj[i])))
            for i in range(len(ranks))
        ]
        new = _dense_ranks(keys)
        n_new = len(set(new))
        if n_new == n_classes:
            return new
        ranks, n_classes = new, n_new


def _ranked_string(g: MolGraph, ranks: list[int]) -> str:
    candidates = [i for i, a in enumerate(g.atoms) if not a.is_placeholder] or [0]
    root = min(candidates, key=ranks.__getitem__)
    orders = [sorted((j for j, _ in g.adjacency[i]), key=ranks.__getitem__) for i in range(len(g.atoms))]
    return _emit(g, root, orders.__getitem__)


def _canonical_search(g: MolGraph, ranks: list[int]) -> str:
    ranks = _refine(g, ranks)
    counts: dict[int, int] = {}
    for r in ranks:
        counts[r] = counts.get(r, 0) + 1
    tied = [r for r, c in counts.items() if c > 1]
    if not tied:
        return _ranked_string(g, ranks)
    target = min(tied)
    best = None
    for i, r in enumerate(ranks):
        if r != target:
            continue
        trial = [2 * x for x in ranks]
        trial[i] -= 1
        s = _canonical_search(g, trial)
        if best is None or s < best:
            best = s
    return best


def canonical_any(g: MolGraph) -> str:
    """Canonical string, allowing attachment markers (used for scaffolds)."""
    return _canonical_search(g, _dense_ranks(_initial_invariants(g)))


def canonical(g: MolGraph) -> str:
    """Deterministic SMILES string independent of atom numbering."""
    if g.has_placeholder:
        raise PlaceholderPresent("canonical() does not accept scaffolds with '*'")
    return canonical_any(g)


def canonicalize(smiles: str, max_atoms: int = DEFAULT_MAX_ATOMS) -> str | None:
    """Canonical form of a valid SMILES string, None when invalid."""
    g = parse_smiles(smiles, max_atoms=max_atoms, allow_placeholder=False)
    if g is None or not validate_valence(g):
        return None
    return canonical(g)


def read_corpus(path) -> list[str]:
    """One SMILES per line; '#' comments and blank lines are skipped."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip()
            if not line or line.lstrip().startswith("#"):
                continue
            out.append(line.strip())
    return out
