"""Regenerate the bundled desk corpus of small C/N/O/F molecules.

Molecules are grown atom by atom from a seeded RNG, kept only if they pass
the valence check, and written in canonical form.

    python scripts/make_corpus.py --n 1000 --seed 7 > src/rlmolgan/data/desk_corpus.smi
"""

import argparse
import random

from rlmolgan.chem import Atom, Bond, BondOrder, MAX_VALENCE, MolGraph, bond_valence_sum, canonical, validate_valence

ELEMENTS = ["C"] * 14 + ["N"] * 3 + ["O"] * 3 + ["F"]


def free_valence(atoms, bonds, i):
    g = MolGraph(tuple(atoms), tuple(bonds))
    return MAX_VALENCE[atoms[i].element] - bond_valence_sum(g, i)


def grow(rng, max_heavy):
    atoms, bonds = [], []
    size = rng.randint(3, max_heavy)
    start = rng.random()
    if start < 0.3 and size >= 6:
        n_count = 0
        for k in range(6):
            el = "N" if rng.random() < 0.15 and n_count < 2 else "C"
            n_count += el == "N"
            atoms.append(Atom(el, True, k))
        for k in range(6):
            bonds.append(Bond(k, (k + 1) % 6, BondOrder.AROMATIC))
    elif start < 0.5:
        ring = rng.randint(3, min(6, size))
        for k in range(ring):
            atoms.append(Atom(rng.choice(["C"] * 5 + ["N", "O"]), False, k))
        for k in range(ring):
            bonds.append(Bond(k, (k + 1) % ring))
    else:
        atoms.append(Atom(rng.choice(ELEMENTS[:-1]), False, 0))
    while len(atoms) < size:
        hosts = [i for i in range(len(atoms)) if free_valence(atoms, bonds, i) >= 1]
        if not hosts:
            break
        host = rng.choice(hosts)
        el = rng.choice(ELEMENTS)
        idx = len(atoms)
        atoms.append(Atom(el, False, idx))
        order = BondOrder.SINGLE
        room = free_valence(atoms[:-1], bonds, host)
        if not atoms[host].aromatic and el != "F" and room >= 2 and rng.random() < 0.2:
            order = BondOrder.TRIPLE if room >= 3 and el in "CN" and rng.random() < 0.25 else BondOrder.DOUBLE
        bonds.append(Bond(host, idx, order))
        if rng.random() < 0.08 and len(atoms) >= 4:
            a = rng.randrange(len(atoms) - 1)
            if a != host and free_valence(atoms, bonds, a) >= 1 and free_valence(atoms, bonds, idx) >= 1:
                if not any({b.a, b.b} == {a, idx} for b in bonds):
                    bonds.append(Bond(a, idx))
    g = MolGraph(tuple(atoms), tuple(bonds))
    return g if validate_valence(g) else None


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--max-heavy", type=int, default=9)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    seen = []
    known = set()
    while len(seen) < args.n:
        g = grow(rng, args.max_heavy)
        if g is None:
            continue
        s = canonical(g)
        if s not in known:
            known.add(s)
            seen.append(s)
    print("# desk corpus: random C/N/O/F molecules, <= %d heavy atoms, seed %d" % (args.max_heavy, args.seed))
    print("\n".join(seen))


if __name__ == "__main__":
    main()
