from collections import Counter

import pytest

from rlmolgan.chem import BondOrder, MolGraph, canonical, canonical_any, parse, tokenize
from rlmolgan.diversify import (
    DE_NOVO,
    SCAFFOLD,
    DatasetConfig,
    EmptyDataset,
    EmptyGroup,
    ScaffoldPair,
    ValenceOverflow,
    Vocab,
    VocabError,
    assemble,
    attach,
    attach_many,
    build_dataset,
    enumerate_variants,
    read_dataset,
    split_scaffold,
    write_dataset,
)

AMIDE = "c1ccc(CC(N)=O)cc1"


def _key(smiles_with_marker: str) -> str:
    return canonical_any(parse(smiles_with_marker))


def test_variants_of_example_molecule():
    g = parse(AMIDE)
    seen = set()
    for seed in range(10):
        seen.update(enumerate_variants(g, 20, seed))
    assert "c1c(CC(N)=O)cccc1" in seen
    assert all(canonical(parse(s)) == canonical(g) for s in seen)


def test_variants_of_single_atom():
    assert enumerate_variants(parse("C"), 5, 0) == ["C"]


def test_split_reproduces_example_pairs():
    pairs = {(_key(p.scaffold), p.group) for p in split_scaffold(parse(AMIDE))}
    assert (_key("c1ccc(*)cc1"), "CC(N)=O") in pairs
    # the benzyl scaffold: the printed "Cc1ccc(*)cc1" would put the methyl on the ring
    assert (_key("C(*)c1ccccc1"), "C(N)=O") in pairs


def test_printed_tolyl_scaffold_is_a_different_molecule():
    pair = ScaffoldPair(tuple(tokenize("Cc1ccc(*)cc1")), tuple(tokenize("C(N)=O")), 6)
    assert canonical(attach(pair)) != canonical(parse(AMIDE))
    assert canonical(attach(pair)) == canonical(parse("Cc1ccc(C(N)=O)cc1"))


def test_split_group_starts_at_cut_atom():
    for p in split_scaffold(parse(AMIDE)):
        if canonical(parse(p.group)) == canonical(parse("C(N)=O")):
            assert p.group_tokens[0] == "C" and p.group.startswith("C(")


def test_split_benzene_is_empty():
    assert split_scaffold(parse("c1ccccc1")) == []


def test_split_ethane_both_orientations():
    pairs = split_scaffold(parse("CC"))
    assert len(pairs) == 2
    assert all(p.scaffold in ("C*", "*C") and p.group == "C" for p in pairs)


def test_attach_example_pair():
    g = attach(ScaffoldPair(tuple(tokenize("c1ccc(*)cc1")), tuple(tokenize("CC(N)=O")), 5))
    assert canonical(g) == canonical(parse(AMIDE))


def test_attach_to_bare_marker_is_parse():
    for z in ("CCO", "c1ccncc1", "C#N"):
        assert canonical(attach(ScaffoldPair(("*",), tuple(tokenize(z)), 1))) == canonical(parse(z))


def test_attach_errors():
    with pytest.raises(EmptyGroup):
        attach(ScaffoldPair(("*",), (), 1))
    with pytest.raises(ValenceOverflow):
        attach(ScaffoldPair(tuple(tokenize("C*")), tuple(tokenize("O(C)C")), 2))
    with pytest.raises(ValenceOverflow):
        # the group's head carbon already has four bonds
        attach(ScaffoldPair(tuple(tokenize("C*")), tuple(tokenize("C(C)(C)(C)C")), 2))


def test_attach_many_fills_markers_in_order():
    g = attach_many(tokenize("*CC*"), [["O"], ["N"]])
    assert canonical(g) == canonical(parse("OCCN"))


def test_split_attach_round_trip(corpus):
    for smiles in corpus[:200]:
        g = parse(smiles)
        want = canonical(g)
        for pair in split_scaffold(g):
            assert canonical(attach(pair)) == want


def test_assemble_valid_and_invalid():
    text, g = assemble(tokenize("c1ccc(*)cc1"), tokenize("CC(N)=O"))
    assert g is not None and text == canonical(parse(AMIDE))
    text, g = assemble(("*",), tuple("C(("))
    assert g is None and text == "C(("


def _cycle_free_single_bonds(g: MolGraph) -> int:
    """Count single bonds whose removal disconnects the graph (independent oracle)."""
    count = 0
    for bond in g.bonds:
        if bond.order is not BondOrder.SINGLE:
            continue
        adj = {i: set() for i in range(len(g.atoms))}
        for b in g.bonds:
            if b is not bond:
                adj[b.a].add(b.b)
                adj[b.b].add(b.a)
        seen, stack = {bond.a}, [bond.a]
        while stack:
            for j in adj[stack.pop()] - seen:
                seen.add(j)
                stack.append(j)
        count += bond.b not in seen
    return count


def test_dataset_counts_match_bond_oracle(corpus):
    subset = corpus[:100]
    cfg = DatasetConfig(max_len=6)
    entries, _ = build_dataset(subset, SCAFFOLD, cfg)
    expected = 0
    long_total = 0
    for smiles in subset:
        g = parse(smiles)
        long_groups = sum(1 for p in split_scaffold(g) if len(p.group_tokens) > cfg.max_len)
        long_total += long_groups
        expected += 2 * _cycle_free_single_bonds(g) - long_groups
    assert long_total > 0
    assert len(entries) == expected


def test_de_novo_single_molecule():
    entries, vocab = build_dataset(["CCO"], DE_NOVO, DatasetConfig())
    assert len(entries) == 1
    assert entries[0].source == ("*",) and entries[0].target == tuple(tokenize(canonical(parse("CCO"))))
    assert vocab.tokens[:4] == ["<pad>", "<bos>", "<eos>", "*"]


def test_de_novo_variants_are_distinct():
    entries, _ = build_dataset([AMIDE], DE_NOVO, DatasetConfig(variants=4, max_heavy_atoms=10))
    targets = ["".join(e.target) for e in entries]
    assert len(targets) == 4 and len(set(targets)) == 4
    assert canonical(parse(AMIDE)) in targets


def test_benzene_scaffold_dataset_is_empty():
    with pytest.raises(EmptyDataset):
        build_dataset(["c1ccccc1"], SCAFFOLD, DatasetConfig())


def test_dataset_file_round_trip(tmp_path, corpus):
    entries, vocab = build_dataset(corpus[:30], SCAFFOLD, DatasetConfig())
    write_dataset(tmp_path / "d.tsv", entries)
    vocab.save(tmp_path / "v.txt")
    assert read_dataset(tmp_path / "d.tsv") == entries
    assert Vocab.load(tmp_path / "v.txt") == vocab


def test_vocab_encode_decode():
    vocab = Vocab.build([["C", "O", "("], ["N"]])
    ids = vocab.encode(["C", "N"])
    assert vocab.decode(ids + [vocab.end_id] + ids) == ["C", "N"]
    with pytest.raises(VocabError):
        vocab.encode(["Xe"])


def test_dataset_is_seeded(corpus):
    a, _ = build_dataset(corpus[:50], SCAFFOLD, DatasetConfig(seed=3))
    b, _ = build_dataset(corpus[:50], SCAFFOLD, DatasetConfig(seed=3))
    c, _ = build_dataset(corpus[:50], SCAFFOLD, DatasetConfig(seed=4))
    assert a == b and a != c and Counter(a) == Counter(c)
