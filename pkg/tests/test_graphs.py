from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alignnd.data import ideal_complex, peroxide_chain
from alignnd.geometry import AtomicStructure, random_rotation
from alignnd.graphs import (
    PEROXIDE_RULES,
    REPRESENTATIONS,
    Graph,
    GraphBundle,
    GraphError,
    build_bundle,
    build_line_graph,
    build_max_graph,
    build_min_graph,
    closed_form_counts,
    edge_counts,
    edge_rows,
)

EDGE_TOTALS = {  # coordination -> bonds, ALIGNN total, ALIGNN-d total, G_max total
    4: (12, 30, 54, 78),
    5: (15, 40, 80, 120),
    6: (18, 51, 111, 171),
}


@pytest.mark.parametrize("n", [4, 5, 6])
def test_edge_count_table(complexes, n):
    s = complexes[n]
    totals = [edge_counts(build_bundle(s, tag))[3] for tag in ("gmin", "alignn", "alignn-d", "gmax")]
    assert tuple(totals) == EDGE_TOTALS[n]


def test_count_breakdown(complexes):
    assert edge_counts(build_bundle(complexes[6], "alignn-d")) == (18, 33, 60, 111)
    assert edge_counts(build_bundle(complexes[4], "alignn-d")) == (12, 18, 24, 54)
    assert edge_counts(build_bundle(complexes[5], "alignn-d")) == (15, 25, 40, 80)
    assert edge_counts(build_bundle(complexes[4], "alignn")) == (12, 18, 0, 30)


def test_ideal_min_graphs():
    assert build_min_graph(ideal_complex(4)).n_edges == 12
    assert build_min_graph(ideal_complex(6)).n_edges == 18


def test_distant_oxygen_is_orphaned():
    s = AtomicStructure(["Cu", "O"], [[0, 0, 0], [3.0, 0, 0]])
    with pytest.raises(GraphError, match="not bonded"):
        build_min_graph(s)


def test_hydrogen_without_oxygen():
    s = AtomicStructure(["Cu", "O", "H"], [[0, 0, 0], [2, 0, 0], [-2, 0, 0]])
    with pytest.raises(GraphError):
        build_min_graph(s)


def test_hydrogen_bonds_to_nearest_oxygen_only():
    # H sits 0.97 from one O and 1.1 from another: only the nearer bond forms
    s = AtomicStructure(
        ["O", "O", "H"], [[0, 0, 0], [2.07, 0, 0], [0.97, 0, 0]]
    )
    g = build_min_graph(s, PEROXIDE_RULES)
    assert [tuple(e) for e in g.edges] == [(0, 2)]


def test_max_graph_sizes(complexes):
    s = AtomicStructure(["O", "H"], [[0, 0, 0], [1, 0, 0]])
    assert build_max_graph(s).n_edges == 1
    assert build_max_graph(complexes[4]).n_edges == 78
    assert build_max_graph(complexes[5]).n_edges == 120


def test_chain_of_two_bonds():
    s = AtomicStructure(["H", "O", "O"], [[0.97, 0, 0], [0, 0, 0], [-0.3, 1.42, 0]])
    g = build_min_graph(s, PEROXIDE_RULES)
    lg = build_line_graph(g, True, s)
    assert (g.n_edges, lg.n_angles, lg.n_dihedrals) == (2, 1, 0)


def test_distances_match_geometry(complexes):
    s = complexes[5]
    for tag in ("gmin", "gmax"):
        g = build_bundle(s, tag).graph
        direct = np.linalg.norm(s.positions[g.edges[:, 0]] - s.positions[g.edges[:, 1]], axis=1)
        assert np.allclose(g.distances, direct, atol=1e-9, rtol=0)
        assert np.all(g.edges[:, 0] < g.edges[:, 1])
        assert len({tuple(e) for e in g.edges}) == g.n_edges


def test_line_graph_structure(complexes):
    b = build_bundle(complexes[5], "alignn-d")
    g, lg = b.graph, b.line_graph
    bonds = [set(map(int, e)) for e in g.edges]
    for p, q in lg.angle_pairs:
        assert len(bonds[p] & bonds[q]) == 1
    for (p, q), (k, i, j, l) in zip(lg.dihedral_pairs, lg.dihedral_atoms):
        assert not bonds[p] & bonds[q]
        assert {k, i} == bonds[p] and {j, l} == bonds[q]
        assert {i, j} in bonds
    n = lg.n_dihedrals
    assert np.allclose(lg.dihedrals[n:], (360.0 - lg.dihedrals[:n]) % 360.0)
    assert list(lg.dihedral_flip) == [0] * n + [1] * n


def test_bundle_invariants(complexes):
    s = complexes[4]
    for tag in REPRESENTATIONS:
        b = build_bundle(s, tag)
        assert (b.line_graph is not None) == (tag in ("alignn", "alignn-d"))
    assert len(build_bundle(s, "alignn").line_graph.dihedrals) == 0
    assert len(build_bundle(s, "alignn-d").line_graph.dihedrals) > 0
    with pytest.raises(GraphError):
        build_bundle(s, "cgcnn")
    with pytest.raises(GraphError):
        GraphBundle("gmin", build_min_graph(s), build_bundle(s, "alignn").line_graph)


def _random_tree(rng, n):
    parent = [int(rng.integers(0, v)) for v in range(1, n)]
    edges = sorted((min(p, v), max(p, v)) for v, p in zip(range(1, n), parent))
    while True:
        pos = rng.uniform(-4, 4, size=(n, 3))
        try:
            s = AtomicStructure(["O"] * n, pos)
        except ValueError:
            continue
        d = np.linalg.norm(pos[[a for a, _ in edges]] - pos[[b for _, b in edges]], axis=1)
        return s, Graph(n, edges, d, s.atomic_numbers)


def _brute_counts(edges):
    sets = [set(e) for e in edges]
    angles = sum(1 for p, q in combinations(sets, 2) if len(p & q) == 1)
    dih = 0
    for p, q in combinations(sets, 2):
        if p & q:
            continue
        # joined by a bond: some edge shares one atom with each
        if any(len(c & p) == 1 and len(c & q) == 1 for c in sets):
            dih += 1
    return angles, dih


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 12))
def test_random_tree_counts(seed, n):
    rng = np.random.default_rng(seed)
    s, g = _random_tree(rng, n)
    try:
        lg = build_line_graph(g, True, s)
    except ValueError:
        return  # degenerate random torsion
    assert (lg.n_angles, lg.n_dihedrals) == _brute_counts([tuple(e) for e in g.edges])
    assert (lg.n_angles, lg.n_dihedrals) == closed_form_counts(g)


def _multisets(b):
    lg = b.line_graph
    r = lambda x: tuple(np.round(np.sort(x), 8))  # noqa: E731
    return r(b.graph.distances), r(lg.angles), r(lg.dihedrals)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_relabeling_preserves_feature_multisets(complexes, seed):
    rng = np.random.default_rng(seed)
    s = complexes[5]
    moved = s.permuted(rng.permutation(len(s))).transformed(random_rotation(rng), rng.normal(size=3))
    assert _multisets(build_bundle(s, "alignn-d")) == _multisets(build_bundle(moved, "alignn-d"))


def test_dihedral_pair_distinguishes_only_with_dihedrals():
    a, b = peroxide_chain(60.0), peroxide_chain(120.0)
    ba = build_bundle(a, "alignn", PEROXIDE_RULES)
    bb = build_bundle(b, "alignn", PEROXIDE_RULES)
    assert _multisets(ba)[:2] == _multisets(bb)[:2]
    assert np.array_equal(ba.graph.edges, bb.graph.edges)
    assert np.array_equal(ba.line_graph.angle_pairs, bb.line_graph.angle_pairs)
    da = build_bundle(a, "alignn-d", PEROXIDE_RULES)
    db = build_bundle(b, "alignn-d", PEROXIDE_RULES)
    assert _multisets(da)[2] != _multisets(db)[2]


def test_edge_rows(complexes):
    b = build_bundle(complexes[4], "alignn-d")
    rows = list(edge_rows(b))
    kinds = [r[0] for r in rows]
    assert kinds.count("bond") == 12
    assert kinds.count("bond_angle") == 18
    assert kinds.count("dihedral") == 48  # both orientations
