"""Atomic graphs (G_min, G_max) and their angle/dihedral line graphs."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

from .geometry import AtomicStructure, bond_angles, dihedral_angles

REPRESENTATIONS = ("gmin", "gmax", "alignn", "alignn-d")

CU_O_CUTOFF = 2.92  # Å, first minimum of the Cu-O RDF
O_H_CUTOFF = 1.2  # Å


class GraphError(ValueError):
    """The structure cannot be turned into the requested graph."""


@dataclass(frozen=True)
class BondRules:
    """Which heavy-atom pairs bond, and how hydrogens attach.

    Hydrogens always bond to their single nearest oxygen (within
    ``hydrogen_cutoff``); ``pair_cutoffs`` covers every other pair.
    ``center`` names an element that must occur exactly once and that every
    oxygen must bond to (complex mode); ``None`` disables that check.
    """

    pair_cutoffs: dict = field(default_factory=lambda: {("Cu", "O"): CU_O_CUTOFF})
    hydrogen_cutoff: float = O_H_CUTOFF
    center: str | None = "Cu"

    def cutoff(self, a: str, b: str) -> float | None:
        return self.pair_cutoffs.get((a, b), self.pair_cutoffs.get((b, a)))


COMPLEX_RULES = BondRules()
PEROXIDE_RULES = BondRules(pair_cutoffs={("O", "O"): 1.6}, center=None)


@dataclass
class Graph:
    node_count: int
    edges: np.ndarray  # (E, 2) int, i < j, lexicographically sorted
    distances: np.ndarray  # (E,)
    atom_numbers: np.ndarray  # (N,)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.distances = np.asarray(self.distances, dtype=float)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.node_count)]
        for a, b in self.edges:
            nbrs[a].append(int(b))
            nbrs[b].append(int(a))
        return [sorted(n) for n in nbrs]

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.node_count)

    def edge_index(self) -> dict[tuple[int, int], int]:
        return {(int(a), int(b)): n for n, (a, b) in enumerate(self.edges)}


@dataclass
class LineGraph:
    """Nodes are the parent graph's edges (same indices).

    ``angle_pairs[t]`` joins two bonds sharing atom ``angle_centers[t]``.
    ``dihedral_pairs[t]`` joins bonds (k-i) and (j-l) across central bond
    ``dihedral_atoms[t] = (k, i, j, l)``; every geometric dihedral appears
    twice, with ``dihedral_flip`` 0 (torsion alpha') and 1 (360 - alpha').
    """

    angle_pairs: np.ndarray
    angle_centers: np.ndarray
    angles: np.ndarray
    dihedral_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    dihedral_atoms: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), np.int64))
    dihedrals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dihedral_flip: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def n_angles(self) -> int:
        return len(self.angles)

    @property
    def n_dihedrals(self) -> int:
        """Geometric dihedral count (each stored in two orientations)."""
        return len(self.dihedrals) // 2

    @property
    def edges(self) -> np.ndarray:
        """All line-graph edges: bond angles first, then dihedral orientations."""
        return np.concatenate([self.angle_pairs, self.dihedral_pairs]).reshape(-1, 2)


@dataclass
class GraphBundle:
    tag: str
    graph: Graph
    line_graph: LineGraph | None = None
    label: str = ""

    def __post_init__(self):
        if self.tag not in REPRESENTATIONS:
            raise GraphError(f"unknown representation {self.tag!r}")
        has_lg = self.line_graph is not None
        if has_lg != (self.tag in ("alignn", "alignn-d")):
            raise GraphError(f"line graph presence inconsistent with tag {self.tag}")
        if self.tag == "alignn" and len(self.line_graph.dihedrals):
            raise GraphError("ALIGNN bundle carries dihedral edges")


def _edges_from_pairs(s: AtomicStructure, pairs) -> Graph:
    pairs = sorted({(min(a, b), max(a, b)) for a, b in pairs})
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    d = np.linalg.norm(s.positions[edges[:, 0]] - s.positions[edges[:, 1]], axis=-1)
    return Graph(len(s), edges, d, s.atomic_numbers)


def build_min_graph(s: AtomicStructure, rules: BondRules = COMPLEX_RULES) -> Graph:
    """Nearest-neighbour bond graph."""
    dist = s.distance_matrix()
    sym = s.symbols
    oxygens = s.indices_of("O")
    if rules.center is not None:
        centers = s.indices_of(rules.center)
        if len(centers) != 1:
            raise GraphError(f"expected exactly one {rules.center}, found {len(centers)}")
    pairs = []
    heavy = [i for i, e in enumerate(sym) if e != "H"]
    for a, b in combinations(heavy, 2):
        c = rules.cutoff(sym[a], sym[b])
        if c is not None and dist[a, b] <= c:
            pairs.append((a, b))
    for h in s.indices_of("H"):
        if not oxygens:
            raise GraphError(f"H {h} has no oxygen to bond to")
        o = min(oxygens, key=lambda i: (dist[h, i], i))
        if dist[h, o] > rules.hydrogen_cutoff:
            raise GraphError(
                f"H {h} has no O within {rules.hydrogen_cutoff} Å (nearest {dist[h, o]:.3f} Å)"
            )
        pairs.append((h, o))
    if rules.center is not None:
        c = centers[0]
        bonded = {b if a == c else a for a, b in pairs if c in (a, b)}
        orphans = [o for o in oxygens if o not in bonded]
        if orphans:
            raise GraphError(f"O atoms {orphans} are not bonded to {rules.center}")
    return _edges_from_pairs(s, pairs)


def build_max_graph(s: AtomicStructure) -> Graph:
    """Complete graph over all atoms."""
    return _edges_from_pairs(s, combinations(range(len(s)), 2))


def build_line_graph(g: Graph, with_dihedrals: bool, s: AtomicStructure) -> LineGraph:
    eidx = g.edge_index()
    nbrs = g.neighbors()
    pos = s.positions

    def bond(a, b):
        return eidx[(a, b) if a < b else (b, a)]

    pairs, centers, triples = [], [], []
    for c in range(g.node_count):
        for a, b in combinations(nbrs[c], 2):
            pairs.append((bond(a, c), bond(c, b)))
            centers.append(c)
            triples.append((a, c, b))
    triples = np.array(triples, dtype=np.int64).reshape(-1, 3)
    angles = (
        bond_angles(pos[triples[:, 0]], pos[triples[:, 1]], pos[triples[:, 2]])
        if len(triples)
        else np.zeros(0)
    )
    lg = LineGraph(
        np.array(pairs, dtype=np.int64).reshape(-1, 2),
        np.array(centers, dtype=np.int64),
        angles,
    )
    if not with_dihedrals:
        return lg

    quads = []
    for i, j in g.edges:
        i, j = int(i), int(j)
        for k in nbrs[i]:
            if k == j:
                continue
            for l in nbrs[j]:
                if l in (i, k):
                    continue
                quads.append((k, i, j, l))
    quads = np.array(quads, dtype=np.int64).reshape(-1, 4)
    if len(quads):
        tors = dihedral_angles(*(pos[quads[:, n]] for n in range(4)))
    else:
        tors = np.zeros(0)
    dpairs = np.array([(bond(k, i), bond(j, l)) for k, i, j, l in quads], dtype=np.int64)
    lg.dihedral_pairs = np.concatenate([dpairs, dpairs]).reshape(-1, 2)
    lg.dihedral_atoms = np.concatenate([quads, quads])
    lg.dihedrals = np.concatenate([tors, (360.0 - tors) % 360.0])
    lg.dihedral_flip = np.repeat([0, 1], len(quads))
    return lg


def build_bundle(s: AtomicStructure, tag: str, rules: BondRules = COMPLEX_RULES) -> GraphBundle:
    if tag not in REPRESENTATIONS:
        raise GraphError(f"unknown representation {tag!r}; choose from {REPRESENTATIONS}")
    if tag == "gmax":
        return GraphBundle(tag, build_max_graph(s), label=s.label)
    g = build_min_graph(s, rules)
    lg = None
    if tag in ("alignn", "alignn-d"):
        lg = build_line_graph(g, tag == "alignn-d", s)
    return GraphBundle(tag, g, lg, label=s.label)


def edge_counts(bundle: GraphBundle) -> tuple[int, int, int, int]:
    """(bonds, bond angles, dihedrals, total) as undirected counts."""
    n_b = bundle.graph.n_edges
    lg = bundle.line_graph
    n_a = lg.n_angles if lg is not None else 0
    n_d = lg.n_dihedrals if lg is not None else 0
    return n_b, n_a, n_d, n_b + n_a + n_d


def closed_form_counts(g: Graph) -> tuple[int, int]:
    """Angle and dihedral counts of an acyclic graph from its degrees."""
    deg = g.degrees()
    n_a = sum(comb(int(k), 2) for k in deg)
    n_d = sum(int((deg[a] - 1) * (deg[b] - 1)) for a, b in g.edges)
    return n_a, n_d


def edge_rows(bundle: GraphBundle):
    """Yield ``(kind, i, j, value)`` for every stored edge.

    Bonds join atoms; bond angles and dihedrals join bond (line-graph node)
    indices. Both orientations of each dihedral are listed.
    """
    g = bundle.graph
    for (a, b), d in zip(g.edges, g.distances):
        yield "bond", int(a), int(b), float(d)
    lg = bundle.line_graph
    if lg is None:
        return
    for (a, b), ang in zip(lg.angle_pairs, lg.angles):
        yield "bond_angle", int(a), int(b), float(ang)
    for (a, b), tor in zip(lg.dihedral_pairs, lg.dihedrals):
        yield "dihedral", int(a), int(b), float(tor)
