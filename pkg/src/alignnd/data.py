"""Records, dataset files, splitting and synthetic Cu(II) aqua complexes.

The real TDDFT-labelled dataset is not available, so ``generate_synthetic``
builds jittered aqua complexes and ``surrogate_targets`` labels them with an
analytic, dihedral-dependent stand-in for the fitted Gaussian peak.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    AtomicStructure,
    StructureError,
    axis_rotation,
    bond_angles,
    dihedral_angles,
    random_rotation,
    read_xyz,
    write_xyz,
)
from .graphs import COMPLEX_RULES, PEROXIDE_RULES, BondRules, GraphError, build_min_graph
from .model import GaussianPeak

O_H = 0.97  # Å
HOH_ANGLE = 104.5  # degrees
CU_O_BASE = 2.0  # Å
TRANS_TOL = 1e-6  # degrees


@dataclass
class Record:
    structure: AtomicStructure
    target: GaussianPeak
    id: str


def rules_for(s: AtomicStructure) -> BondRules:
    """Complex rules when a single Cu is present, generic O-O rules otherwise."""
    return COMPLEX_RULES if s.symbols.count("Cu") == 1 else PEROXIDE_RULES


@dataclass(frozen=True)
class SyntheticConfig:
    n_samples: int = 1000
    coordination_probs: dict = field(default_factory=lambda: {4: 0.35, 5: 0.55, 6: 0.10})
    radial_sigma: float = 0.08  # Å
    angular_sigma: float = 8.0  # degrees
    dihedral_spread: float = 360.0  # width of the uniform water-rotation window, degrees
    seed: int = 0
    max_retries: int = 100

    def __post_init__(self):
        p = self.coordination_probs
        if set(p) - {4, 5, 6}:
            raise ValueError("coordination numbers must be within {4, 5, 6}")
        if abs(sum(p.values()) - 1.0) > 1e-9 or min(p.values()) < 0:
            raise ValueError("coordination probabilities must be non-negative and sum to 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


_S = np.sqrt(3) / 2
# ideal Cu-O directions; 4- and 5-fold pick one of two octahedral/bipyramidal parents
_SKELETONS = {
    4: [
        np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]], float),  # square
        np.array([[0, 0, 1], [0, 0, -1], [1, 0, 0], [-0.5, _S, 0]], float),  # sawhorse
    ],
    5: [
        np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]], float),
        np.array([[0, 0, 1], [0, 0, -1], [1, 0, 0], [-0.5, _S, 0], [-0.5, -_S, 0]], float),
    ],
    6: [np.vstack([np.eye(3), -np.eye(3)])],
}


def _perpendicular(u: np.ndarray) -> np.ndarray:
    ref = np.array([1.0, 0, 0]) if abs(u[0]) < 0.9 else np.array([0, 1.0, 0])
    w = np.cross(u, ref)
    return w / np.linalg.norm(w)


def _water_hydrogens(o: np.ndarray, u: np.ndarray, phi: float) -> np.ndarray:
    """H positions of a water at ``o`` whose bisector points along ``u`` (away from Cu)."""
    half = np.radians(HOH_ANGLE / 2)
    w = axis_rotation(u, phi) @ _perpendicular(u)
    return np.array(
        [o + O_H * (np.cos(half) * u + sgn * np.sin(half) * w) for sgn in (1.0, -1.0)]
    )


def _complex(n_w: int, cfg: SyntheticConfig, rng: np.random.Generator) -> AtomicStructure:
    parents = _SKELETONS[n_w]
    dirs = parents[rng.integers(len(parents))].copy()
    dirs += rng.normal(scale=np.radians(cfg.angular_sigma), size=dirs.shape)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dist = CU_O_BASE + rng.normal(scale=cfg.radial_sigma, size=n_w)
    symbols, pos = ["Cu"], [np.zeros(3)]
    for u, d in zip(dirs, dist):
        o = d * u
        phi = rng.uniform(0.0, cfg.dihedral_spread)
        symbols += ["O", "H", "H"]
        pos += [o, *_water_hydrogens(o, u, phi)]
    rot = random_rotation(rng)
    return AtomicStructure(symbols, np.array(pos) @ rot.T)


def ideal_complex(n_w: int, variant: int = 0, phis=None, d: float = CU_O_BASE) -> AtomicStructure:
    """Undistorted [Cu(H2O)n]2+ on one of the parent skeletons.

    ``variant`` picks the skeleton (square/sawhorse for n=4, square pyramid or
    trigonal bipyramid for n=5); ``phis`` are the water rotations in degrees.
    """
    if n_w not in _SKELETONS:
        raise ValueError("n_w must be 4, 5 or 6")
    dirs = _SKELETONS[n_w][variant]
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    phis = np.zeros(n_w) + 37.0 if phis is None else np.asarray(phis, float)
    symbols, pos = ["Cu"], [np.zeros(3)]
    for u, phi in zip(dirs, phis):
        o = d * u
        symbols += ["O", "H", "H"]
        pos += [o, *_water_hydrogens(o, u, phi)]
    return AtomicStructure(symbols, np.array(pos), f"ideal n_water={n_w}")


def _valid_complex(s: AtomicStructure) -> bool:
    try:
        g = build_min_graph(s, COMPLEX_RULES)
    except GraphError:
        return False
    # each H must have bonded to the oxygen it was built on (the preceding O)
    want = {(h - 1 if s.symbols[h - 1] == "O" else h - 2, h) for h in s.indices_of("H")}
    have = {(int(a), int(b)) for a, b in g.edges if s.symbols[b] == "H"}
    n_o = len(s.indices_of("O"))
    cu_o = sum(1 for a, b in g.edges if s.symbols[a] == "Cu" and s.symbols[b] == "O")
    return want == have and cu_o == n_o


def surrogate_targets(s: AtomicStructure) -> GaussianPeak:
    """Analytic stand-in label for a Cu(II) aqua complex.

    mu    = 0.8 + 0.4 mean(sin^2 a) + 0.2 (mean d_CuO - 2.0)   over O-Cu-O angles a
    sigma = 0.15 + 0.05 std(cos a)
    A     = 0.05 mean(sin^2 t) + 0.01 n_water                   over O-Cu-O-H torsions t
    """
    g = build_min_graph(s, COMPLEX_RULES)
    cu = s.indices_of("Cu")[0]
    pos = s.positions
    oxy = sorted(int(b if a == cu else a) for a, b in g.edges if cu in (a, b))
    if len(oxy) < 2:
        raise ValueError("surrogate targets need at least two Cu-bonded oxygens")
    hyd = {o: [] for o in oxy}
    for a, b in g.edges:
        a, b = int(a), int(b)
        if s.symbols[a] == "H" and b in hyd:
            hyd[b].append(a)
        elif s.symbols[b] == "H" and a in hyd:
            hyd[a].append(b)
    pairs = np.array([(a, b) for n, a in enumerate(oxy) for b in oxy[n + 1 :]])
    ang = np.radians(bond_angles(pos[pairs[:, 0]], pos[cu], pos[pairs[:, 1]]))
    d_cuo = np.linalg.norm(pos[oxy] - pos[cu], axis=1)
    quads = np.array([(a, cu, b, h) for a in oxy for b in oxy if a != b for h in hyd[b]])
    if len(quads):
        # trans (collinear) O-Cu-O pairs carry no torsion
        arm = bond_angles(pos[quads[:, 0]], pos[cu], pos[quads[:, 2]])
        quads = quads[arm < 180.0 - TRANS_TOL]
    if len(quads) == 0:
        raise ValueError("surrogate targets need O-Cu-O-H dihedrals")
    tors = np.radians(dihedral_angles(*(pos[quads[:, n]] for n in range(4))))
    mu = 0.8 + 0.4 * np.mean(np.sin(ang) ** 2) + 0.2 * (d_cuo.mean() - CU_O_BASE)
    sigma = 0.15 + 0.05 * np.std(np.cos(ang))
    amp = 0.05 * np.mean(np.sin(tors) ** 2) + 0.01 * len(oxy)
    return GaussianPeak(float(mu), float(sigma), float(amp))


def generate_synthetic(cfg: SyntheticConfig) -> list[Record]:
    """Each record draws from its own generator seeded by (seed, index)."""
    coords = sorted(cfg.coordination_probs)
    probs = np.array([cfg.coordination_probs[c] for c in coords])
    records = []
    for idx in range(cfg.n_samples):
        rng = np.random.default_rng([cfg.seed, idx])
        n_w = int(rng.choice(coords, p=probs))
        for _ in range(cfg.max_retries):
            try:
                s = _complex(n_w, cfg, rng)
            except StructureError:
                continue
            if _valid_complex(s):
                break
        else:
            raise RuntimeError(f"sample {idx}: no valid geometry after {cfg.max_retries} tries")
        rid = f"syn{idx:06d}"
        s.label = f"{rid} n_water={n_w}"
        records.append(Record(s, surrogate_targets(s), rid))
    return records


def peroxide_chain(tau: float, rng: np.random.Generator | None = None) -> AtomicStructure:
    """H-O-O-H with O-O 1.45 Å, O-H 0.97 Å, H-O-O 100 deg and torsion ``tau``."""
    t = np.radians(100.0)
    o1, o2 = np.zeros(3), np.array([1.45, 0.0, 0.0])
    h1 = o1 + O_H * np.array([np.cos(t), np.sin(t), 0.0])
    h2_eclipsed = np.array([-np.cos(t), np.sin(t), 0.0])
    h2 = o2 + O_H * (axis_rotation([1.0, 0, 0], tau) @ h2_eclipsed)
    pos = np.array([h1, o1, o2, h2])
    if rng is not None:
        pos = pos @ random_rotation(rng).T + rng.normal(size=3)
    return AtomicStructure(["H", "O", "O", "H"], pos)


def make_expressiveness_set(n: int, seed: int) -> list[Record]:
    """H-O-O-H chains differing only in torsion; mu target = cos(tau) + 2."""
    if n < 2:
        raise ValueError("need at least two records")
    rng = np.random.default_rng(seed)
    taus = rng.uniform(0.0, 360.0, size=n)
    out = []
    for i, tau in enumerate(taus):
        s = peroxide_chain(tau, rng)
        s.label = f"hooh{i:06d} tau={tau:.6f}"
        out.append(Record(s, GaussianPeak(float(np.cos(np.radians(tau)) + 2.0), 0.2, 0.05), f"hooh{i:06d}"))
    return out


def split(records: list, fraction: float = 0.9, seed: int = 0) -> tuple[list, list]:
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    n = len(records)
    n_train = int(round(fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} records at {fraction} leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    return [records[i] for i in order[:n_train]], [records[i] for i in order[n_train:]]


def save_dataset(records: list[Record], directory) -> Path:
    """Write ``<dir>/xyz/<id>.xyz`` files plus ``<dir>/manifest.csv``."""
    root = Path(directory)
    (root / "xyz").mkdir(parents=True, exist_ok=True)
    manifest = root / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "xyz_path", "mu", "sigma", "A"])
        for r in records:
            rel = os.path.join("xyz", f"{r.id}.xyz")
            (root / rel).write_text(write_xyz(r.structure))
            w.writerow([r.id, rel, repr(r.target.mu), repr(r.target.sigma), repr(r.target.A)])
    return manifest


def load_dataset(path) -> list[Record]:
    """Load from a dataset directory or its manifest CSV."""
    path = Path(path)
    manifest = path / "manifest.csv" if path.is_dir() else path
    root = manifest.parent
    records = []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            xyz = Path(row["xyz_path"])
            s = read_xyz(xyz if xyz.is_absolute() else root / xyz)
            peak = GaussianPeak(float(row["mu"]), float(row["sigma"]), float(row["A"]))
            records.append(Record(s, peak, row["id"]))
    if not records:
        raise ValueError(f"dataset {manifest} is empty")
    return records
