"""Atomic structures, XYZ I/O and bond/torsion angle math."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

ATOMIC_NUMBERS = {"H": 1, "O": 8, "Cu": 29}
SYMBOLS = {z: s for s, z in ATOMIC_NUMBERS.items()}

MIN_PAIR_DISTANCE = 0.3  # Å
_ARM_EPS = 1e-8


class StructureError(ValueError):
    """Malformed structure or XYZ text."""


class DegenerateGeometryError(ValueError):
    """An angle is undefined for the given points."""


@dataclass(frozen=True)
class Element:
    symbol: str

    def __post_init__(self):
        if self.symbol not in ATOMIC_NUMBERS:
            raise StructureError(f"unsupported element {self.symbol!r}")

    @property
    def z(self) -> int:
        return ATOMIC_NUMBERS[self.symbol]

    @classmethod
    def from_z(cls, z: int) -> "Element":
        try:
            return cls(SYMBOLS[z])
        except KeyError:
            raise StructureError(f"unsupported atomic number {z}") from None


@dataclass
class AtomicStructure:
    """Ordered atoms with Cartesian positions in Å."""

    symbols: list[str]
    positions: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.symbols = [Element(s).symbol for s in self.symbols]
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if len(self.symbols) != len(self.positions):
            raise StructureError(
                f"{len(self.symbols)} symbols but {len(self.positions)} positions"
            )
        if len(self.symbols) < 2:
            raise StructureError("a structure needs at least 2 atoms")
        if not np.all(np.isfinite(self.positions)):
            raise StructureError("non-finite coordinate")
        d = self.distance_matrix()
        np.fill_diagonal(d, np.inf)
        if d.min() <= MIN_PAIR_DISTANCE:
            i, j = np.unravel_index(np.argmin(d), d.shape)
            raise StructureError(
                f"atoms {i} and {j} are {d[i, j]:.3f} Å apart (floor {MIN_PAIR_DISTANCE} Å)"
            )

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def atomic_numbers(self) -> np.ndarray:
        return np.array([ATOMIC_NUMBERS[s] for s in self.symbols])

    def distance_matrix(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.sqrt((diff**2).sum(-1))

    def indices_of(self, symbol: str) -> list[int]:
        return [i for i, s in enumerate(self.symbols) if s == symbol]

    def transformed(self, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "AtomicStructure":
        pos = self.positions @ np.asarray(rotation).T + np.asarray(translation)
        return AtomicStructure(list(self.symbols), pos, self.label)

    def permuted(self, order: Iterable[int]) -> "AtomicStructure":
        order = list(order)
        return AtomicStructure(
            [self.symbols[i] for i in order], self.positions[order], self.label
        )

    def allclose(self, other: "AtomicStructure", atol: float = 1e-6) -> bool:
        return self.symbols == other.symbols and np.allclose(
            self.positions, other.positions, rtol=0.0, atol=atol
        )


def parse_xyz(text: str) -> AtomicStructure:
    lines = text.splitlines()
    if len(lines) < 2:
        raise StructureError("XYZ text needs a count line and a comment line")
    try:
        count = int(lines[0].split()[0])
    except (ValueError, IndexError):
        raise StructureError(f"bad atom count line: {lines[0]!r}") from None
    label = lines[1].strip()
    body = [ln for ln in lines[2:] if ln.strip()]
    if len(body) != count:
        raise StructureError(f"XYZ declares {count} atoms but lists {len(body)}")
    symbols, coords = [], []
    for n, ln in enumerate(body, start=3):
        parts = ln.split()
        if len(parts) < 4:
            raise StructureError(f"line {n}: expected 'symbol x y z'")
        symbols.append(parts[0])
        try:
            coords.append([float(v) for v in parts[1:4]])
        except ValueError:
            raise StructureError(f"line {n}: non-numeric coordinate in {ln!r}") from None
    return AtomicStructure(symbols, np.array(coords), label)


def write_xyz(s: AtomicStructure) -> str:
    out = [str(len(s)), s.label.replace("\n", " ")]
    for sym, (x, y, z) in zip(s.symbols, s.positions):
        out.append(f"{sym:<2s} {x: .10f} {y: .10f} {z: .10f}")
    return "\n".join(out) + "\n"


def read_xyz(path) -> AtomicStructure:
    with open(path) as fh:
        return parse_xyz(fh.read())


def bond_angles(a, center, b) -> np.ndarray:
    """Vectorised a-center-b angles in degrees for (n, 3) point arrays."""
    u = np.atleast_2d(np.asarray(a, float) - np.asarray(center, float))
    v = np.atleast_2d(np.asarray(b, float) - np.asarray(center, float))
    if (np.linalg.norm(u, axis=-1) <= _ARM_EPS).any() or (
        np.linalg.norm(v, axis=-1) <= _ARM_EPS
    ).any():
        raise DegenerateGeometryError("zero-length bond-angle arm")
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    return np.degrees(np.arctan2(cross, (u * v).sum(-1)))


def bond_angle(a, center, b) -> float:
    """Angle a-center-b in degrees, via atan2(|u x v|, u . v)."""
    return float(bond_angles(a, center, b)[0])


def dihedral_angles(k, i, j, l) -> np.ndarray:
    """Vectorised torsions k-i-j-l about i->j, degrees in [0, 360)."""
    k, i, j, l = (np.atleast_2d(np.asarray(p, float)) for p in (k, i, j, l))
    b1, b2, b3 = i - k, j - i, l - j
    nb1, nb2, nb3 = (np.linalg.norm(b, axis=-1) for b in (b1, b2, b3))
    if min(nb1.min(), nb2.min(), nb3.min()) <= _ARM_EPS:
        raise DegenerateGeometryError("zero-length bond in dihedral")
    n1 = np.cross(b1, b2)
    n2 = np.cross(b2, b3)
    # |b x b2| relative to the arm lengths; tiny means the arm lies on the axis
    if (np.linalg.norm(n1, axis=-1) <= 1e-10 * nb1 * nb2).any() or (
        np.linalg.norm(n2, axis=-1) <= 1e-10 * nb3 * nb2
    ).any():
        raise DegenerateGeometryError("dihedral arm parallel to the central bond")
    y = ((b2 / nb2[:, None]) * np.cross(n1, n2)).sum(-1)
    x = (n1 * n2).sum(-1)
    deg = np.degrees(np.arctan2(y, x)) % 360.0
    deg[deg >= 360.0] = 0.0
    return deg


def dihedral_angle(k, i, j, l) -> float:
    """Torsion of k-i-j-l about the axis i->j in degrees, in [0, 360).

    The angle grows when l is rotated clockwise as seen looking from i toward j
    (a right-handed rotation about i->j).
    """
    return float(dihedral_angles(k, i, j, l)[0])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform proper rotation matrix."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def axis_rotation(axis, angle_deg: float) -> np.ndarray:
    """Right-handed rotation about ``axis`` by ``angle_deg`` (Rodrigues)."""
    a = np.asarray(axis, float)
    a = a / np.linalg.norm(a)
    t = np.radians(angle_deg)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(t) * K + (1 - np.cos(t)) * K @ K
