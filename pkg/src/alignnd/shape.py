"""Continuous shape measures of the copper coordination shell.

``S = 100 * min sum_i |q_i - s R p_pi(i)|^2 / sum_i |q_i - q_bar|^2`` over
permutations ``pi``, proper rotations ``R`` and scale ``s``.  For a fixed
permutation the rotation comes from the Kabsch construction and the scale has
a closed form, so with both point sets centred

    S = 100 * (1 - t^2 / (|q|^2 |p|^2)),   t = max_R sum_i q_i . R p_pi(i),

which is bounded in [0, 100].
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import AtomicStructure
from .graphs import CU_O_CUTOFF


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceShape:
    code: str
    description: str
    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) < 2:
            raise ShapeError(f"{self.code}: vertices must be an (N, 3) array with N >= 2")
        v = v - v.mean(axis=0)
        rms = np.sqrt((v**2).sum(axis=1).mean())
        if rms < 1e-12:
            raise ShapeError(f"{self.code}: all vertices coincide")
        object.__setattr__(self, "vertices", v / rms)

    @property
    def n(self) -> int:
        return len(self.vertices)


def parse_shapes(text: str) -> list[ReferenceShape]:
    """Parse ``shape <code> [description]`` blocks of ``x y z`` vertex lines."""
    shapes, code, desc, verts = [], None, "", []

    def flush():
        if code is not None:
            if not verts:
                raise ShapeError(f"shape {code} has no vertices")
            shapes.append(ReferenceShape(code, desc, np.array(verts)))

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("shape"):
            flush()
            parts = line.split(None, 2)
            if len(parts) < 2:
                raise ShapeError(f"line {lineno}: shape without a code")
            code, desc, verts = parts[1], parts[2] if len(parts) > 2 else "", []
            continue
        if code is None:
            raise ShapeError(f"line {lineno}: vertex before any 'shape' header")
        try:
            xyz = [float(t) for t in line.split()]
        except ValueError:
            raise ShapeError(f"line {lineno}: bad vertex {raw!r}") from None
        if len(xyz) != 3:
            raise ShapeError(f"line {lineno}: expected three coordinates")
        verts.append(xyz)
    flush()
    return shapes


def load_shapes(path) -> list[ReferenceShape]:
    return parse_shapes(Path(path).read_text())


@lru_cache(maxsize=None)
def default_library(n: int) -> tuple[ReferenceShape, ...]:
    """Built-in reference polyhedra for fourfold and fivefold shells."""
    if n not in (4, 5):
        raise ShapeError(f"no reference library for {n} vertices")
    text = resources.files("alignnd").joinpath(f"reference_shapes/cn{n}.txt").read_text()
    return tuple(parse_shapes(text))


def _centred(x: np.ndarray) -> np.ndarray:
    return x - x.mean(axis=0)


@dataclass(frozen=True)
class CsmResult:
    shape: str
    S: float
    permutation: tuple[int, ...]
    # proper rotation taking the permuted reference onto the centred points
    rotation: np.ndarray


def _kabsch(q: np.ndarray, p: np.ndarray) -> tuple[float, np.ndarray]:
    """max over proper rotations R of sum_i q_i . R p_i, and the maximiser."""
    u, s, vt = np.linalg.svd(p.T @ q)
    d = 1.0 if np.linalg.det(u @ vt) >= 0 else -1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return float(s[0] + s[1] + d * s[2]), rot


def csm(points, reference: ReferenceShape) -> CsmResult:
    """Continuous shape measure of ``points`` against ``reference``.

    All ``N!`` vertex assignments are tried, which is cheap for N <= 6.
    """
    q = np.asarray(points, dtype=float)
    if q.ndim != 2 or q.shape[1] != 3:
        raise ShapeError("points must be an (N, 3) array")
    if len(q) != reference.n:
        raise ShapeError(f"{len(q)} points cannot match {reference.n}-vertex shape {reference.code}")
    if not np.all(np.isfinite(q)):
        raise ShapeError("non-finite coordinates")
    q = _centred(q)
    qq = float((q**2).sum())
    if qq < 1e-20:
        raise ShapeError("points coincide")
    p = reference.vertices
    pp = float((p**2).sum())
    best, best_perm, best_rot = -np.inf, None, None
    for perm in itertools.permutations(range(reference.n)):
        t, rot = _kabsch(q, p[list(perm)])
        if t > best:
            best, best_perm, best_rot = t, perm, rot
    s = 100.0 * (1.0 - best * best / (qq * pp))
    return CsmResult(reference.code, min(max(s, 0.0), 100.0), best_perm, best_rot)


def coordination_shell(structure: AtomicStructure, cutoff: float = CU_O_CUTOFF) -> np.ndarray:
    """Positions of the oxygens bonded to the single copper atom."""
    cu = structure.indices_of("Cu")
    if len(cu) != 1:
        raise ShapeError(f"expected one Cu atom, found {len(cu)}")
    o = structure.indices_of("O")
    pos = structure.positions
    d = np.linalg.norm(pos[o] - pos[cu[0]], axis=1)
    return pos[np.asarray(o)[d <= cutoff]]


def _library_for(points, library):
    pts = np.asarray(points, dtype=float)
    lib = default_library(len(pts)) if library is None else library
    lib = [ref for ref in lib if ref.n == len(pts)]
    if not lib:
        raise ShapeError(f"no reference shape with {len(pts)} vertices")
    return pts, lib


def shape_measures(points, library=None) -> list[CsmResult]:
    pts, lib = _library_for(points, library)
    return [csm(pts, ref) for ref in lib]


def closest_shape(points, library=None) -> CsmResult:
    """Reference with the smallest shape measure; ties go to the earlier entry."""
    return min(shape_measures(points, library), key=lambda r: r.S)
