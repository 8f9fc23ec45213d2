import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from alignnd.data import ideal_complex
from alignnd.geometry import AtomicStructure, random_rotation
from alignnd.shape import (
    ReferenceShape,
    ShapeError,
    closest_shape,
    coordination_shell,
    csm,
    default_library,
    parse_shapes,
    shape_measures,
)

LIBRARY = default_library(4) + default_library(5)


def _disguise(v, rng):
    perm = rng.permutation(len(v))
    return rng.uniform(0.2, 5.0) * v[perm] @ random_rotation(rng).T + rng.normal(size=3) * 4


def test_libraries_present():
    assert [r.code for r in default_library(4)] == ["SP-4", "T-4", "SS-4", "vTBPY-4"]
    assert [r.code for r in default_library(5)] == ["PP-5", "vOC-5", "TBPY-5", "SPY-5", "JTBPY-5"]
    for ref in LIBRARY:
        assert np.allclose(ref.vertices.mean(axis=0), 0, atol=1e-12)
        assert np.sqrt((ref.vertices**2).sum(axis=1).mean()) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ShapeError):
        default_library(7)


@pytest.mark.parametrize("ref", LIBRARY, ids=lambda r: r.code)
def test_self_measure_is_zero(ref, rng):
    assert csm(ref.vertices, ref).S <= 1e-9
    for _ in range(10):
        assert csm(_disguise(ref.vertices, rng), ref).S <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([4, 5]))
def test_measure_is_bounded(seed, n):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    for r in shape_measures(pts):
        assert 0.0 <= r.S <= 100.0
        # invariant under similarity transforms of the input
        assert csm(_disguise(pts, rng), next(x for x in default_library(n) if x.code == r.shape)).S == pytest.approx(
            r.S, abs=1e-8
        )


def _brute_force(q, p, starts=12, seed=0):
    """min over permutations, rotations and scale of |q - s R p|^2 / |q|^2, times 100.

    Rotations are searched numerically from many random starts, independently
    of any closed-form alignment.
    """
    q = q - q.mean(axis=0)
    p = p - p.mean(axis=0)
    rng = np.random.default_rng(seed)
    best = np.inf

    def loss(rv, pp):
        rp = pp @ Rotation.from_rotvec(rv).as_matrix().T
        s = max((q * rp).sum() / (rp * rp).sum(), 0.0)
        return ((q - s * rp) ** 2).sum()

    for perm in itertools.permutations(range(len(p))):
        pp = p[list(perm)]
        for _ in range(starts):
            res = minimize(loss, Rotation.random(random_state=rng).as_rotvec(), args=(pp,), method="Nelder-Mead",
                           options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
            best = min(best, res.fun)
    return 100.0 * best / (q * q).sum()


def test_square_against_tetrahedron_matches_brute_force():
    sq, tet = default_library(4)[0], default_library(4)[1]
    oracle = _brute_force(sq.vertices, tet.vertices, starts=4)
    assert abs(csm(sq.vertices, tet).S - oracle) <= 0.1
    assert csm(sq.vertices, tet).S == pytest.approx(100.0 / 3.0, abs=1e-9)
    assert csm(tet.vertices, sq).S == pytest.approx(100.0 / 3.0, abs=1e-9)


def test_random_points_match_brute_force(rng):
    pts = rng.normal(size=(4, 3))
    for ref in default_library(4):
        assert abs(csm(pts, ref).S - _brute_force(pts, ref.vertices, starts=3)) <= 0.1


def test_alignment_is_returned(rng):
    ref = default_library(5)[3]
    pts = ref.vertices @ random_rotation(rng).T
    r = csm(pts, ref)
    aligned = ref.vertices[list(r.permutation)] @ r.rotation.T
    assert np.allclose(aligned, pts, atol=1e-9)
    assert np.linalg.det(r.rotation) == pytest.approx(1.0)


def test_perturbed_pyramid_is_closest_to_pyramid(rng):
    spy = next(r for r in default_library(5) if r.code == "SPY-5")
    pts = _disguise(spy.vertices + rng.normal(scale=0.03, size=spy.vertices.shape), rng)
    best = closest_shape(pts)
    assert best.shape == "SPY-5" and best.S < 1.0


def test_complex_shells():
    assert closest_shape(coordination_shell(ideal_complex(4))).shape == "SP-4"
    assert closest_shape(coordination_shell(ideal_complex(5))).S <= 1e-9
    with pytest.raises(ShapeError):
        coordination_shell(AtomicStructure(["O", "O"], [[0, 0, 0], [2, 0, 0]]))


def test_size_mismatch_and_degenerate():
    ref = default_library(4)[0]
    with pytest.raises(ShapeError):
        csm(np.zeros((5, 3)), ref)
    with pytest.raises(ShapeError):
        csm(np.ones((4, 3)), ref)
    with pytest.raises(ShapeError):
        shape_measures(np.random.default_rng(0).normal(size=(6, 3)))


def test_shape_file_format():
    text = """
    # comment line
    shape LIN-2 segment   # trailing comment
    0 0 1
    0 0 -1

    shape TRI-3 triangle
    1 0 0
    -0.5 0.8660254037844386 0
    -0.5 -0.8660254037844386 0
    """
    shapes = parse_shapes(text)
    assert [(s.code, s.description, s.n) for s in shapes] == [("LIN-2", "segment", 2), ("TRI-3", "triangle", 3)]
    tri = shapes[1]
    assert csm(3 * tri.vertices[[2, 0, 1]], tri).S <= 1e-9
    for bad in ("0 0 1\n", "shape\n0 0 0\n", "shape X\n0 0\n", "shape X\n", "shape X\n1 a 2\n"):
        with pytest.raises(ShapeError):
            parse_shapes(bad)
    with pytest.raises(ShapeError):
        ReferenceShape("P", "", np.zeros((3, 3)))
