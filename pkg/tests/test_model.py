import numpy as np
import pytest
import reference_model as ref
from conftest import small_state
from helpers import check_grads

from alignnd import nn
from alignnd.data import peroxide_chain
from alignnd.geometry import random_rotation
from alignnd.graphs import PEROXIDE_RULES, build_bundle
from alignnd.model import (
    Adjacency,
    GaussianPeak,
    ModelConfig,
    ModelState,
    collate,
    edge_gated_conv,
    featurize,
    forward,
    forward_batch,
    forward_interpretable,
    init_model,
    parameter_shapes,
    with_representation,
)


def _conv_state(rng, D, random_affine=True):
    cfg = ModelConfig(L=1, D=D, representation="gmin")
    st = init_model(cfg, 3)
    if random_affine:
        for k in ("ln_node.gamma", "ln_node.beta", "ln_edge.gamma", "ln_edge.beta"):
            st.params[f"atom.0.{k}"].value = rng.normal(size=D)
    return st


def test_config_defaults():
    c = ModelConfig()
    assert (c.L, c.D, c.c_d, c.c_alpha, c.eps_gate) == (6, 64, 6.0, 2.0, 1e-9)
    with pytest.raises(ValueError):
        ModelConfig(L=0)
    with pytest.raises(ValueError):
        ModelConfig(representation="schnet")
    assert ModelConfig.from_dict(c.to_dict()) == c


def test_gaussian_peak_invariants():
    with pytest.raises(ValueError):
        GaussianPeak(1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        GaussianPeak(1.0, 0.1, -0.1)
    with pytest.raises(ValueError):
        GaussianPeak(float("nan"), 0.1, 0.1)


def test_init_determinism():
    cfg = ModelConfig(L=2, D=8)
    a, b, c = init_model(cfg, 5), init_model(cfg, 5), init_model(cfg, 6)
    for k in a.params:
        assert np.array_equal(a[k].value, b[k].value)
    assert any(not np.array_equal(a[k].value, c[k].value) for k in a.params if "ln_" not in k)
    for k, p in a.params.items():
        if k.endswith("gamma"):
            assert np.all(p.value == 1)
        elif k.endswith("beta"):
            assert np.all(p.value == 0)
        elif k.startswith("atom.") and k.endswith("W_g"):
            assert np.abs(p.value).max() <= np.sqrt(1 / 24)


def test_parameter_census():
    D, L = 64, 6
    conv = 2 * D * D + 3 * D * D + 4 * D
    expected = 3 * D + 2 * L * conv + (64 * D + 64) + (3 * 64 + 3)
    st = init_model(ModelConfig(L=L, D=D, representation="alignn-d"), 0)
    assert st.n_parameters() == expected
    gmin = init_model(ModelConfig(L=L, D=D, representation="gmin"), 0)
    assert gmin.n_parameters() == expected - L * conv
    assert not any(k.startswith("line.") for k in parameter_shapes(gmin.config))


@pytest.mark.parametrize("D", [4, 8])
def test_conv_matches_reference(rng, D):
    st = _conv_state(rng, D)
    ends = np.array([[0, 1], [1, 2], [1, 3], [2, 3], [0, 4]])
    N = 6  # node 5 is isolated: empty neighbourhood sums to zero
    h0, e0 = rng.normal(size=(N, D)), rng.normal(size=(len(ends), D))
    tape = nn.Tape()
    h, e = edge_gated_conv(tape.const(h0), tape.const(e0), Adjacency.from_ends(ends, N), tape, st, "atom.0", 1e-9)
    prm = {k[len("atom.0."):]: p.value for k, p in st.params.items() if k.startswith("atom.0.")}
    h_ref, e_ref = ref.conv(h0, e0, ends, prm, 1e-9)
    assert np.max(np.abs(h.value - h_ref)) <= 1e-12
    assert np.max(np.abs(e.value - e_ref)) <= 1e-12


def test_conv_residual_identity(rng):
    D = 8
    st = _conv_state(rng, D, random_affine=False)
    for k in ("W_s", "W_d", "W_g"):
        st.params[f"atom.0.{k}"].value[:] = 0.0
    ends = np.array([[0, 1], [1, 2]])
    h0, e0 = rng.normal(size=(3, D)), rng.normal(size=(2, D))
    tape = nn.Tape()
    h, e = edge_gated_conv(tape.const(h0), tape.const(e0), Adjacency.from_ends(ends, 3), tape, st, "atom.0", 1e-9)
    assert np.array_equal(h.value, h0) and np.array_equal(e.value, e0)


@pytest.mark.parametrize("rep", ["gmin", "gmax", "alignn", "alignn-d"])
def test_forward_matches_reference(complexes, rep):
    st = small_state(rep, D=8, L=2, seed=11)
    b = build_bundle(complexes[4], rep)
    got = forward(b, st).as_array()
    assert np.max(np.abs(got - ref.forward(b, st))) <= 1e-12
    assert got.shape == (3,) and got[1] > 0 and got[2] >= 0


def test_interpretable_matches_reference(complexes):
    st = small_state("alignn-d", D=8, L=2, seed=4, head="interpretable")
    b = build_bundle(complexes[5], "alignn-d")
    rep = forward_interpretable(b, st)
    expected = ref.interpretable_components(b, st)
    assert np.max(np.abs(rep.values - expected)) <= 1e-12
    assert abs(rep.total - rep.values.sum()) <= 1e-10
    assert np.all(rep.values > 0)
    counts = {k: rep.kinds.count(k) for k in set(rep.kinds)}
    assert counts == {"atom": 16, "bond": 15, "bond_angle": 25, "dihedral": 40}
    batch_total = forward_batch(collate([featurize(b, st.config)]), st).value[0, 0]
    assert batch_total == pytest.approx(rep.total, abs=1e-12)


def test_interpretable_per_kind_maps(complexes):
    st = small_state("alignn-d", D=8, L=1, head="interpretable", per_kind_maps=True)
    assert {"interp.dihedral.w", "interp.bond_angle.w"} <= set(st.params)
    rep = forward_interpretable(build_bundle(complexes[4], "alignn-d"), st)
    assert abs(rep.total - rep.values.sum()) <= 1e-10 and np.all(rep.values > 0)


def test_heads_are_exclusive(complexes):
    b = build_bundle(complexes[4], "alignn-d")
    with pytest.raises(ValueError):
        forward_interpretable(b, small_state())
    with pytest.raises(ValueError):
        forward(b, small_state(head="interpretable"))


def test_tag_mismatch(complexes):
    with pytest.raises(ValueError):
        forward(build_bundle(complexes[4], "alignn"), small_state("alignn-d"))


def test_rigid_and_permutation_invariance(complexes, rng):
    st = small_state("alignn-d", D=16, L=2, seed=2)
    s = complexes[5]
    base = forward(build_bundle(s, "alignn-d"), st).as_array()
    for _ in range(5):
        moved = s.transformed(random_rotation(rng), rng.normal(size=3) * 5)
        assert np.max(np.abs(forward(build_bundle(moved, "alignn-d"), st).as_array() - base)) <= 1e-9
        perm = s.permuted(rng.permutation(len(s)))
        assert np.max(np.abs(forward(build_bundle(perm, "alignn-d"), st).as_array() - base)) <= 1e-6


def test_dihedral_expressiveness():
    a, b = peroxide_chain(60.0), peroxide_chain(120.0)
    st = small_state("alignn", D=16, L=2)
    pa = forward(build_bundle(a, "alignn", PEROXIDE_RULES), st).as_array()
    pb = forward(build_bundle(b, "alignn", PEROXIDE_RULES), st).as_array()
    assert np.max(np.abs(pa - pb)) <= 1e-9
    separated = 0
    for seed in range(5):
        st = small_state("alignn-d", D=16, L=2, seed=seed)
        pa = forward(build_bundle(a, "alignn-d", PEROXIDE_RULES), st).as_array()
        pb = forward(build_bundle(b, "alignn-d", PEROXIDE_RULES), st).as_array()
        separated += np.max(np.abs(pa - pb)) > 0
    assert separated == 5


def test_angles_reach_atoms_within_one_layer():
    # same bond lengths, different H-O-O angle: one layer must already see it.
    # Gates are normalised per node, so the O-O bond needs two distinguishable
    # angle neighbours: the two O-H bonds get different lengths.
    from alignnd.geometry import AtomicStructure

    def chain(theta):
        t = np.radians(theta)
        far = np.radians(110.0)
        return AtomicStructure(
            ["H", "O", "O", "H"],
            [
                [0.97 * np.cos(t), 0.97 * np.sin(t), 0],
                [0, 0, 0],
                [1.45, 0, 0],
                [1.45 - 1.02 * np.cos(far), -1.02 * np.sin(far), 0],
            ],
        )

    st = small_state("alignn", D=8, L=1, seed=1)
    pa = forward(build_bundle(chain(100.0), "alignn", PEROXIDE_RULES), st).as_array()
    pb = forward(build_bundle(chain(120.0), "alignn", PEROXIDE_RULES), st).as_array()
    assert np.max(np.abs(pa - pb)) > 1e-6
    st2 = init_model(with_representation(st.config, "gmin"), 1)
    pa = forward(build_bundle(chain(100.0), "gmin", PEROXIDE_RULES), st2).as_array()
    pb = forward(build_bundle(chain(120.0), "gmin", PEROXIDE_RULES), st2).as_array()
    assert np.max(np.abs(pa - pb)) <= 1e-12


def test_unused_element_row_has_zero_gradient():
    st = small_state("alignn-d", D=8, L=1)
    b = build_bundle(peroxide_chain(70.0), "alignn-d", PEROXIDE_RULES)
    st.zero_grad()
    tape = nn.Tape()
    out = forward_batch(collate([featurize(b, st.config)]), st, tape)
    tape.backward(nn.total(out))
    emb = st.params["embedding"].grad
    assert np.all(emb[2] == 0) and np.any(emb[0] != 0) and np.any(emb[1] != 0)


@pytest.mark.parametrize("rep, head", [("alignn-d", "peak"), ("gmax", "peak"), ("alignn-d", "interpretable")])
def test_model_gradients(complexes, rep, head):
    st = small_state(rep, D=8, L=2, seed=7, head=head)
    batch = collate([featurize(build_bundle(complexes[4], rep), st.config)])
    # entries below 1e-4 are compared absolutely: finite differences are noise there
    loss = lambda tp: nn.total(nn.square(forward_batch(batch, st, tp)))  # noqa: E731
    assert check_grads(st.parameters(), loss, floor=1e-4) <= 1e-4


def test_checkpoint_round_trip(complexes, tmp_path):
    st = small_state("alignn-d", D=8, L=2, seed=9)
    path = tmp_path / "model.ckpt"
    st.save(path)
    back = ModelState.load(path)
    assert back.config == st.config
    for k in st.params:
        assert np.max(np.abs(back[k].value - st[k].value)) <= 1e-12
    b = build_bundle(complexes[6], "alignn-d")
    assert forward(b, back) == forward(b, st)


def test_batched_equals_single(complexes):
    st = small_state("alignn-d", D=8, L=2, seed=1)
    bundles = [build_bundle(complexes[n], "alignn-d") for n in (4, 5, 6)]
    out = forward_batch(collate([featurize(b, st.config) for b in bundles]), st).value
    for row, b in zip(out, bundles):
        assert np.max(np.abs(row - forward(b, st).as_array())) <= 1e-12
