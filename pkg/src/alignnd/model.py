"""Edge-gated graph convolution stack, Gaussian-peak head and interpretable head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .encoding import EncoderConfig, atom_rows, encode_bond, encode_bond_angles, encode_dihedrals
from .graphs import REPRESENTATIONS, GraphBundle
from .nn import Node, Parameter, Segments, Tape

SIGMA_FLOOR = 1e-3
HEAD_HIDDEN = 64
N_ELEMENTS = 3
COMPONENT_KINDS = ("atom", "bond", "bond_angle", "dihedral")


@dataclass(frozen=True)
class ModelConfig:
    L: int = 6
    D: int = 64
    c_d: float = 6.0
    c_alpha: float = 2.0
    eps_gate: float = 1e-9
    representation: str = "alignn-d"
    head: str = "peak"  # "peak" -> (mu, sigma, A); "interpretable" -> scalar sum
    per_kind_maps: bool = False
    bond_angle_mode: str = "cos"

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.head not in ("peak", "interpretable"):
            raise ValueError(f"unknown head {self.head!r}")
        self.encoder  # validates D and cutoffs

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.D, self.c_d, self.c_alpha, self.bond_angle_mode)

    @property
    def has_line_graph(self) -> bool:
        return self.representation in ("alignn", "alignn-d")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kinds = {f: type(v) for f, v in asdict(cls()).items()}
        out = {}
        for k, v in d.items():
            if k not in kinds:
                raise ValueError(f"unknown model config key {k!r}")
            if kinds[k] is bool and isinstance(v, str):
                v = v.lower() in ("1", "true", "yes")
            out[k] = kinds[k](v)
        return cls(**out)


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, Parameter] = field(default_factory=dict)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def copy(self) -> "ModelState":
        return ModelState(
            self.config, {k: Parameter(k, p.value.copy()) for k, p in self.params.items()}
        )

    def save(self, path) -> None:
        header = {f"config.{k}": v for k, v in self.config.to_dict().items()}
        nn.save_parameters(self.parameters(), path, header)

    @classmethod
    def load(cls, path) -> "ModelState":
        arrays, header = nn.load_parameters(path)
        cfg = ModelConfig.from_dict(
            {k[len("config.") :]: v for k, v in header.items() if k.startswith("config.")}
        )
        state = init_model(cfg, seed=0)
        if set(arrays) != set(state.params):
            raise ValueError("checkpoint parameters do not match the configured model")
        for k, arr in arrays.items():
            if arr.shape != state.params[k].shape:
                raise ValueError(f"checkpoint shape mismatch for {k}")
            state.params[k].value = arr
        return state


@dataclass(frozen=True)
class GaussianPeak:
    mu: float
    sigma: float
    A: float

    def __post_init__(self):
        if not all(np.isfinite([self.mu, self.sigma, self.A])):
            raise ValueError("non-finite Gaussian peak")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.A < 0:
            raise ValueError("amplitude must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.sigma, self.A])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (
            self.A
            / (self.sigma * np.sqrt(2 * np.pi))
            * np.exp(-0.5 * ((x - self.mu) / self.sigma) ** 2)
        )


@dataclass
class ContributionReport:
    kinds: list[str]
    indices: list[str]
    values: np.ndarray
    total: float

    def __iter__(self):
        return iter(zip(self.kinds, self.indices, self.values))

    def by_kind(self, kind: str) -> np.ndarray:
        return np.array([v for k, _, v in self if k == kind])


# ------------------------------------------------------------------ params


def _conv_shapes(D: int) -> dict[str, tuple]:
    return {
        "W_s": (D, D),
        "W_d": (D, D),
        "W_g": (D, 3 * D),
        "ln_node.gamma": (D,),
        "ln_node.beta": (D,),
        "ln_edge.gamma": (D,),
        "ln_edge.beta": (D,),
    }


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    D = cfg.D
    shapes = {"embedding": (N_ELEMENTS, D)}
    stacks = ["atom", "line"] if cfg.has_line_graph else ["atom"]
    for l in range(cfg.L):
        for stack in stacks:
            for k, s in _conv_shapes(D).items():
                shapes[f"{stack}.{l}.{k}"] = s
    if cfg.head == "peak":
        shapes.update(
            {
                "head.W1": (HEAD_HIDDEN, D),
                "head.b1": (HEAD_HIDDEN,),
                "head.W2": (3, HEAD_HIDDEN),
                "head.b2": (3,),
            }
        )
    else:
        kinds = _scalar_map_kinds(cfg) if cfg.per_kind_maps else ["shared"]
        for k in kinds:
            shapes[f"interp.{k}.w"] = (1, D)
            shapes[f"interp.{k}.b"] = (1,)
    return shapes


def _scalar_map_kinds(cfg: ModelConfig) -> list[str]:
    kinds = ["atom", "bond"]
    if cfg.has_line_graph:
        kinds.append("bond_angle")
    if cfg.representation == "alignn-d":
        kinds.append("dihedral")
    return kinds


def _fan_in(name: str, shape: tuple, cfg: ModelConfig) -> int:
    if name == "embedding":
        return 1  # one-hot input with a single active entry
    if name.endswith("b1"):
        return cfg.D
    if name.endswith("b2"):
        return HEAD_HIDDEN
    if name.startswith("interp") and name.endswith(".b"):
        return cfg.D
    return shape[-1]


def init_model(cfg: ModelConfig, seed: int) -> ModelState:
    """Uniform(+-sqrt(1/fan_in)) weights; LayerNorm gamma=1, beta=0."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".gamma"):
            value = np.ones(shape)
        elif name.endswith(".beta"):
            value = np.zeros(shape)
        else:
            bound = np.sqrt(1.0 / _fan_in(name, shape, cfg))
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = Parameter(name, value)
    return ModelState(cfg, params)


# ---------------------------------------------------------------- features


@dataclass
class Features:
    """Encoded inputs of one bundle."""

    atom_rows: np.ndarray
    bond_ends: np.ndarray
    bond_feat: np.ndarray
    line_ends: np.ndarray | None = None
    line_feat: np.ndarray | None = None
    line_kind: np.ndarray | None = None  # 0 bond angle, 1 dihedral
    bundle: GraphBundle | None = None

    @property
    def n_atoms(self) -> int:
        return len(self.atom_rows)


def featurize(bundle: GraphBundle, cfg: ModelConfig) -> Features:
    if bundle.tag != cfg.representation:
        raise ValueError(
            f"bundle representation {bundle.tag!r} does not match model {cfg.representation!r}"
        )
    enc = cfg.encoder
    g = bundle.graph
    f = Features(atom_rows(g.atom_numbers), g.edges, encode_bond(g.distances, enc), bundle=bundle)
    lg = bundle.line_graph
    if lg is not None:
        f.line_ends = lg.edges
        f.line_feat = np.concatenate(
            [
                encode_bond_angles(lg.angles, enc).reshape(-1, cfg.D),
                encode_dihedrals(lg.dihedrals, enc).reshape(-1, cfg.D),
            ]
        )
        f.line_kind = np.concatenate(
            [np.zeros(lg.n_angles, np.int64), np.ones(len(lg.dihedrals), np.int64)]
        )
    return f


@dataclass
class Adjacency:
    """Undirected edge list; every edge carries messages in both directions."""

    n_nodes: int
    ends: np.ndarray  # (E, 2)

    @classmethod
    def from_ends(cls, ends: np.ndarray, n_nodes: int) -> "Adjacency":
        return cls(int(n_nodes), np.ascontiguousarray(np.asarray(ends, dtype=np.int64).reshape(-1, 2)))


@dataclass
class GraphBatch:
    n_graphs: int
    atom_rows: np.ndarray
    bond_feat: np.ndarray
    atom_adj: Adjacency
    atom_graph: Segments  # atom -> graph
    bond_graph: Segments
    line_feat: np.ndarray | None = None
    line_adj: Adjacency | None = None
    line_graph: Segments | None = None
    line_kind: np.ndarray | None = None


def collate(feats: list[Features]) -> GraphBatch:
    """Merge graphs into one disjoint graph with offset indices."""
    n_atoms = np.array([f.n_atoms for f in feats])
    n_bonds = np.array([len(f.bond_ends) for f in feats])
    atom_off = np.concatenate([[0], np.cumsum(n_atoms)[:-1]])
    bond_off = np.concatenate([[0], np.cumsum(n_bonds)[:-1]])
    B = len(feats)
    bond_ends = np.concatenate(
        [f.bond_ends.reshape(-1, 2) + o for f, o in zip(feats, atom_off)]
    ).reshape(-1, 2)
    batch = GraphBatch(
        n_graphs=B,
        atom_rows=np.concatenate([f.atom_rows for f in feats]),
        bond_feat=np.concatenate([f.bond_feat.reshape(len(f.bond_ends), -1) for f in feats]),
        atom_adj=Adjacency.from_ends(bond_ends, int(n_atoms.sum())),
        atom_graph=Segments(np.repeat(np.arange(B), n_atoms), B),
        bond_graph=Segments(np.repeat(np.arange(B), n_bonds), B),
    )
    if feats[0].line_ends is not None:
        n_line = np.array([len(f.line_ends) for f in feats])
        line_ends = np.concatenate(
            [f.line_ends.reshape(-1, 2) + o for f, o in zip(feats, bond_off)]
        ).reshape(-1, 2)
        D = batch.bond_feat.shape[1]
        batch.line_feat = np.concatenate([f.line_feat.reshape(-1, D) for f in feats])
        batch.line_adj = Adjacency.from_ends(line_ends, int(n_bonds.sum()))
        batch.line_graph = Segments(np.repeat(np.arange(B), n_line), B)
        batch.line_kind = np.concatenate([f.line_kind for f in feats])
    return batch


# ----------------------------------------------------------------- forward


def edge_gated_conv(
    h: Node, e: Node, adj: Adjacency, tape: Tape, state: ModelState, prefix: str, eps_gate: float
) -> tuple[Node, Node]:
    """One edge-gated convolution on node features ``h`` and edge features ``e``.

    Node update: h_i + SiLU(LN(W_s h_i + sum_j gate_ij * W_d h_j)) with
    gate_ij = sigmoid(e_ij) / (sum_j' sigmoid(e_ij') + eps).
    Edge update: e_ij + SiLU(LN(W_g [h_i, h_j, e_ij])), averaged over the two
    directions so each undirected edge keeps one embedding.
    """
    P = lambda k: tape.param(state.params[f"{prefix}.{k}"])  # noqa: E731
    D = h.value.shape[1]

    agg = nn.gated_aggregate(e, nn.linear(h, P("W_d")), adj.ends, adj.n_nodes, eps_gate)
    pre = nn.add(nn.linear(h, P("W_s")), agg)
    h_new = nn.add(h, nn.ln_silu(pre, P("ln_node.gamma"), P("ln_node.beta")))

    W_g = P("W_g")
    upd = nn.pair_update(
        nn.linear(h, nn.columns(W_g, 0, D)),
        nn.linear(h, nn.columns(W_g, D, 2 * D)),
        nn.linear(e, nn.columns(W_g, 2 * D, 3 * D)),
        adj.ends,
        P("ln_edge.gamma"),
        P("ln_edge.beta"),
    )
    return h_new, nn.add(e, upd)


def _interaction_stack(batch: GraphBatch, state: ModelState, tape: Tape):
    cfg = state.config
    if cfg.has_line_graph != (batch.line_adj is not None):
        raise ValueError("batch line graph does not match the model representation")
    h = nn.gather(tape.param(state.params["embedding"]), Segments(batch.atom_rows, N_ELEMENTS))
    e = tape.const(batch.bond_feat)
    t = tape.const(batch.line_feat) if cfg.has_line_graph else None
    for l in range(cfg.L):
        if t is not None:
            e, t = edge_gated_conv(e, t, batch.line_adj, tape, state, f"line.{l}", cfg.eps_gate)
        h, e = edge_gated_conv(h, e, batch.atom_adj, tape, state, f"atom.{l}", cfg.eps_gate)
    return h, e, t


def peak_head(raw: Node) -> Node:
    """Map raw (B, 3) outputs to (mu, softplus + floor, softplus)."""
    mu = nn.columns(raw, 0, 1)
    pos = nn.softplus(nn.columns(raw, 1, 3))
    return nn.add(nn.concat([mu, pos], axis=-1), np.array([0.0, SIGMA_FLOOR, 0.0]))


def forward_batch(batch: GraphBatch, state: ModelState, tape: Tape | None = None) -> Node:
    """(B, 3) peak parameters, or (B, 1) totals for the interpretable head."""
    tape = tape or Tape(grad=False)
    cfg = state.config
    h, e, t = _interaction_stack(batch, state, tape)
    if cfg.head == "peak":
        P = lambda k: tape.param(state.params[k])  # noqa: E731
        pooled = nn.scatter_sum(h, batch.atom_graph)
        hidden = nn.silu(nn.linear(pooled, P("head.W1"), P("head.b1")))
        return peak_head(nn.linear(hidden, P("head.W2"), P("head.b2")))
    parts = _component_scalars(batch, state, tape, h, e, t)
    segs = [batch.atom_graph, batch.bond_graph] + ([batch.line_graph] if t is not None else [])
    out = None
    for node, seg in zip(parts, segs):
        pooled = nn.scatter_sum(node, seg)
        out = pooled if out is None else nn.add(out, pooled)
    return out


def _scalar_map(x: Node, state: ModelState, tape: Tape, kind: str) -> Node:
    key = kind if state.config.per_kind_maps else "shared"
    w = tape.param(state.params[f"interp.{key}.w"])
    b = tape.param(state.params[f"interp.{key}.b"])
    return nn.softplus(nn.linear(x, w, b))


def _component_scalars(batch, state, tape, h, e, t) -> list[Node]:
    parts = [_scalar_map(h, state, tape, "atom"), _scalar_map(e, state, tape, "bond")]
    if t is not None:
        if state.config.per_kind_maps and state.config.representation == "alignn-d":
            is_dih = batch.line_kind == 1
            ang = _scalar_map(t, state, tape, "bond_angle")
            dih = _scalar_map(t, state, tape, "dihedral")
            mask = is_dih[:, None].astype(float)
            parts.append(nn.add(nn.mul(ang, 1.0 - mask), nn.mul(dih, mask)))
        else:
            parts.append(_scalar_map(t, state, tape, "bond_angle"))
    return parts


def _check_tag(bundle: GraphBundle, state: ModelState):
    if bundle.tag != state.config.representation:
        raise ValueError(
            f"bundle tag {bundle.tag!r} does not match model {state.config.representation!r}"
        )


def forward(bundle: GraphBundle, state: ModelState) -> GaussianPeak:
    _check_tag(bundle, state)
    if state.config.head != "peak":
        raise ValueError("forward needs a peak head; use forward_interpretable")
    out = forward_batch(collate([featurize(bundle, state.config)]), state).value[0]
    return GaussianPeak(*(float(v) for v in out))


def predict_arrays(feats: list[Features], state: ModelState, batch_size: int = 256) -> np.ndarray:
    outs = []
    for i in range(0, len(feats), batch_size):
        outs.append(forward_batch(collate(feats[i : i + batch_size]), state).value)
    return np.concatenate(outs)


def forward_interpretable(bundle: GraphBundle, state: ModelState) -> ContributionReport:
    _check_tag(bundle, state)
    if state.config.head != "interpretable":
        raise ValueError("model was not built with the interpretable head")
    f = featurize(bundle, state.config)
    batch = collate([f])
    tape = Tape(grad=False)
    h, e, t = _interaction_stack(batch, state, tape)
    parts = [p.value.ravel() for p in _component_scalars(batch, state, tape, h, e, t)]
    g = bundle.graph
    kinds, idx, vals = [], [], []
    for a, v in enumerate(parts[0]):
        kinds.append("atom")
        idx.append(str(a))
        vals.append(v)
    for (a, b), v in zip(g.edges, parts[1]):
        kinds.append("bond")
        idx.append(f"{a}-{b}")
        vals.append(v)
    lg = bundle.line_graph
    if lg is not None:
        line_vals = parts[2]
        n_a = lg.n_angles
        for (ba, bb), c, v in zip(lg.angle_pairs, lg.angle_centers, line_vals[:n_a]):
            a = int(g.edges[ba][g.edges[ba] != c][0])
            b = int(g.edges[bb][g.edges[bb] != c][0])
            kinds.append("bond_angle")
            idx.append(f"{a}-{c}-{b}")
            vals.append(v)
        # both stored orientations of a dihedral are reported as one component
        dvals = line_vals[n_a:]
        n_d = lg.n_dihedrals
        for q, v0, v1 in zip(lg.dihedral_atoms[:n_d], dvals[:n_d], dvals[n_d:]):
            kinds.append("dihedral")
            idx.append("-".join(str(int(x)) for x in q))
            vals.append(v0 + v1)
    vals = np.array(vals)
    return ContributionReport(kinds, idx, vals, float(sum(p.sum() for p in parts)))


def with_representation(cfg: ModelConfig, tag: str) -> ModelConfig:
    return replace(cfg, representation=tag)
