"""Graph network blocks: the generic block and the E(n)-equivariant block.

For an edge ``k = (a, b)`` (sender ``a``, receiver ``b``) the generic block
computes::

    e'_k = phi_e([e_k, v_a, v_b, u])
    v'_i = phi_v([rho_ev({e'_k : b_k = i}), v_i, u])
    u'   = phi_u([rho_eu({e'_k}), rho_vu({v'_i}), u])

The equivariant block feeds the edge update the squared distance
``|x_a - x_b|^2`` (inserted before ``u``), moves coordinates with a scalar gate
per edge,::

    x'_i = x_i + c_i * sum_{k : b_k = i, a_k != i} (x_i - x_{a_k}) * phi_x([e'_k, v'_i, v'_{a_k}, u])

and adds ``rho_xu`` over the updated squared edge lengths to the global
update input, between ``rho_vu`` and ``u``.  ``c_i`` is ``coord_update_scale``,
divided by the in-degree of ``i`` when ``coord_normalize`` is set.

Only scalars built from coordinate differences ever enter an MLP, so edge,
node and global outputs are E(n)-invariant and coordinates E(n)-equivariant.
This holds as long as node attributes carry no absolute position information.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, ValidationError
from .graph import AttributedGraph
from .nn import Aggregator, Mlp, aggregate, aggregate_backward, as_aggregator, mlp_backward, mlp_forward, mlp_init
from .rng import SeedLike, as_generator

BLOCK_VERSION = "egn-block-1"


@dataclass(eq=False)
class BlockOutput:
    edge_attrs: np.ndarray
    node_attrs: np.ndarray
    global_attr: np.ndarray
    coords: Optional[np.ndarray] = None

    def as_graph(self, like: AttributedGraph) -> AttributedGraph:
        """Outputs packaged as a graph on ``like``'s topology."""
        return AttributedGraph(like.topology, self.node_attrs, self.edge_attrs, self.global_attr, self.coords)

    @classmethod
    def of_graph(cls, g: AttributedGraph) -> "BlockOutput":
        return cls(g.edge_attrs, g.node_attrs, g.global_attr, g.coords)


def _check_aggregators(block) -> None:
    for name in ("rho_ev", "rho_eu", "rho_vu", "rho_xu"):
        if hasattr(block, name):
            setattr(block, name, as_aggregator(getattr(block, name)))


def _check_mlp(m: Mlp, n_in: int, n_out: int, name: str) -> None:
    if m.n_in != n_in or m.n_out != n_out:
        raise DimensionError(f"{name} must map {n_in} -> {n_out}, got {m.n_in} -> {m.n_out}")


@dataclass(eq=False)
class GnBlock:
    phi_e: Mlp
    phi_v: Mlp
    phi_u: Mlp
    rho_ev: Aggregator = Aggregator.SUM
    rho_eu: Aggregator = Aggregator.SUM
    rho_vu: Aggregator = Aggregator.SUM

    def __post_init__(self):
        _check_aggregators(self)
        ne, nv, nu = self.dims
        _check_mlp(self.phi_e, ne + 2 * nv + nu, ne, "phi_e")
        _check_mlp(self.phi_v, ne + nv + nu, nv, "phi_v")
        _check_mlp(self.phi_u, ne + nv + nu, nu, "phi_u")

    @property
    def dims(self) -> tuple:
        """``(n_e, n_v, n_u)``."""
        return self.phi_e.n_out, self.phi_v.n_out, self.phi_u.n_out

    @property
    def mlps(self) -> dict:
        return {"phi_e": self.phi_e, "phi_v": self.phi_v, "phi_u": self.phi_u}

    def parameters(self):
        for m in self.mlps.values():
            yield from m.parameters()

    def zero_grad(self):
        for m in self.mlps.values():
            m.zero_grad()


@dataclass(eq=False)
class EgnBlock:
    phi_e: Mlp
    phi_v: Mlp
    phi_x: Mlp
    phi_u: Mlp
    rho_ev: Aggregator = Aggregator.SUM
    rho_eu: Aggregator = Aggregator.SUM
    rho_vu: Aggregator = Aggregator.SUM
    rho_xu: Aggregator = Aggregator.SUM
    coord_update_scale: float = 1.0
    coord_normalize: bool = False
    # Test hook: append the sender's absolute coordinates (this many) to the
    # phi_e input.  Breaks equivariance on purpose; 0 disables it.
    coord_leak_dim: int = 0

    def __post_init__(self):
        _check_aggregators(self)
        ne, nv, nu = self.dims
        _check_mlp(self.phi_e, ne + 2 * nv + 1 + nu + self.coord_leak_dim, ne, "phi_e")
        _check_mlp(self.phi_v, ne + nv + nu, nv, "phi_v")
        _check_mlp(self.phi_x, ne + 2 * nv + nu, 1, "phi_x")
        _check_mlp(self.phi_u, ne + nv + 1 + nu, nu, "phi_u")
        if not np.isfinite(self.coord_update_scale):
            raise ValidationError("coord_update_scale must be finite")

    @property
    def dims(self) -> tuple:
        return self.phi_e.n_out, self.phi_v.n_out, self.phi_u.n_out

    @property
    def mlps(self) -> dict:
        return {"phi_e": self.phi_e, "phi_v": self.phi_v, "phi_x": self.phi_x, "phi_u": self.phi_u}

    def parameters(self):
        for m in self.mlps.values():
            yield from m.parameters()

    def zero_grad(self):
        for m in self.mlps.values():
            m.zero_grad()


def init_gn_block(
    edge_dim: int,
    node_dim: int,
    global_dim: int,
    hidden: Sequence[int] = (16,),
    activation: str = "tanh",
    aggregators: Sequence = ("sum", "sum", "sum"),
    seed: SeedLike = 0,
) -> GnBlock:
    rng = as_generator(seed)
    ne, nv, nu = edge_dim, node_dim, global_dim
    h = list(hidden)
    return GnBlock(
        mlp_init([ne + 2 * nv + nu, *h, ne], activation, rng),
        mlp_init([ne + nv + nu, *h, nv], activation, rng),
        mlp_init([ne + nv + nu, *h, nu], activation, rng),
        *aggregators,
    )


def init_egn_block(
    edge_dim: int,
    node_dim: int,
    global_dim: int,
    hidden: Sequence[int] = (16,),
    activation: str = "tanh",
    aggregators: Sequence = ("sum", "sum", "sum", "sum"),
    coord_update_scale: float = 1.0,
    coord_normalize: bool = False,
    seed: SeedLike = 0,
    coord_leak_dim: int = 0,
) -> EgnBlock:
    rng = as_generator(seed)
    ne, nv, nu = edge_dim, node_dim, global_dim
    h = list(hidden)
    return EgnBlock(
        mlp_init([ne + 2 * nv + 1 + nu + coord_leak_dim, *h, ne], activation, rng),
        mlp_init([ne + nv + nu, *h, nv], activation, rng),
        mlp_init([ne + 2 * nv + nu, *h, 1], activation, rng),
        mlp_init([ne + nv + 1 + nu, *h, nu], activation, rng),
        *aggregators,
        coord_update_scale=coord_update_scale,
        coord_normalize=coord_normalize,
        coord_leak_dim=coord_leak_dim,
    )


def _insert_zero_input(m: Mlp, position: int) -> Mlp:
    out = m.copy()
    first = out.layers[0]
    first.weight = np.insert(first.weight, position, 0.0, axis=1)
    first.grad_weight = np.zeros_like(first.weight)
    return out


def embed_gn_block(b: GnBlock, phi_x_hidden: Sequence[int] = (16,)) -> EgnBlock:
    """Equivariant block that ignores geometry and reproduces ``b`` exactly.

    Weights reading the distance slots are zero and ``phi_x`` is identically
    zero, so edge, node and global outputs match ``b`` bit for bit and the
    coordinates stay put.
    """
    ne, nv, nu = b.dims
    phi_x = mlp_init([ne + 2 * nv + nu, *phi_x_hidden, 1], b.phi_e.layers[0].activation, 0)
    for layer in phi_x.layers:
        layer.weight[...] = 0.0
    return EgnBlock(
        _insert_zero_input(b.phi_e, ne + 2 * nv),
        b.phi_v.copy(),
        phi_x,
        _insert_zero_input(b.phi_u, ne + nv),
        b.rho_ev,
        b.rho_eu,
        b.rho_vu,
        Aggregator.SUM,
    )


def _check_graph(block, g: AttributedGraph) -> None:
    ne, nv, nu = block.dims
    if (g.edge_dim, g.node_dim, g.global_dim) != (ne, nv, nu):
        raise DimensionError(
            f"block expects (n_e, n_v, n_u) = {(ne, nv, nu)}, graph has "
            f"{(g.edge_dim, g.node_dim, g.global_dim)}"
        )


def _node_aggregate(kind, e_plus: np.ndarray, g: AttributedGraph) -> np.ndarray:
    d = e_plus.shape[1]
    return np.stack([aggregate(kind, e_plus[ks], d) for ks in g.topology.in_edges]).reshape(g.n_nodes, d)


def _node_aggregate_backward(kind, e_plus: np.ndarray, g: AttributedGraph, g_agg: np.ndarray) -> np.ndarray:
    out = np.zeros_like(e_plus)
    for i, ks in enumerate(g.topology.in_edges):
        if ks.size:
            out[ks] += aggregate_backward(kind, e_plus[ks], g_agg[i])
    return out


def _tile(u: np.ndarray, rows: int) -> np.ndarray:
    return np.broadcast_to(u, (rows, u.shape[0]))


def _grad_or_zeros(g, shape) -> np.ndarray:
    if g is None:
        return np.zeros(shape)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != tuple(shape):
        raise DimensionError(f"upstream gradient has shape {g.shape}, expected {tuple(shape)}")
    return g


@dataclass
class GnTrace:
    graph: AttributedGraph
    out: BlockOutput
    edge_trace: object
    node_trace: object
    global_trace: object
    agg_v: np.ndarray


@dataclass
class EgnTrace(GnTrace):
    sq_dist: np.ndarray = None
    coord_trace: object = None
    gate: np.ndarray = None
    diff: np.ndarray = None
    coord_scale: np.ndarray = None
    coord_mask: np.ndarray = None
    sq_dist_out: np.ndarray = None
    extras: dict = field(default_factory=dict)


def gn_block_forward(b: GnBlock, g: AttributedGraph) -> tuple:
    """One generic block update; returns ``(BlockOutput, GnTrace)``."""
    _check_graph(b, g)
    a, r = g.topology.senders, g.topology.receivers
    v, e, u = g.node_attrs, g.edge_attrs, g.global_attr
    n_edges, n_nodes = g.topology.edge_count, g.n_nodes

    edge_in = np.concatenate([e, v[a], v[r], _tile(u, n_edges)], axis=1)
    e_plus, edge_trace = mlp_forward(b.phi_e, edge_in)

    agg_v = _node_aggregate(b.rho_ev, e_plus, g)
    v_plus, node_trace = mlp_forward(b.phi_v, np.concatenate([agg_v, v, _tile(u, n_nodes)], axis=1))

    global_in = np.concatenate([aggregate(b.rho_eu, e_plus), aggregate(b.rho_vu, v_plus), u])
    u_plus, global_trace = mlp_forward(b.phi_u, global_in)

    out = BlockOutput(e_plus, v_plus, u_plus, None)
    return out, GnTrace(g, out, edge_trace, node_trace, global_trace, agg_v)


def gn_block_backward(b: GnBlock, trace: GnTrace, g_edges=None, g_nodes=None, g_global=None) -> BlockOutput:
    """Reverse pass for :func:`gn_block_forward`.

    Returns input gradients as a :class:`BlockOutput` (``coords`` is None);
    parameter gradients accumulate into the block's MLPs.
    """
    g, out = trace.graph, trace.out
    ne, nv, nu = b.dims
    a, r = g.topology.senders, g.topology.receivers
    ge_plus = _grad_or_zeros(g_edges, out.edge_attrs.shape).copy()
    gv_plus = _grad_or_zeros(g_nodes, out.node_attrs.shape).copy()
    gu_plus = _grad_or_zeros(g_global, out.global_attr.shape)

    g_global_in = mlp_backward(b.phi_u, trace.global_trace, gu_plus)
    ge_plus += aggregate_backward(b.rho_eu, out.edge_attrs, g_global_in[:ne])
    gv_plus += aggregate_backward(b.rho_vu, out.node_attrs, g_global_in[ne : ne + nv])
    gu = g_global_in[ne + nv :].copy()

    g_node_in = mlp_backward(b.phi_v, trace.node_trace, gv_plus)
    ge_plus += _node_aggregate_backward(b.rho_ev, out.edge_attrs, g, g_node_in[:, :ne])
    gv = g_node_in[:, ne : ne + nv].copy()
    gu += g_node_in[:, ne + nv :].sum(axis=0)

    g_edge_in = mlp_backward(b.phi_e, trace.edge_trace, ge_plus)
    ge = g_edge_in[:, :ne].copy()
    np.add.at(gv, a, g_edge_in[:, ne : ne + nv])
    np.add.at(gv, r, g_edge_in[:, ne + nv : ne + 2 * nv])
    gu += g_edge_in[:, ne + 2 * nv :].sum(axis=0)
    return BlockOutput(ge, gv, gu, None)


def _coord_scale(b: EgnBlock, g: AttributedGraph, mask: np.ndarray) -> np.ndarray:
    scale = np.full(g.n_nodes, float(b.coord_update_scale))
    if b.coord_normalize:
        deg = np.bincount(g.topology.receivers[mask], minlength=g.n_nodes)
        scale = scale / np.maximum(deg, 1)
    return scale


def _sq_dist(x: np.ndarray, a: np.ndarray, r: np.ndarray) -> np.ndarray:
    d = x[a] - x[r]
    return np.sum(d * d, axis=1)


def egn_block_forward(b: EgnBlock, g: AttributedGraph) -> tuple:
    """One equivariant block update; returns ``(BlockOutput, EgnTrace)``."""
    if g.coords is None:
        raise ValidationError("the equivariant block needs node coordinates")
    _check_graph(b, g)
    a, r = g.topology.senders, g.topology.receivers
    v, e, u, x = g.node_attrs, g.edge_attrs, g.global_attr, g.coords
    n_edges, n_nodes = g.topology.edge_count, g.n_nodes
    if b.coord_leak_dim and b.coord_leak_dim != x.shape[1]:
        raise DimensionError("coord_leak_dim must equal the coordinate dimension")

    sq = _sq_dist(x, a, r)
    parts = [e, v[a], v[r], sq[:, None], _tile(u, n_edges)]
    if b.coord_leak_dim:
        parts.append(x[a])
    e_plus, edge_trace = mlp_forward(b.phi_e, np.concatenate(parts, axis=1))

    agg_v = _node_aggregate(b.rho_ev, e_plus, g)
    v_plus, node_trace = mlp_forward(b.phi_v, np.concatenate([agg_v, v, _tile(u, n_nodes)], axis=1))

    coord_in = np.concatenate([e_plus, v_plus[r], v_plus[a], _tile(u, n_edges)], axis=1)
    gate, coord_trace = mlp_forward(b.phi_x, coord_in)
    mask = a != r
    diff = x[r] - x[a]
    acc = np.zeros_like(x)
    np.add.at(acc, r[mask], diff[mask] * gate[mask])
    scale = _coord_scale(b, g, mask)
    x_plus = x + scale[:, None] * acc

    sq_out = _sq_dist(x_plus, a, r)
    global_in = np.concatenate(
        [
            aggregate(b.rho_eu, e_plus),
            aggregate(b.rho_vu, v_plus),
            aggregate(b.rho_xu, sq_out[:, None]),
            u,
        ]
    )
    u_plus, global_trace = mlp_forward(b.phi_u, global_in)

    out = BlockOutput(e_plus, v_plus, u_plus, x_plus)
    trace = EgnTrace(
        g, out, edge_trace, node_trace, global_trace, agg_v,
        sq_dist=sq, coord_trace=coord_trace, gate=gate, diff=diff,
        coord_scale=scale, coord_mask=mask, sq_dist_out=sq_out,
    )
    return out, trace


def egn_block_backward(
    b: EgnBlock, trace: EgnTrace, g_edges=None, g_nodes=None, g_coords=None, g_global=None
) -> BlockOutput:
    """Reverse pass for :func:`egn_block_forward`.

    Missing upstream gradients count as zero.  Returns gradients for the
    input edge, node, global attributes and coordinates.
    """
    g, out = trace.graph, trace.out
    ne, nv, nu = b.dims
    a, r = g.topology.senders, g.topology.receivers
    x, x_plus = g.coords, out.coords
    ge_plus = _grad_or_zeros(g_edges, out.edge_attrs.shape).copy()
    gv_plus = _grad_or_zeros(g_nodes, out.node_attrs.shape).copy()
    gx_plus = _grad_or_zeros(g_coords, x_plus.shape).copy()
    gu_plus = _grad_or_zeros(g_global, out.global_attr.shape)

    # global update
    g_global_in = mlp_backward(b.phi_u, trace.global_trace, gu_plus)
    ge_plus += aggregate_backward(b.rho_eu, out.edge_attrs, g_global_in[:ne])
    gv_plus += aggregate_backward(b.rho_vu, out.node_attrs, g_global_in[ne : ne + nv])
    g_sq_out = aggregate_backward(b.rho_xu, trace.sq_dist_out[:, None], g_global_in[ne + nv : ne + nv + 1])[:, 0]
    gu = g_global_in[ne + nv + 1 :].copy()
    d_out = x_plus[a] - x_plus[r]
    t = 2.0 * d_out * g_sq_out[:, None]
    np.add.at(gx_plus, a, t)
    np.add.at(gx_plus, r, -t)

    # coordinate update
    gx = gx_plus.copy()
    mask = trace.coord_mask
    g_acc = trace.coord_scale[:, None] * gx_plus
    g_contrib = np.where(mask[:, None], g_acc[r], 0.0)
    g_gate = np.sum(g_contrib * trace.diff, axis=1, keepdims=True)
    g_diff = g_contrib * trace.gate
    np.add.at(gx, r, g_diff)
    np.add.at(gx, a, -g_diff)
    g_coord_in = mlp_backward(b.phi_x, trace.coord_trace, g_gate)
    ge_plus += g_coord_in[:, :ne]
    np.add.at(gv_plus, r, g_coord_in[:, ne : ne + nv])
    np.add.at(gv_plus, a, g_coord_in[:, ne + nv : ne + 2 * nv])
    gu += g_coord_in[:, ne + 2 * nv :].sum(axis=0)

    # node update
    g_node_in = mlp_backward(b.phi_v, trace.node_trace, gv_plus)
    ge_plus += _node_aggregate_backward(b.rho_ev, out.edge_attrs, g, g_node_in[:, :ne])
    gv = g_node_in[:, ne : ne + nv].copy()
    gu += g_node_in[:, ne + nv :].sum(axis=0)

    # edge update
    g_edge_in = mlp_backward(b.phi_e, trace.edge_trace, ge_plus)
    ge = g_edge_in[:, :ne].copy()
    np.add.at(gv, a, g_edge_in[:, ne : ne + nv])
    np.add.at(gv, r, g_edge_in[:, ne + nv : ne + 2 * nv])
    g_sq = g_edge_in[:, ne + 2 * nv]
    base = ne + 2 * nv + 1
    gu += g_edge_in[:, base : base + nu].sum(axis=0)
    if b.coord_leak_dim:
        np.add.at(gx, a, g_edge_in[:, base + nu :])
    t = 2.0 * (x[a] - x[r]) * g_sq[:, None]
    np.add.at(gx, a, t)
    np.add.at(gx, r, -t)
    return BlockOutput(ge, gv, gu, gx)


def block_forward(b, g: AttributedGraph) -> tuple:
    if isinstance(b, EgnBlock):
        return egn_block_forward(b, g)
    return gn_block_forward(b, g)


def block_backward(b, trace, upstream: BlockOutput) -> BlockOutput:
    if isinstance(b, EgnBlock):
        return egn_block_backward(
            b, trace, upstream.edge_attrs, upstream.node_attrs, upstream.coords, upstream.global_attr
        )
    return gn_block_backward(b, trace, upstream.edge_attrs, upstream.node_attrs, upstream.global_attr)


def check_stack(blocks: Sequence) -> None:
    for k, (p, q) in enumerate(zip(blocks, blocks[1:])):
        if p.dims != q.dims:
            raise ValidationError(f"block {k} produces (n_e, n_v, n_u) = {p.dims}, block {k + 1} expects {q.dims}")


def stack_forward(blocks: Sequence, g: AttributedGraph) -> tuple:
    """Apply ``blocks`` in order; returns ``(BlockOutput, traces)``.

    An empty stack returns the input graph's attributes unchanged.
    """
    blocks = list(blocks)
    check_stack(blocks)
    traces = []
    cur = g
    out = BlockOutput.of_graph(g)
    for b in blocks:
        out, tr = block_forward(b, cur)
        traces.append(tr)
        if out.coords is None:
            out.coords = cur.coords
        cur = out.as_graph(cur)
    return out, traces


def stack_backward(blocks: Sequence, traces: Sequence, upstream: BlockOutput) -> BlockOutput:
    """Chain block reverse passes; returns gradients w.r.t. the stack input."""
    grad = upstream
    for b, tr in zip(reversed(list(blocks)), reversed(list(traces))):
        g_coords = grad.coords
        grad = block_backward(b, tr, grad)
        if grad.coords is None:
            grad.coords = g_coords
    return grad


def readout_invariant(out: BlockOutput) -> np.ndarray:
    """The updated global attribute, which is E(n)-invariant."""
    return np.array(out.global_attr, dtype=np.float64)


def block_to_dict(b) -> dict:
    d = {
        "version": BLOCK_VERSION,
        "kind": "egn" if isinstance(b, EgnBlock) else "gn",
        **{name: m.to_dict() for name, m in b.mlps.items()},
        "aggregators": {
            name: getattr(b, name).value
            for name in ("rho_ev", "rho_eu", "rho_vu", "rho_xu")
            if hasattr(b, name)
        },
    }
    if isinstance(b, EgnBlock):
        d["coord_update_scale"] = b.coord_update_scale
        d["coord_normalize"] = b.coord_normalize
        if b.coord_leak_dim:
            d["coord_leak_dim"] = b.coord_leak_dim
    return d


def block_from_dict(d: dict):
    if d.get("version") != BLOCK_VERSION:
        raise ValidationError(f"unsupported block checkpoint version {d.get('version')!r}")
    aggs = d.get("aggregators", {})
    if d.get("kind", "egn") == "gn":
        return GnBlock(
            Mlp.from_dict(d["phi_e"]), Mlp.from_dict(d["phi_v"]), Mlp.from_dict(d["phi_u"]),
            aggs.get("rho_ev", "sum"), aggs.get("rho_eu", "sum"), aggs.get("rho_vu", "sum"),
        )
    return EgnBlock(
        Mlp.from_dict(d["phi_e"]), Mlp.from_dict(d["phi_v"]), Mlp.from_dict(d["phi_x"]), Mlp.from_dict(d["phi_u"]),
        aggs.get("rho_ev", "sum"), aggs.get("rho_eu", "sum"), aggs.get("rho_vu", "sum"), aggs.get("rho_xu", "sum"),
        coord_update_scale=float(d.get("coord_update_scale", 1.0)),
        coord_normalize=bool(d.get("coord_normalize", False)),
        coord_leak_dim=int(d.get("coord_leak_dim", 0)),
    )
