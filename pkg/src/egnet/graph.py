"""Directed graph topology and attributed graphs.

Edges are directed pairs ``(a, b)``.  The in-neighbours of node ``i`` are the
nodes ``j`` with an edge ``(j, i)``; node updates aggregate over exactly
those edges.  The row order of ``edges`` is the identity of an edge
everywhere: edge attributes, aggregation order and serialisation all follow
it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, ValidationError
from .euclid import Isometry, apply_isometry


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GraphTopology:
    node_count: int
    edges: np.ndarray  # (E, 2) int64, row k = (sender, receiver)
    allow_self_loops: bool = False
    in_neighbors: tuple = field(init=False)
    in_edges: tuple = field(init=False)

    def __post_init__(self):
        n = int(self.node_count)
        if n < 1:
            raise ValidationError(f"node_count must be positive, got {self.node_count}")
        edges = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise IndexError(f"edge endpoint out of range for {n} nodes")
        if not self.allow_self_loops and np.any(edges[:, 0] == edges[:, 1]):
            raise ValidationError("self-loops are not allowed (pass allow_self_loops=True)")
        seen = set()
        for a, b in edges.tolist():
            if (a, b) in seen:
                raise ValidationError(f"duplicate directed edge ({a}, {b})")
            seen.add((a, b))
        in_edges = [[] for _ in range(n)]
        for k, b in enumerate(edges[:, 1].tolist()):
            in_edges[b].append(k)
        object.__setattr__(self, "node_count", n)
        object.__setattr__(self, "edges", _readonly(edges))
        object.__setattr__(self, "in_edges", tuple(np.array(ks, dtype=np.int64) for ks in in_edges))
        object.__setattr__(
            self, "in_neighbors", tuple(tuple(edges[ks, 0].tolist()) for ks in in_edges)
        )

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]

    @property
    def senders(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def receivers(self) -> np.ndarray:
        return self.edges[:, 1]

    def edge_list(self) -> list:
        return [tuple(e) for e in self.edges.tolist()]

    def __eq__(self, other):
        if not isinstance(other, GraphTopology):
            return NotImplemented
        return self.node_count == other.node_count and np.array_equal(self.edges, other.edges)


def build_topology(node_count: int, edges: Sequence, allow_self_loops: bool = False) -> GraphTopology:
    return GraphTopology(node_count, np.asarray(list(edges), dtype=np.int64), allow_self_loops)


def fully_connected(node_count: int) -> GraphTopology:
    """All ordered pairs ``(i, j)`` with ``i != j``, row-major."""
    if node_count < 1:
        raise ValidationError("fully connected graph needs at least one node")
    edges = [(i, j) for i in range(node_count) for j in range(node_count) if i != j]
    return build_topology(node_count, edges)


def check_in_neighbors(topology: GraphTopology, in_neighbors: Sequence[Sequence[int]]) -> None:
    """Raise ValidationError if ``in_neighbors`` disagrees with the edge list."""
    if len(in_neighbors) != topology.node_count:
        raise ValidationError("in_neighbors must have one entry per node")
    expected = [set() for _ in range(topology.node_count)]
    for a, b in topology.edge_list():
        expected[b].add(a)
    for i, (got, want) in enumerate(zip(in_neighbors, expected)):
        got = list(got)
        if len(got) != len(set(got)) or set(got) != want:
            raise ValidationError(f"in_neighbors[{i}] = {got} is inconsistent with the edges")


def _matrix(a, rows: int, name: str, width: Optional[int] = None) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    if a.size == 0 and a.ndim < 2:
        a = a.reshape(0, width or 0)
    if a.ndim != 2 or a.shape[0] != rows:
        raise DimensionError(f"{name} must have shape ({rows}, d), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} must be finite")
    return _readonly(a)


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    """Topology plus node, edge, global attributes and optional coordinates.

    The equivariant blocks assume ``node_attrs`` carry no absolute position
    or orientation information about ``coords``; that is the caller's job.
    """

    topology: GraphTopology
    node_attrs: np.ndarray
    edge_attrs: np.ndarray
    global_attr: np.ndarray
    coords: Optional[np.ndarray] = None

    def __post_init__(self):
        t = self.topology
        object.__setattr__(self, "node_attrs", _matrix(self.node_attrs, t.node_count, "node_attrs"))
        object.__setattr__(self, "edge_attrs", _matrix(self.edge_attrs, t.edge_count, "edge_attrs"))
        u = np.array(self.global_attr, dtype=np.float64)
        if u.ndim != 1:
            raise DimensionError(f"global_attr must be a vector, got shape {u.shape}")
        if not np.all(np.isfinite(u)):
            raise ValidationError("global_attr must be finite")
        object.__setattr__(self, "global_attr", _readonly(u))
        if self.coords is not None:
            object.__setattr__(self, "coords", _matrix(self.coords, t.node_count, "coords"))

    @property
    def n_nodes(self) -> int:
        return self.topology.node_count

    @property
    def node_dim(self) -> int:
        return self.node_attrs.shape[1]

    @property
    def edge_dim(self) -> int:
        return self.edge_attrs.shape[1]

    @property
    def global_dim(self) -> int:
        return self.global_attr.shape[0]

    @property
    def coord_dim(self) -> Optional[int]:
        return None if self.coords is None else self.coords.shape[1]

    def with_(self, **changes) -> "AttributedGraph":
        return replace(self, **changes)

    def transformed(self, g: Isometry) -> "AttributedGraph":
        """Same graph with ``g`` applied to the coordinates only."""
        if self.coords is None:
            raise ValidationError("graph has no coordinates to transform")
        return replace(self, coords=apply_isometry(g, self.coords))

    def to_dict(self) -> dict:
        d = {
            "n": self.n_nodes,
            "edges": self.topology.edges.tolist(),
            "node_attrs": self.node_attrs.tolist(),
            "edge_attrs": self.edge_attrs.tolist(),
            "global": self.global_attr.tolist(),
            "coords": None if self.coords is None else self.coords.tolist(),
            "edge_dim": self.edge_dim,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttributedGraph":
        topo = build_topology(d["n"], [tuple(e) for e in d["edges"]])
        edge_attrs = np.array(d["edge_attrs"], dtype=np.float64)
        if edge_attrs.size == 0:
            edge_attrs = edge_attrs.reshape(0, int(d.get("edge_dim", 0)))
        coords = d.get("coords")
        return cls(topo, d["node_attrs"], edge_attrs, d["global"], coords)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "AttributedGraph":
        return cls.from_dict(json.loads(text))


def check_permutation(perm, n: int) -> np.ndarray:
    p = np.asarray(perm)
    if p.shape != (n,) or not np.issubdtype(p.dtype, np.integer) or not np.array_equal(np.sort(p), np.arange(n)):
        raise ValidationError(f"not a permutation of {n} nodes: {perm!r}")
    return p.astype(np.int64)


def permute_graph(g: AttributedGraph, perm) -> AttributedGraph:
    """Relabel node ``i`` as ``perm[i]``.

    Node attribute and coordinate rows move with their node; edge ``(a, b)``
    becomes ``(perm[a], perm[b])`` and keeps its row position and attributes.
    """
    p = check_permutation(perm, g.n_nodes)
    inv = np.empty_like(p)
    inv[p] = np.arange(p.size)
    topo = GraphTopology(g.n_nodes, p[g.topology.edges], g.topology.allow_self_loops)
    return AttributedGraph(
        topo,
        g.node_attrs[inv],
        g.edge_attrs.copy(),
        g.global_attr.copy(),
        None if g.coords is None else g.coords[inv],
    )


def inverse_permutation(perm) -> np.ndarray:
    p = np.asarray(perm, dtype=np.int64)
    inv = np.empty_like(p)
    inv[p] = np.arange(p.size)
    return inv


def random_topology(n: int, rng: np.random.Generator, p: float = 0.5) -> GraphTopology:
    """Random directed graph: each ordered pair ``i != j`` kept with probability ``p``."""
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    keep = rng.random(len(pairs)) < p
    return build_topology(n, [e for e, k in zip(pairs, keep) if k])


def random_graph(
    n: int,
    node_dim: int,
    edge_dim: int,
    global_dim: int,
    coord_dim: Optional[int],
    rng: np.random.Generator,
    p: float = 0.5,
    topology: Optional[GraphTopology] = None,
) -> AttributedGraph:
    """Gaussian attributes and coordinates on a random (or given) topology."""
    topo = topology if topology is not None else random_topology(n, rng, p)
    return AttributedGraph(
        topo,
        rng.standard_normal((topo.node_count, node_dim)),
        rng.standard_normal((topo.edge_count, edge_dim)),
        rng.standard_normal(global_dim),
        None if coord_dim is None else rng.standard_normal((topo.node_count, coord_dim)),
    )
