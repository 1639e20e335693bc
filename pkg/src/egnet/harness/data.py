"""Synthetic point-cloud tasks with closed-form targets.

``displacement_field``
    per node ``sum_{j != i} (x_i - x_j) / (|x_i - x_j|^2 + 1)``, a vector field
    that rotates with the input and ignores translations.
``invariant_energy``
    one scalar ``sum_{i < j} 1 / (|x_i - x_j|^2 + 1)``.

Points are integer grid sites in ``[-2, 2]^n`` plus Gaussian jitter of
standard deviation ``noise``.  Graphs are fully connected, and every
attribute is a vector of ones, so nothing but the coordinates carries
geometry.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List

import numpy as np

from ..errors import ValidationError
from ..graph import AttributedGraph, fully_connected
from ..rng import as_generator

TASKS = ("displacement_field", "invariant_energy")
GRID_HALF_WIDTH = 2
DATASET_VERSION = "egn-data-1"


@dataclass(frozen=True)
class SyntheticTask:
    kind: str = "displacement_field"
    n_nodes: int = 5
    dim: int = 3
    noise: float = 0.5
    seed: int = 0
    attr_dim: int = 4

    def __post_init__(self):
        if self.kind not in TASKS:
            raise ValidationError(f"unknown task {self.kind!r}; expected one of {TASKS}")
        if self.n_nodes < 2:
            raise ValidationError("tasks need at least two nodes")
        if self.dim < 1 or self.attr_dim < 1:
            raise ValidationError("dim and attr_dim must be positive")
        if not (self.noise >= 0 and np.isfinite(self.noise)):
            raise ValidationError("noise must be finite and non-negative")
        if self.noise == 0 and (2 * GRID_HALF_WIDTH + 1) ** self.dim < self.n_nodes:
            raise ValidationError("grid too small for distinct points at noise=0")


@dataclass(frozen=True, eq=False)
class Sample:
    graph: AttributedGraph
    target: np.ndarray


def displacement_target(xs: np.ndarray) -> np.ndarray:
    diff = xs[:, None, :] - xs[None, :, :]
    w = 1.0 / (np.sum(diff * diff, axis=-1) + 1.0)
    np.fill_diagonal(w, 0.0)
    return np.sum(diff * w[..., None], axis=1)


def energy_target(xs: np.ndarray) -> np.ndarray:
    n = xs.shape[0]
    i, j = np.triu_indices(n, k=1)
    d = xs[i] - xs[j]
    return np.array([np.sum(1.0 / (np.sum(d * d, axis=1) + 1.0))])


def target_for(kind: str, xs: np.ndarray) -> np.ndarray:
    if kind == "displacement_field":
        return displacement_target(xs)
    if kind == "invariant_energy":
        return energy_target(xs)
    raise ValidationError(f"unknown task {kind!r}")


def _sample_coords(task: SyntheticTask, rng: np.random.Generator) -> np.ndarray:
    while True:
        grid = rng.integers(-GRID_HALF_WIDTH, GRID_HALF_WIDTH + 1, size=(task.n_nodes, task.dim))
        xs = grid + task.noise * rng.standard_normal((task.n_nodes, task.dim))
        if len({tuple(p) for p in xs.tolist()}) == task.n_nodes:
            return xs


def make_graph(xs: np.ndarray, attr_dim: int) -> AttributedGraph:
    topo = fully_connected(xs.shape[0])
    return AttributedGraph(
        topo,
        np.ones((topo.node_count, attr_dim)),
        np.ones((topo.edge_count, attr_dim)),
        np.ones(attr_dim),
        xs,
    )


def gen_dataset(task: SyntheticTask, count: int) -> List[Sample]:
    """``count`` samples drawn deterministically from ``task.seed``."""
    if count < 1:
        raise ValidationError("count must be at least 1")
    rng = as_generator(task.seed)
    out = []
    for _ in range(count):
        xs = _sample_coords(task, rng)
        out.append(Sample(make_graph(xs, task.attr_dim), target_for(task.kind, xs)))
    return out


def dataset_to_dict(task: SyntheticTask, samples: List[Sample]) -> dict:
    return {
        "version": DATASET_VERSION,
        "task": asdict(task),
        "samples": [{"graph": s.graph.to_dict(), "target": s.target.tolist()} for s in samples],
    }


def dataset_from_dict(d: dict) -> tuple:
    if d.get("version") != DATASET_VERSION:
        raise ValidationError(f"unsupported dataset version {d.get('version')!r}")
    task = SyntheticTask(**d["task"])
    samples = [
        Sample(AttributedGraph.from_dict(s["graph"]), np.array(s["target"], dtype=np.float64))
        for s in d["samples"]
    ]
    return task, samples


def save_dataset(path, task: SyntheticTask, samples: List[Sample]) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(task, samples)) + "\n", encoding="utf-8")


def load_dataset(path) -> tuple:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read dataset {path}: {exc}") from exc
    return dataset_from_dict(d)
