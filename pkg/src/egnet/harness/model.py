"""Prediction heads on top of block stacks, plus the checkpoint format.

Two model families share one duck-typed interface (``forward``,
``backward``, ``parameters``, ``zero_grad``):

``EgnModel``
    a stack of equivariant blocks.  Per-node vector targets are read out as
    the coordinate displacement ``x_out - x_in``; scalar targets as the
    first entry of the final global attribute.
``GnModel``
    the non-equivariant baseline: generic blocks that see the raw
    coordinates appended to the node attributes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import DimensionError, ValidationError
from ..graph import AttributedGraph
from ..layers import (
    BlockOutput,
    EgnBlock,
    block_from_dict,
    block_to_dict,
    check_stack,
    init_egn_block,
    init_gn_block,
    stack_backward,
    stack_forward,
)
from ..rng import SeedLike, as_generator

MODEL_VERSION = "egn-model-1"
HEADS = ("displacement", "invariant")


@dataclass(eq=False)
class EgnModel:
    blocks: list
    head: str
    dim: int

    kind = "egn"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValidationError(f"unknown head {self.head!r}")
        if not all(isinstance(b, EgnBlock) for b in self.blocks):
            raise ValidationError("EgnModel takes equivariant blocks only")
        check_stack(self.blocks)

    @property
    def dims(self) -> tuple:
        return self.blocks[0].dims if self.blocks else None

    def forward(self, g: AttributedGraph) -> tuple:
        out, traces = stack_forward(self.blocks, g)
        if self.head == "displacement":
            pred = out.coords - g.coords
        else:
            pred = out.global_attr[:1].copy()
        return pred, (g, out, traces)

    def backward(self, cache, g_pred) -> BlockOutput:
        g, out, traces = cache
        up = BlockOutput(None, None, None, None)
        if self.head == "displacement":
            up.coords = np.asarray(g_pred, dtype=np.float64)
        else:
            gu = np.zeros_like(out.global_attr)
            gu[:1] = g_pred
            up.global_attr = gu
        return stack_backward(self.blocks, traces, up)

    def parameters(self):
        for b in self.blocks:
            yield from b.parameters()

    def zero_grad(self):
        for b in self.blocks:
            b.zero_grad()

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "kind": self.kind,
            "head": self.head,
            "dim": self.dim,
            "blocks": [block_to_dict(b) for b in self.blocks],
        }


@dataclass(eq=False)
class GnModel:
    """Baseline: node attributes are ``[v, x]``, so geometry is seen raw."""

    blocks: list
    head: str
    dim: int

    kind = "gn"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValidationError(f"unknown head {self.head!r}")
        check_stack(self.blocks)

    def _augment(self, g: AttributedGraph) -> AttributedGraph:
        return g.with_(node_attrs=np.concatenate([g.node_attrs, g.coords], axis=1), coords=None)

    def forward(self, g: AttributedGraph) -> tuple:
        out, traces = stack_forward(self.blocks, self._augment(g))
        if self.head == "displacement":
            pred = out.node_attrs[:, -self.dim :].copy()
        else:
            pred = out.global_attr[:1].copy()
        return pred, (g, out, traces)

    def backward(self, cache, g_pred) -> BlockOutput:
        g, out, traces = cache
        up = BlockOutput(None, None, None, None)
        if self.head == "displacement":
            gv = np.zeros_like(out.node_attrs)
            gv[:, -self.dim :] = g_pred
            up.node_attrs = gv
        else:
            gu = np.zeros_like(out.global_attr)
            gu[:1] = g_pred
            up.global_attr = gu
        return stack_backward(self.blocks, traces, up)

    def parameters(self):
        for b in self.blocks:
            yield from b.parameters()

    def zero_grad(self):
        for b in self.blocks:
            b.zero_grad()

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "kind": self.kind,
            "head": self.head,
            "dim": self.dim,
            "blocks": [block_to_dict(b) for b in self.blocks],
        }


@dataclass
class ModelConfig:
    head: str = "displacement"
    dim: int = 3
    layers: int = 2
    hidden: int = 32
    attr_dim: int = 4
    activation: str = "tanh"
    aggregators: Sequence[str] = ("sum", "sum", "sum", "sum")
    coord_update_scale: float = 1.0
    coord_normalize: bool = False
    kind: str = "egn"

    def __post_init__(self):
        for name in ("dim", "layers", "hidden", "attr_dim"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if self.head not in HEADS:
            raise ValidationError(f"unknown head {self.head!r}")
        if self.kind not in ("egn", "gn"):
            raise ValidationError(f"unknown model kind {self.kind!r}")


def build_model(cfg: ModelConfig, seed: SeedLike = 0):
    """Freshly initialised model.

    Attribute widths are ``cfg.attr_dim`` for edges, nodes and the global
    vector; the baseline adds ``cfg.dim`` node channels for the coordinates.
    """
    rng = as_generator(seed)
    a = cfg.attr_dim
    if cfg.kind == "egn":
        blocks = [
            init_egn_block(
                a, a, a, hidden=(cfg.hidden,), activation=cfg.activation,
                aggregators=cfg.aggregators, coord_update_scale=cfg.coord_update_scale,
                coord_normalize=cfg.coord_normalize, seed=rng,
            )
            for _ in range(cfg.layers)
        ]
        return EgnModel(blocks, cfg.head, cfg.dim)
    blocks = [
        init_gn_block(a, a + cfg.dim, a, hidden=(cfg.hidden,), activation=cfg.activation,
                      aggregators=cfg.aggregators[:3], seed=rng)
        for _ in range(cfg.layers)
    ]
    return GnModel(blocks, cfg.head, cfg.dim)


def model_from_dict(d: dict):
    if d.get("version") != MODEL_VERSION:
        raise ValidationError(f"unsupported model checkpoint version {d.get('version')!r}")
    blocks = [block_from_dict(b) for b in d["blocks"]]
    cls = EgnModel if d.get("kind", "egn") == "egn" else GnModel
    return cls(blocks, d["head"], int(d["dim"]))


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()) + "\n", encoding="utf-8")


def load_model(path):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read checkpoint {path}: {exc}") from exc
    return model_from_dict(d)


def check_compatible(model, g: AttributedGraph) -> None:
    a = model.blocks[0].dims if model.blocks else None
    if g.coords is None or g.coords.shape[1] != model.dim:
        raise DimensionError(f"model expects {model.dim}-d coordinates")
    if a is not None:
        ne, nv, nu = a
        if model.kind == "gn":
            nv -= model.dim
        if (g.edge_dim, g.node_dim, g.global_dim) != (ne, nv, nu):
            raise DimensionError(
                f"model expects attribute widths {(ne, nv, nu)}, data has "
                f"{(g.edge_dim, g.node_dim, g.global_dim)}"
            )
