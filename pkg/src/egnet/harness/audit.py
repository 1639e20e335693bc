"""Randomised equivariance and gradient audit of an equivariant model.

For each sample the audit draws a random directed graph with Gaussian
attributes and coordinates, a random isometry and a random node
permutation, then measures

* ``en_edges``, ``en_nodes``, ``en_global``: relative change of the updated
  edge, node and global attributes when the input coordinates are moved by
  the isometry (should be zero);
* ``en_coords``: relative gap between the updated coordinates of the moved
  input and the moved updated coordinates;
* ``permutation``: largest absolute gap between relabel-then-run and
  run-then-relabel;
* ``gradient``: relative gap between backpropagated gradients and central
  differences through the extended-precision reference (a random subset of
  parameter entries plus all coordinate and global inputs).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .. import reference
from ..checks import abs_violation, grad_violation, rel_violation
from ..errors import ValidationError
from ..euclid import random_isometry
from ..graph import inverse_permutation, permute_graph, random_graph
from ..layers import Aggregator, BlockOutput, EgnBlock, stack_backward, stack_forward
from ..rng import derive_seed
from .model import EgnModel, model_from_dict

EN_TOL = 1e-9
MAX_PERM_TOL = 1e-12
GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    max_violation: float
    tolerance: float
    samples: int
    seed: int

    @property
    def passed(self) -> bool:
        return bool(self.max_violation <= self.tolerance)

    def to_dict(self) -> dict:
        return {
            "max_violation": self.max_violation,
            "tolerance": self.tolerance,
            "samples": self.samples,
            "pass": self.passed,
            "seed": self.seed,
        }


@dataclass
class AuditReport:
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def to_dict(self) -> dict:
        return {name: c.to_dict() for name, c in sorted(self.checks.items())}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary_lines(self) -> list:
        return [
            f"{'PASS' if c.passed else 'FAIL'} {name}: max violation {c.max_violation:.3e} "
            f"(tolerance {c.tolerance:.0e}, {c.samples} samples)"
            for name, c in sorted(self.checks.items())
        ]


def _blocks_of(model) -> list:
    blocks = model.blocks if hasattr(model, "blocks") else list(model)
    if not all(isinstance(b, EgnBlock) for b in blocks):
        raise ValidationError("the audit applies to equivariant blocks only")
    return list(blocks)


def audit(
    model,
    n_samples: int,
    seed: int = 0,
    *,
    max_nodes: int = 8,
    translation_scale: float = 5.0,
    grad_samples: int = 3,
    grad_nodes: int = 4,
    grad_params: int = 16,
) -> AuditReport:
    """Run all property suites; failures are report content, not exceptions."""
    if n_samples < 1:
        raise ValidationError("n_samples must be at least 1")
    blocks = _blocks_of(model)
    dim = model.dim if hasattr(model, "dim") else 3
    if blocks:
        ne, nv, nu = blocks[0].dims
    else:
        ne = nv = nu = 1
    uses_max = any(
        getattr(b, name) is Aggregator.MAX for b in blocks for name in ("rho_ev", "rho_eu", "rho_vu", "rho_xu")
    )
    rng = np.random.default_rng(derive_seed(seed, "audit"))

    worst = dict.fromkeys(("en_edges", "en_nodes", "en_coords", "en_global", "permutation"), 0.0)
    for _ in range(n_samples):
        n = int(rng.integers(2, max_nodes + 1))
        g = random_graph(n, nv, ne, nu, dim, rng)
        iso = random_isometry(dim, translation_scale, rng)
        out, _ = stack_forward(blocks, g)
        moved, _ = stack_forward(blocks, g.transformed(iso))
        worst["en_edges"] = max(worst["en_edges"], rel_violation(moved.edge_attrs, out.edge_attrs))
        worst["en_nodes"] = max(worst["en_nodes"], rel_violation(moved.node_attrs, out.node_attrs))
        worst["en_global"] = max(worst["en_global"], rel_violation(moved.global_attr, out.global_attr))
        worst["en_coords"] = max(worst["en_coords"], rel_violation(moved.coords, iso(out.coords)))

        perm = rng.permutation(n)
        inv = inverse_permutation(perm)
        relabeled, _ = stack_forward(blocks, permute_graph(g, perm))
        gap = max(
            abs_violation(relabeled.edge_attrs, out.edge_attrs),
            abs_violation(relabeled.node_attrs, out.node_attrs[inv]),
            abs_violation(relabeled.coords, out.coords[inv]),
            abs_violation(relabeled.global_attr, out.global_attr),
        )
        worst["permutation"] = max(worst["permutation"], gap)

    report = AuditReport()
    for name in ("en_edges", "en_nodes", "en_coords", "en_global"):
        report.checks[name] = CheckResult(worst[name], EN_TOL, n_samples, seed)
    report.checks["permutation"] = CheckResult(
        worst["permutation"], MAX_PERM_TOL if uses_max else 0.0, n_samples, seed
    )

    grad_rng = np.random.default_rng(derive_seed(seed, "audit-gradient"))
    k = min(n_samples, grad_samples)
    worst_grad = 0.0
    for _ in range(k):
        worst_grad = max(worst_grad, _gradient_sample(blocks, dim, (ne, nv, nu), grad_rng, grad_nodes, grad_params))
    report.checks["gradient"] = CheckResult(worst_grad, GRAD_TOL, k, seed)
    return report


def _gradient_sample(blocks, dim, dims, rng, max_nodes, n_params) -> float:
    ne, nv, nu = dims
    n = int(rng.integers(2, max_nodes + 1))
    g = random_graph(n, nv, ne, nu, dim, rng)
    out, traces = stack_forward(blocks, g)
    cots = {
        "e": rng.standard_normal(out.edge_attrs.shape),
        "v": rng.standard_normal(out.node_attrs.shape),
        "x": rng.standard_normal(out.coords.shape),
        "u": rng.standard_normal(out.global_attr.shape),
    }
    for b in blocks:
        b.zero_grad()
    grads_in = stack_backward(blocks, traces, BlockOutput(cots["e"], cots["v"], cots["u"], cots["x"]))

    entries, analytic = [], []
    all_entries = [
        (bi, pi, fi)
        for bi, b in enumerate(blocks)
        for pi, (p, _) in enumerate(b.parameters())
        for fi in range(p.size)
    ]
    if all_entries:
        pick = rng.choice(len(all_entries), size=min(n_params, len(all_entries)), replace=False)
        entries = [all_entries[i] for i in sorted(pick)]
        grads = [[gr for _, gr in b.parameters()] for b in blocks]
        analytic = [grads[bi][pi].ravel()[fi] for bi, pi, fi in entries]
    numeric_params, numeric_inputs = reference.numeric_gradients(
        blocks, g, cots, param_entries=entries, inputs=("x", "u")
    )
    worst = grad_violation(np.array(analytic), numeric_params) if entries else 0.0
    worst = max(worst, grad_violation(grads_in.coords, numeric_inputs["x"]))
    worst = max(worst, grad_violation(grads_in.global_attr, numeric_inputs["u"]))
    for b in blocks:
        b.zero_grad()
    return worst


def with_coordinate_leak(model: EgnModel, seed: int = 0) -> EgnModel:
    """Copy of ``model`` whose edge updates also read absolute sender coordinates.

    A negative control: the audit must flag this model.
    """
    rng = np.random.default_rng(derive_seed(seed, "leak"))
    leaked = model_from_dict(model.to_dict())
    for b in leaked.blocks:
        first = b.phi_e.layers[0]
        bound = np.sqrt(6.0 / (first.n_in + first.n_out))
        extra = rng.uniform(-bound, bound, size=(first.n_out, model.dim))
        first.weight = np.concatenate([first.weight, extra], axis=1)
        first.grad_weight = np.zeros_like(first.weight)
        b.coord_leak_dim = model.dim
        b.__post_init__()
    return leaked
