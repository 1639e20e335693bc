"""Shared oracles for the block tests and the acceptance suite."""

import numpy as np

from egnet import reference
from egnet.checks import grad_violation
from egnet.graph import random_graph
from egnet.layers import BlockOutput, EgnBlock, init_egn_block, init_gn_block, stack_backward, stack_forward

KINDS = ("sum", "mean", "max")


def random_aggregators(rng, count):
    return tuple(str(k) for k in rng.choice(KINDS, size=count))


def random_egn_block(rng, dims=(2, 3, 2), hidden=(8,), aggregators=None, **kw):
    aggs = aggregators or random_aggregators(rng, 4)
    return init_egn_block(*dims, hidden=hidden, aggregators=aggs, seed=int(rng.integers(1 << 31)), **kw)


def random_gn_block(rng, dims=(2, 3, 2), hidden=(8,), aggregators=None):
    aggs = aggregators or random_aggregators(rng, 3)
    return init_gn_block(*dims, hidden=hidden, aggregators=aggs, seed=int(rng.integers(1 << 31)))


def graph_for(block, n, rng, coord_dim=3, p=0.5):
    ne, nv, nu = block.dims
    return random_graph(n, nv, ne, nu, coord_dim if isinstance(block, EgnBlock) else None, rng, p=p)


def full_gradient_violation(blocks, g, rng, h=1e-5):
    """Worst gradient error over every parameter and input entry of a stack.

    Backpropagated gradients of ``sum <c, y>`` for random cotangents ``c``
    against central differences through the extended-precision reference.
    """
    blocks = list(blocks)
    out, traces = stack_forward(blocks, g)
    cots = {
        "e": rng.standard_normal(out.edge_attrs.shape),
        "v": rng.standard_normal(out.node_attrs.shape),
        "u": rng.standard_normal(out.global_attr.shape),
    }
    if out.coords is not None:
        cots["x"] = rng.standard_normal(out.coords.shape)
    for b in blocks:
        b.zero_grad()
    grads_in = stack_backward(blocks, traces, BlockOutput(cots["e"], cots["v"], cots["u"], cots.get("x")))
    num_params, num_inputs = reference.numeric_gradients(blocks, g, cots, h=h)

    worst = 0.0
    for b, nums in zip(blocks, num_params):
        for (_, analytic), numeric in zip(b.parameters(), nums):
            worst = max(worst, grad_violation(analytic, numeric))
    analytic_in = {"e": grads_in.edge_attrs, "v": grads_in.node_attrs, "u": grads_in.global_attr, "x": grads_in.coords}
    for key, numeric in num_inputs.items():
        worst = max(worst, grad_violation(analytic_in[key], numeric))
    for b in blocks:
        b.zero_grad()
    return worst


def as_float(d):
    return {k: np.asarray(v, dtype=np.float64) for k, v in d.items()}
