"""Straight-line reference evaluation of the block updates.

This is a second, deliberately naive implementation: explicit loops over
edges and nodes, plain ``W @ x + b`` layers, no shared code with
:mod:`egnet.layers` beyond reading parameters and aggregator tags.  It runs
in any float dtype, by default ``numpy.longdouble``.

Two uses:

* cross-check the vectorised forward passes;
* act as the finite-difference oracle for gradients.  At ``h = 1e-5`` a
  float64 central difference carries about ``1e-11`` of rounding noise,
  which is larger than ``1e-4`` of a saturated-tanh gradient.  Evaluating
  the same differences in extended precision (64-bit mantissa on x86)
  pushes the noise below ``1e-14``.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

EXTENDED = np.longdouble


def block_params(block, dtype=EXTENDED) -> list:
    """Parameter copies as ``[[W, b], ...]`` per MLP, in ``block.parameters()`` order."""
    return [
        [[layer.weight.astype(dtype), layer.bias.astype(dtype), layer.activation] for layer in m.layers]
        for m in block.mlps.values()
    ]


def flat_params(params: list) -> list:
    """Flatten :func:`block_params` output, matching ``block.parameters()``."""
    return [arr for mlp in params for layer in mlp for arr in layer[:2]]


def mlp(layers, x):
    for w, b, act in layers:
        x = w @ x + b
        if act == "tanh":
            x = np.tanh(x)
        elif act == "relu":
            x = np.where(x > 0, x, 0 * x)
    return x


def reduce(kind: str, items: list, d: int, dtype):
    if not items:
        return np.zeros(d, dtype=dtype)
    if kind == "max":
        m = items[0].copy()
        for it in items[1:]:
            m = np.maximum(m, it)
        return m
    s = np.zeros(d, dtype=dtype)
    for it in items:
        s = s + it
    return s / len(items) if kind == "mean" else s


def _sq(p, q):
    d = p - q
    return np.sum(d * d)


def block_apply(block, params: list, state: dict, edges: Sequence, n: int) -> dict:
    """One block update on ``state = {"e", "v", "u"[, "x"]}``.

    ``edges`` is a list of ``(sender, receiver)`` pairs; ``params`` comes from
    :func:`block_params`.
    """
    equivariant = hasattr(block, "phi_x")
    e, v, u = state["e"], state["v"], state["u"]
    dtype = u.dtype
    ne, nv, nu = block.dims
    if equivariant:
        p_e, p_v, p_x, p_u = params
    else:
        p_e, p_v, p_u = params

    e_new = []
    for k, (a, b) in enumerate(edges):
        parts = [e[k], v[a], v[b]]
        if equivariant:
            parts.append(np.array([_sq(state["x"][a], state["x"][b])], dtype=dtype))
        parts.append(u)
        if equivariant and block.coord_leak_dim:
            parts.append(state["x"][a])
        e_new.append(mlp(p_e, np.concatenate(parts)))

    v_new = []
    for i in range(n):
        incoming = [e_new[k] for k, (_, b) in enumerate(edges) if b == i]
        agg = reduce(block.rho_ev.value, incoming, ne, dtype)
        v_new.append(mlp(p_v, np.concatenate([agg, v[i], u])))

    out = {
        "e": np.array(e_new, dtype=dtype).reshape(len(edges), ne),
        "v": np.array(v_new, dtype=dtype).reshape(n, nv),
    }
    glob = [reduce(block.rho_eu.value, e_new, ne, dtype), reduce(block.rho_vu.value, v_new, nv, dtype)]

    if equivariant:
        x = state["x"]
        x_new = []
        for i in range(n):
            shift = np.zeros(x.shape[1], dtype=dtype)
            count = 0
            for k, (a, b) in enumerate(edges):
                if b != i or a == i:
                    continue
                gate = mlp(p_x, np.concatenate([e_new[k], v_new[i], v_new[a], u]))[0]
                shift = shift + (x[i] - x[a]) * gate
                count += 1
            scale = block.coord_update_scale
            if block.coord_normalize:
                scale = scale / max(count, 1)
            x_new.append(x[i] + scale * shift)
        x_new = np.array(x_new, dtype=dtype).reshape(x.shape)
        out["x"] = x_new
        dists = [np.array([_sq(x_new[a], x_new[b])], dtype=dtype) for a, b in edges]
        glob.append(reduce(block.rho_xu.value, dists, 1, dtype))
    elif "x" in state:
        out["x"] = state["x"]

    out["u"] = mlp(p_u, np.concatenate(glob + [u]))
    return out


def graph_state(g, dtype=EXTENDED) -> dict:
    s = {
        "e": g.edge_attrs.astype(dtype),
        "v": g.node_attrs.astype(dtype),
        "u": g.global_attr.astype(dtype),
    }
    if g.coords is not None:
        s["x"] = g.coords.astype(dtype)
    return s


def stack_apply(blocks: Sequence, param_list: Sequence, state: dict, edges, n: int) -> dict:
    for b, p in zip(blocks, param_list):
        state = block_apply(b, p, state, edges, n)
    return state


def forward(blocks: Sequence, g, dtype=EXTENDED) -> dict:
    """Reference outputs of a block stack, as float arrays of ``dtype``."""
    blocks = list(blocks)
    params = [block_params(b, dtype) for b in blocks]
    return stack_apply(blocks, params, graph_state(g, dtype), g.topology.edge_list(), g.n_nodes)


OUTPUT_KEYS = ("e", "v", "x", "u")


def numeric_gradients(
    blocks: Sequence,
    g,
    cotangents: dict,
    h: float = 1e-5,
    dtype=EXTENDED,
    param_entries: Optional[Sequence] = None,
    inputs: Sequence[str] = ("e", "v", "x", "u"),
) -> tuple:
    """Central differences of ``sum_k <c_k, y_k>`` through the reference stack.

    ``cotangents`` maps output keys (``e``, ``v``, ``x``, ``u``) to arrays.
    Returns ``(param_grads, input_grads)``: ``param_grads`` is a list (one per
    block) of arrays shaped like ``block.parameters()``, or, when
    ``param_entries`` lists ``(block, param, flat_index)`` triples, a flat
    array in that order.  ``input_grads`` maps each requested input key to
    an array.
    """
    blocks = list(blocks)
    params = [block_params(b, dtype) for b in blocks]
    flats = [flat_params(p) for p in params]
    state0 = graph_state(g, dtype)
    edges, n = g.topology.edge_list(), g.n_nodes
    cots = {k: np.asarray(c, dtype=dtype) for k, c in cotangents.items()}
    hh = dtype(h)

    def outputs(state):
        return stack_apply(blocks, params, state, edges, n)

    def diff(plus, minus):
        total = dtype(0)
        for k, c in cots.items():
            total = total + np.sum(c * (plus[k] - minus[k]))
        return float(total / (2 * hh))

    def entry(arr, idx, state):
        old = arr[idx]
        arr[idx] = old + hh
        plus = outputs(state)
        arr[idx] = old - hh
        minus = outputs(state)
        arr[idx] = old
        return diff(plus, minus)

    if param_entries is None:
        param_grads = []
        for flat in flats:
            grads = []
            for arr in flat:
                gr = np.zeros(arr.shape)
                for idx in np.ndindex(arr.shape):
                    gr[idx] = entry(arr, idx, state0)
                grads.append(gr)
            param_grads.append(grads)
    else:
        param_grads = np.array(
            [entry(flats[bi][pi], np.unravel_index(fi, flats[bi][pi].shape), state0) for bi, pi, fi in param_entries]
        )

    input_grads = {}
    for key in inputs:
        if key not in state0:
            continue
        arr = state0[key]
        gr = np.zeros(arr.shape)
        for idx in np.ndindex(arr.shape):
            gr[idx] = entry(arr, idx, state0)
        input_grads[key] = gr
    return param_grads, input_grads
