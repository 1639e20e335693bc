"""Graph network blocks equivariant to E(n), built on numpy.

Submodules: ``euclid`` (isometries), ``graph`` (topology and attributes),
``nn`` (MLPs, aggregators), ``layers`` (GN / EGN blocks), ``reference``
(naive oracle), ``checks`` (violation metrics) and ``harness`` (data,
training, audit, CLI).
"""

from .errors import DimensionError, TrainingError, ValidationError
from .euclid import Isometry, apply_isometry, compose, identity, inverse, pairwise_sq_dist, random_isometry, random_orthogonal
from .graph import AttributedGraph, GraphTopology, build_topology, fully_connected, permute_graph, random_graph
from .layers import (
    BlockOutput,
    EgnBlock,
    GnBlock,
    egn_block_backward,
    egn_block_forward,
    embed_gn_block,
    gn_block_backward,
    gn_block_forward,
    init_egn_block,
    init_gn_block,
    readout_invariant,
    stack_backward,
    stack_forward,
)
from .nn import Aggregator, Mlp, aggregate, aggregate_backward, mlp_backward, mlp_forward, mlp_init

__version__ = "0.1.0"
