"""Seed handling.

Everything random in the package takes a ``seed`` that may be an ``int``, a
``numpy.random.SeedSequence`` or an already constructed ``Generator``.
Components that share one root seed get independent streams through
:func:`derive_seed`, keyed by a fixed text label.
"""

from __future__ import annotations

import zlib
from typing import Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derive_seed(root: int, label: str) -> np.random.SeedSequence:
    """Child seed for component ``label`` under root seed ``root``."""
    return np.random.SeedSequence([int(root), zlib.crc32(label.encode("utf-8"))])
