"""Elements of the Euclidean group E(n) and their action on point sets.

An isometry is stored as a pair ``(Q, z)`` with ``Q`` orthogonal and acts on
a point as ``x -> Q @ x + z``.  Point sets are ``(N, n)`` float arrays with
one point per row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .rng import SeedLike, as_generator

ORTHO_TOL = 1e-12
DET_TOL = 1e-9


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def check_orthogonal(q: np.ndarray, tol: float = ORTHO_TOL) -> None:
    """Raise ValidationError unless ``q`` is orthogonal to within ``tol``."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] == 0:
        raise DimensionError(f"orthogonal matrix must be square and non-empty, got {q.shape}")
    err = np.max(np.abs(q.T @ q - np.eye(q.shape[0])))
    if err > tol:
        raise ValidationError(f"matrix is not orthogonal: max |QᵀQ - I| = {err:.3e}")
    det = np.linalg.det(q)
    if abs(abs(det) - 1.0) > DET_TOL:
        raise ValidationError(f"orthogonal matrix has determinant {det}")


def as_coords(xs) -> np.ndarray:
    """Validate a point set: a finite ``(N, n)`` float array."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2:
        raise DimensionError(f"coordinates must be an (N, n) array, got shape {xs.shape}")
    if not np.all(np.isfinite(xs)):
        raise ValidationError("coordinates must be finite")
    return xs


@dataclass(frozen=True, eq=False)
class Isometry:
    """One element of E(n): ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = _frozen(self.rotation)
        z = _frozen(self.translation)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise DimensionError(f"rotation must be square, got {q.shape}")
        if z.shape != (q.shape[0],):
            raise DimensionError(
                f"translation length {z.shape} does not match rotation dimension {q.shape[0]}"
            )
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", z)

    @property
    def n(self) -> int:
        return self.rotation.shape[0]

    def __call__(self, xs) -> np.ndarray:
        return apply_isometry(self, xs)

    def __matmul__(self, other: "Isometry") -> "Isometry":
        return compose(self, other)

    def allclose(self, other: "Isometry", atol: float = ORTHO_TOL) -> bool:
        return (
            self.n == other.n
            and np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )


def identity(n: int) -> Isometry:
    if n < 1:
        raise ValidationError("dimension must be at least 1")
    return Isometry(np.eye(n), np.zeros(n))


def apply_isometry(g: Isometry, xs) -> np.ndarray:
    """Map every row ``x`` of ``xs`` to ``Q @ x + z``."""
    xs = as_coords(xs)
    if xs.shape[1] != g.n:
        raise DimensionError(f"isometry acts on R^{g.n}, points live in R^{xs.shape[1]}")
    return xs @ g.rotation.T + g.translation


def compose(g1: Isometry, g2: Isometry) -> Isometry:
    """``g1`` after ``g2``: ``x -> Q1 (Q2 x + z2) + z1``."""
    if g1.n != g2.n:
        raise DimensionError(f"cannot compose isometries of R^{g1.n} and R^{g2.n}")
    return Isometry(g1.rotation @ g2.rotation, g1.rotation @ g2.translation + g1.translation)


def inverse(g: Isometry) -> Isometry:
    qt = g.rotation.T
    return Isometry(qt, -(qt @ g.translation))


def random_orthogonal(n: int, seed: SeedLike) -> np.ndarray:
    """Haar-distributed element of O(n).

    QR-factorises a standard Gaussian matrix and flips each column of ``Q``
    by the sign of the matching diagonal entry of ``R``; without the sign
    fix the distribution is biased by LAPACK's sign convention.
    """
    if n < 1:
        raise ValidationError("dimension must be at least 1")
    rng = as_generator(seed)
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    q.setflags(write=False)
    return q


def random_isometry(n: int, translation_scale: float = 1.0, seed: SeedLike = 0) -> Isometry:
    """Haar rotation plus a translation uniform in ``[-scale, scale]^n``."""
    if translation_scale < 0 or not np.isfinite(translation_scale):
        raise ValidationError(f"translation_scale must be finite and >= 0, got {translation_scale}")
    rng = as_generator(seed)
    q = random_orthogonal(n, rng)
    z = rng.uniform(-translation_scale, translation_scale, size=n) if translation_scale > 0 else np.zeros(n)
    return Isometry(q, z)


def pairwise_sq_dist(xs, edges) -> np.ndarray:
    """Squared Euclidean length ``|x_a - x_b|^2`` for every edge ``(a, b)``."""
    xs = as_coords(xs)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= xs.shape[0]):
        raise IndexError(f"edge endpoint out of range for {xs.shape[0]} points")
    diff = xs[edges[:, 0]] - xs[edges[:, 1]]
    return np.sum(diff * diff, axis=1)
