"""Violation metrics and a finite-difference gradient oracle."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

TINY = 1e-300


def rel_violation(actual, expected) -> float:
    """``max|actual - expected| / max|expected|`` (0 for empty arrays)."""
    a = np.asarray(actual, dtype=np.float64)
    e = np.asarray(expected, dtype=np.float64)
    if a.shape != e.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {e.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - e)) / max(float(np.max(np.abs(e))), TINY))


def entrywise_rel_violation(actual, expected) -> float:
    """Largest per-entry ``|a - e| / |e|``."""
    a = np.asarray(actual, dtype=np.float64)
    e = np.asarray(expected, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - e) / np.maximum(np.abs(e), TINY)))


def abs_violation(actual, expected) -> float:
    a = np.asarray(actual, dtype=np.float64)
    e = np.asarray(expected, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - e)))


def grad_violation(analytic, numeric, floor: float = 1e-8) -> float:
    """Relative gradient error; entries below ``floor`` in magnitude compare absolutely."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    mag = np.maximum(np.abs(a), np.abs(n))
    err = np.abs(a - n)
    return float(np.max(np.where(mag < floor, err, err / np.maximum(mag, floor))))


def central_difference(
    outputs: Callable[[], Iterable[np.ndarray]],
    cotangents: Iterable[np.ndarray],
    param: np.ndarray,
    index,
    h: float = 1e-5,
) -> float:
    """Derivative of ``sum_k <c_k, y_k>`` w.r.t. ``param[index]``.

    ``outputs`` recomputes the outputs ``y_k`` from the current parameter
    values.  Outputs are differenced before contracting with the cotangents,
    so outputs that do not depend on the parameter contribute exactly zero.
    """
    cots = [np.asarray(c) for c in cotangents]
    old = param[index]
    param[index] = old + h
    plus = [np.array(y, dtype=np.float64) for y in outputs()]
    param[index] = old - h
    minus = [np.array(y, dtype=np.float64) for y in outputs()]
    param[index] = old
    return float(sum(np.sum(c * (p - m)) for c, p, m in zip(cots, plus, minus)) / (2 * h))


def numeric_gradient(outputs, cotangents, param: np.ndarray, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central-difference gradient over all (or the given) entries of ``param``."""
    idx = list(np.ndindex(param.shape)) if indices is None else list(indices)
    return np.array([central_difference(outputs, cotangents, param, i, h) for i in idx])
