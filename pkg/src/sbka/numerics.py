"""Deterministic numeric primitives shared by the rest of the package.

All randomness goes through :func:`make_rng`, a numpy ``Generator`` driven by
the Philox4x64 counter-based bit generator. Philox is specified independently
of platform and thread count, so a given seed reproduces the same stream
everywhere numpy runs.
"""
from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np

from .errors import DimensionError, NumericError

KL_FLOOR = 1e-12
_U64 = 2**64


def make_rng(seed: int) -> np.random.Generator:
    """Philox-backed generator for a 64-bit unsigned seed."""
    if not 0 <= int(seed) < _U64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(int(seed)))


def derive_seed(seed: int, name: str) -> int:
    """Sub-seed for a named consumer: first 8 bytes (LE) of sha256("<seed>:<name>")."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains non-finite entries")


def softmax(v, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax along ``axis`` (rows for a 2-D batch)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise DimensionError("softmax of an empty vector")
    _check_finite(v, "softmax input")
    z = np.exp(v - v.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def log_softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise DimensionError("log_softmax of an empty vector")
    _check_finite(v, "log_softmax input")
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def kl_divergence(p, q, floor: float = KL_FLOOR) -> float:
    """KL(p || q) with ``q`` floored at ``floor`` and 0 * log(0 / q) taken as 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"dimension mismatch: {p.shape} vs {q.shape}")
    q = np.maximum(q, floor)
    mask = p > 0
    return float(max(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))), 0.0))


def entropy(p, axis: int = -1) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    logs = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logs, axis=axis)


def seeded_gaussian_vector(seed: int, dim: int) -> np.ndarray:
    """``dim`` standard-normal draws from the Philox stream for ``seed``."""
    if dim < 1:
        raise DimensionError("dim must be >= 1")
    return make_rng(seed).standard_normal(dim)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (any array shape)."""
    if h <= 0:
        raise ValueError("step size must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    """max|a - b| / max(max|a|, max|b|, floor), i.e. relative error in the max-norm.

    Computed per tensor; an elementwise ratio is dominated by finite-difference
    round-off on entries that happen to sit near zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), floor)
    return float(np.max(np.abs(a - b)) / scale)
