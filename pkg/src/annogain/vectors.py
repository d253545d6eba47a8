"""Unit-vector utilities shared by the index, engine, and corpus pipeline.

All feature vectors in a session live on the unit sphere: they are
L2-normalized once at ingestion and cosine similarity is a plain dot
product afterwards. On unit vectors the Euclidean and cosine metrics are
tied by ||a - b|| = sqrt(2 * cosine_distance(a, b)).
"""

from __future__ import annotations

import numpy as np

# Ingestion tolerance: vectors whose norm is within this of 1.0 are accepted
# as "already normalized"; anything else nonzero is rescaled.
NORM_TOLERANCE = 1e-4


class VectorError(ValueError):
    """Raised when a vector fails the ingestion invariants."""


def as_unit(v, dim: int) -> np.ndarray:
    """Validate and normalize one vector to a float32 unit vector.

    Args:
        v: array-like of floats.
        dim: required dimensionality for this session.

    Returns:
        float32 array of shape (dim,) with L2 norm 1 (up to float32 rounding).

    Raises:
        VectorError: on dimension mismatch, non-finite components, or a
            zero-norm vector that cannot be normalized.
    """
    arr = np.asarray(v, dtype=np.float32).reshape(-1)
    if arr.shape[0] != dim:
        raise VectorError(f"dimension mismatch: expected {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise VectorError("vector has non-finite components")
    norm = float(np.linalg.norm(arr.astype(np.float64)))
    if norm == 0.0:
        raise VectorError("zero vector cannot be normalized")
    out = (arr.astype(np.float64) / norm).astype(np.float32)
    return out


def as_unit_rows(mat, dim: int) -> np.ndarray:
    """Vectorized form of :func:`as_unit` for a (n, dim) batch."""
    arr = np.asarray(mat, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise VectorError(f"dimension mismatch: expected (*, {dim}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise VectorError("batch has non-finite components")
    norms = np.linalg.norm(arr.astype(np.float64), axis=1)
    if np.any(norms == 0.0):
        raise VectorError("batch contains a zero vector")
    return (arr.astype(np.float64) / norms[:, None]).astype(np.float32)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Similarity of two unit vectors, clamped into [-1, 1]."""
    return float(np.clip(np.dot(a.astype(np.float64), b.astype(np.float64)), -1.0, 1.0))


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    return 1.0 - cosine_similarity(a, b)


def random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Seeded Gaussian-then-normalized unit vector."""
    return as_unit(rng.standard_normal(dim), dim)


def unit_at_distance(rng: np.random.Generator, base: np.ndarray, dist: float) -> np.ndarray:
    """Unit vector at exactly the given cosine distance from ``base``.

    Rotates ``base`` inside the plane spanned by ``base`` and a random
    orthogonal direction, by the angle whose cosine is ``1 - dist``.
    """
    dim = base.shape[0]
    base64 = base.astype(np.float64)
    w = rng.standard_normal(dim)
    w -= np.dot(w, base64) * base64
    wn = np.linalg.norm(w)
    if wn == 0.0:  # astronomically unlikely; retry with a fresh draw
        return unit_at_distance(rng, base, dist)
    w /= wn
    cos_t = 1.0 - dist
    sin_t = np.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    return as_unit(cos_t * base64 + sin_t * w, dim)
