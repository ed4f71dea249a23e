"""Small shared array helpers."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError


def as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def as_batch(x, dim: int, what: str = "input"):
    """Coerce a vector or a stack of vectors to shape (N, dim).

    Returns the 2-D array and a flag telling whether the input was a single
    vector (so callers can squeeze the result back).
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise InvalidArgumentError(
                f"{what} has dimension {arr.shape[0]}, expected {dim}")
        return arr[None, :], True
    if arr.ndim == 2:
        if arr.shape[1] != dim:
            raise InvalidArgumentError(
                f"{what} has dimension {arr.shape[1]}, expected {dim}")
        return arr, False
    raise InvalidArgumentError(f"{what} must be 1-D or 2-D, got ndim={arr.ndim}")


def unbatch(y: np.ndarray, single: bool) -> np.ndarray:
    return y[0] if single else y


def spectral_norm(mat: np.ndarray) -> float:
    if mat.size == 0:
        return 0.0
    return float(np.linalg.norm(mat, 2))


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of a (N,d) and b (M,d).

    Computed from explicit differences: the gram-matrix identity loses
    absolute accuracy near zero, which matters for coincident points.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
