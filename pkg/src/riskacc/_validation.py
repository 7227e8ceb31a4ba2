"""Input validation helpers shared across modules."""

from __future__ import annotations

import numpy as np

PROB_TOL = 1e-9


def check_probability_vector(p, tol: float = PROB_TOL) -> np.ndarray:
    p = np.array(p, dtype=float).ravel()
    if p.size == 0 or not np.all(np.isfinite(p)):
        raise ValueError("probability vector must be finite and nonempty")
    if p.min() < -tol or abs(p.sum() - 1.0) > tol:
        raise ValueError(f"not a probability vector: {p}")
    return p


def check_transition_matrix(P, tol: float = PROB_TOL) -> np.ndarray:
    P = np.array(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise ValueError("transition matrix must be square and nonempty")
    if not np.all(np.isfinite(P)) or P.min() < -tol:
        raise ValueError("transition matrix entries must be finite and nonnegative")
    sums = P.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol):
        raise ValueError(f"rows must sum to 1, got {sums}")
    return P


def check_modes(w, d: int) -> np.ndarray:
    """Return ``w`` as an int array of 1-based modes, or raise."""
    arr = np.asarray(w)
    if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValueError("modes must be integers")
    arr = arr.astype(np.int64).ravel()
    if arr.size and (arr.min() < 1 or arr.max() > d):
        raise ValueError(f"modes must lie in 1..{d}")
    return arr


def check_delta(delta: float) -> float:
    delta = float(delta)
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    return delta
