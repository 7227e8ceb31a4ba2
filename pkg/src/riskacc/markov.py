"""Empirical Markov-chain estimation and l1 ambiguity sets.

Modes are labelled ``1..d`` throughout the public API; matrix rows and
columns are the corresponding zero-based indices.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator

from . import polyhedra
from ._validation import check_modes, check_probability_vector
from .polyhedra import Polyhedron

SINGLETON = "singleton"
L1_BALL = "l1_ball"
FULL_SIMPLEX = "full_simplex"

# l1 diameter of the probability simplex
MAX_RADIUS = 2.0
MAX_FACET_DIM = 12


@dataclass(frozen=True)
class TransitionEstimate:
    """Transition counts and the row-wise empirical distribution.

    ``counts[j, i]`` is the number of observed transitions from mode ``j+1``
    to mode ``i+1``; rows without data get the uniform distribution.
    """

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or np.any(counts < 0):
            raise ValueError("counts must be a square nonnegative integer matrix")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def empty(cls, d: int) -> "TransitionEstimate":
        return cls(np.zeros((d, d), dtype=np.int64))

    @property
    def d(self) -> int:
        return self.counts.shape[0]

    @property
    def n(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def p_hat(self) -> np.ndarray:
        n = self.n
        out = np.full((self.d, self.d), 1.0 / self.d)
        seen = n > 0
        out[seen] = self.counts[seen] / n[seen, None]
        return out

    def row(self, j: int) -> np.ndarray:
        """Empirical distribution of the successor of mode ``j``."""
        nj = self.counts[j - 1].sum()
        if nj == 0:
            return np.full(self.d, 1.0 / self.d)
        return self.counts[j - 1] / nj


def estimate(sample, d: int) -> TransitionEstimate:
    """Count consecutive pairs of a mode sequence."""
    w = check_modes(sample, d)
    if w.size < 1:
        raise ValueError("the sample must contain at least one mode")
    counts = np.zeros((d, d), dtype=np.int64)
    np.add.at(counts, (w[:-1] - 1, w[1:] - 1), 1)
    return TransitionEstimate(counts)


def record_transition(est: TransitionEstimate, src: int, dst: int) -> TransitionEstimate:
    check_modes([src, dst], est.d)
    counts = est.counts.copy()
    counts[src - 1, dst - 1] += 1
    return TransitionEstimate(counts)


def radius(alpha: float, d: int, n: int) -> float:
    """Radius of an l1 ball around an empirical distribution of ``n`` samples
    on ``d`` outcomes that holds the true distribution with probability at
    least ``1 - alpha``; clamped at the simplex diameter 2.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if d < 1 or n < 0:
        raise ValueError("require d >= 1 and n >= 0")
    if n == 0:
        return MAX_RADIUS
    r = (
        np.sqrt(-2.0 * np.log(alpha) / n)
        + np.sqrt(2.0 * (d - 1) / (np.pi * n))
        + 4.0 * np.sqrt(d) * (d - 1) ** 0.25 / n**0.75
    )
    return float(min(MAX_RADIUS, r))


@dataclass(frozen=True)
class AmbiguitySet:
    """A set of distributions on ``d`` outcomes.

    ``kind`` is one of ``"singleton"``, ``"l1_ball"`` (intersection of the
    simplex with an l1 ball) or ``"full_simplex"``.  The center is kept for
    every kind; it is the nominal distribution.
    """

    kind: str
    center: np.ndarray
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in (SINGLETON, L1_BALL, FULL_SIMPLEX):
            raise ValueError(f"unknown ambiguity kind {self.kind!r}")
        center = check_probability_vector(self.center)
        center.setflags(write=False)
        object.__setattr__(self, "center", center)
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        if self.kind == SINGLETON:
            object.__setattr__(self, "radius", 0.0)
        elif self.kind == FULL_SIMPLEX:
            object.__setattr__(self, "radius", MAX_RADIUS)

    @classmethod
    def singleton(cls, p) -> "AmbiguitySet":
        return cls(SINGLETON, p)

    @classmethod
    def full_simplex(cls, d: int, center=None) -> "AmbiguitySet":
        return cls(FULL_SIMPLEX, np.full(d, 1.0 / d) if center is None else center)

    @classmethod
    def l1_ball(cls, center, r: float) -> "AmbiguitySet":
        """Ball of radius ``r``; ``r >= 2`` gives the full simplex."""
        if r >= MAX_RADIUS:
            return cls(FULL_SIMPLEX, center)
        return cls(L1_BALL, center, float(r))

    @property
    def d(self) -> int:
        return self.center.size

    def contains(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p, float)
        if abs(p.sum() - 1) > tol or p.min() < -tol:
            return False
        return bool(np.abs(p - self.center).sum() <= self.radius + tol)

    def __eq__(self, other):
        if not isinstance(other, AmbiguitySet):
            return NotImplemented
        return (self.kind == other.kind and self.radius == other.radius
                and np.array_equal(self.center, other.center))

    def __hash__(self):
        return hash((self.kind, self.radius, self.center.tobytes()))


def ambiguity_rows(est: TransitionEstimate, alpha: float) -> list[AmbiguitySet]:
    n = est.n
    P = est.p_hat
    return [AmbiguitySet.l1_ball(P[j], radius(alpha, est.d, int(n[j]))) for j in range(est.d)]


def ambiguity_to_polyhedron(amb: AmbiguitySet) -> Polyhedron:
    """H-representation over ``mu in R^d``.

    The simplex is written as ``1'mu <= 1``, ``-1'mu <= -1``, ``-mu <= 0``;
    the ball adds the ``2^d`` facets ``s'(mu - center) <= r``.
    """
    d = amb.d
    if d > MAX_FACET_DIM:
        raise ValueError(f"refusing 2^{d} facets (d > {MAX_FACET_DIM})")
    ones = np.ones((1, d))
    rows = [ones, -ones, -np.eye(d)]
    rhs = [[1.0], [-1.0], np.zeros(d)]
    if amb.kind == SINGLETON:
        rows += [np.eye(d), -np.eye(d)]
        rhs += [amb.center, -amb.center]
    elif amb.kind == L1_BALL:
        S = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
        rows.append(S)
        rhs.append(S @ amb.center + amb.radius)
    return Polyhedron(np.vstack(rows), np.concatenate(rhs))


def _max_l1_distance(candidate: AmbiguitySet, point: np.ndarray) -> float:
    """``max ||mu - point||_1`` over ``mu`` in the candidate (a ball or the simplex).

    The distance is the largest of ``s'(mu - point)`` over sign vectors ``s``.
    For fixed ``s`` the best ``mu`` moves mass from the ``s = -1`` entries of
    the center to an ``s = +1`` entry; each unit moved costs 2 of the radius
    and gains 2 in the objective.
    """
    d = candidate.d
    c = candidate.center
    r = MAX_RADIUS if candidate.kind == FULL_SIMPLEX else candidate.radius
    S = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
    movable = np.where(S < 0, c, 0.0).sum(axis=1)
    gain = np.where((S > 0).any(axis=1), 2.0 * np.minimum(r / 2.0, movable), 0.0)
    return float((S @ (c - point) + gain).max())


def is_nested(candidate: AmbiguitySet, incumbent: AmbiguitySet, tol: float = 1e-9,
              method: str = "support") -> bool:
    """True iff ``candidate`` is a subset of ``incumbent``.

    ``method="support"`` bounds the l1 distance over the candidate in closed
    form; ``method="lp"`` compares the polyhedral representations facet by
    facet.  Both are exact.
    """
    if candidate.d != incumbent.d:
        raise ValueError("ambiguity sets over different outcome spaces")
    if method not in ("support", "lp"):
        raise ValueError(f"unknown containment method {method!r}")
    if incumbent.kind == FULL_SIMPLEX:
        return True
    dist = np.abs(candidate.center - incumbent.center).sum()
    if candidate.kind == SINGLETON:
        return bool(dist <= incumbent.radius + tol)
    if incumbent.kind == SINGLETON:
        # only a point fits inside a point; candidate is a ball or the simplex
        return False
    if dist + candidate.radius <= incumbent.radius + tol:
        return True
    if method == "support":
        return _max_l1_distance(candidate, incumbent.center) <= incumbent.radius + tol
    return polyhedra.is_subset(
        ambiguity_to_polyhedron(candidate), ambiguity_to_polyhedron(incumbent), tol
    )


def sample_next(P, w: int, rng: np.random.Generator) -> int:
    """Draw the successor of mode ``w`` by inverting the row CDF with one uniform."""
    row = np.asarray(P, float)[w - 1]
    cdf = np.cumsum(row)
    u = rng.random()
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(idx, row.size - 1) + 1


def sample_chain(P, w0: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Trajectory ``(w0, w1, ..., wn)`` of ``n`` transitions."""
    out = np.empty(n + 1, dtype=np.int64)
    out[0] = w0
    for t in range(n):
        out[t + 1] = sample_next(P, int(out[t]), rng)
    return out


class TransitionEstimator(BaseEstimator):
    """Estimate a transition matrix and row-wise l1 ambiguity sets.

    Parameters
    ----------
    n_modes : int
        Number of modes ``d``.
    alpha : float
        Confidence parameter; each row set holds the true row with
        probability at least ``1 - alpha``.

    Attributes
    ----------
    estimate_ : TransitionEstimate
    transition_matrix_ : ndarray of shape (d, d)
    radii_ : ndarray of shape (d,)
    """

    def __init__(self, n_modes: int = 4, alpha: float = 0.05):
        self.n_modes = n_modes
        self.alpha = alpha

    def fit(self, X, y=None):
        """Fit on a mode sequence (or a list of sequences)."""
        self.estimate_ = TransitionEstimate.empty(self.n_modes)
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        if not hasattr(self, "estimate_"):
            self.estimate_ = TransitionEstimate.empty(self.n_modes)
        seqs = X if (len(X) and np.ndim(X[0]) == 1) else [X]
        counts = self.estimate_.counts.copy()
        for seq in seqs:
            counts += estimate(seq, self.n_modes).counts
        self.estimate_ = replace(self.estimate_, counts=counts)
        self._refresh()
        return self

    def _refresh(self):
        self.transition_matrix_ = self.estimate_.p_hat
        self.radii_ = np.array([radius(self.alpha, self.n_modes, int(n)) for n in self.estimate_.n])

    def ambiguity_sets(self) -> list[AmbiguitySet]:
        if not hasattr(self, "estimate_"):
            raise AttributeError("TransitionEstimator is not fitted yet")
        return ambiguity_rows(self.estimate_, self.alpha)

    def predict_proba(self, X) -> np.ndarray:
        """Successor distribution for each current mode in ``X``."""
        w = check_modes(X, self.n_modes)
        return self.transition_matrix_[w - 1]
