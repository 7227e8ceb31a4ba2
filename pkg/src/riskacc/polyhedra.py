"""Polyhedra in H-representation ``{x : G x <= h}``.

Every geometric query reduces to linear programs solved by
:mod:`riskacc.conic_solver`; no vertex enumeration is performed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .conic_solver import Cone, ConicProgram, SolverSettings, Status, solve

DEFAULT_TOL = 1e-9
# coefficients below this magnitude do not involve the eliminated variable
ZERO_COEF = 1e-12

LP_SETTINGS = SolverSettings()


@dataclass(frozen=True)
class Polyhedron:
    """The set ``{x in R^n : G x <= h}``.

    Parameters
    ----------
    G : (m, n) array_like
    h : (m,) array_like
    """

    G: np.ndarray
    h: np.ndarray

    def __init__(self, G, h):
        G = np.atleast_2d(np.asarray(G, dtype=float))
        h = np.asarray(h, dtype=float).ravel()
        if G.shape[0] != h.size:
            raise ValueError(f"G has {G.shape[0]} rows but h has {h.size} entries")
        G.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @classmethod
    def universe(cls, n: int) -> "Polyhedron":
        return cls(np.zeros((0, n)), np.zeros(0))

    @classmethod
    def empty(cls, n: int) -> "Polyhedron":
        return cls(np.zeros((1, n)), [-1.0])

    @classmethod
    def from_bounds(cls, lower, upper) -> "Polyhedron":
        """Box ``lower <= x <= upper``; infinite bounds are skipped."""
        lower, upper = np.asarray(lower, float), np.asarray(upper, float)
        n = lower.size
        rows, rhs = [], []
        for i in range(n):
            if np.isfinite(upper[i]):
                rows.append(np.eye(n)[i])
                rhs.append(upper[i])
            if np.isfinite(lower[i]):
                rows.append(-np.eye(n)[i])
                rhs.append(-lower[i])
        return cls(np.reshape(rows, (len(rows), n)), rhs)

    @property
    def n(self) -> int:
        return self.G.shape[1]

    @property
    def m(self) -> int:
        return self.G.shape[0]

    def __repr__(self):
        return f"Polyhedron(n={self.n}, m={self.m})"

    def to_json(self) -> str:
        return json.dumps({"G": self.G.tolist(), "h": self.h.tolist()})

    @classmethod
    def from_json(cls, text: str, n: int | None = None) -> "Polyhedron":
        d = json.loads(text)
        G = np.asarray(d["G"], float)
        if G.size == 0:
            G = np.zeros((0, n if n is not None else 0))
        return cls(G, d["h"])

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.n:
            raise ValueError(f"point of dimension {x.size} for polyhedron in R^{self.n}")
        if tol < 0:
            raise ValueError("tol must be nonnegative")
        return bool(np.all(self.G @ x <= self.h + tol))

    def contains_many(self, X, tol: float = 0.0) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.all(X @ self.G.T <= self.h + tol, axis=1)

    def slice(self, fixed: dict[int, float]) -> "Polyhedron":
        """Restrict coordinates ``fixed`` to given values; drops those coordinates."""
        keep = [j for j in range(self.n) if j not in fixed]
        shift = sum(self.G[:, j] * v for j, v in fixed.items()) if fixed else 0.0
        return Polyhedron(self.G[:, keep], self.h - shift)

    def is_empty(self) -> bool:
        return minimize_linear(self, np.zeros(self.n)).status == "empty"


def _check_dims(P: Polyhedron, Q: Polyhedron):
    if P.n != Q.n:
        raise ValueError(f"dimension mismatch: {P.n} vs {Q.n}")


def intersect(P: Polyhedron, Q: Polyhedron) -> Polyhedron:
    """Stack both H-representations; no redundancy removal."""
    _check_dims(P, Q)
    return Polyhedron(np.vstack([P.G, Q.G]), np.r_[P.h, Q.h])


@dataclass(frozen=True)
class LinearMinimum:
    """Outcome of ``min c'x`` over a polyhedron.

    ``status`` is ``"optimal"``, ``"empty"`` or ``"unbounded"``; ``value`` is
    ``+inf`` for an empty set and ``-inf`` if unbounded.
    """

    status: str
    value: float
    argmin: np.ndarray | None = None


def minimize_linear(P: Polyhedron, c, settings: SolverSettings = LP_SETTINGS) -> LinearMinimum:
    c = np.asarray(c, dtype=float).ravel()
    if c.size != P.n:
        raise ValueError(f"objective of dimension {c.size} for polyhedron in R^{P.n}")
    if P.m == 0:
        if np.any(c != 0):
            return LinearMinimum("unbounded", -np.inf)
        return LinearMinimum("optimal", 0.0, np.zeros(P.n))
    prog = ConicProgram(c, sp.csr_matrix(P.G), P.h, (Cone("nonneg", P.m),))
    res = solve(prog, settings)
    if res.status == Status.OPTIMAL:
        return LinearMinimum("optimal", res.objective, res.x)
    if res.status == Status.PRIMAL_INFEASIBLE:
        return LinearMinimum("empty", np.inf)
    if res.status == Status.DUAL_INFEASIBLE:
        return LinearMinimum("unbounded", -np.inf)
    raise RuntimeError(f"LP solver failed: {res.status} {res.info}")


def _maximize_row(G, h, g) -> float:
    """``max g'x`` over ``{G x <= h}``: ``+inf`` if unbounded, ``-inf`` if empty."""
    res = minimize_linear(Polyhedron(G, h), -g)
    return -res.value


def _drop_trivial_rows(G: np.ndarray, h: np.ndarray, tol: float):
    """Normalize rows; drop ``0 <= h`` rows and keep the tightest duplicate.

    Returns ``None`` if a row reads ``0 <= h`` with ``h < -tol``.
    """
    norms = np.linalg.norm(G, axis=1)
    zero = norms <= ZERO_COEF
    if np.any(h[zero] < -tol):
        return None
    G, h, norms = G[~zero], h[~zero], norms[~zero]
    G = G / norms[:, None]
    h = h / norms
    if G.shape[0] == 0:
        return G, h
    # exact duplicates after normalization: keep the smallest right-hand side
    key = np.round(G, 12)
    order = np.lexsort(np.c_[h, key].T[::-1])
    G, h, key = G[order], h[order], key[order]
    first = np.ones(G.shape[0], bool)
    first[1:] = np.any(key[1:] != key[:-1], axis=1)
    return G[first], h[first]


def remove_redundancy(P: Polyhedron, tol: float = DEFAULT_TOL) -> Polyhedron:
    """Return an irredundant description of the same set.

    Row ``i`` is redundant when maximizing its left-hand side over the other
    kept rows does not exceed ``h_i + tol``.  An empty input yields the
    canonical empty polyhedron ``{0'x <= -1}``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    cleaned = _drop_trivial_rows(P.G, P.h, tol)
    if cleaned is None:
        return Polyhedron.empty(P.n)
    G, h = cleaned
    if G.shape[0] == 0:
        return Polyhedron.universe(P.n)
    if Polyhedron(G, h).is_empty():
        return Polyhedron.empty(P.n)
    keep = np.ones(G.shape[0], bool)
    for i in range(G.shape[0]):
        keep[i] = False
        others = np.flatnonzero(keep)
        if others.size == 0:
            keep[i] = True
            continue
        # cap the tested row so the LP stays bounded
        Gi = np.vstack([G[others], G[i]])
        hi = np.r_[h[others], h[i] + 1.0]
        if _maximize_row(Gi, hi, G[i]) > h[i] + tol:
            keep[i] = True
    return Polyhedron(G[keep], h[keep])


def eliminate_variable(P: Polyhedron, j: int, reduce: bool = False, tol: float = DEFAULT_TOL) -> Polyhedron:
    """Fourier-Motzkin elimination of coordinate ``j``.

    The result is the projection of ``P`` onto the remaining coordinates.
    Trivially satisfied rows ``0 <= c`` (``c >= 0``) are dropped; an
    inconsistent pair leaves a ``0 <= c < 0`` row that marks the set empty.
    """
    if not 0 <= j < P.n:
        raise IndexError(f"coordinate {j} out of range for dimension {P.n}")
    col = P.G[:, j]
    rest = np.delete(P.G, j, axis=1)
    zero = np.abs(col) < ZERO_COEF
    pos = np.flatnonzero(col >= ZERO_COEF)
    neg = np.flatnonzero(col <= -ZERO_COEF)
    rows = [rest[zero]]
    rhs = [P.h[zero]]
    if pos.size and neg.size:
        # scale each pair so the j-th coefficients cancel
        ap, an = col[pos], -col[neg]
        Gp, hp = rest[pos] / ap[:, None], P.h[pos] / ap
        Gn, hn = rest[neg] / an[:, None], P.h[neg] / an
        rows.append((Gp[:, None, :] + Gn[None, :, :]).reshape(-1, P.n - 1))
        rhs.append((hp[:, None] + hn[None, :]).ravel())
    G = np.vstack(rows) if rows else np.zeros((0, P.n - 1))
    h = np.concatenate(rhs)
    trivial = (np.abs(G).max(axis=1, initial=0.0) < ZERO_COEF) & (h >= 0)
    out = Polyhedron(G[~trivial], h[~trivial])
    if reduce:
        out = remove_redundancy(out, tol)
    return out


def is_subset(P: Polyhedron, Q: Polyhedron, tol: float = DEFAULT_TOL) -> bool:
    """True iff ``P`` is contained in ``Q`` (up to ``tol`` per row of ``Q``)."""
    _check_dims(P, Q)
    if P.is_empty():
        return True
    for g, hq in zip(Q.G, Q.h):
        res = minimize_linear(P, -g)
        if res.status == "unbounded" or -res.value > hq + tol:
            return False
    return True
