"""Invariant sets and safety distances for the ACC model.

The robust positively invariant candidate comes from a linear braking
feedback; robust control invariant inner approximations are grown from it
by repeated pre-set computation.  Minimal headways extracted from these
sets are compared against a discrete-time RSS distance.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .conic_solver import Cone, ConicProgram, SolverSettings, Status, solve
from .mjls import AccParams, MjlsModel
from .polyhedra import (
    DEFAULT_TOL,
    Polyhedron,
    eliminate_variable,
    intersect,
    is_subset,
    minimize_linear,
    remove_redundancy,
)

RCI_TOL = 1e-7
RCI_MAX_ITER = 50


def rpi_candidate(params: AccParams) -> Polyhedron:
    """Set kept invariant by the feedback ``u = c_min * v_e``.

    Requires ``-1/Ts <= c_min < 0``.
    """
    c_min = params.c_min
    if not (-1.0 / params.Ts - 1e-12 <= c_min < 0):
        raise ValueError(f"need -1/Ts <= c_min < 0, got c_min = {c_min}")
    G = [
        [0.0, 1.0, 0.0],   # v_e <= a_min / c_min
        [0.0, -1.0, 0.0],  # v_e >= 0
        [0.0, 1.0, -1.0],  # v_t >= v_e
        [0.0, 1.0, 0.0],   # v_e <= v_max
        [-1.0, 0.0, 0.0],  # h >= 0
    ]
    h = [params.a_min / c_min, 0.0, 0.0, params.v_max, 0.0]
    return Polyhedron(G, h)


def pre_set(model: MjlsModel, R: Polyhedron, tol: float = DEFAULT_TOL) -> Polyhedron:
    """States from which some admissible input reaches ``R`` under every mode."""
    nx, nu = model.nx, model.nu
    blocks, rhs = [], []
    for dyn in model.modes:
        blocks.append(np.hstack([R.G @ dyn.A, R.G @ dyn.B]))
        rhs.append(R.h - R.G @ dyn.p)
    U = model.input_set
    blocks.append(np.hstack([np.zeros((U.m, nx)), U.G]))
    rhs.append(U.h)
    lifted = remove_redundancy(Polyhedron(np.vstack(blocks), np.concatenate(rhs)), tol)
    for j in reversed(range(nx, nx + nu)):
        lifted = eliminate_variable(lifted, j, reduce=True, tol=tol)
    return lifted


@dataclass
class RciResult:
    iterates: list[Polyhedron]
    converged: bool
    iterations: int

    @property
    def final(self) -> Polyhedron:
        return self.iterates[-1]

    def to_json(self) -> str:
        return json.dumps({
            "converged": self.converged,
            "iterations": self.iterations,
            "iterates": [{"G": R.G.tolist(), "h": R.h.tolist()} for R in self.iterates],
        })


def rci_iterate(model: MjlsModel, X_r: Polyhedron, X_c: Polyhedron, R0: Polyhedron,
                max_iter: int = RCI_MAX_ITER, tol: float = RCI_TOL) -> RciResult:
    """Iterate ``R <- pre(R) & X_r & X_c`` until mutual containment within ``tol``."""
    iterates = [R0]
    for k in range(max_iter):
        R = iterates[-1]
        nxt = remove_redundancy(intersect(intersect(pre_set(model, R), X_r), X_c))
        iterates.append(nxt)
        if is_subset(nxt, R, tol) and is_subset(R, nxt, tol):
            return RciResult(iterates, True, k + 1)
    return RciResult(iterates, False, max_iter)


def admissible_input(model: MjlsModel, R: Polyhedron, x,
                     settings: SolverSettings | None = None) -> np.ndarray | None:
    """An input in ``U`` that maps ``x`` into ``R`` for every mode, or ``None``."""
    x = np.asarray(x, dtype=float)
    G, h = [model.input_set.G], [model.input_set.h]
    for dyn in model.modes:
        G.append(R.G @ dyn.B)
        h.append(R.h - R.G @ (dyn.A @ x + dyn.p))
    G, h = np.vstack(G), np.concatenate(h)
    prog = ConicProgram(np.zeros(model.nu), sp.csr_matrix(G), h, (Cone("nonneg", h.size),))
    res = solve(prog, settings)
    if res.status == Status.OPTIMAL:
        return res.x
    if res.status == Status.PRIMAL_INFEASIBLE:
        return None
    raise RuntimeError(f"admissibility LP failed: {res.status}")


def h_min(R: Polyhedron, v_e: float, v_t: float) -> float:
    """Smallest headway in ``R`` at the given velocities; ``inf`` if none."""
    res = minimize_linear(R.slice({1: v_e, 2: v_t}), [1.0])
    return float(res.value)


def rss_distance(params: AccParams, v_e: float, v_t: float) -> float:
    """Discrete-time RSS headway ``[d_e - d_t]+``.

    ``d_e``: distance covered by the ego vehicle braking at ``a_min``,
    accruing ``Ts * v`` per step before each velocity update.  ``d_t``:
    distance of the target under the dissipative worst-case law with
    ``c_min``.
    """
    if v_e < 0 or v_t < 0:
        raise ValueError("velocities must be nonnegative")
    Ts, a_min, c_min = params.Ts, params.a_min, params.c_min
    d_e, v = 0.0, float(v_e)
    if v > 0 and a_min >= 0:
        return float("inf")
    while v > 0:
        d_e += Ts * v
        v = max(0.0, v + Ts * a_min)
    if c_min >= 0:
        return 0.0
    if np.isclose(c_min, -1.0 / Ts):
        d_t = Ts * v_t
    else:
        d_t = -v_t / c_min
    return max(0.0, d_e - d_t)


@dataclass
class SafetyGrid:
    v_e: np.ndarray
    h_rpi0: np.ndarray
    h_rci: np.ndarray | None
    h_rss: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["v_e", "h_rpi0"] + (["h_rci"] if self.h_rci is not None else []) + ["h_rss"]
        w.writerow(cols)
        for k in range(self.v_e.size):
            row = [self.v_e[k], self.h_rpi0[k]]
            if self.h_rci is not None:
                row.append(self.h_rci[k])
            row.append(self.h_rss[k])
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return "inf" if np.isposinf(v) else repr(float(v))


def safety_grid(params: AccParams, rci: RciResult, v_t: float, v_e_grid) -> SafetyGrid:
    """Minimal headways of the first and last iterate next to the RSS distance."""
    v_e_grid = np.asarray(v_e_grid, dtype=float)
    h0 = np.array([h_min(rci.iterates[0], v, v_t) for v in v_e_grid])
    hk = None
    if len(rci.iterates) > 1:
        hk = np.array([h_min(rci.final, v, v_t) for v in v_e_grid])
    hr = np.array([rss_distance(params, v, v_t) for v in v_e_grid])
    return SafetyGrid(v_e_grid, h0, hk, hr)
