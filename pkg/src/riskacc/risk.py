"""Coherent risk measures on finite outcome spaces.

Every measure here has the form ``rho[z] = max {mu'z : E mu + F nu <=_K b}``
where ``K`` is a product of a zero cone and a nonnegative orthant.  The
same data serves two routes:

* numeric evaluation, by solving that LP;
* symbolic constraints for program assembly, via the dual system
  ``E'y = z, F'y = 0, b'y <= t, y in K*``, which is feasible iff
  ``rho[z] <= t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._validation import check_delta, check_probability_vector
from .conic_solver import Cone, ConicProgram, SolverSettings, Status, solve
from .markov import FULL_SIMPLEX, L1_BALL, SINGLETON, AmbiguitySet
from .program import Affine, ProgramBuilder


@dataclass(frozen=True)
class AVaR:
    """Average value-at-risk at level ``delta`` under the distribution ``p``."""

    p: np.ndarray
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "p", check_probability_vector(self.p))
        object.__setattr__(self, "delta", check_delta(self.delta))

    @property
    def d(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class RobustAVaR:
    """Worst-case AVaR over all distributions in an ambiguity set."""

    ambiguity: AmbiguitySet
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "delta", check_delta(self.delta))

    @property
    def d(self) -> int:
        return self.ambiguity.d


@dataclass(frozen=True)
class MaxExpectation:
    """Worst-case expectation over an ambiguity set."""

    ambiguity: AmbiguitySet

    @property
    def d(self) -> int:
        return self.ambiguity.d


RiskSpec = AVaR | RobustAVaR | MaxExpectation


@dataclass(frozen=True)
class ConicRepresentation:
    """``rho[z] = max {mu'z : E mu + F nu <=_K b}``.

    The first ``n_zero`` rows are equalities, the rest are inequalities.
    """

    E: np.ndarray
    F: np.ndarray
    b: np.ndarray
    n_zero: int

    @property
    def m(self) -> int:
        return self.b.size


class _Rows:
    """Accumulate rows over the stacked variable ``(mu, nu)``."""

    def __init__(self, d: int, k: int):
        self.d, self.k = d, k
        self.eq: list[tuple[np.ndarray, float]] = []
        self.ineq: list[tuple[np.ndarray, float]] = []

    def row(self, mu=None, nu=None):
        r = np.zeros(self.d + self.k)
        if mu is not None:
            r[: self.d] = mu
        if nu is not None:
            r[self.d :] = nu
        return r

    def build(self) -> ConicRepresentation:
        rows = self.eq + self.ineq
        M = np.array([r for r, _ in rows]).reshape(len(rows), self.d + self.k)
        b = np.array([v for _, v in rows])
        return ConicRepresentation(M[:, : self.d], M[:, self.d :], b, len(self.eq))


def _simplex_rows(rows: _Rows, block: str, offset: int, d: int):
    """``1'v = 1`` and ``v >= 0`` for the ``d`` entries of ``block`` starting at ``offset``."""
    ones = np.zeros(rows.d if block == "mu" else rows.k)
    ones[offset : offset + d] = 1.0
    rows.eq.append((rows.row(**{block: ones}), 1.0))
    for i in range(d):
        e = np.zeros_like(ones)
        e[offset + i] = -1.0
        rows.ineq.append((rows.row(**{block: e}), 0.0))


def _ambiguity_rows(rows: _Rows, block: str, offset: int, amb: AmbiguitySet, aux_offset: int):
    """Constrain the distribution in ``block[offset:offset+d]`` to ``amb``.

    The l1 ball uses ``d`` auxiliary entries of ``nu`` starting at
    ``aux_offset``: ``aux >= +-(v - center)`` and ``1'aux <= r``.
    """
    d = amb.d
    size = rows.d if block == "mu" else rows.k
    if amb.kind == SINGLETON:
        for i in range(d):
            e = np.zeros(size)
            e[offset + i] = 1.0
            rows.eq.append((rows.row(**{block: e}), float(amb.center[i])))
        return
    _simplex_rows(rows, block, offset, d)
    if amb.kind == FULL_SIMPLEX:
        return
    for i in range(d):
        for sign in (1.0, -1.0):
            v = np.zeros(size)
            v[offset + i] = sign
            r = rows.row(**{block: v})
            r[rows.d + aux_offset + i] -= 1.0
            rows.ineq.append((r, sign * float(amb.center[i])))
    aux = np.zeros(rows.k)
    aux[aux_offset : aux_offset + d] = 1.0
    rows.ineq.append((rows.row(nu=aux), float(amb.radius)))


def _aux_size(amb: AmbiguitySet) -> int:
    return amb.d if amb.kind == L1_BALL else 0


def conic_representation(spec: RiskSpec) -> ConicRepresentation:
    d = spec.d
    if isinstance(spec, AVaR):
        rows = _Rows(d, 0)
        _simplex_rows(rows, "mu", 0, d)
        cap = spec.p / spec.delta
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            rows.ineq.append((rows.row(mu=e), float(cap[i])))
        return rows.build()
    if isinstance(spec, MaxExpectation):
        amb = spec.ambiguity
        rows = _Rows(d, _aux_size(amb))
        _ambiguity_rows(rows, "mu", 0, amb, 0)
        return rows.build()
    if isinstance(spec, RobustAVaR):
        # mu is the distorted distribution, nu = (inner distribution, l1 slack)
        amb = spec.ambiguity
        rows = _Rows(d, d + _aux_size(amb))
        _simplex_rows(rows, "mu", 0, d)
        for i in range(d):
            r = np.zeros(2 * d + _aux_size(amb))
            r[i] = 1.0
            r[d + i] = -1.0 / spec.delta
            rows.ineq.append((r, 0.0))
        _ambiguity_rows(rows, "nu", 0, amb, d)
        return rows.build()
    raise TypeError(f"unsupported risk spec {type(spec).__name__}")


def _value_program(rep: ConicRepresentation, z: np.ndarray) -> ConicProgram:
    M = np.hstack([rep.E, rep.F])
    c = np.r_[-z, np.zeros(rep.F.shape[1])]
    cones = []
    if rep.n_zero:
        cones.append(Cone("zero", rep.n_zero))
    if rep.m > rep.n_zero:
        cones.append(Cone("nonneg", rep.m - rep.n_zero))
    return ConicProgram(c, sp.csr_matrix(M), rep.b, tuple(cones))


# values feed oracle comparisons, so solve the small LP well past the default accuracy
EVAL_SETTINGS = SolverSettings(feas_tol=1e-10, gap_tol=1e-10)


def evaluate(spec: RiskSpec, z, settings: SolverSettings | None = None) -> float:
    """``rho[z]`` by solving the representation LP."""
    z = np.asarray(z, dtype=float).ravel()
    if z.size != spec.d:
        raise ValueError(f"outcome vector of size {z.size} for a risk on {spec.d} outcomes")
    res = solve(_value_program(conic_representation(spec), z), settings or EVAL_SETTINGS)
    if res.status != Status.OPTIMAL:
        raise RuntimeError(f"risk LP did not solve: {res.status}")
    return -res.objective


def avar_value(z, p, delta: float) -> float:
    return evaluate(AVaR(np.asarray(p, float), delta), z)


def robust_avar_value(z, ambiguity: AmbiguitySet, delta: float) -> float:
    return evaluate(RobustAVaR(ambiguity, delta), z)


def max_expectation_value(z, ambiguity: AmbiguitySet) -> float:
    return evaluate(MaxExpectation(ambiguity), z)


_REP_CACHE: dict = {}


def _cached_representation(spec: RiskSpec) -> ConicRepresentation:
    if isinstance(spec, AVaR):
        key = ("avar", spec.p.tobytes(), spec.delta)
    elif isinstance(spec, RobustAVaR):
        key = ("robust_avar", spec.ambiguity, spec.delta)
    else:
        key = ("max_expectation", spec.ambiguity)
    rep = _REP_CACHE.get(key)
    if rep is None:
        if len(_REP_CACHE) > 4096:
            _REP_CACHE.clear()
        rep = _REP_CACHE[key] = conic_representation(spec)
    return rep


def epigraph_dual_constraints(spec: RiskSpec, z: list[Affine], t: Affine, builder: ProgramBuilder) -> np.ndarray:
    """Emit constraints that hold for some multiplier iff ``rho[z] <= t``.

    Returns the indices of the fresh multiplier variables.
    """
    rep = _cached_representation(spec)
    if len(z) != spec.d:
        raise ValueError(f"{len(z)} outcome expressions for a risk on {spec.d} outcomes")
    y = builder.new_vars(rep.m)
    free = rep.n_zero
    if rep.m > free:
        builder.add_linear_rows("nonneg", np.eye(rep.m - free), y[free:], 0.0)
    builder.add_zero([Affine(y, rep.E[:, j]) - z[j] for j in range(rep.E.shape[1])])
    if rep.F.shape[1]:
        builder.add_linear_rows("zero", rep.F.T, y, 0.0)
    builder.add_nonneg([t - Affine(y, rep.b)])
    return y


def epigraph_dual_batch(spec: RiskSpec, z_cols, z_coef, z_const, t_cols, t_coef, t_const,
                        builder: ProgramBuilder) -> np.ndarray:
    """Vectorized :func:`epigraph_dual_constraints` for ``B`` constraints sharing ``spec``.

    Outcome ``j`` of constraint ``b`` is ``z_coef[j] @ x[z_cols[b, j]] + z_const[j]``
    and the bound is ``t_coef @ x[t_cols[b]] + t_const``.  Returns the
    multiplier indices with shape ``(B, m)``.
    """
    rep = _cached_representation(spec)
    z_cols = np.asarray(z_cols, dtype=np.int64)
    B, d, k = z_cols.shape
    if d != spec.d:
        raise ValueError(f"{d} outcome expressions for a risk on {spec.d} outcomes")
    z_coef = np.broadcast_to(np.asarray(z_coef, float), (d, k))
    z_const = np.broadcast_to(np.asarray(z_const, float), (d,))
    m, free = rep.m, rep.n_zero
    y = builder.new_vars(B * m).reshape(B, m)
    if m > free:
        builder.add_linear_batch("nonneg", np.eye(m - free), y[:, free:], 0.0)
    stat = np.zeros((d, m + d * k))
    stat[:, :m] = rep.E.T
    for j in range(d):
        stat[j, m + j * k : m + (j + 1) * k] = -z_coef[j]
    builder.add_linear_batch("zero", stat, np.hstack([y, z_cols.reshape(B, d * k)]), -z_const)
    if rep.F.shape[1]:
        builder.add_linear_batch("zero", rep.F.T, y, 0.0)
    t_coef = np.atleast_1d(np.asarray(t_coef, float))
    bound = np.concatenate([t_coef, -rep.b])[None, :]
    t_cols = np.asarray(t_cols, dtype=np.int64).reshape(B, t_coef.size)
    builder.add_linear_batch("nonneg", bound, np.hstack([t_cols, y]), t_const)
    return y
