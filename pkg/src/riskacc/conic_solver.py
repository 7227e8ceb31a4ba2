"""Embedded conic solver for zero, nonnegative and second-order cones.

Programs are stated as

    minimize    c'x
    subject to  b - A x in K,

with ``K`` a product of zero cones, nonnegative orthants and second-order
cones.  The native backend is a primal-dual interior-point method on the
homogeneous self-dual embedding (Nesterov-Todd scaling, Mehrotra
predictor-corrector), so infeasible and unbounded programs terminate with
a certificate instead of diverging.

An optional ``clarabel`` backend solves the same program through the
Clarabel interior-point solver and returns results in the same format;
when Clarabel stops without a verdict the native method is tried next.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Cone",
    "ConicProgram",
    "SolveResult",
    "SolverSettings",
    "Status",
    "solve",
    "verify_certificate",
    "dump_program",
    "load_program",
]


class Status:
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class Cone:
    """One cone block: ``kind`` is ``"zero"``, ``"nonneg"`` or ``"soc"``."""

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in ("zero", "nonneg", "soc"):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.dim < 1 or (self.kind == "soc" and self.dim < 2):
            raise ValueError(f"invalid dimension {self.dim} for {self.kind} cone")


@dataclass
class ConicProgram:
    """Linear objective with conic constraints ``b - A x in K``.

    Rows of ``A`` and ``b`` are consumed block by block in the order of
    ``cones``.
    """

    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: tuple[Cone, ...]

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.cones = tuple(self.cones)
        m = sum(k.dim for k in self.cones)
        if self.A.shape != (m, self.c.size) or self.b.size != m:
            raise ValueError(
                f"inconsistent program: A{self.A.shape}, b({self.b.size}), "
                f"c({self.c.size}), cone rows {m}"
            )

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size


@dataclass(frozen=True)
class SolverSettings:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    cert_tol: float = 1e-7
    max_iter: int = 200
    # accepted when the iteration stalls or breaks down; mirrors "almost solved"
    reduced_tol: float = 1e-6
    backend: str = "native"
    verbose: bool = False


@dataclass
class SolveResult:
    status: str
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    s: np.ndarray | None = None
    objective: float = float("nan")
    certificate: np.ndarray | None = None
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL


# ---------------------------------------------------------------------------
# cone arithmetic


class _ConeLayout:
    """Index bookkeeping for the inequality part (nonneg + SOC) of a program."""

    def __init__(self, n_lin: int, soc_dims: Sequence[int]):
        self.l = n_lin
        self.soc_dims = list(soc_dims)
        self.m = n_lin + sum(self.soc_dims)
        self.degree = n_lin + len(self.soc_dims)
        # group equal-dimension cones so the arithmetic vectorizes
        starts = np.cumsum([n_lin] + self.soc_dims[:-1]) if self.soc_dims else []
        groups: dict[int, list[int]] = {}
        for st, q in zip(starts, self.soc_dims):
            groups.setdefault(q, []).append(int(st))
        self.groups = [
            (q, np.asarray(st)[:, None] + np.arange(q)[None, :])
            for q, st in sorted(groups.items())
        ]
        self.e = np.zeros(self.m)
        self.e[:n_lin] = 1.0
        for q, idx in self.groups:
            self.e[idx[:, 0]] = 1.0

    def min_eig(self, u: np.ndarray) -> float:
        vals = [np.inf]
        if self.l:
            vals.append(u[: self.l].min())
        for _, idx in self.groups:
            blk = u[idx]
            vals.append((blk[:, 0] - np.linalg.norm(blk[:, 1:], axis=1)).min())
        return float(min(vals))

    def shift_interior(self, u: np.ndarray) -> np.ndarray:
        alpha = -self.min_eig(u)
        if alpha < 0:
            return u.copy()
        return u + (1.0 + alpha) * self.e

    def max_step(self, u: np.ndarray, du: np.ndarray) -> float:
        """Largest ``a`` with ``u + a du`` in the (closed) cone, ``u`` interior."""
        amax = np.inf
        if self.l:
            d = du[: self.l]
            neg = d < 0
            if neg.any():
                amax = min(amax, float((-u[: self.l][neg] / d[neg]).min()))
        for _, idx in self.groups:
            amax = min(amax, self._soc_step(u[idx], du[idx]))
        return amax

    @staticmethod
    def _soc_step(U: np.ndarray, D: np.ndarray) -> float:
        """Smallest positive root of ``det(U + t D) = 0`` over a group of cones."""
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            a = D[:, 0] ** 2 - np.einsum("ij,ij->i", D[:, 1:], D[:, 1:])
            bh = U[:, 0] * D[:, 0] - np.einsum("ij,ij->i", U[:, 1:], D[:, 1:])
            cc = np.maximum(U[:, 0] ** 2 - np.einsum("ij,ij->i", U[:, 1:], U[:, 1:]), 0.0)
            # roots of a t^2 + 2 bh t + cc = 0
            sq = np.sqrt(np.maximum(bh**2 - a * cc, 0.0))
            lin = np.abs(a) < 1e-14 * np.maximum(1.0, bh**2)
            r_lin = np.where(bh < 0, -cc / (2 * bh), np.inf)
            # numerically stable pair of roots
            qv = -(bh + np.copysign(sq, bh))
            cand = np.stack([qv / a, cc / qv], axis=1)
            cand = np.where(cand > 0, cand, np.inf)
            steps = np.where(lin, r_lin, cand.min(axis=1))
            # the head must stay nonnegative as well
            head = np.where(D[:, 0] < 0, -U[:, 0] / D[:, 0], np.inf)
            steps = np.minimum(np.nan_to_num(steps, nan=np.inf), head)
        return float(steps.min()) if steps.size else np.inf

    def jprod(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        out[: self.l] = x[: self.l] * y[: self.l]
        for _, idx in self.groups:
            X, Y = x[idx], y[idx]
            out[idx[:, 0]] = np.einsum("ij,ij->i", X, Y)
            out[idx[:, 1:]] = X[:, :1] * Y[:, 1:] + Y[:, :1] * X[:, 1:]
        return out

    def jdiv(self, lam: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Solve ``lam o u = v`` for ``u``."""
        out = np.empty_like(v)
        out[: self.l] = v[: self.l] / lam[: self.l]
        for _, idx in self.groups:
            L, V = lam[idx], v[idx]
            l0, l1 = L[:, 0], L[:, 1:]
            det = l0**2 - np.einsum("ij,ij->i", l1, l1)
            u0 = (l0 * V[:, 0] - np.einsum("ij,ij->i", l1, V[:, 1:])) / det
            out[idx[:, 0]] = u0
            out[idx[:, 1:]] = (V[:, 1:] - u0[:, None] * l1) / l0[:, None]
        return out


class _Scaling:
    """Nesterov-Todd scaling point for a strictly feasible pair ``(s, z)``."""

    def __init__(self, cones: _ConeLayout, s: np.ndarray, z: np.ndarray):
        self.cones = cones
        l = cones.l
        self.d = np.sqrt(s[:l] / z[:l])
        self.blocks = []
        lam = np.empty_like(s)
        lam[:l] = np.sqrt(s[:l] * z[:l])
        for q, idx in cones.groups:
            S, Z = s[idx], z[idx]
            sn = np.sqrt(np.maximum(S[:, 0] ** 2 - np.einsum("ij,ij->i", S[:, 1:], S[:, 1:]), 1e-300))
            zn = np.sqrt(np.maximum(Z[:, 0] ** 2 - np.einsum("ij,ij->i", Z[:, 1:], Z[:, 1:]), 1e-300))
            eta = np.sqrt(sn / zn)
            Sb, Zb = S / sn[:, None], Z / zn[:, None]
            gam = np.sqrt(np.maximum((1.0 + np.einsum("ij,ij->i", Sb, Zb)) / 2.0, 1e-300))
            JZb = Zb.copy()
            JZb[:, 1:] *= -1
            w = (Sb + JZb) / (2 * gam[:, None])
            # W = eta M with M = [[w0, w1'], [w1, I + w1 w1' / (1 + w0)]], W^{-1} = J M J / eta
            w0, w1 = w[:, 0], w[:, 1:]
            M = np.empty((w.shape[0], q, q))
            M[:, 0, 0] = w0
            M[:, 0, 1:] = w1
            M[:, 1:, 0] = w1
            M[:, 1:, 1:] = np.eye(q - 1) + np.einsum("ki,kj->kij", w1, w1) / (1 + w0)[:, None, None]
            with np.errstate(over="ignore"):
                W = eta[:, None, None] * M
                Winv = M / eta[:, None, None]
            Winv[:, 0, 1:] *= -1
            Winv[:, 1:, 0] *= -1
            self.blocks.append((idx, W, Winv))
            # closed form of W z in normalized coordinates; avoids the large entries of W
            lb = np.empty_like(S)
            lb[:, 0] = gam
            denom = Sb[:, 0] + Zb[:, 0] + 2 * gam
            lb[:, 1:] = ((gam + Zb[:, 0])[:, None] * Sb[:, 1:] + (gam + Sb[:, 0])[:, None] * Zb[:, 1:]) / denom[:, None]
            lam[idx] = np.sqrt(sn * zn)[:, None] * lb
        self.lam = lam

    def apply(self, v: np.ndarray, inverse: bool = False) -> np.ndarray:
        l = self.cones.l
        out = np.empty_like(v)
        out[:l] = v[:l] / self.d if inverse else v[:l] * self.d
        for idx, W, Winv in self.blocks:
            M = Winv if inverse else W
            out[idx] = np.einsum("kij,kj->ki", M, v[idx])
        return out

    def squared_blocks(self):
        """Data of ``W^2`` as (diagonal for the orthant, list of dense blocks)."""
        return self.d**2, [(idx, np.einsum("kij,kjl->kil", W, W)) for idx, W, _ in self.blocks]


class _KKT:
    """Regularized KKT system [[0, A', G'], [A, 0, 0], [G, 0, -W^2]]."""

    REG = 1e-9

    def __init__(self, A: sp.csr_matrix, G: sp.csr_matrix, cones: _ConeLayout):
        self.n, self.p, self.m = G.shape[1], A.shape[0], G.shape[0]
        self.cones = cones
        N = self.n + self.p + self.m
        self.N = N
        self.dense = N <= 150
        base = sp.bmat(
            [[None, A.T, G.T], [A, None, None], [G, None, None]], format="coo"
        ) if (self.p + self.m) else sp.coo_matrix((self.n, self.n))
        base = sp.coo_matrix(base, shape=(N, N))
        # W^2 occupies the diagonal of the orthant and dense SOC blocks
        off = self.n + self.p
        rows = [np.arange(cones.l) + off]
        cols = [np.arange(cones.l) + off]
        for q, idx in cones.groups:
            rr = np.repeat(idx, q, axis=1)
            cc = np.tile(idx, (1, q))
            rows.append(rr.ravel() + off)
            cols.append(cc.ravel() + off)
        w_rows = np.concatenate(rows) if rows else np.zeros(0, int)
        w_cols = np.concatenate(cols) if cols else np.zeros(0, int)
        reg = np.r_[np.full(self.n, self.REG), -np.full(self.p + self.m, self.REG)]
        if self.dense:
            self.base = base.toarray()
            self.w_pos = (w_rows, w_cols)
            self.reg = reg
            return
        # fixed sparsity pattern; each factorization only rewrites the W^2 values
        diag = np.arange(N)
        pr = np.concatenate([base.row, w_rows, diag])
        pc = np.concatenate([base.col, w_cols, diag])
        pattern = sp.csc_matrix((np.ones(pr.size), (pr, pc)), shape=(N, N))
        pattern.sum_duplicates()
        pattern.sort_indices()
        self.indptr, self.indices = pattern.indptr, pattern.indices
        keys = np.repeat(np.arange(N), np.diff(self.indptr)) * N + self.indices

        def position(r, c):
            return np.searchsorted(keys, c * N + r)

        self.const_data = np.zeros(keys.size)
        np.add.at(self.const_data, position(base.row, base.col), base.data)
        self.w_slots = position(w_rows, w_cols)
        self.reg_data = np.zeros(keys.size)
        self.reg_data[position(diag, diag)] = reg

    def _matrix(self, data: np.ndarray) -> sp.csc_matrix:
        return sp.csc_matrix((data, self.indices, self.indptr), shape=(self.N, self.N))

    def factor(self, scaling: _Scaling):
        d2, blocks = scaling.squared_blocks()
        vals = [-d2] + [-B.ravel() for _, B in blocks]
        wvals = np.concatenate(vals) if vals else np.zeros(0)
        if self.dense:
            K = self.base.copy()
            K[self.w_pos] += wvals
            self.K = K
            Kreg = K.copy()
            Kreg[np.diag_indices(self.N)] += self.reg
            self._lu = sla.lu_factor(Kreg, check_finite=False)
            self._solve = lambda r: sla.lu_solve(self._lu, r, check_finite=False)
            return
        data = self.const_data.copy()
        data[self.w_slots] += wvals
        self.K = self._matrix(data)
        lu = spla.splu(self._matrix(data + self.reg_data), permc_spec="MMD_AT_PLUS_A",
                       diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        self._solve = lu.solve

    def solve(self, rhs: np.ndarray, refine: int = 3) -> np.ndarray:
        x = self._solve(rhs)
        for _ in range(refine):
            r = rhs - self.K @ x
            if np.linalg.norm(r, np.inf) <= 1e-13 * (1 + np.linalg.norm(rhs, np.inf)):
                break
            x = x + self._solve(r)
        return x


# ---------------------------------------------------------------------------
# native interior-point method


def _split(prog: ConicProgram):
    """Reorder rows into (equalities, orthant, SOCs); return maps to original rows."""
    eq_rows, lin_rows, soc_rows, soc_dims = [], [], [], []
    start = 0
    for k in prog.cones:
        rows = list(range(start, start + k.dim))
        if k.kind == "zero":
            eq_rows += rows
        elif k.kind == "nonneg":
            lin_rows += rows
        else:
            soc_rows += rows
            soc_dims.append(k.dim)
        start += k.dim
    return np.asarray(eq_rows, int), np.asarray(lin_rows, int), np.asarray(soc_rows, int), soc_dims


def _presolve_empty_rows(prog: ConicProgram, tol: float):
    """Drop all-zero rows of zero/orthant blocks.

    Returns ``(keep_mask, certificate)`` where a certificate is returned
    if one of the dropped rows is inconsistent on its own.
    """
    nnz = np.diff(prog.A.indptr)
    keep = np.ones(prog.m, bool)
    start = 0
    for k in prog.cones:
        if k.kind != "soc":
            for i in range(start, start + k.dim):
                if nnz[i] == 0 or not np.any(prog.A.data[prog.A.indptr[i]:prog.A.indptr[i + 1]]):
                    bi = prog.b[i]
                    if (k.kind == "zero" and abs(bi) > tol) or (k.kind == "nonneg" and bi < -tol):
                        y = np.zeros(prog.m)
                        y[i] = -np.sign(bi) if k.kind == "zero" else 1.0
                        return keep, y / -(prog.b @ y)
                    keep[i] = False
        start += k.dim
    return keep, None


def _inf(v: np.ndarray) -> float:
    return float(np.abs(v).max()) if v.size else 0.0


def _solve_native(prog: ConicProgram, settings: SolverSettings) -> SolveResult:
    keep, cert = _presolve_empty_rows(prog, settings.feas_tol)
    if cert is not None:
        return SolveResult(Status.PRIMAL_INFEASIBLE, certificate=cert, info={"presolve": True})

    eq_rows, lin_rows, soc_rows, soc_dims = _split(prog)
    eq_rows = eq_rows[keep[eq_rows]]
    lin_rows = lin_rows[keep[lin_rows]]
    A = prog.A[eq_rows]
    b = prog.b[eq_rows]
    G = prog.A[np.r_[lin_rows, soc_rows]]
    h = prog.b[np.r_[lin_rows, soc_rows]]
    c = prog.c
    n, p, m = c.size, b.size, h.size
    cones = _ConeLayout(lin_rows.size, soc_dims)
    At, Gt = A.T.tocsr(), G.T.tocsr()

    kkt = _KKT(A, G, cones)
    # certificates are accepted with margin below the verification tolerance
    infeas_tol = 0.5 * settings.cert_tol
    bmax, cmax = max(_inf(b), _inf(h)), _inf(c)

    def unpack(v):
        return v[:n], v[n:n + p], v[n + p:]

    # initial point (unit scaling)
    ident = _Scaling(cones, cones.e.copy(), cones.e.copy())
    kkt.factor(ident)
    x, _, zt = unpack(kkt.solve(np.r_[np.zeros(n), b, h]))
    s = cones.shift_interior(-zt)
    _, y, zt = unpack(kkt.solve(np.r_[-c, np.zeros(p), np.zeros(m)]))
    z = cones.shift_interior(zt)
    tau, kap = 1.0, 1.0

    status = Status.MAX_ITERATIONS
    it = 0
    info: dict = {}
    best = None
    best_infeasible = None
    for it in range(settings.max_iter + 1):
        rx = At @ y + Gt @ z + c * tau
        ry = -(A @ x) + b * tau
        rz = s + G @ x - h * tau
        rt = kap + c @ x + b @ y + h @ z
        mu = (s @ z + tau * kap) / (cones.degree + 1)

        # convergence tests on the de-homogenized iterate, relative to data and iterate size
        xh, yh, zh, sh = x / tau, y / tau, z / tau, s / tau
        Ax, Gx = (A @ xh if p else np.zeros(0)), G @ xh
        Aty, Gtz = At @ yh, Gt @ zh
        pscale = max(1.0, bmax, _inf(Ax), _inf(Gx), _inf(sh))
        dscale = max(1.0, cmax, _inf(Aty), _inf(Gtz))
        pres = max(_inf(ry), _inf(rz)) / tau / pscale
        dres = _inf(rx) / tau / dscale
        pcost, dcost = c @ xh, -(b @ yh) - (h @ zh)
        gap = sh @ zh
        relgap = gap / max(1.0, min(abs(pcost), abs(dcost)))
        info = {"pres": pres, "dres": dres, "gap": gap, "pcost": pcost, "dcost": dcost}
        if pres <= settings.feas_tol and dres <= settings.feas_tol and (
            gap <= settings.gap_tol or relgap <= settings.gap_tol
        ):
            status = Status.OPTIMAL
            break
        score = max(pres, dres, min(gap, relgap))
        if score <= settings.reduced_tol and (best is None or score < best[0]):
            best = (score, (x, y, z, s, tau), info)
        if settings.verbose:
            print(f"{it:3d} pcost {pcost:+.6e} dcost {dcost:+.6e} gap {gap:.1e} "
                  f"pres {pres:.1e} dres {dres:.1e} tau {tau:.1e} kap {kap:.1e}")
        byhz = b @ y + h @ z
        if byhz < 0:
            res = np.linalg.norm(At @ y + Gt @ z, np.inf) / -byhz
            info["pinf"] = res
            if res <= infeas_tol:
                status = Status.PRIMAL_INFEASIBLE
                break
            if res <= settings.reduced_tol and (best_infeasible is None or res < best_infeasible[0]):
                best_infeasible = (res, y, z, dict(info))
        cx = c @ x
        if cx < 0:
            res = max(np.linalg.norm(A @ x, np.inf) if p else 0.0,
                      np.linalg.norm(G @ x + s, np.inf)) / -cx
            info["dinf"] = res
            if res <= infeas_tol:
                status = Status.DUAL_INFEASIBLE
                break
        if it == settings.max_iter:
            break

        W = _Scaling(cones, s, z)
        lam = W.lam
        try:
            kkt.factor(W)
        except RuntimeError:
            info["breakdown"] = "factorization"
            break
        v1 = kkt.solve(np.r_[-c, b, h])
        x1, y1, z1 = unpack(v1)
        den1 = c @ x1 + b @ y1 + h @ z1

        def direction(eta, ds_target, dk_target):
            rhs = np.r_[-eta * rx, eta * ry, -eta * rz - W.apply(cones.jdiv(lam, ds_target))]
            x2, y2, z2 = unpack(kkt.solve(rhs))
            num = -eta * rt - (c @ x2 + b @ y2 + h @ z2) - dk_target / tau
            dtau = num / (den1 - kap / tau)
            dx, dy, dz = x2 + dtau * x1, y2 + dtau * y1, z2 + dtau * z1
            ds = W.apply(cones.jdiv(lam, ds_target) - W.apply(dz))
            dkap = (dk_target - kap * dtau) / tau
            return dx, dy, dz, ds, dtau, dkap

        def step_length(dz, ds, dtau, dkap):
            a = min(cones.max_step(s, ds), cones.max_step(z, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkap < 0:
                a = min(a, -kap / dkap)
            return a

        # predictor
        aff = direction(1.0, -cones.jprod(lam, lam), -tau * kap)
        a_aff = min(1.0, step_length(aff[2], aff[3], aff[4], aff[5]))
        sigma = (1.0 - a_aff) ** 3
        # corrector
        corr = cones.jprod(W.apply(aff[3], inverse=True), W.apply(aff[2]))
        ds_t = -cones.jprod(lam, lam) - corr + sigma * mu * cones.e
        dk_t = -tau * kap - aff[4] * aff[5] + sigma * mu
        dx, dy, dz, ds, dtau, dkap = direction(1.0 - sigma, ds_t, dk_t)
        alpha = min(1.0, 0.99 * step_length(dz, ds, dtau, dkap))
        if not np.isfinite(alpha) or alpha < 1e-10:
            info["breakdown"] = "step"
            break
        if settings.verbose:
            print(f"    affine step {a_aff:.3f} sigma {sigma:.2e} step {alpha:.3f}")
        x, y, z, s = x + alpha * dx, y + alpha * dy, z + alpha * dz, s + alpha * ds
        tau, kap = tau + alpha * dtau, kap + alpha * dkap

    if status == Status.MAX_ITERATIONS and best is not None:
        _, (x, y, z, s, tau), info = best
        status = Status.OPTIMAL
        info = dict(info, reduced_accuracy=True)
    elif status == Status.MAX_ITERATIONS and best_infeasible is not None:
        # stalled on the way to a certificate; verify_certificate still applies the strict test
        _, y, z, last = best_infeasible
        status = Status.PRIMAL_INFEASIBLE
        info = dict(last, reduced_accuracy=True, breakdown=info.get("breakdown"))
    result = SolveResult(status, iterations=it, info=info)
    if status == Status.OPTIMAL:
        result.x = x / tau
        result.objective = float(c @ result.x)
        yfull = np.zeros(prog.m)
        yfull[eq_rows] = y / tau
        yfull[np.r_[lin_rows, soc_rows]] = z / tau
        result.y = yfull
        result.s = prog.b - prog.A @ result.x
    elif status == Status.PRIMAL_INFEASIBLE:
        yfull = np.zeros(prog.m)
        yfull[eq_rows] = y
        yfull[np.r_[lin_rows, soc_rows]] = z
        result.certificate = yfull / -(prog.b @ yfull)
    elif status == Status.DUAL_INFEASIBLE:
        result.x = x / -(c @ x)
    elif status == Status.MAX_ITERATIONS:
        result.x = x / tau
        result.objective = float(c @ result.x)
    return result


# ---------------------------------------------------------------------------
# clarabel backend


def _solve_clarabel(prog: ConicProgram, settings: SolverSettings) -> SolveResult:
    import clarabel

    cones = []
    for k in prog.cones:
        if k.kind == "zero":
            cones.append(clarabel.ZeroConeT(k.dim))
        elif k.kind == "nonneg":
            cones.append(clarabel.NonnegativeConeT(k.dim))
        else:
            cones.append(clarabel.SecondOrderConeT(k.dim))
    opts = clarabel.DefaultSettings()
    opts.verbose = False
    opts.max_iter = settings.max_iter
    opts.tol_feas = settings.feas_tol
    opts.tol_gap_abs = settings.gap_tol
    opts.tol_gap_rel = settings.gap_tol
    opts.tol_infeas_abs = settings.feas_tol
    opts.tol_infeas_rel = settings.feas_tol
    opts.presolve_enable = False
    P = sp.csc_matrix((prog.n, prog.n))
    solver = clarabel.DefaultSolver(P, prog.c, sp.csc_matrix(prog.A), prog.b, cones, opts)
    sol = solver.solve()
    st = str(sol.status)
    x = np.asarray(sol.x)
    z = np.asarray(sol.z)
    if st in ("Solved", "AlmostSolved"):
        return SolveResult(Status.OPTIMAL, x=x, y=z, s=np.asarray(sol.s),
                           objective=float(prog.c @ x), iterations=sol.iterations,
                           info={"backend_status": st, "reduced_accuracy": st == "AlmostSolved"})
    if st in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return SolveResult(Status.PRIMAL_INFEASIBLE, certificate=z / -(prog.b @ z),
                           iterations=sol.iterations, info={"backend_status": st})
    if st in ("DualInfeasible", "AlmostDualInfeasible"):
        return SolveResult(Status.DUAL_INFEASIBLE, x=x / -(prog.c @ x),
                           iterations=sol.iterations, info={"backend_status": st})
    return SolveResult(Status.MAX_ITERATIONS, x=x, iterations=sol.iterations,
                       info={"backend_status": st})


def solve(prog: ConicProgram, settings: SolverSettings | None = None) -> SolveResult:
    """Solve ``prog``; the status is deterministic for fixed inputs."""
    settings = settings or SolverSettings()
    if prog.m == 0:
        if np.any(prog.c != 0):
            return SolveResult(Status.DUAL_INFEASIBLE, x=-prog.c / (prog.c @ prog.c))
        return SolveResult(Status.OPTIMAL, x=np.zeros(prog.n), y=np.zeros(0),
                           s=np.zeros(0), objective=0.0)
    if settings.backend == "native":
        return _solve_native(prog, settings)
    if settings.backend == "clarabel":
        res = _solve_clarabel(prog, settings)
        if res.status == Status.MAX_ITERATIONS:
            # numerical trouble in the external solver: retry with the native method
            first = res.info.get("backend_status")
            res = _solve_native(prog, settings)
            res.info["fallback_from"] = first
        return res
    raise ValueError(f"unknown backend {settings.backend!r}")


def in_dual_cone(y: np.ndarray, cones: Sequence[Cone], tol: float) -> bool:
    start = 0
    for k in cones:
        blk = y[start:start + k.dim]
        if k.kind == "nonneg" and blk.min() < -tol:
            return False
        if k.kind == "soc" and blk[0] < np.linalg.norm(blk[1:]) - tol:
            return False
        start += k.dim
    return True


def verify_certificate(prog: ConicProgram, result: SolveResult, cert_tol: float = 1e-7) -> bool:
    """Check the Farkas conditions of a primal infeasibility certificate.

    ``y`` must lie in the dual cone, satisfy ``A'y = 0`` and ``b'y < 0``.
    The check is scale invariant: ``y`` is normalized to ``b'y = -1``.
    """
    y = result.certificate
    if y is None or y.shape != (prog.m,):
        return False
    by = float(prog.b @ y)
    if not by < 0:
        return False
    y = y / -by
    if np.linalg.norm(prog.A.T @ y, np.inf) > cert_tol:
        return False
    return in_dual_cone(y, prog.cones, cert_tol)


# ---------------------------------------------------------------------------
# JSON debug format


def dump_program(prog: ConicProgram) -> str:
    A = prog.A.tocoo()
    return json.dumps({
        "n": prog.n,
        "c": prog.c.tolist(),
        "b": prog.b.tolist(),
        "A": {"row": A.row.tolist(), "col": A.col.tolist(), "val": A.data.tolist()},
        "cones": [[k.kind, k.dim] for k in prog.cones],
    })


def load_program(text: str) -> ConicProgram:
    d = json.loads(text)
    m = len(d["b"])
    A = sp.coo_matrix((d["A"]["val"], (d["A"]["row"], d["A"]["col"])), shape=(m, d["n"]))
    return ConicProgram(np.asarray(d["c"]), A.tocsr(), np.asarray(d["b"]),
                        tuple(Cone(kind, dim) for kind, dim in d["cones"]))
