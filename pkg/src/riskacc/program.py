"""Incremental construction of conic programs from affine expressions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .conic_solver import Cone, ConicProgram


@dataclass(frozen=True)
class Affine:
    """Sparse affine expression ``sum(coef[k] * x[idx[k]]) + const``."""

    idx: np.ndarray
    coef: np.ndarray
    const: float = 0.0

    @classmethod
    def var(cls, i: int, scale: float = 1.0) -> "Affine":
        return cls(np.array([i]), np.array([float(scale)]))

    @classmethod
    def constant(cls, value: float) -> "Affine":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), float(value))

    def __add__(self, other):
        if not isinstance(other, Affine):
            return Affine(self.idx, self.coef, self.const + float(other))
        return Affine(np.concatenate((self.idx, other.idx)),
                      np.concatenate((self.coef, other.coef)), self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Affine(self.idx, -self.coef, -self.const)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Affine) else -float(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scale):
        scale = float(scale)
        return Affine(self.idx, self.coef * scale, self.const * scale)

    __rmul__ = __mul__

    def value(self, x: np.ndarray) -> float:
        return float(self.coef @ x[self.idx] + self.const) if self.idx.size else self.const


@dataclass
class _Block:
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    const: np.ndarray


def _block_from_exprs(exprs) -> _Block:
    lengths = [e.idx.size for e in exprs]
    if not exprs:
        empty = np.zeros(0, dtype=np.int64)
        return _Block(empty, empty, np.zeros(0), np.zeros(0))
    return _Block(
        np.repeat(np.arange(len(exprs)), lengths),
        np.concatenate([e.idx for e in exprs]).astype(np.int64),
        np.concatenate([e.coef for e in exprs]),
        np.array([e.const for e in exprs], dtype=float),
    )


def _block_from_matrix(M, cols, offset) -> _Block:
    M = np.atleast_2d(np.asarray(M, float))
    return _block_from_batch(M[None], np.asarray(cols)[None], np.asarray(offset, float))


def _block_from_batch(M, cols, offset) -> _Block:
    """Rows ``M[b] @ x[cols[b]] + offset[b]`` stacked over the batch index ``b``."""
    cols = np.atleast_2d(np.asarray(cols, dtype=np.int64))
    B, k = cols.shape
    M = np.asarray(M, float)
    m = M.shape[-2]
    return _Block(
        np.repeat(np.arange(B * m), k),
        np.broadcast_to(cols[:, None, :], (B, m, k)).ravel(),
        np.broadcast_to(M, (B, m, k)).ravel(),
        np.broadcast_to(np.asarray(offset, float), (B, m)).ravel().copy(),
    )


class ProgramBuilder:
    """Collect variables and cone constraints ``expr in K``.

    Zero and nonnegative rows may be added in any order; they are grouped
    into one block each when :meth:`build` is called, followed by the
    second-order cones in insertion order.
    """

    def __init__(self):
        self.n = 0
        self._blocks: dict[str, list[_Block]] = {"zero": [], "nonneg": [], "soc": []}
        self._soc_dims: list[int] = []
        self._objective: list[Affine] = []

    def new_vars(self, k: int) -> np.ndarray:
        out = np.arange(self.n, self.n + k)
        self.n += k
        return out

    def add_zero(self, exprs) -> None:
        """Constrain each expression to equal zero."""
        self._blocks["zero"].append(_block_from_exprs(list(exprs)))

    def add_nonneg(self, exprs) -> None:
        """Constrain each expression to be nonnegative."""
        self._blocks["nonneg"].append(_block_from_exprs(list(exprs)))

    def add_soc(self, exprs) -> None:
        """``(e0, e1, ...)`` with ``e0 >= ||(e1, ...)||``."""
        exprs = list(exprs)
        self._blocks["soc"].append(_block_from_exprs(exprs))
        self._soc_dims.append(len(exprs))

    def add_linear_rows(self, kind: str, M, cols, offset) -> None:
        """Add the rows ``M @ x[cols] + offset`` to the ``kind`` block."""
        if kind == "soc":
            raise ValueError("use add_soc for second-order cones")
        self._blocks[kind].append(_block_from_matrix(M, cols, offset))

    def add_linear_batch(self, kind: str, M, cols, offset) -> None:
        """Add ``M[b] @ x[cols[b]] + offset[b]`` for every batch index ``b``.

        ``M`` has shape ``(B, m, k)`` or ``(m, k)`` (shared), ``cols`` has
        shape ``(B, k)``.  For ``kind="soc"`` each batch entry is one cone
        of dimension ``m``.
        """
        blk = _block_from_batch(M, cols, offset)
        self._blocks[kind].append(blk)
        if kind == "soc":
            B, m = len(cols), np.shape(M)[-2]
            self._soc_dims.extend([m] * B)

    def minimize(self, expr: Affine) -> None:
        self._objective.append(expr)

    def build(self) -> ConicProgram:
        rows, cols, vals, consts = [], [], [], []
        cones = []
        start = 0
        for kind in ("zero", "nonneg", "soc"):
            count = 0
            for blk in self._blocks[kind]:
                rows.append(blk.rows + start)
                cols.append(blk.cols)
                vals.append(blk.vals)
                consts.append(blk.const)
                start += blk.const.size
                count += blk.const.size
            if kind != "soc" and count:
                cones.append(Cone(kind, count))
        cones += [Cone("soc", k) for k in self._soc_dims]
        m = start
        r = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        cidx = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        v = np.concatenate(vals) if vals else np.zeros(0)
        b = np.concatenate(consts) if consts else np.zeros(0)
        # expr = b - A x  =>  A = -coef
        A = sp.csr_matrix((-v, (r, cidx)), shape=(m, self.n))
        A.sum_duplicates()
        A.eliminate_zeros()
        c = np.zeros(self.n)
        for e in self._objective:
            np.add.at(c, e.idx, e.coef)
        return ConicProgram(c, A, b, tuple(cones))

    def objective_constant(self) -> float:
        return sum(e.const for e in self._objective)
