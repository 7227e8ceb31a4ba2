"""Scenario trees over finite-mode processes.

Nodes are stored breadth-first, so the nodes of stage ``k`` occupy the
contiguous index range ``stage_range(k)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._validation import check_modes, check_transition_matrix

DEFAULT_NODE_CAP = 10**6


@dataclass(frozen=True)
class ScenarioTree:
    """Immutable scenario tree.

    ``prob[i]`` is the conditional probability of node ``i`` given its
    ancestor (1.0 for the root, ``nan`` for trees built without a matrix).
    """

    stage: np.ndarray
    mode: np.ndarray
    ancestor: np.ndarray
    prob: np.ndarray
    children: tuple[tuple[int, ...], ...]
    stage_start: np.ndarray

    @property
    def horizon(self) -> int:
        return self.stage_start.size - 2

    @property
    def size(self) -> int:
        return self.stage.size

    def nodes(self, k: int) -> range:
        return range(int(self.stage_start[k]), int(self.stage_start[k + 1]))

    def non_leaf(self) -> range:
        return range(0, int(self.stage_start[-2]))

    def leaves(self) -> range:
        return self.nodes(self.horizon)

    def is_leaf(self, i: int) -> bool:
        return int(self.stage[i]) == self.horizon

    def path(self, i: int) -> list[int]:
        """Node indices from the root down to ``i``."""
        out = [i]
        while self.ancestor[out[-1]] >= 0:
            out.append(int(self.ancestor[out[-1]]))
        return out[::-1]

    def to_json(self) -> str:
        return json.dumps({
            "horizon": self.horizon,
            "nodes": [
                {"id": i, "stage": int(self.stage[i]), "mode": int(self.mode[i]),
                 "ancestor": int(self.ancestor[i]) if self.ancestor[i] >= 0 else None,
                 "prob": None if np.isnan(self.prob[i]) else float(self.prob[i])}
                for i in range(self.size)
            ],
        })


def _grow(N: int, w0: int, successors) -> ScenarioTree:
    stage, mode, anc, prob = [0], [w0], [-1], [1.0]
    children: list[list[int]] = [[]]
    starts = [0, 1]
    for k in range(1, N + 1):
        for parent in range(starts[k - 1], starts[k]):
            for w, pr in successors(mode[parent]):
                children[parent].append(len(stage))
                stage.append(k)
                mode.append(w)
                anc.append(parent)
                prob.append(pr)
                children.append([])
        starts.append(len(stage))
    return ScenarioTree(
        np.array(stage), np.array(mode), np.array(anc), np.array(prob, float),
        tuple(tuple(c) for c in children), np.array(starts),
    )


def build_full(d: int, N: int, w0: int, cap: int = DEFAULT_NODE_CAP) -> ScenarioTree:
    """Complete ``d``-ary tree: every mode sequence of length ``N``."""
    if d < 1 or N < 1:
        raise ValueError("require d >= 1 and N >= 1")
    check_modes([w0], d)
    if d**N > cap:
        raise ValueError(f"tree with {d}^{N} leaves exceeds the cap of {cap}")
    modes = [(w, float("nan")) for w in range(1, d + 1)]
    return _grow(N, w0, lambda _: modes)


def build_support(P, N: int, w0: int, cap: int = DEFAULT_NODE_CAP) -> ScenarioTree:
    """Branch only on transitions with strictly positive probability."""
    P = np.asarray(P, dtype=float)
    if P.ndim == 2 and np.any(P.sum(axis=1) == 0):
        raise ValueError("transition matrix has an all-zero row")
    P = check_transition_matrix(P)
    if N < 1:
        raise ValueError("require N >= 1")
    d = P.shape[0]
    check_modes([w0], d)
    support = {j: [(i + 1, float(P[j - 1, i])) for i in np.flatnonzero(P[j - 1] > 0)]
               for j in range(1, d + 1)}
    widest = max(len(s) for s in support.values())
    if widest**N > cap:
        raise ValueError(f"tree may exceed the cap of {cap} leaves")
    return _grow(N, w0, support.__getitem__)
