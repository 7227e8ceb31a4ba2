"""Named parameter sets and transition matrices for the ACC experiments."""

from __future__ import annotations

import functools

import numpy as np

from .mjls import AccParams, build_acc_model
from .polyhedra import Polyhedron
from .safety import RciResult, rci_iterate, rpi_candidate

# performance experiment: mild driver, frequent returns to cruising
P_P = np.array([
    [0.92, 0.04, 0.02, 0.02],
    [0.29, 0.50, 0.09, 0.12],
    [0.26, 0.21, 0.36, 0.17],
    [0.31, 0.25, 0.23, 0.21],
])

# safety experiment: mode 4 (hard braking) is rare but reachable from every mode
P_S = np.array([
    [0.29, 0.7, 0.009, 0.001],
    [0.09, 0.90, 0.009, 0.001],
    [0.4, 0.29, 0.3, 0.01],
    [0.048, 0.001, 0.001, 0.95],
])

MATRICES = {"P_p": P_P, "P_s": P_S}

PERFORMANCE_MODES = (1.13, -0.02, -0.33, -0.16)
SAFETY_MODES = (1.1, 0.0, -0.5, -1.0)

TABLE1 = AccParams(Ts=0.5, c=PERFORMANCE_MODES, a_min=-4.0, a_max=5.0,
                   v_max=40.0, v_ref=30.0, q=5.0, r=10.0)
TABLE1_HORIZON = 3

# invariant-set comparison; a_max is not pinned by the figure, we keep it symmetric
FIG3 = AccParams(Ts=0.5, c=PERFORMANCE_MODES, a_min=-5.0, a_max=5.0,
                 v_max=40.0, v_ref=30.0, q=5.0, r=10.0)
FIG3_TARGET_SPEED = 20.0
FIG3_GRID = np.linspace(0.0, 30.0, 61)

PARAMS = {
    "table1": TABLE1,
    "fig3": FIG3,
    "performance": TABLE1,
    "safety": AccParams(Ts=0.5, c=SAFETY_MODES, a_min=-4.0, a_max=5.0,
                        v_max=40.0, v_ref=30.0, q=5.0, r=10.0),
}

# both experiments start in cruise at a comfortable gap inside the terminal sets
DEFAULT_X0 = (60.0, 25.0, 25.0)
DEFAULT_W0 = 1


def matrix(name: str) -> np.ndarray:
    try:
        return MATRICES[name].copy()
    except KeyError:
        raise KeyError(f"unknown transition matrix preset {name!r}; known: {sorted(MATRICES)}") from None


def params(name: str) -> AccParams:
    try:
        return PARAMS[name]
    except KeyError:
        raise KeyError(f"unknown parameter preset {name!r}; known: {sorted(PARAMS)}") from None


@functools.lru_cache(maxsize=16)
def rci_sets(p: AccParams, max_iter: int = 50) -> RciResult:
    """RCI iteration from the linear-feedback invariant set; cached per parameter set."""
    model = build_acc_model(p)
    return rci_iterate(model, model.state_set, model.soft_set(), rpi_candidate(p), max_iter=max_iter)


def terminal_set(p: AccParams) -> Polyhedron:
    """Last RCI iterate for ``p``, used as the terminal constraint."""
    return rci_sets(p).final
