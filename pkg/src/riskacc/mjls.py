"""Markov jump linear systems and the adaptive cruise control instance.

The ACC state is ``x = (h, v_e, v_t)``: headway, ego velocity and target
velocity.  The ego acceleration is the input.  Each mode ``w`` fixes the
target acceleration law, so the piecewise target model compiles into one
affine system per mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .polyhedra import Polyhedron


@dataclass(frozen=True)
class ModeDynamics:
    """``x+ = A x + B u + p``."""

    A: np.ndarray
    B: np.ndarray
    p: np.ndarray

    def __call__(self, x, u):
        return self.A @ x + self.B @ np.atleast_1d(u) + self.p


@dataclass(frozen=True)
class MjlsModel:
    """Per-mode affine dynamics with constraint sets.

    ``g_coef, g_offset`` define the soft-constraint function
    ``g(x) = g_coef' x + g_offset``; the soft set is ``{g(x) <= 0}``.
    Modes are labelled ``1..d``.
    """

    modes: tuple[ModeDynamics, ...]
    state_set: Polyhedron
    input_set: Polyhedron
    g_coef: np.ndarray
    g_offset: float = 0.0

    def __post_init__(self):
        if not self.modes:
            raise ValueError("at least one mode is required")
        nx, nu = self.modes[0].B.shape
        for m in self.modes:
            if m.A.shape != (nx, nx) or m.B.shape != (nx, nu) or m.p.shape != (nx,):
                raise ValueError("inconsistent mode dimensions")
        if self.state_set.n != nx or self.input_set.n != nu or self.g_coef.shape != (nx,):
            raise ValueError("constraint sets do not match the state/input dimensions")

    @property
    def d(self) -> int:
        return len(self.modes)

    @property
    def nx(self) -> int:
        return self.modes[0].A.shape[0]

    @property
    def nu(self) -> int:
        return self.modes[0].B.shape[1]

    def mode(self, w: int) -> ModeDynamics:
        if not 1 <= w <= self.d:
            raise ValueError(f"mode {w} out of range 1..{self.d}")
        return self.modes[w - 1]

    def soft_set(self) -> Polyhedron:
        return Polyhedron(self.g_coef[None, :], [-self.g_offset])

    def g(self, x) -> float:
        return float(self.g_coef @ np.asarray(x, float) + self.g_offset)


@dataclass(frozen=True)
class AccParams:
    """ACC parameters (SI units: s, m/s, m/s^2).

    ``c`` holds one target parameter per mode: a constant acceleration for
    ``c_w >= 0`` and a velocity-proportional braking rate (1/s) for
    ``c_w < 0``.
    """

    Ts: float = 0.5
    c: tuple[float, ...] = (1.13, -0.02, -0.33, -0.16)
    a_min: float = -4.0
    a_max: float = 5.0
    v_max: float = 40.0
    v_ref: float = 30.0
    q: float = 5.0
    r: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(float(v) for v in np.atleast_1d(self.c)))
        if self.Ts <= 0:
            raise ValueError("sampling period must be positive")
        if not self.c:
            raise ValueError("at least one mode parameter is required")
        if min(self.c) < -1.0 / self.Ts - 1e-12:
            raise ValueError(f"mode parameters must satisfy c_w >= -1/Ts = {-1 / self.Ts}")
        if self.a_min > 0 or self.a_max < 0:
            raise ValueError("require a_min <= 0 <= a_max")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")
        if self.q <= 0 or self.r < 0:
            raise ValueError("require q > 0 and r >= 0")

    @property
    def d(self) -> int:
        return len(self.c)

    @property
    def c_min(self) -> float:
        return min(self.c)


def build_acc_model(params: AccParams) -> MjlsModel:
    Ts = params.Ts
    modes = []
    for cw in params.c:
        A = np.array([[1.0, -Ts, Ts], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        p = np.zeros(3)
        if cw >= 0:
            p[2] = Ts * cw
        else:
            A[2, 2] = 1.0 + Ts * cw
        modes.append(ModeDynamics(A, np.array([[0.0], [Ts], [0.0]]), p))
    state_set = Polyhedron([[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]], [params.v_max, 0.0])
    input_set = Polyhedron([[1.0], [-1.0]], [params.a_max, -params.a_min])
    return MjlsModel(tuple(modes), state_set, input_set, np.array([-1.0, 0.0, 0.0]), 0.0)


def step(model: MjlsModel, x, u, w: int) -> np.ndarray:
    return model.mode(w)(np.asarray(x, float), u)


def stage_cost(params: AccParams, x, u) -> float:
    return float(params.q * (x[1] - params.v_ref) ** 2 + params.r * float(np.squeeze(u)) ** 2)


def terminal_cost(params: AccParams, x) -> float:
    return float(params.q * (x[1] - params.v_ref) ** 2)
