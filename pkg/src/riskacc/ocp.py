"""Scenario-tree optimal control problems compiled to conic programs.

Two formulations share one compiler:

* ``"nominal"``: AVaR constraint on the successor soft-constraint values
  and a conditional-expectation cost, both under the nominal transition
  rows (singleton ambiguity sets);
* ``"risk_averse"``: the same structure with distributionally robust AVaR
  constraints and a worst-case-expectation cost over per-mode ambiguity
  sets.

Quadratic costs enter as second-order-cone epigraphs, risk terms through
the dual systems emitted by :func:`riskacc.risk.epigraph_dual_constraints`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_delta
from .conic_solver import ConicProgram, SolverSettings, SolveResult, Status, solve
from .markov import SINGLETON, AmbiguitySet
from .mjls import AccParams, MjlsModel
from .polyhedra import Polyhedron, remove_redundancy
from .program import Affine, ProgramBuilder
from .risk import AVaR, MaxExpectation, RobustAVaR, epigraph_dual_batch
from .tree import ScenarioTree, build_full, build_support

NOMINAL = "nominal"
RISK_AVERSE = "risk_averse"
FULL = "full"
SUPPORT = "support"


@dataclass(frozen=True)
class OcpSpec:
    """Problem data for one receding-horizon solve.

    ``mode_ambiguity[w-1]`` describes the successor distribution of mode
    ``w``.  With ``branching="support"`` children are created only for
    successors with positive nominal probability, which requires singleton
    ambiguity sets.  ``bind_leaf_states`` additionally imposes the state
    constraints at the leaves.  ``merge_invariant_risk`` replaces a risk
    constraint by a single linear row whenever all children share the same
    soft-constraint value, which is exact for any coherent risk measure.
    ``fold_terminal`` states the terminal constraints of each group of
    sibling leaves as one irredundant polyhedron over the parent's state and
    input, an exact reformulation with far fewer rows.
    """

    model: MjlsModel
    params: AccParams
    horizon: int
    mode_ambiguity: tuple[AmbiguitySet, ...]
    delta: float
    terminal_set: Polyhedron
    branching: str = FULL
    formulation: str = RISK_AVERSE
    bind_leaf_states: bool = False
    merge_invariant_risk: bool = True
    fold_terminal: bool = True
    node_cap: int = 10**6

    def __post_init__(self):
        object.__setattr__(self, "mode_ambiguity", tuple(self.mode_ambiguity))
        check_delta(self.delta)
        d = self.model.d
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if len(self.mode_ambiguity) != d or any(a.d != d for a in self.mode_ambiguity):
            raise ValueError(f"need {d} ambiguity sets over {d} modes")
        if self.terminal_set.n != self.model.nx:
            raise ValueError("terminal set dimension does not match the state")
        if self.branching not in (FULL, SUPPORT):
            raise ValueError(f"unknown branching {self.branching!r}")
        if self.formulation not in (NOMINAL, RISK_AVERSE):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        singleton = all(a.kind == SINGLETON for a in self.mode_ambiguity)
        if (self.branching == SUPPORT or self.formulation == NOMINAL) and not singleton:
            raise ValueError("support branching and the nominal formulation need singleton ambiguity")

    def nominal_matrix(self) -> np.ndarray:
        return np.vstack([a.center for a in self.mode_ambiguity])

    def build_tree(self, w0: int) -> ScenarioTree:
        if self.branching == FULL:
            return build_full(self.model.d, self.horizon, w0, self.node_cap)
        return build_support(self.nominal_matrix(), self.horizon, w0, self.node_cap)


@dataclass
class VariableMap:
    """Program variable indices per tree node (``-1`` where absent)."""

    tree: ScenarioTree
    x: np.ndarray
    u: np.ndarray
    t: np.ndarray
    stage_cost: np.ndarray
    cost_scale: float = 1.0
    root_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    risk_duals: dict[int, np.ndarray] = field(default_factory=dict)
    cost_duals: dict[int, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            str(i): {
                "x": self.x[i].tolist(),
                "u": self.u[i].tolist(),
                "t": int(self.t[i]),
            }
            for i in range(self.tree.size)
        }


@dataclass
class NodePolicy:
    tree: ScenarioTree
    x: np.ndarray
    u: np.ndarray
    objective: float


@dataclass
class OcpResult:
    status: str
    policy: NodePolicy | None
    solve: SolveResult
    program: ConicProgram
    variables: VariableMap

    @property
    def feasible(self) -> bool:
        return self.status == Status.OPTIMAL


def _children_distribution(spec: OcpSpec, tree: ScenarioTree, i: int) -> AmbiguitySet:
    amb = spec.mode_ambiguity[int(tree.mode[i]) - 1]
    if spec.branching == FULL:
        return amb
    kids = tree.children[i]
    return AmbiguitySet.singleton(amb.center[tree.mode[list(kids)] - 1])


def _risk_spec(spec: OcpSpec, amb: AmbiguitySet):
    if spec.formulation == NOMINAL:
        return AVaR(amb.center, spec.delta)
    return RobustAVaR(amb, spec.delta)


def cost_scale(params: AccParams) -> float:
    """Largest velocity-deviation cost over the admissible speeds (at least 1).

    Costs are modeled in these units so the epigraph cones stay well
    centered; an epigraph ``(t+1, t-1, 2a)`` with ``t >> 1`` lies almost on
    the cone boundary.
    """
    dev = max(params.v_ref, params.v_max - params.v_ref)
    return float(max(1.0, params.q * dev**2))


_FOLD_CACHE: dict = {}


def _folded_terminal(model: MjlsModel, T: Polyhedron, modes: tuple[int, ...]) -> Polyhedron:
    """``{(x, u) : A_w x + B_w u + p_w in T for every w in modes}``, irredundant."""
    key = (T.G.tobytes(), T.h.tobytes(), modes,
           tuple((m.A.tobytes(), m.B.tobytes(), m.p.tobytes()) for m in model.modes))
    if key not in _FOLD_CACHE:
        G, h = [], []
        for w in modes:
            dyn = model.mode(w)
            G.append(np.hstack([T.G @ dyn.A, T.G @ dyn.B]))
            h.append(T.h - T.G @ dyn.p)
        if len(_FOLD_CACHE) > 256:
            _FOLD_CACHE.clear()
        _FOLD_CACHE[key] = remove_redundancy(Polyhedron(np.vstack(G), np.concatenate(h)))
    return _FOLD_CACHE[key]


def _g_map(model: MjlsModel, w: int) -> np.ndarray:
    """Soft-constraint value after a step in mode ``w`` as ``[coef_x, coef_u, const]``."""
    dyn = model.mode(w)
    g = model.g_coef
    return np.concatenate([g @ dyn.A, g @ dyn.B, [g @ dyn.p + model.g_offset]])


def assemble(spec: OcpSpec, x0, w0: int) -> tuple[ConicProgram, VariableMap]:
    model, params = spec.model, spec.params
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != model.nx:
        raise ValueError(f"initial state must have {model.nx} entries")
    tree = spec.build_tree(w0)
    M, nx, nu = tree.size, model.nx, model.nu
    n_inner = len(tree.non_leaf())
    inner = np.arange(n_inner)
    leaves = np.arange(n_inner, M)

    pb = ProgramBuilder()
    x = pb.new_vars(M * nx).reshape(M, nx)
    u = -np.ones((M, nu), dtype=np.int64)
    u[:n_inner] = pb.new_vars(n_inner * nu).reshape(n_inner, nu)
    t = pb.new_vars(M)
    e = -np.ones(M, dtype=np.int64)
    e[:n_inner] = pb.new_vars(n_inner)
    vmap = VariableMap(tree, x, u, t, e, cost_scale(params), np.arange(nx))
    xu = np.hstack([x[:n_inner], u[:n_inner]])

    # the initial-state rows come first so templates can swap x0 in place
    eye = np.eye(nx)
    pb.add_linear_rows("zero", eye, x[0], -x0)
    kids = np.arange(1, M)
    parents = tree.ancestor[kids]
    dyn_coef = np.stack([np.hstack([eye, -m.A, -m.B]) for m in model.modes])
    dyn_off = np.stack([-m.p for m in model.modes])
    kid_mode = tree.mode[kids] - 1
    pb.add_linear_batch("zero", dyn_coef[kid_mode], np.hstack([x[kids], xu[parents]]),
                        dyn_off[kid_mode])

    Xr, U = model.state_set, model.input_set
    state_nodes = np.arange(M) if spec.bind_leaf_states else inner
    pb.add_linear_batch("nonneg", -Xr.G, x[state_nodes], Xr.h)
    pb.add_linear_batch("nonneg", -U.G, u[inner], U.h)
    T = spec.terminal_set
    if spec.fold_terminal:
        groups: dict[tuple[int, ...], list[int]] = {}
        for i in tree.nodes(tree.horizon - 1):
            groups.setdefault(tuple(int(w) for w in tree.mode[list(tree.children[i])]), []).append(i)
        for modes, nodes in groups.items():
            L = _folded_terminal(model, T, modes)
            pb.add_linear_batch("nonneg", -L.G, xu[nodes], L.h)
    else:
        pb.add_linear_batch("nonneg", -T.G, x[leaves], T.h)

    # sibling groups that share a parent mode share their ambiguity set
    by_mode: dict[int, list[int]] = {}
    for i in inner:
        by_mode.setdefault(int(tree.mode[i]), []).append(int(i))
    for nodes in by_mode.values():
        nodes = np.array(nodes)
        amb = _children_distribution(spec, tree, int(nodes[0]))
        child_idx = np.array([tree.children[i] for i in nodes])
        maps = np.array([_g_map(model, int(w)) for w in tree.mode[child_idx[0]]])
        if spec.merge_invariant_risk and np.all(maps == maps[0]):
            # rho(c 1) = c for a coherent measure
            pb.add_linear_batch("nonneg", -maps[0][None, :-1], xu[nodes], -maps[0][-1:])
        else:
            g = model.g_coef
            y = epigraph_dual_batch(_risk_spec(spec, amb), x[child_idx], g, model.g_offset,
                                    np.zeros((nodes.size, 0)), [], 0.0, pb)
            vmap.risk_duals.update(zip(nodes.tolist(), y))
        y = epigraph_dual_batch(MaxExpectation(amb), t[child_idx][:, :, None], [1.0], 0.0,
                                np.column_stack([t[nodes], e[nodes]]), [1.0, -1.0], 0.0, pb)
        vmap.cost_duals.update(zip(nodes.tolist(), y))

    scale = vmap.cost_scale
    sq, sr = np.sqrt(params.q / scale), np.sqrt(params.r / scale)
    dev_off = -2 * sq * params.v_ref
    # (t + 1, t - 1, 2 sqrt(q) (v - v_ref))
    leaf_cone = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 2 * sq]])
    pb.add_linear_batch("soc", leaf_cone, np.column_stack([t[leaves], x[leaves, 1]]),
                        [1.0, -1.0, dev_off])
    with_input = params.r > 0
    k = 2 + (nu if with_input else 0)
    stage_cone = np.zeros((3 + (nu if with_input else 0), k))
    stage_cone[:2, 0] = 1.0
    stage_cone[2, 1] = 2 * sq
    cols = [e[inner], x[inner, 1]]
    if with_input:
        stage_cone[3:, 2:] = 2 * sr * np.eye(nu)
        cols.append(u[inner])
    offset = np.zeros(stage_cone.shape[0])
    offset[:3] = [1.0, -1.0, dev_off]
    pb.add_linear_batch("soc", stage_cone, np.column_stack(cols), offset)

    pb.minimize(Affine.var(int(t[0])))
    return pb.build(), vmap


def _finish(prog: ConicProgram, vmap: VariableMap, settings: SolverSettings | None) -> OcpResult:
    res = solve(prog, settings)
    policy = None
    if res.status == Status.OPTIMAL:
        u = np.where(vmap.u >= 0, res.x[np.maximum(vmap.u, 0)], np.nan)
        policy = NodePolicy(vmap.tree, res.x[vmap.x], u[: len(vmap.tree.non_leaf())],
                            res.objective * vmap.cost_scale)
    return OcpResult(res.status, policy, res, prog, vmap)


def solve_ocp(spec: OcpSpec, x0, w0: int, settings: SolverSettings | None = None) -> OcpResult:
    prog, vmap = assemble(spec, x0, w0)
    return _finish(prog, vmap, settings)


class OcpSolver:
    """Receding-horizon solver that reuses the assembled program.

    Only the initial state changes between calls with the same ``w0``;
    it enters the program through the right-hand side of the root rows.
    """

    def __init__(self, spec: OcpSpec, settings: SolverSettings | None = None):
        self.spec = spec
        self.settings = settings
        self._templates: dict[int, tuple[ConicProgram, VariableMap]] = {}

    def solve(self, x0, w0: int) -> OcpResult:
        w0 = int(w0)
        if w0 not in self._templates:
            self._templates[w0] = assemble(self.spec, np.zeros(self.spec.model.nx), w0)
        template, vmap = self._templates[w0]
        x0 = np.asarray(x0, dtype=float).ravel()
        if x0.size != self.spec.model.nx:
            raise ValueError(f"initial state must have {self.spec.model.nx} entries")
        b = template.b.copy()
        b[vmap.root_rows] = -x0
        prog = ConicProgram(template.c, template.A, b, template.cones)
        return _finish(prog, vmap, self.settings)


def extract_control(policy: NodePolicy) -> np.ndarray:
    return policy.u[0].copy()
