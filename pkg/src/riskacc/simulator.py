"""Closed-loop learning MPC for the ACC model and batch experiments.

Three controllers share one loop and differ only in the ambiguity sets
handed to the optimal control problem:

* ``stochastic``: singleton sets at the empirical rows, support branching,
  nominal AVaR formulation;
* ``risk_averse``: l1 balls at the empirical rows whose radii shrink with
  data, replaced only when the new ball lies inside the current one;
* ``robust``: the whole simplex for every row.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_delta, check_modes, check_transition_matrix
from .conic_solver import SolverSettings, Status
from .markov import (
    AmbiguitySet,
    TransitionEstimate,
    estimate,
    is_nested,
    radius,
    record_transition,
    sample_chain,
    sample_next,
)
from .mjls import AccParams, build_acc_model, stage_cost, step
from .ocp import FULL, NOMINAL, RISK_AVERSE, SUPPORT, OcpSolver, OcpSpec, extract_control
from .polyhedra import Polyhedron

STOCHASTIC = "stochastic"
RISK_AVERSE_CONTROLLER = "risk_averse"
ROBUST = "robust"
CONTROLLERS = (STOCHASTIC, RISK_AVERSE_CONTROLLER, ROBUST)

DEFAULT_DELTA = {STOCHASTIC: 0.1, RISK_AVERSE_CONTROLLER: 0.05, ROBUST: 0.05}
SUMMARY_QUANTILES = (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0)


@dataclass(frozen=True)
class ForcedMode:
    """Override the sampled mode with ``mode`` at time step ``step``."""

    mode: int
    step: int = 100


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    params: AccParams
    P_true: np.ndarray
    controller: str
    delta: float | None = None
    alpha: float = 0.05
    horizon: int = 3
    steps: int = 50
    realizations: int = 1
    master_seed: int = 0
    offline_samples: int = 0
    x0: tuple[float, ...] = (60.0, 25.0, 25.0)
    w0: int = 1
    forced_mode: ForcedMode | None = None
    online_learning: bool = True
    terminal_set: Polyhedron | None = None
    backend: str = "clarabel"

    def __post_init__(self):
        P = check_transition_matrix(self.P_true)
        object.__setattr__(self, "P_true", P)
        d = self.params.d
        if P.shape != (d, d):
            raise ValueError(f"transition matrix is {P.shape}, expected {(d, d)} for {d} modes")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}; expected one of {CONTROLLERS}")
        if self.delta is None:
            object.__setattr__(self, "delta", DEFAULT_DELTA[self.controller])
        check_delta(self.delta)
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.horizon < 1 or self.steps < 0 or self.realizations < 1 or self.offline_samples < 0:
            raise ValueError("need horizon >= 1, steps >= 0, realizations >= 1, offline_samples >= 0")
        check_modes([self.w0], d)
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if len(self.x0) != 3:
            raise ValueError("initial state must have 3 entries")
        if self.forced_mode is not None:
            check_modes([self.forced_mode.mode], d)
        if self.terminal_set is not None and self.terminal_set.n != 3:
            raise ValueError("terminal set must live in the 3-dimensional state space")

    def resolved_terminal_set(self) -> Polyhedron:
        if self.terminal_set is not None:
            return self.terminal_set
        from .presets import terminal_set

        return terminal_set(self.params)


@dataclass
class RealizationResult:
    """One closed-loop run.

    ``states`` has one row per visited state, ``inputs`` one per executed
    step.  When the problem becomes infeasible (or the solver fails) at
    step ``t`` the run stops there and ``states`` ends with ``x_t``.
    """

    realization: int
    seed: int
    controller: str
    states: np.ndarray
    inputs: np.ndarray
    modes: np.ndarray
    cost: float
    infeasible_at: int | None = None
    solver_failure_at: int | None = None
    statuses: list[str] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    ambiguity_history: list[list[AmbiguitySet]] = field(default_factory=list)

    @property
    def completed(self) -> bool:
        return self.infeasible_at is None and self.solver_failure_at is None

    def steps_csv(self) -> str:
        """Per-step table; the final state row has no input or status."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "w", "h", "v_e", "v_t", "u", "solve_status"])
        for t in range(self.states.shape[0]):
            u = repr(float(self.inputs[t])) if t < self.inputs.size else ""
            status = self.statuses[t] if t < len(self.statuses) else ""
            w.writerow([t, int(self.modes[t]), *(repr(float(v)) for v in self.states[t]), u, status])
        return buf.getvalue()


def forced_mode_schedule(t: int, base_draw: int, config: ExperimentConfig) -> int:
    """Mode at time ``t``: the forced mode at its step, the sampled one otherwise."""
    forced = config.forced_mode
    if forced is not None and t == forced.step:
        return forced.mode
    return base_draw


def realization_seed(master_seed: int, index: int) -> int:
    """Seed of realization ``index``; independent streams per index."""
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1, np.uint32)[0])


def ambiguity_for(config: ExperimentConfig, est: TransitionEstimate, j: int) -> AmbiguitySet:
    """Ambiguity set the configured controller uses for the successors of mode ``j``."""
    if config.controller == ROBUST:
        return AmbiguitySet.full_simplex(est.d)
    if config.controller == STOCHASTIC:
        return AmbiguitySet.singleton(est.row(j))
    return AmbiguitySet.l1_ball(est.row(j), radius(config.alpha, est.d, int(est.n[j - 1])))


class _Controller:
    """OCP solvers cached by the current ambiguity sets."""

    CACHE = 64

    def __init__(self, config: ExperimentConfig, terminal: Polyhedron):
        self.config = config
        self.model = build_acc_model(config.params)
        self.terminal = terminal
        self.settings = SolverSettings(backend=config.backend)
        self._solvers: dict[tuple[AmbiguitySet, ...], OcpSolver] = {}

    def spec(self, sets: tuple[AmbiguitySet, ...]) -> OcpSpec:
        stochastic = self.config.controller == STOCHASTIC
        return OcpSpec(
            self.model, self.config.params, self.config.horizon, sets, self.config.delta,
            self.terminal,
            branching=SUPPORT if stochastic else FULL,
            formulation=NOMINAL if stochastic else RISK_AVERSE,
        )

    def solve(self, sets: tuple[AmbiguitySet, ...], x, w: int):
        solver = self._solvers.get(sets)
        if solver is None:
            if len(self._solvers) >= self.CACHE:
                self._solvers.clear()
            solver = self._solvers[sets] = OcpSolver(self.spec(sets), self.settings)
        return solver.solve(x, w)


def run_learning_mpc(config: ExperimentConfig, seed: int, realization: int = 0,
                     terminal: Polyhedron | None = None) -> RealizationResult:
    """Simulate one realization of the learning MPC loop."""
    terminal = terminal if terminal is not None else config.resolved_terminal_set()
    d = config.params.d
    offline_ss, online_ss = np.random.SeedSequence(seed).spawn(2)
    est = TransitionEstimate.empty(d)
    if config.offline_samples:
        chain = sample_chain(config.P_true, config.w0, config.offline_samples,
                             np.random.default_rng(offline_ss))
        est = estimate(chain, d)
    rng = np.random.default_rng(online_ss)

    sets = [ambiguity_for(config, est, j) for j in range(1, d + 1)]
    history = [[s] for s in sets]
    ctrl = _Controller(config, terminal)
    params = config.params

    x = np.array(config.x0, dtype=float)
    w = config.w0
    states, inputs, modes = [x], [], [w]
    statuses, iterations = [], []
    cost = 0.0
    infeasible_at = failure_at = None
    for t in range(config.steps):
        res = ctrl.solve(tuple(sets), x, w)
        statuses.append(res.status)
        iterations.append(res.solve.iterations)
        if res.status == Status.PRIMAL_INFEASIBLE:
            infeasible_at = t
            break
        if not res.feasible:
            failure_at = t
            break
        u = extract_control(res.policy)
        cost += stage_cost(params, x, u)
        w_next = forced_mode_schedule(t + 1, sample_next(config.P_true, w, rng), config)
        x = step(ctrl.model, x, u, w_next)
        inputs.append(float(u[0]))
        states.append(x)
        modes.append(w_next)
        if config.online_learning:
            est = record_transition(est, w, w_next)
            candidate = ambiguity_for(config, est, w)
            # only shrinking updates keep the recursive-feasibility guarantee
            if config.controller == STOCHASTIC or is_nested(candidate, sets[w - 1]):
                if candidate != sets[w - 1]:
                    sets[w - 1] = candidate
                    history[w - 1].append(candidate)
        w = w_next

    return RealizationResult(
        realization=realization, seed=seed, controller=config.controller,
        states=np.array(states), inputs=np.array(inputs), modes=np.array(modes),
        cost=cost, infeasible_at=infeasible_at, solver_failure_at=failure_at,
        statuses=statuses, iterations=iterations, ambiguity_history=history,
    )


def audit_nested(history: list[list[AmbiguitySet]], tol: float = 1e-9) -> bool:
    """Each mode's sequence of ambiguity sets is decreasing under inclusion."""
    return all(is_nested(b, a, tol) for seq in history for a, b in zip(seq, seq[1:]))


@dataclass
class BatchSummary:
    controller: str
    realizations: int
    completed: int
    infeasible: int
    solver_failures: int
    mean_cost: float
    std_cost: float
    stderr_cost: float
    quantiles: dict[str, float]

    @property
    def infeasible_fraction(self) -> float:
        return self.infeasible / self.realizations

    def to_dict(self) -> dict:
        return {
            "controller": self.controller,
            "realizations": self.realizations,
            "completed": self.completed,
            "infeasible": self.infeasible,
            "infeasible_fraction": self.infeasible_fraction,
            "solver_failures": self.solver_failures,
            "mean_cost": self.mean_cost,
            "std_cost": self.std_cost,
            "stderr_cost": self.stderr_cost,
            "cost_quantiles": self.quantiles,
        }


def summarize(results: list[RealizationResult], controller: str) -> BatchSummary:
    """Statistics of the closed-loop costs over the completed realizations."""
    costs = np.array([r.cost for r in results if r.completed])
    nan = float("nan")
    if costs.size:
        std = float(costs.std(ddof=1)) if costs.size > 1 else 0.0
        mean, se = float(costs.mean()), float(std / np.sqrt(costs.size))
        quant = {f"{q:g}": float(np.quantile(costs, q)) for q in SUMMARY_QUANTILES}
    else:
        mean = std = se = nan
        quant = {f"{q:g}": nan for q in SUMMARY_QUANTILES}
    return BatchSummary(
        controller=controller,
        realizations=len(results),
        completed=int(costs.size),
        infeasible=sum(r.infeasible_at is not None for r in results),
        solver_failures=sum(r.solver_failure_at is not None for r in results),
        mean_cost=mean, std_cost=std, stderr_cost=se, quantiles=quant,
    )


def _run_one(args):
    config, i, terminal = args
    return run_learning_mpc(config, realization_seed(config.master_seed, i), i, terminal)


def run_batch(config: ExperimentConfig, n_jobs: int = 1) -> tuple[list[RealizationResult], BatchSummary]:
    """All realizations of ``config``; results are ordered by realization index."""
    terminal = config.resolved_terminal_set()
    jobs = [(config, i, terminal) for i in range(config.realizations)]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    return results, summarize(results, config.controller)


def empirical_cdf(costs) -> list[tuple[float, float]]:
    """Right-continuous ECDF as ``(value, fraction <= value)`` at each distinct value."""
    x = np.sort(np.asarray(costs, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("empirical_cdf needs at least one value")
    values, counts = np.unique(x, return_counts=True)
    return [(float(v), float(c) / x.size) for v, c in zip(values, np.cumsum(counts))]


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def realizations_csv(results: list[RealizationResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["realization", "seed", "controller", "cost", "infeasible_at"])
    for r in results:
        w.writerow([r.realization, r.seed, r.controller, _fmt(r.cost), _fmt(r.infeasible_at)])
    return buf.getvalue()


def ecdf_csv(costs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cost", "fraction"])
    for v, f in empirical_cdf(costs) if len(costs) else []:
        w.writerow([repr(v), repr(f)])
    return buf.getvalue()


def summary_json(summary: BatchSummary, results: list[RealizationResult]) -> str:
    body = summary.to_dict()
    body["solver_diagnostics"] = {
        "solver_failure_at": [r.solver_failure_at for r in results if r.solver_failure_at is not None],
        "total_iterations": int(sum(sum(r.iterations) for r in results)),
        "solves": int(sum(len(r.iterations) for r in results)),
    }
    return json.dumps(body, indent=2, sort_keys=True, allow_nan=True) + "\n"
