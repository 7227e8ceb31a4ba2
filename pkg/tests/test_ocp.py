import numpy as np
import pytest
from scipy.optimize import minimize

from oracles import avar_by_quantile
from riskacc.conic_solver import SolverSettings, Status, verify_certificate
from riskacc.markov import AmbiguitySet
from riskacc.mjls import AccParams, build_acc_model, stage_cost, step, terminal_cost
from riskacc.ocp import (
    NOMINAL,
    RISK_AVERSE,
    SUPPORT,
    OcpSolver,
    OcpSpec,
    assemble,
    extract_control,
    solve_ocp,
)
from riskacc.polyhedra import Polyhedron, intersect
from riskacc.presets import P_P, P_S, TABLE1
from riskacc.risk import robust_avar_value

TIGHT = SolverSettings(feas_tol=1e-10, gap_tol=1e-10)
# objectives near 1e4 need this to agree to 1e-7 absolute
EXACT = SolverSettings(feas_tol=1e-12, gap_tol=1e-12, max_iter=400)


def time_gap_set(params: AccParams, gap: float = 1.0) -> Polyhedron:
    """Terminal set ``h >= gap * v_e`` inside the speed limits."""
    return Polyhedron([[-1.0, gap, 0.0], [0, 1, 0], [0, -1, 0]], [0.0, params.v_max, 0.0])


def make_spec(params, P, sets=None, horizon=2, delta=0.1, terminal=None, formulation=NOMINAL, **kw):
    model = build_acc_model(params)
    if sets is None:
        sets = [AmbiguitySet.singleton(row) for row in P]
    if terminal is None:
        terminal = time_gap_set(params)
    return OcpSpec(model, params, horizon, sets, delta, terminal, formulation=formulation, **kw)


def scenario_oracle(params, P, x0, w0, delta, terminal, n_grid=2001):
    """Exhaustive search over the tree inputs of a two-stage, two-mode problem.

    Stage-one nodes decouple once the root input is fixed, so the search is
    a grid over the root input with an inner grid per stage-one node; both
    grids are refined once around their best point.
    """
    model = build_acc_model(params)
    d = P.shape[0]
    lo, hi = params.a_min, params.a_max

    def avar_ok(children, p):
        return avar_by_quantile([model.g(c) for c in children], p, delta) <= 1e-9

    def inner(x1, j):
        if not model.state_set.contains(x1, 1e-9):
            return np.inf
        kids = [step(model, x1, 0.0, i + 1) for i in range(d)]
        if not avar_ok(kids, P[j - 1]):
            return np.inf
        best = np.inf
        a, b = lo, hi
        for _ in range(2):
            us = np.linspace(a, b, n_grid)
            ok = np.ones(us.size, bool)
            future = np.zeros(us.size)
            for i in range(d):
                dyn = model.mode(i + 1)
                x2 = (dyn.A @ x1 + dyn.p)[None, :] + us[:, None] * dyn.B[:, 0][None, :]
                ok &= np.all(x2 @ terminal.G.T <= terminal.h + 1e-9, axis=1)
                future += P[j - 1, i] * params.q * (x2[:, 1] - params.v_ref) ** 2
            vals = np.where(ok, params.q * (x1[1] - params.v_ref) ** 2 + params.r * us**2 + future, np.inf)
            k = int(np.argmin(vals))
            best = min(best, vals[k])
            width = (b - a) / (n_grid - 1)
            a, b = max(lo, us[k] - width), min(hi, us[k] + width)
        return best

    if not model.state_set.contains(x0, 1e-9):
        return np.inf, None
    if not avar_ok([step(model, x0, 0.0, i + 1) for i in range(d)], P[w0 - 1]):
        return np.inf, None

    def outer(u0):
        total = stage_cost(params, x0, u0)
        for j in range(1, d + 1):
            total += P[w0 - 1, j - 1] * inner(step(model, x0, u0, j), j)
        return total

    a, b, best, arg = lo, hi, np.inf, None
    for n in (181, 41):
        us = np.linspace(a, b, n)
        vals = np.array([outer(u) for u in us])
        k = int(np.argmin(vals))
        if vals[k] < best:
            best, arg = vals[k], us[k]
        width = (b - a) / (n - 1)
        a, b = max(lo, us[k] - width), min(hi, us[k] + width)
    return best, arg


TWO_MODE = AccParams(Ts=0.5, c=(0.5, -0.4), a_min=-4, a_max=3, v_max=30, v_ref=20, q=1, r=2)
P2 = np.array([[0.7, 0.3], [0.4, 0.6]])


class TestExamples:
    def test_equilibrium(self):
        p = AccParams(c=(0.0,))
        spec = make_spec(p, np.eye(1), horizon=2, terminal=build_acc_model(p).state_set)
        res = solve_ocp(spec, [1000.0, p.v_ref, p.v_ref], 1)
        assert res.status == Status.OPTIMAL
        assert res.policy.objective == pytest.approx(0.0, abs=1e-5)
        # a quadratic cost pins the input to the square root of the objective accuracy
        np.testing.assert_allclose(res.policy.u, 0.0, atol=1e-3)
        tight = solve_ocp(spec, [1000.0, p.v_ref, p.v_ref], 1, TIGHT)
        assert extract_control(tight.policy)[0] == pytest.approx(0.0, abs=1e-5)

    def test_speed_above_limit(self):
        p = TWO_MODE
        spec = make_spec(p, P2)
        res = solve_ocp(spec, [50.0, p.v_max + 1, 20.0], 1)
        assert res.status == Status.PRIMAL_INFEASIBLE
        assert verify_certificate(res.program, res.solve)

    def test_empty_terminal(self, rng):
        p = TWO_MODE
        spec = make_spec(p, P2, terminal=Polyhedron.empty(3))
        for x0 in rng.uniform([0, 0, 0], [200, 30, 30], size=(5, 3)):
            assert solve_ocp(spec, x0, 1).status == Status.PRIMAL_INFEASIBLE

    def test_rejects_bad_specs(self):
        p = TWO_MODE
        ball = [AmbiguitySet.l1_ball(row, 0.1) for row in P2]
        with pytest.raises(ValueError):
            make_spec(p, P2, sets=ball, formulation=NOMINAL)
        with pytest.raises(ValueError):
            make_spec(p, P2, sets=ball, formulation=RISK_AVERSE, branching=SUPPORT)
        with pytest.raises(ValueError):
            make_spec(p, P2, horizon=0)
        with pytest.raises(ValueError):
            make_spec(p, P2, terminal=Polyhedron.universe(2))


class TestScenarioOracle:
    @pytest.mark.parametrize("x0,w0", [
        ((40.0, 25.0, 18.0), 1),
        ((30.0, 12.0, 15.0), 2),
        ((22.0, 20.0, 16.0), 1),
        ((60.0, 5.0, 5.0), 2),
    ])
    def test_nominal_two_modes(self, x0, w0):
        spec = make_spec(TWO_MODE, P2, delta=0.35)
        res = solve_ocp(spec, x0, w0)
        want, u0 = scenario_oracle(TWO_MODE, P2, np.array(x0), w0, 0.35, spec.terminal_set)
        assert np.isfinite(want), "pick oracle states that are feasible"
        assert res.status == Status.OPTIMAL
        assert res.policy.objective == pytest.approx(want, abs=1e-2)

    def test_random_states(self):
        rng = np.random.default_rng(12)
        spec = make_spec(TWO_MODE, P2, delta=0.35)
        outcomes = set()
        for x0 in rng.uniform([0, 0, 0], [60, 30, 30], size=(25, 3)):
            w0 = int(rng.integers(1, 3))
            want, _ = scenario_oracle(TWO_MODE, P2, x0, w0, 0.35, spec.terminal_set)
            res = solve_ocp(spec, x0, w0)
            if np.isfinite(want):
                assert res.status == Status.OPTIMAL
                assert res.policy.objective == pytest.approx(want, abs=1e-2)
            else:
                assert res.status == Status.PRIMAL_INFEASIBLE
            outcomes.add(bool(np.isfinite(want)))
        assert outcomes == {True, False}

    def test_nominal_infeasible_matches(self):
        x0 = np.array([3.0, 20.0, 5.0])
        spec = make_spec(TWO_MODE, P2, delta=0.35)
        want, _ = scenario_oracle(TWO_MODE, P2, x0, 1, 0.35, spec.terminal_set)
        assert want == np.inf
        assert solve_ocp(spec, x0, 1).status == Status.PRIMAL_INFEASIBLE

    def test_single_mode_path(self):
        p = AccParams(Ts=0.5, c=(-0.3,), a_min=-4, a_max=3, v_max=30, v_ref=20, q=1, r=2)
        model = build_acc_model(p)
        N, x0 = 3, np.array([60.0, 22.0, 18.0])
        T = time_gap_set(p, 1.2)
        spec = make_spec(p, np.eye(1), horizon=N, terminal=T)
        res = solve_ocp(spec, x0, 1, TIGHT)

        def rollout(us):
            xs = [x0]
            for u in us:
                xs.append(step(model, xs[-1], u, 1))
            return xs

        def cost(us):
            xs = rollout(us)
            return sum(stage_cost(p, xs[k], us[k]) for k in range(N)) + terminal_cost(p, xs[-1])

        cons = [{"type": "ineq", "fun": lambda us, k=k: rollout(us)[k + 1][0]} for k in range(N - 1)]
        cons.append({"type": "ineq", "fun": lambda us: T.h - T.G @ rollout(us)[-1]})
        cons.append({"type": "ineq", "fun": lambda us: p.v_max - np.array([x[1] for x in rollout(us)[:-1]])})
        cons.append({"type": "ineq", "fun": lambda us: np.array([x[1] for x in rollout(us)[:-1]])})
        ref = minimize(cost, np.zeros(N), method="SLSQP", bounds=[(p.a_min, p.a_max)] * N,
                       constraints=cons, options={"ftol": 1e-12, "maxiter": 500})
        assert ref.success
        assert res.policy.objective == pytest.approx(ref.fun, abs=1e-5)
        assert extract_control(res.policy)[0] == pytest.approx(ref.x[0], abs=1e-4)


class TestConsistency:
    def test_singleton_risk_averse_equals_nominal(self, performance_terminal):
        rng = np.random.default_rng(3)
        sets = [AmbiguitySet.singleton(row) for row in P_P]
        kw = dict(horizon=3, terminal=performance_terminal, branching=SUPPORT, merge_invariant_risk=False)
        nom = make_spec(TABLE1, P_P, sets, formulation=NOMINAL, **kw)
        ra = make_spec(TABLE1, P_P, sets, formulation=RISK_AVERSE, **kw)
        checked = 0
        for x0 in rng.uniform([10, 5, 5], [120, 38, 38], size=(12, 3)):
            a, b = solve_ocp(nom, x0, 2, EXACT), solve_ocp(ra, x0, 2, EXACT)
            assert a.program.A.shape != b.program.A.shape
            assert a.status == b.status
            if a.feasible:
                checked += 1
                assert a.policy.objective == pytest.approx(b.policy.objective, abs=1e-7)
        assert checked >= 3

    def test_reductions_are_exact(self, rng):
        p = AccParams(c=(1.1, 0.0, -0.5, -1.0))
        T = time_gap_set(p, 1.5)
        sets = [AmbiguitySet.l1_ball(row, 0.3) for row in P_S]
        full = make_spec(p, P_S, sets, horizon=2, terminal=T, formulation=RISK_AVERSE,
                         fold_terminal=False, merge_invariant_risk=False)
        fast = make_spec(p, P_S, sets, horizon=2, terminal=T, formulation=RISK_AVERSE)
        checked = 0
        for x0 in rng.uniform([20, 5, 5], [100, 35, 35], size=(10, 3)):
            a, b = solve_ocp(full, x0, 3), solve_ocp(fast, x0, 3)
            assert a.status == b.status
            if a.feasible:
                checked += 1
                assert a.policy.objective == pytest.approx(b.policy.objective, rel=1e-6, abs=1e-6)
        assert checked >= 3

    def test_template_solver_matches_fresh_assembly(self):
        spec = make_spec(TWO_MODE, P2, delta=0.35)
        solver = OcpSolver(spec)
        for x0 in ([40.0, 25.0, 18.0], [30.0, 12.0, 15.0]):
            a, b = solver.solve(x0, 2), solve_ocp(spec, x0, 2)
            assert a.status == b.status
            assert a.policy.objective == pytest.approx(b.policy.objective, rel=1e-9)

    def test_states_follow_dynamics(self):
        spec = make_spec(TWO_MODE, P2, delta=0.35)
        res = solve_ocp(spec, [40.0, 25.0, 18.0], 1)
        tree, x, u = res.policy.tree, res.policy.x, res.policy.u
        np.testing.assert_allclose(x[0], [40.0, 25.0, 18.0], atol=1e-9)
        for j in range(1, tree.size):
            i = tree.ancestor[j]
            np.testing.assert_allclose(x[j], step(spec.model, x[i], u[i], int(tree.mode[j])), atol=1e-7)


@pytest.fixture(scope="module")
def setup(safety_params, safety_terminal):
    return safety_params, safety_terminal


class TestRiskAverse:
    def test_feasible_from_invariant_set(self, setup):
        p, T = setup
        rng = np.random.default_rng(5)
        sets = [AmbiguitySet.l1_ball(row, 0.4) for row in P_S]
        spec = make_spec(p, P_S, sets, horizon=3, delta=0.05, terminal=T, formulation=RISK_AVERSE)
        solver = OcpSolver(spec)
        pts = rng.uniform([0, 0, 0], [250, 40, 40], size=(4000, 3))
        pts = pts[T.contains_many(pts, -1e-6)][:12]
        assert len(pts) == 12
        for k, x0 in enumerate(pts):
            res = solver.solve(x0, k % 4 + 1)
            assert res.feasible
            u0 = extract_control(res.policy)[0]
            assert p.a_min - 1e-7 <= u0 <= p.a_max + 1e-7

    def test_larger_ambiguity_costs_more(self, setup):
        p, T = setup
        rng = np.random.default_rng(6)
        nested = [
            [AmbiguitySet.singleton(row) for row in P_S],
            [AmbiguitySet.l1_ball(row, 0.1) for row in P_S],
            [AmbiguitySet.l1_ball(row, 0.5) for row in P_S],
            [AmbiguitySet.full_simplex(4, row) for row in P_S],
        ]
        solvers = [OcpSolver(make_spec(p, P_S, s, horizon=2, delta=0.05, terminal=T,
                                       formulation=RISK_AVERSE)) for s in nested]
        checked = 0
        for x0 in rng.uniform([5, 0, 0], [120, 40, 40], size=(20, 3)):
            w0 = int(rng.integers(1, 5))
            results = [s.solve(x0, w0) for s in solvers]
            feas = [r.feasible for r in results]
            # the feasible region can only shrink as the sets grow
            assert all(a or not b for a, b in zip(feas, feas[1:]))
            vals = [r.policy.objective for r in results if r.feasible]
            checked += len(vals) == 4
            assert all(a <= b + 1e-6 * max(1, abs(b)) for a, b in zip(vals, vals[1:]))
        assert checked >= 5

    def test_risk_constraints_hold_at_optimum(self, setup):
        p, T = setup
        rng = np.random.default_rng(8)
        sets = [AmbiguitySet.l1_ball(row, 0.3) for row in P_S]
        spec = make_spec(p, P_S, sets, horizon=2, delta=0.05, terminal=T, formulation=RISK_AVERSE)
        feas_tol = 1e-8
        checked = 0
        for x0 in rng.uniform([5, 0, 0], [80, 40, 40], size=(10, 3)):
            res = solve_ocp(spec, x0, 4)
            if not res.feasible:
                continue
            checked += 1
            tree, x = res.policy.tree, res.policy.x
            for i in tree.non_leaf():
                kids = list(tree.children[i])
                g = [spec.model.g(x[j]) for j in kids]
                amb = sets[int(tree.mode[i]) - 1]
                assert robust_avar_value(g, amb, spec.delta) <= 10 * feas_tol * max(1, np.abs(x[kids, 0]).max())
        assert checked >= 3


def test_variable_map_export():
    spec = make_spec(TWO_MODE, P2)
    _, vmap = assemble(spec, [40.0, 25.0, 18.0], 1)
    d = vmap.to_dict()
    assert len(d) == vmap.tree.size == 7
    assert d["0"]["u"][0] >= 0 and d["6"]["u"] == [-1]
