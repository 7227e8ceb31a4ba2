"""Command-line entry point.

Every numeric setting lives in a JSON config; flags only pick the
subcommand, the config file, the output directory and verbosity.

Exit codes: 0 on success, 2 on a configuration error, 3 when a solver or
iteration fails to reach a verdict.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import presets
from .conic_solver import SolverSettings, Status, dump_program, verify_certificate
from .markov import TransitionEstimate, TransitionEstimator, estimate, sample_chain
from .mjls import AccParams, build_acc_model
from .ocp import FULL, NOMINAL, RISK_AVERSE, SUPPORT, OcpSpec, extract_control, solve_ocp
from .polyhedra import Polyhedron, intersect
from .safety import rci_iterate, rpi_candidate, safety_grid
from .simulator import (
    CONTROLLERS,
    STOCHASTIC,
    ExperimentConfig,
    ForcedMode,
    ambiguity_for,
    ecdf_csv,
    realizations_csv,
    run_batch,
    summary_json,
)

log = logging.getLogger("riskacc")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

_NUMBER = {"type": "number"}
_MATRIX = {"type": "array", "items": {"type": "array", "items": _NUMBER}}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": sorted(presets.PARAMS)},
                "Ts": _NUMBER, "a_min": _NUMBER, "a_max": _NUMBER, "v_max": _NUMBER,
                "v_ref": _NUMBER, "q": _NUMBER, "r": _NUMBER,
                "c": {"type": "array", "items": _NUMBER, "minItems": 1},
            },
        },
        "markov": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "P_true": {"oneOf": [{"enum": sorted(presets.MATRICES)}, _MATRIX]},
                "alpha": _NUMBER,
                "delta": _NUMBER,
                "offline_samples": {"type": "integer", "minimum": 0},
                "online_learning": {"type": "boolean"},
            },
        },
        "controller": {
            "oneOf": [
                {"enum": list(CONTROLLERS)},
                {"type": "array", "items": {"enum": list(CONTROLLERS)}, "minItems": 1},
            ]
        },
        "horizon": {"type": "integer", "minimum": 1},
        # "rci": converged invariant set; "constraints": state and soft constraints only
        "terminal": {"enum": ["rci", "constraints"]},
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 0},
                "realizations": {"type": "integer", "minimum": 1},
                "master_seed": {"type": "integer", "minimum": 0},
                "x0": {"type": "array", "items": _NUMBER, "minItems": 3, "maxItems": 3},
                "w0": {"type": "integer", "minimum": 1},
                "forced_mode": {
                    "oneOf": [
                        {"type": "null"},
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["mode"],
                            "properties": {
                                "mode": {"type": "integer", "minimum": 1},
                                "step": {"type": "integer", "minimum": 0},
                            },
                        },
                    ]
                },
            },
        },
        "invariant_set": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iter": {"type": "integer", "minimum": 0},
                "tol": _NUMBER,
                "v_t": _NUMBER,
                "grid": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["start", "stop", "num"],
                    "properties": {"start": _NUMBER, "stop": _NUMBER,
                                   "num": {"type": "integer", "minimum": 1}},
                },
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "backend": {"enum": ["native", "clarabel"]},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "terminal_cache": {"type": "string"},
                "program_dump": {"type": "string"},
                "steps": {"type": "boolean"},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    return cfg


def build_params(cfg: dict) -> AccParams:
    section = dict(cfg.get("params", {}))
    base = presets.params(section.pop("preset", "table1"))
    if "c" in section:
        section["c"] = tuple(section["c"])
    try:
        return dataclasses.replace(base, **section)
    except ValueError as exc:
        raise ConfigError(f"invalid params: {exc}") from exc


def build_matrix(cfg: dict) -> np.ndarray:
    spec = cfg.get("markov", {}).get("P_true", "P_p")
    return presets.matrix(spec) if isinstance(spec, str) else np.array(spec, dtype=float)


def _controllers(cfg: dict) -> list[str]:
    c = cfg.get("controller", "risk_averse")
    return [c] if isinstance(c, str) else list(c)


def _settings(cfg: dict, default_backend: str = "native") -> SolverSettings:
    s = cfg.get("solver", {})
    return SolverSettings(backend=s.get("backend", default_backend), max_iter=s.get("max_iter", 200))


def terminal_for(cfg: dict, params: AccParams) -> Polyhedron:
    """Terminal set of the experiment, read from or written to the optional cache file."""
    if cfg.get("terminal", "rci") == "constraints":
        model = build_acc_model(params)
        return intersect(model.state_set, model.soft_set())
    if not -1.0 / params.Ts <= params.c_min < 0:
        raise ConfigError("the invariant terminal set needs -1/Ts <= min(c) < 0; "
                          'use "terminal": "constraints" for other mode sets')
    cache = cfg.get("outputs", {}).get("terminal_cache")
    if cache and Path(cache).exists():
        return Polyhedron.from_json(Path(cache).read_text(), n=3)
    rci = presets.rci_sets(params)
    if not rci.converged:
        log.warning("terminal set iteration stopped after %d iterations without converging", rci.iterations)
    if cache:
        Path(cache).write_text(rci.final.to_json())
    return rci.final


def experiment_configs(cfg: dict) -> list[ExperimentConfig]:
    params = build_params(cfg)
    P = build_matrix(cfg)
    markov = cfg.get("markov", {})
    exp = cfg.get("experiment", {})
    forced = exp.get("forced_mode")
    out = []
    for ctrl in _controllers(cfg):
        try:
            out.append(ExperimentConfig(
                params=params, P_true=P, controller=ctrl,
                delta=markov.get("delta"),
                alpha=markov.get("alpha", 0.05),
                horizon=cfg.get("horizon", presets.TABLE1_HORIZON),
                steps=exp.get("steps", 50),
                realizations=exp.get("realizations", 1),
                master_seed=exp.get("master_seed", 0),
                offline_samples=markov.get("offline_samples", 0),
                x0=tuple(exp.get("x0", presets.DEFAULT_X0)),
                w0=exp.get("w0", presets.DEFAULT_W0),
                forced_mode=None if forced is None else ForcedMode(forced["mode"], forced.get("step", 100)),
                online_learning=markov.get("online_learning", True),
                backend=cfg.get("solver", {}).get("backend", "clarabel"),
            ))
        except ValueError as exc:
            raise ConfigError(f"invalid experiment: {exc}") from exc
    return out


def cmd_invariant_set(cfg: dict, out: Path) -> int:
    params = build_params(cfg)
    section = cfg.get("invariant_set", {})
    grid_cfg = section.get("grid", {"start": 0.0, "stop": 30.0, "num": 61})
    grid = np.linspace(grid_cfg["start"], grid_cfg["stop"], grid_cfg["num"])
    try:
        R0 = rpi_candidate(params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    model = build_acc_model(params)
    rci = rci_iterate(model, model.state_set, model.soft_set(), R0,
                      max_iter=section.get("max_iter", 50), tol=section.get("tol", 1e-7))
    grid_res = safety_grid(params, rci, section.get("v_t", presets.FIG3_TARGET_SPEED), grid)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rci.json").write_text(rci.to_json() + "\n")
    (out / "safety_grid.csv").write_text(grid_res.to_csv())
    print(f"converged={rci.converged} iterations={rci.iterations} rows={rci.final.m}")
    # the zero-iteration run is a request for the initial set only
    if not rci.converged and section.get("max_iter", 50) > 0:
        print("iteration cap reached before convergence; partial output written", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_simulate(cfg: dict, out: Path, verbose: bool = False) -> int:
    configs = experiment_configs(cfg)
    terminal = terminal_for(cfg, configs[0].params)
    write_steps = verbose or cfg.get("outputs", {}).get("steps", False)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    for ec in configs:
        ec = dataclasses.replace(ec, terminal_set=terminal)
        results, summary = run_batch(ec)
        name = ec.controller
        (out / f"realizations_{name}.csv").write_text(realizations_csv(results))
        (out / f"summary_{name}.json").write_text(summary_json(summary, results))
        (out / f"ecdf_{name}.csv").write_text(ecdf_csv([r.cost for r in results if r.completed]))
        if write_steps:
            for r in results:
                (out / f"steps_{name}_{r.realization}.csv").write_text(r.steps_csv())
        failures += summary.solver_failures
        print(f"{name}: infeasible {summary.infeasible}/{summary.realizations}, "
              f"mean cost {summary.mean_cost:.6g}")
    return EXIT_SOLVER if failures else EXIT_OK


def cmd_solve_once(cfg: dict, out: Path | None) -> int:
    ec = experiment_configs(cfg)[0]
    params = ec.params
    terminal = terminal_for(cfg, params)
    est = TransitionEstimate.empty(params.d)
    if ec.offline_samples:
        rng = np.random.default_rng(np.random.SeedSequence(ec.master_seed).spawn(2)[0])
        est = estimate(sample_chain(ec.P_true, ec.w0, ec.offline_samples, rng), params.d)
    sets = tuple(ambiguity_for(ec, est, j) for j in range(1, params.d + 1))
    stochastic = ec.controller == STOCHASTIC
    spec = OcpSpec(build_acc_model(params), params, ec.horizon, sets, ec.delta, terminal,
                   branching=SUPPORT if stochastic else FULL,
                   formulation=NOMINAL if stochastic else RISK_AVERSE)
    res = solve_ocp(spec, np.array(ec.x0), ec.w0, _settings(cfg))
    dump = cfg.get("outputs", {}).get("program_dump")
    if dump:
        path = Path(dump) if out is None else out / dump
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dump_program(res.program))
    print(f"status: {res.status}")
    if res.status == Status.OPTIMAL:
        print(f"objective: {res.policy.objective!r}")
        print(f"u0: {float(extract_control(res.policy)[0])!r}")
        return EXIT_OK
    if res.status == Status.PRIMAL_INFEASIBLE:
        ok = verify_certificate(res.program, res.solve)
        print(f"certificate verified: {str(ok).lower()}")
        return EXIT_OK if ok else EXIT_SOLVER
    return EXIT_SOLVER


def cmd_estimate(cfg: dict, samples_path: Path) -> int:
    try:
        data = json.loads(Path(samples_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read samples {samples_path}: {exc}") from exc
    if isinstance(data, dict):
        data = data.get("modes")
    if not isinstance(data, list) or not data:
        raise ConfigError("samples must be a nonempty JSON array of modes (or of mode sequences)")
    d = build_params(cfg).d
    alpha = cfg.get("markov", {}).get("alpha", 0.05)
    try:
        fitted = TransitionEstimator(n_modes=d, alpha=alpha).fit(data)
    except ValueError as exc:
        raise ConfigError(f"invalid samples: {exc}") from exc
    print(json.dumps({
        "p_hat": fitted.transition_matrix_.tolist(),
        "counts": fitted.estimate_.counts.tolist(),
        "radii": fitted.radii_.tolist(),
    }, indent=2))
    return EXIT_OK


def cmd_presets() -> int:
    print(json.dumps({
        "matrices": {k: v.tolist() for k, v in presets.MATRICES.items()},
        "params": {k: dataclasses.asdict(v) for k, v in presets.PARAMS.items()},
    }, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskacc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("invariant-set", "simulate", "solve-once"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default="out")
    p = sub.add_parser("estimate", help="empirical transition matrix and radii from a sample file")
    p.add_argument("samples")
    p.add_argument("--config")
    sub.add_parser("presets", help="print the named parameter sets and matrices")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "presets":
            return cmd_presets()
        cfg = load_config(args.config) if getattr(args, "config", None) else {}
        if args.command == "estimate":
            return cmd_estimate(cfg, Path(args.samples))
        out = Path(args.out)
        if args.command == "invariant-set":
            return cmd_invariant_set(cfg, out)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.verbose)
        return cmd_solve_once(cfg, out)
    except (ConfigError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
