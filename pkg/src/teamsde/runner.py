"""Run orchestration: build the problem from a RunConfig, execute the
requested mode, and assemble reproducible artifacts.

Artifacts are deterministic given the configuration: run.json carries the
config echo, a content hash of the effective inputs, and the results;
convergence.csv carries the iteration trace.  Wall-clock durations live only
under ``wall_time_s`` keys, which ``strip_timing`` removes so byte equality
of two runs can be checked modulo timing.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .baselines import DiscreteTreeProblem, enumerate_team_optimum, riccati_from_family, verify_discrete_smp
from .bsde import check_q_identity, solve_adjoint
from .config import ConfigError, RunConfig, canonical_echo, config_hash
from .hamiltonian import stationarity_gap
from .model import InformationStructure, ModelFamily, build_problem, validate_assumptions
from .optimize import (
    PbpConfig,
    check_sufficiency,
    evaluate_cost,
    gateaux_identity_check,
    person_by_person_solve,
)
from .sde import SimulationDiverged, TimeGrid, simulate_forward
from .strategies import StrategyProfile, initial_profile, measure_entropy

__all__ = ["RunArtifacts", "execute", "write_artifacts", "strip_timing", "build_from_config"]


@dataclass(frozen=True)
class RunArtifacts:
    run: dict
    convergence_csv: Optional[str] = None
    extras: dict = field(default_factory=dict)  # filename -> text content

    @property
    def status(self) -> str:
        return self.run["status"]


def build_from_config(config: RunConfig):
    """(problem, grid) from the config's problem block."""
    blk = config.problem
    info = []
    for b in blk["info"]:
        info.append(
            InformationStructure(
                kind=b["kind"],
                sources=tuple(b.get("sources", ())),
                observed=tuple(b.get("observed", ())),
                obs_matrix=tuple(map(tuple, b["obs_matrix"])) if b.get("obs_matrix") else None,
                memory=b.get("memory", "markov_current"),
            )
        )
    params = dict(blk.get("parameters", {}))
    params.setdefault("horizon", blk.get("horizon", 1.0))
    family = ModelFamily(tag=blk["family"], parameters=params)
    problem = build_problem(family, info)
    grid = TimeGrid(steps=int(config.numerics["steps"]), horizon=problem.horizon)
    return problem, grid


def _ridge(config: RunConfig):
    r = config.numerics["ridge"]
    return None if r == "auto" else float(r)


def _gap_tol(config: RunConfig):
    g = config.numerics["gap_tol"]
    return None if g == "auto" else float(g)


def _initial(problem, config: RunConfig) -> StrategyProfile:
    return initial_profile(
        problem,
        int(config.numerics["steps"]),
        mode=config.numerics["strategy_mode"],
        basis=config.numerics["basis"],
        atom_grid=int(config.numerics["atom_grid"]),
    )


def _offset_direction(problem, config: RunConfig) -> StrategyProfile:
    """Deterministic comparison strategy for first-order checks: the initial
    profile with each intercept pushed a quarter box-width off center."""
    profile = _initial(problem, config)
    dms = []
    for i, dm in enumerate(profile.dms):
        spec = problem.subsystems[i]
        lo = np.asarray(spec.action_low)
        hi = np.asarray(spec.action_high)
        shift = np.clip(0.25 * (hi - lo), 0.0, None)
        coeffs = dm.coeffs.copy()
        coeffs[:, :, 0] = coeffs[:, :, 0] + shift
        dms.append(type(dm)(features=dm.features, coeffs=coeffs))
    return StrategyProfile(dms=tuple(dms))


def _tree_from_config(tree_blk: dict) -> DiscreteTreeProblem:
    drift_blk = tree_blk.get("drift", {"kind": "linear", "a": None, "b": None})
    n = len(tree_blk["x0"])
    A = np.asarray(drift_blk.get("a") or np.zeros((n, n)), float)
    B = np.asarray(drift_blk.get("b") or np.zeros((n, len(tree_blk["actions"]))), float)
    costs = tree_blk.get("costs", {})
    q = np.asarray(costs.get("q", [0.0] * n), float)
    r = np.asarray(costs.get("r", [0.0] * len(tree_blk["actions"])), float)
    g = np.asarray(costs.get("g", [1.0] * n), float)

    def drift(k, x, a):
        xv = np.asarray(x)
        av = np.asarray(a)
        return tuple(A @ xv + B @ av)

    def running_cost(k, x, a):
        return float(q @ (np.asarray(x) ** 2) + r @ (np.asarray(a) ** 2))

    def terminal_cost(x):
        return float(g @ (np.asarray(x) ** 2))

    return DiscreteTreeProblem(
        periods=int(tree_blk["periods"]),
        dt=float(tree_blk.get("dt", 1.0)),
        x0=tuple(float(v) for v in tree_blk["x0"]),
        noise_scale=tuple(float(v) for v in tree_blk["noise_scale"]),
        actions=tuple(tuple(float(a) for a in atoms) for atoms in tree_blk["actions"]),
        info=tuple(tuple(per) for per in tree_blk["info"]),
        drift=drift,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
    )


def execute(config: RunConfig, export_ensembles: bool = False) -> RunArtifacts:
    """Execute the configured mode and return in-memory artifacts.

    Solver divergence is captured as status="diverged" with a machine-readable
    error record and the iterate history gathered so far.
    """
    t_start = time.perf_counter()
    run = {
        "schema": "teamsde.run/1",
        "config_echo": canonical_echo(config),
        "input_hash": config_hash(config),
        "status": "ok",
        "results": {},
    }
    convergence_csv = None
    extras = {}
    seed = config.seed

    try:
        if config.mode == "team_pbp":
            problem, grid = build_from_config(config)
            pbp = PbpConfig(
                steps=grid.steps,
                paths=int(config.numerics["paths"]),
                seed=seed,
                max_iters=int(config.numerics["max_iters"]),
                gap_tol=_gap_tol(config),
                damping=float(config.numerics["damping"]),
                atom_grid=int(config.numerics["atom_grid"]),
                ridge=_ridge(config),
                mode=config.numerics["strategy_mode"],
                basis=config.numerics["basis"],
            )
            profile, records = person_by_person_solve(problem, None, pbp)
            final_ens = simulate_forward(problem, profile, grid, pbp.paths, seed)
            adjoint = solve_adjoint(problem, profile, final_ens, ridge=pbp.ridge)
            gap_report = stationarity_gap(problem, profile, final_ens, adjoint, pbp.atom_grid, pbp.ridge)
            J, se = evaluate_cost(problem, profile, grid, pbp.paths, seed)
            psi_fits = [f["psi"] for f in adjoint.fits]
            results = {
                "iterations": [r.to_dict() for r in records],
                "final_cost": J,
                "final_cost_se": se,
                "final_gaps": gap_report.to_dict(),
                "gap_tol_effective": records[-1].gap_tol if records else None,
                "converged": bool(records and records[-1].team_gap <= records[-1].gap_tol),
                "final_strategy": profile.to_jsonable(),
                "regression_diagnostics": {
                    "adjoint_mean_fallback_steps": sum(f["mean_fallback"] for f in psi_fits),
                    "adjoint_mean_ridge": float(np.mean([f["ridge"] for f in psi_fits])),
                    "adjoint_mean_residual_se": float(np.mean([f["residual_se"] for f in psi_fits])),
                },
            }
            if config.numerics["strategy_mode"] == "relaxed":
                results["max_measure_entropy"] = max(measure_entropy(dm) for dm in profile.dms)
            if config.problem["family"] in ("linear_quadratic", "cascade_ss"):
                ric = riccati_from_family(problem.family_parameters, grid)
                results["oracle"] = ric.to_dict()
                results["oracle"]["cost_rel_diff"] = abs(J - ric.value) / max(abs(ric.value), 1e-12)
            run["results"] = results
            rows = ["iteration,cost,cost_se,team_gap,gap_tol"]
            rows += [
                f"{r.iteration},{r.cost!r},{r.cost_se!r},{r.team_gap!r},{r.gap_tol!r}" for r in records
            ]
            convergence_csv = "\n".join(rows) + "\n"

        elif config.mode == "evaluate_only":
            problem, grid = build_from_config(config)
            profile = _initial(problem, config)
            J, se = evaluate_cost(problem, profile, grid, int(config.numerics["paths"]), seed)
            run["results"] = {"cost": J, "cost_se": se, "strategy": profile.to_jsonable()}
            if export_ensembles:
                ens = simulate_forward(problem, profile, grid, int(config.numerics["paths"]), seed)
                extras["ensemble.csv"] = _ensemble_csv_text(ens)

        elif config.mode == "checks_only":
            problem, grid = build_from_config(config)
            assumptions = validate_assumptions(problem, probe_count=64, seed=seed)
            convexity = check_sufficiency(problem, probe_count=16, seed=seed)
            base = _initial(problem, config)
            direction = _offset_direction(problem, config)
            gateaux = gateaux_identity_check(
                problem, base, direction, [1e-2, 5e-3], grid,
                int(config.numerics["paths"]), seed, ridge=_ridge(config),
            )
            ens = simulate_forward(problem, base, grid, int(config.numerics["paths"]), seed)
            adjoint = solve_adjoint(problem, base, ens, ridge=_ridge(config))
            q_ident = check_q_identity(problem, base, ens, adjoint)
            run["results"] = {
                "assumptions": assumptions.to_dict(),
                "sufficiency": convexity.to_dict(),
                "gateaux": gateaux,
                "q_identity": q_ident.to_dict(),
            }

        elif config.mode == "oracle":
            results = {}
            if config.problem is not None:
                problem, grid = build_from_config(config)
                if config.problem["family"] not in ("linear_quadratic", "cascade_ss"):
                    raise ConfigError(
                        [{"field": "problem.family", "message": "riccati oracle needs a linear-quadratic family"}]
                    )
                ric = riccati_from_family(problem.family_parameters, grid)
                results["riccati"] = ric.to_dict()
                extras["riccati.json"] = json.dumps(ric.to_dict(), sort_keys=True, indent=2) + "\n"
            if config.tree is not None:
                tree = _tree_from_config(config.tree)
                optima, table = enumerate_team_optimum(tree)
                verified = [verify_discrete_smp(tree, p)[0] for p in optima]
                tree_result = {
                    "profile_count": len(table),
                    "optimal_count": len(optima),
                    "optimal_cost": min(table.values()),
                    "team_optima_pass_smp": all(verified),
                    "optimal_profiles": [_profile_jsonable(p) for p in optima[:16]],
                }
                results["tree"] = tree_result
                extras["tree.json"] = json.dumps(tree_result, sort_keys=True, indent=2) + "\n"
            run["results"] = results

    except ConfigError:
        raise
    except SimulationDiverged as err:
        run["status"] = "diverged"
        run["error"] = {
            "code": "diverged",
            "message": str(err),
            "path": err.path,
            "step": err.step,
            "last_state": err.last_state.tolist(),
            "iterations": [r.to_dict() for r in getattr(err, "records", ())],
        }

    run["timing"] = {"wall_time_s": time.perf_counter() - t_start}
    return RunArtifacts(run=run, convergence_csv=convergence_csv, extras=extras)


def _jsonable_cell(cell):
    if isinstance(cell, tuple):
        return [_jsonable_cell(v) for v in cell]
    return cell


def _profile_jsonable(profile) -> list:
    out = []
    for dm, per_dm in enumerate(profile.choices):
        for k, table in enumerate(per_dm):
            for cell, idx in table:
                out.append({"dm": dm, "period": k, "cell": _jsonable_cell(cell), "action_index": idx})
    return out


def _ensemble_csv_text(ensemble) -> str:
    import tempfile

    with tempfile.NamedTemporaryFile("r", suffix=".csv", delete=False) as fh:
        path = fh.name
    try:
        ensemble.to_csv(path)
        with open(path) as fh:
            return fh.read()
    finally:
        os.unlink(path)


def write_artifacts(artifacts: RunArtifacts, out_dir) -> dict:
    """Materialize run.json, convergence.csv, and extra artifacts; returns
    the mapping name -> written path."""
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    run_path = os.path.join(str(out_dir), "run.json")
    with open(run_path, "w") as fh:
        json.dump(artifacts.run, fh, sort_keys=True, indent=2)
        fh.write("\n")
    written["run.json"] = run_path
    if artifacts.convergence_csv is not None:
        p = os.path.join(str(out_dir), "convergence.csv")
        with open(p, "w") as fh:
            fh.write(artifacts.convergence_csv)
        written["convergence.csv"] = p
    for name, text in artifacts.extras.items():
        p = os.path.join(str(out_dir), name)
        with open(p, "w") as fh:
            fh.write(text)
        written[name] = p
    return written


def strip_timing(run_json_text: str) -> str:
    """Canonical re-dump of run.json with every wall_time_s key removed; two
    runs of the same config are byte-identical under this projection."""

    def scrub(obj):
        if isinstance(obj, dict):
            return {k: scrub(v) for k, v in obj.items() if k != "wall_time_s"}
        if isinstance(obj, list):
            return [scrub(v) for v in obj]
        return obj

    return json.dumps(scrub(json.loads(run_json_text)), sort_keys=True, indent=2)
