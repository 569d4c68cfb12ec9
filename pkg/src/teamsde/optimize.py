"""Person-by-person strategy improvement and solution diagnostics.

The solve loop round-robins over DMs: simulate forward, estimate the adjoint
pair, build each DM's conditional Hamiltonian tables, replace that DM's
strategy slice by the (damped) conditional argmin, and re-simulate.  All
Monte Carlo inside one solve shares a single seed (common random numbers), so
cost comparisons between consecutive profiles see strategy changes only; an
update that still raises the cost estimate beyond three standard errors is
rolled back and the DM's step size halved.  The loop stops when the team
stationarity gap falls below tolerance or the iteration budget runs out --
never silently.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bsde import solve_adjoint
from .hamiltonian import hamiltonian, improve_dm
from .model import ModelError, TeamProblem
from .sde import (
    PathEnsemble,
    SimulationDiverged,
    TimeGrid,
    averaged_map,
    simulate_forward,
    simulate_frozen_mixture,
)
from .strategies import StrategyProfile, initial_profile

__all__ = [
    "StrategyProfile",
    "IterationRecord",
    "PbpConfig",
    "evaluate_cost",
    "cost_from_ensemble",
    "person_by_person_solve",
    "check_sufficiency",
    "gateaux_identity_check",
    "ConvexityReport",
]


def cost_from_ensemble(problem: TeamProblem, strategy: StrategyProfile, ensemble: PathEnsemble) -> np.ndarray:
    """Per-path pay-off sum_k running_cost dt + terminal_cost; relaxed DMs
    contribute measure-averaged running cost, not the sampled action's."""
    K = ensemble.grid.steps
    dt = ensemble.grid.dt
    nodes = ensemble.grid.nodes
    cost = np.zeros(ensemble.paths)
    for k in range(K):
        controls = strategy.controls_at(problem, ensemble, k)
        cost += averaged_map(problem, "running_cost", float(nodes[k]), ensemble.states[:, k], controls) * dt
    cost += problem.terminal_cost(ensemble.states[:, K])
    return cost


def evaluate_cost(
    problem: TeamProblem,
    strategy: StrategyProfile,
    grid: TimeGrid,
    M: int,
    seed: int,
) -> tuple:
    """Monte Carlo estimate (J, standard error) of the team pay-off."""
    ensemble = simulate_forward(problem, strategy, grid, M, seed)
    costs = cost_from_ensemble(problem, strategy, ensemble)
    if not np.all(np.isfinite(costs)):
        raise ModelError("non-finite pay-off encountered")
    se = float(costs.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    return float(costs.mean()), se


@dataclass(frozen=True)
class IterationRecord:
    """One sweep of the person-by-person loop."""

    iteration: int
    cost: float
    cost_se: float
    gaps: tuple
    noise_floors: tuple
    team_gap: float
    gap_tol: float
    updates: tuple  # per DM: {"dm", "accepted", "eta"}
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "cost": self.cost,
            "cost_se": self.cost_se,
            "gaps": list(self.gaps),
            "noise_floors": list(self.noise_floors),
            "team_gap": self.team_gap,
            "gap_tol": self.gap_tol,
            "updates": [dict(u) for u in self.updates],
            "wall_time_s": self.wall_time_s,
        }


@dataclass(frozen=True)
class PbpConfig:
    steps: int = 50
    paths: int = 10_000
    seed: int = 0
    max_iters: int = 50
    gap_tol: Optional[float] = None  # None: 1e-2 * (1 + |J|)
    damping: float = 0.5
    atom_grid: int = 21
    ridge: Optional[float] = None
    mode: str = "regular"
    basis: str = "polynomial_deg2"


def _effective_tol(config: PbpConfig, cost: float) -> float:
    if config.gap_tol is not None:
        return float(config.gap_tol)
    return 1e-2 * (1.0 + abs(cost))


def person_by_person_solve(
    problem: TeamProblem,
    initial: Optional[StrategyProfile],
    config: PbpConfig,
) -> tuple:
    """Iterate person-by-person improvements until the team stationarity gap
    falls below tolerance or max_iters is reached.

    Returns (final profile, iteration records).  With ``initial=None`` the
    zero-action profile is used.  Identical configurations reproduce
    identical histories (one fixed seed drives every simulation).
    """
    grid = TimeGrid(steps=config.steps, horizon=problem.horizon)
    profile = initial if initial is not None else initial_profile(
        problem, config.steps, mode=config.mode, basis=config.basis, atom_grid=config.atom_grid
    )
    eta = [config.damping] * len(profile)
    records = []
    try:
        return _pbp_loop(problem, config, grid, profile, eta, records)
    except SimulationDiverged as err:
        err.records = tuple(records)  # iterate dump for the caller's report
        raise


def _pbp_loop(problem, config, grid, profile, eta, records):
    cost = cost_se = 0.0
    for it in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        gaps, floors, updates = [], [], []
        for i in range(len(profile)):
            ensemble = simulate_forward(problem, profile, grid, config.paths, config.seed)
            adjoint = solve_adjoint(problem, profile, ensemble, ridge=config.ridge)
            costs = cost_from_ensemble(problem, profile, ensemble)
            cost = float(costs.mean())
            cost_se = float(costs.std(ddof=1) / np.sqrt(config.paths))
            gap_i, floor_i, new_dm = improve_dm(
                problem, profile, i, ensemble, adjoint,
                atom_grid=config.atom_grid, ridge=config.ridge, eta=eta[i],
            )
            candidate = profile.with_dm(i, new_dm)
            cand_ens = simulate_forward(problem, candidate, grid, config.paths, config.seed)
            cand_costs = cost_from_ensemble(problem, candidate, cand_ens)
            cand_cost = float(cand_costs.mean())
            accepted = cand_cost <= cost + 3.0 * cost_se
            if accepted:
                profile = candidate
                cost = cand_cost
                cost_se = float(cand_costs.std(ddof=1) / np.sqrt(config.paths))
            else:
                eta[i] = eta[i] / 2.0
            gaps.append(gap_i)
            floors.append(floor_i)
            updates.append({"dm": i, "accepted": bool(accepted), "eta": eta[i]})
        team_gap = float(sum(gaps))
        tol = _effective_tol(config, cost)
        records.append(
            IterationRecord(
                iteration=it,
                cost=cost,
                cost_se=cost_se,
                gaps=tuple(gaps),
                noise_floors=tuple(floors),
                team_gap=team_gap,
                gap_tol=tol,
                updates=tuple(updates),
                wall_time_s=time.perf_counter() - t0,
            )
        )
        if team_gap <= tol:
            break
    return profile, records


# -- sufficiency (convexity) probes ---------------------------------------------


@dataclass(frozen=True)
class ConvexityReport:
    """Minimum sampled Hessian eigenvalues of H in state, H in action, and the
    terminal cost; advisory, flags anything below -1e-6."""

    min_eig_state: float
    min_eig_action: float
    min_eig_terminal: float
    flags: tuple

    @property
    def passed(self) -> bool:
        return len(self.flags) == 0

    def to_dict(self) -> dict:
        return {
            "min_eig_state": self.min_eig_state,
            "min_eig_action": self.min_eig_action,
            "min_eig_terminal": self.min_eig_terminal,
            "flags": list(self.flags),
            "passed": self.passed,
        }


def _fd_hessian(fn, z0: np.ndarray, h: float = 1e-4) -> np.ndarray:
    d = z0.size
    H = np.zeros((d, d))
    for i in range(d):
        hi = h * max(1.0, abs(z0[i]))
        for j in range(i, d):
            hj = h * max(1.0, abs(z0[j]))
            zpp = z0.copy(); zpp[i] += hi; zpp[j] += hj
            zpm = z0.copy(); zpm[i] += hi; zpm[j] -= hj
            zmp = z0.copy(); zmp[i] -= hi; zmp[j] += hj
            zmm = z0.copy(); zmm[i] -= hi; zmm[j] -= hj
            H[i, j] = H[j, i] = (fn(zpp) - fn(zpm) - fn(zmp) + fn(zmm)) / (4.0 * hi * hj)
    return 0.5 * (H + H.T)


def check_sufficiency(
    problem: TeamProblem,
    strategy: Optional[StrategyProfile] = None,
    probe_count: int = 16,
    seed: int = 0,
) -> ConvexityReport:
    """Sample Hessians of the Hamiltonian in state and action, and of the
    terminal cost, by central finite differences at random probe points."""
    rng = np.random.default_rng(seed)
    n, d = problem.state_dim, problem.action_dim
    m = problem.noise_dim
    lo, hi = problem.action_bounds()
    min_state = min_action = min_term = np.inf
    for _ in range(probe_count):
        t = float(rng.random() * problem.horizon)
        x = rng.standard_normal(n) * 2.0
        u = lo + (hi - lo) * rng.random(d)
        zeta = rng.standard_normal(n)
        mmat = rng.standard_normal((n, m))

        hess_x = _fd_hessian(lambda z: hamiltonian(problem, t, z, zeta, mmat, u), x)
        hess_u = _fd_hessian(lambda v: hamiltonian(problem, t, x, zeta, mmat, v), u)
        hess_phi = _fd_hessian(lambda z: float(problem.terminal_cost(z[None, :])[0]), x)
        min_state = min(min_state, float(np.linalg.eigvalsh(hess_x).min()))
        min_action = min(min_action, float(np.linalg.eigvalsh(hess_u).min()))
        min_term = min(min_term, float(np.linalg.eigvalsh(hess_phi).min()))
    flags = tuple(
        name
        for name, val in (
            ("hamiltonian_state_convexity", min_state),
            ("hamiltonian_action_convexity", min_action),
            ("terminal_cost_convexity", min_term),
        )
        if val < -1e-6
    )
    return ConvexityReport(
        min_eig_state=min_state,
        min_eig_action=min_action,
        min_eig_terminal=min_term,
        flags=flags,
    )


# -- first-order identity check --------------------------------------------------


def gateaux_identity_check(
    problem: TeamProblem,
    base: StrategyProfile,
    direction: StrategyProfile,
    eps_list,
    grid: TimeGrid,
    M: int,
    seed: int,
    ridge: Optional[float] = None,
) -> dict:
    """Compare the finite-difference directional derivative of J against the
    adjoint expression, per epsilon.

    The finite difference simulates the measure mixture base + eps (direction
    - base) with both control processes frozen along the base information and
    common random numbers.  The adjoint side sums, over DMs, the expected
    time integral of <psi, df_i> + tr(Q' dsigma_i) + dl_i, where d._i is the
    coefficient change when DM i alone switches from base to direction.
    """
    ensemble = simulate_forward(problem, base, grid, M, seed)
    adjoint = solve_adjoint(problem, base, ensemble, ridge=ridge)
    base_costs = cost_from_ensemble(problem, base, ensemble)
    J0 = float(base_costs.mean())

    K = grid.steps
    dt = grid.dt
    nodes = grid.nodes
    N = len(base)
    djdt = 0.0
    for k in range(K):
        t = float(nodes[k])
        xk = ensemble.states[:, k]
        psi_k = adjoint.psi[:, k]
        Q_k = adjoint.Q[:, k]
        base_ctl = base.controls_at(problem, ensemble, k)
        dir_ctl = direction.controls_at(problem, ensemble, k)
        f0 = averaged_map(problem, "drift", t, xk, base_ctl)
        s0 = averaged_map(problem, "diffusion", t, xk, base_ctl)
        l0 = averaged_map(problem, "running_cost", t, xk, base_ctl)
        term = np.zeros(M)
        for i in range(N):
            rep = {i: dir_ctl[i]}
            df = averaged_map(problem, "drift", t, xk, base_ctl, replace=rep) - f0
            ds = averaged_map(problem, "diffusion", t, xk, base_ctl, replace=rep) - s0
            dl = averaged_map(problem, "running_cost", t, xk, base_ctl, replace=rep) - l0
            term += np.einsum("pn,pn->p", psi_k, df) + np.einsum("pnm,pnm->p", Q_k, ds) + dl
        djdt += float(term.mean()) * dt

    rows = []
    for eps in eps_list:
        _, costs = simulate_frozen_mixture(problem, ensemble, direction, base, float(eps))
        fd = (float(costs.mean()) - J0) / float(eps)
        denom = max(abs(djdt), 1e-12)
        rows.append(
            {
                "eps": float(eps),
                "finite_difference": fd,
                "adjoint_expression": djdt,
                "rel_discrepancy": abs(fd - djdt) / denom,
            }
        )
    return {"base_cost": J0, "rows": rows}
