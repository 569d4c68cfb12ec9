"""Independent oracles used by the acceptance tests.

Two deliberately different routes to the same answers: a classical matrix
Riccati integration for the centralized linear-quadratic case, and exhaustive
strategy enumeration on tiny discrete trees for the team / person-by-person
definitions themselves.  Neither shares code with the Monte Carlo solver.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ModelError
from .sde import TimeGrid

__all__ = [
    "RiccatiSolution",
    "solve_riccati",
    "riccati_from_family",
    "DiscreteTreeProblem",
    "TreeStrategy",
    "enumerate_team_optimum",
    "verify_discrete_smp",
]


@dataclass(frozen=True)
class RiccatiSolution:
    """Backward matrix Riccati solution on a grid.

    P solves -dP/dt = A'P + PA - P B R^{-1} B' P + Q with P(T) = G; the
    optimal feedback is u = -K(t) x with K = R^{-1} B' P, and the optimal
    value for initial second moment E[x0 x0'] = X0 and constant diffusion S is
    tr(P(0) X0) + int_0^T tr(S S' P) dt.
    """

    grid: TimeGrid
    P: np.ndarray  # (K+1, n, n)
    gain: np.ndarray  # (K+1, d, n)
    value: float

    def to_dict(self) -> dict:
        return {
            "P0": self.P[0].tolist(),
            "gain0": self.gain[0].tolist(),
            "value": float(self.value),
            "steps": self.grid.steps,
            "horizon": self.grid.horizon,
        }


def _riccati_rhs(P, A, Q, BRinvBt):
    return -(A.T @ P + P @ A - P @ BRinvBt @ P + Q)


def solve_riccati(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    G: np.ndarray,
    sigma: np.ndarray,
    grid: TimeGrid,
    x0_second_moment: np.ndarray,
) -> RiccatiSolution:
    """Fourth-order Runge-Kutta backward integration of the matrix Riccati ODE.

    Every stage is symmetrized, so ||P - P'|| stays at roundoff level.  R must
    be positive definite; q, g only need to be PSD for the value to be a true
    optimum, which is the caller's lookout.
    """
    A, B, Q, R, G = (np.atleast_2d(np.asarray(v, float)) for v in (A, B, Q, R, G))
    sigma = np.atleast_2d(np.asarray(sigma, float))
    X0 = np.atleast_2d(np.asarray(x0_second_moment, float))
    n = A.shape[0]
    try:
        Rinv = np.linalg.inv(R)
    except np.linalg.LinAlgError:
        raise ModelError("control weight r must be invertible for the Riccati oracle") from None
    BRinvBt = B @ Rinv @ B.T

    K = grid.steps
    h = grid.dt
    P = np.zeros((K + 1, n, n))
    P[K] = 0.5 * (G + G.T)
    sym = lambda M: 0.5 * (M + M.T)
    for k in range(K - 1, -1, -1):
        Pk1 = P[k + 1]
        k1 = _riccati_rhs(Pk1, A, Q, BRinvBt)
        k2 = _riccati_rhs(sym(Pk1 - 0.5 * h * k1), A, Q, BRinvBt)
        k3 = _riccati_rhs(sym(Pk1 - 0.5 * h * k2), A, Q, BRinvBt)
        k4 = _riccati_rhs(sym(Pk1 - h * k3), A, Q, BRinvBt)
        P[k] = sym(Pk1 - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))

    gain = np.einsum("ij,jk,tkl->til", Rinv, B.T, P)
    noise = np.array([np.trace(sigma @ sigma.T @ P[k]) for k in range(K + 1)])
    value = float(np.trace(P[0] @ X0) + np.trapezoid(noise, dx=h))
    return RiccatiSolution(grid=grid, P=P, gain=gain, value=value)


def riccati_from_family(parameters: dict, grid: TimeGrid) -> RiccatiSolution:
    """Riccati oracle from linear-quadratic family parameters (the centralized
    specialization the Monte Carlo solver is checked against)."""
    A = np.atleast_2d(np.asarray(parameters["a"], float))
    n = A.shape[0]
    B = np.atleast_2d(np.asarray(parameters["b"], float))
    Q = np.atleast_2d(np.asarray(parameters["q"], float))
    R = np.atleast_2d(np.asarray(parameters["r"], float))
    G = np.atleast_2d(np.asarray(parameters["g"], float))
    if "noise_matrix" in parameters:
        sigma = np.atleast_2d(np.asarray(parameters["noise_matrix"], float))
    else:
        sigma = np.diag(np.asarray(parameters.get("noise_scale", [1.0] * n), float))
    if "x0" in parameters:
        x0 = np.asarray(parameters["x0"], float)
        X0 = np.outer(x0, x0)
    else:
        mean = np.asarray(parameters["x0_mean"], float)
        std = np.asarray(parameters["x0_std"], float)
        X0 = np.outer(mean, mean) + np.diag(std**2)
    return solve_riccati(A, B, Q, R, G, sigma, grid, X0)


# -- discrete tree oracle --------------------------------------------------------


@dataclass(frozen=True)
class DiscreteTreeProblem:
    """Desk-scale discrete analogue of the continuous problem.

    Dynamics per period: x_{k+1} = x_k + drift(k, x_k, a_k) dt + noise_scale *
    xi_k * sqrt(dt), with xi_k independent +-1 signs per subsystem (matching
    the first two moments of an Euler step).  Each DM picks one action atom
    per information cell; ``info`` names the partition per DM and period:
    "blind" (one cell), "own" (the DM's own noise-sign history), or "full"
    (the whole sign history).
    """

    periods: int
    dt: float
    x0: tuple
    noise_scale: tuple
    actions: tuple  # per DM: tuple of scalar atoms
    info: tuple  # per DM: tuple of partition names, one per period
    drift: Callable  # (k, x tuple, a tuple) -> tuple
    running_cost: Callable  # (k, x, a) -> float, integrated with weight dt
    terminal_cost: Callable  # (x,) -> float
    max_profiles: int = 1_000_000

    def __post_init__(self):
        if not 1 <= self.periods <= 3:
            raise ModelError("tree supports 1 to 3 periods")
        if any(len(per_dm) != self.periods for per_dm in self.info):
            raise ModelError("info partitions must list one entry per period")
        if any(len(atoms) < 1 or len(atoms) > 3 for atoms in self.actions):
            raise ModelError("tree actions support at most 3 atoms per DM")

    @property
    def n_dms(self) -> int:
        return len(self.actions)

    @property
    def n_subsystems(self) -> int:
        return len(self.x0)


def _histories(n_sub: int, k: int) -> list:
    """All sign histories of length k: tuples of k sign-vectors in {-1,+1}^n."""
    signs = list(itertools.product((-1, 1), repeat=n_sub))
    return [tuple(h) for h in itertools.product(signs, repeat=k)]


def _cell(tree: DiscreteTreeProblem, dm: int, k: int, history: tuple):
    kind = tree.info[dm][k]
    if kind == "blind":
        return ()
    if kind == "own":
        return tuple(step[dm] for step in history)
    if kind == "full":
        return history
    raise ModelError(f"unknown info partition {kind!r}")


@dataclass(frozen=True)
class TreeStrategy:
    """Maps (dm, period, cell) -> action index."""

    choices: tuple  # hashable nested tuples: per dm, per period, tuple of (cell, action index)

    def action(self, tree: DiscreteTreeProblem, dm: int, k: int, cell) -> float:
        table = dict(self.choices[dm][k])
        return tree.actions[dm][table[cell]]

    def replace(self, dm: int, k: int, cell, action_idx: int) -> "TreeStrategy":
        choices = [list(map(list, per_dm)) for per_dm in self.choices]
        table = dict(choices[dm][k])
        table[cell] = action_idx
        choices[dm][k] = sorted(table.items())
        return TreeStrategy(tuple(tuple(tuple(item) for item in per_dm) for per_dm in choices))


def _cells_per_dm_period(tree: DiscreteTreeProblem) -> list:
    cells = []
    for dm in range(tree.n_dms):
        per_dm = []
        for k in range(tree.periods):
            per_dm.append(sorted({_cell(tree, dm, k, h) for h in _histories(tree.n_subsystems, k)}))
        cells.append(per_dm)
    return cells


def _profile_count(tree: DiscreteTreeProblem, cells) -> int:
    count = 1
    for dm in range(tree.n_dms):
        for k in range(tree.periods):
            count *= len(tree.actions[dm]) ** len(cells[dm][k])
    return count


def expected_cost(tree: DiscreteTreeProblem, profile: TreeStrategy) -> float:
    """Exact expectation over all noise outcomes (uniform independent signs)."""
    outcomes = _histories(tree.n_subsystems, tree.periods)
    prob = 1.0 / len(outcomes)
    total = 0.0
    sq = np.sqrt(tree.dt)
    for omega in outcomes:
        x = tuple(tree.x0)
        cost = 0.0
        for k in range(tree.periods):
            history = omega[:k]
            a = tuple(
                profile.action(tree, dm, k, _cell(tree, dm, k, history)) for dm in range(tree.n_dms)
            )
            cost += tree.running_cost(k, x, a) * tree.dt
            drift = tree.drift(k, x, a)
            x = tuple(
                x[i] + drift[i] * tree.dt + tree.noise_scale[i] * omega[k][i] * sq
                for i in range(tree.n_subsystems)
            )
        cost += tree.terminal_cost(x)
        total += prob * cost
    return total


def _all_profiles(tree: DiscreteTreeProblem, cells):
    per_slot = []
    slots = []
    for dm in range(tree.n_dms):
        for k in range(tree.periods):
            for cell in cells[dm][k]:
                slots.append((dm, k, cell))
                per_slot.append(range(len(tree.actions[dm])))
    for assignment in itertools.product(*per_slot):
        choices = [[dict() for _ in range(tree.periods)] for _ in range(tree.n_dms)]
        for (dm, k, cell), idx in zip(slots, assignment):
            choices[dm][k][cell] = idx
        yield TreeStrategy(
            tuple(tuple(tuple(sorted(tbl.items())) for tbl in per_dm) for per_dm in choices)
        )


def enumerate_team_optimum(tree: DiscreteTreeProblem) -> tuple:
    """Exact cost of every admissible profile.

    Returns (optimal profiles tuple, cost table dict profile -> cost).  Costs
    are exact expectations; ties are grouped after rounding to 12 decimals so
    symmetric optima are all reported.
    """
    cells = _cells_per_dm_period(tree)
    count = _profile_count(tree, cells)
    if count > tree.max_profiles:
        raise ModelError(f"enumeration budget exceeded: {count} profiles > {tree.max_profiles}")
    table = {}
    for profile in _all_profiles(tree, cells):
        table[profile] = expected_cost(tree, profile)
    best = min(round(c, 12) for c in table.values())
    optima = tuple(p for p, c in table.items() if round(c, 12) == best)
    return optima, table


def verify_discrete_smp(tree: DiscreteTreeProblem, profile: TreeStrategy, tol: float = 1e-12) -> tuple:
    """Check the discrete one-DM-at-a-time conditional inequalities.

    True iff for every DM, every information cell, and every alternative
    action, the conditional expected cost (conditioned on reaching that cell)
    does not decrease.  Returns (ok, violations) with violations listing
    (dm, period, cell, action index, improvement)."""
    outcomes = _histories(tree.n_subsystems, tree.periods)
    cells = _cells_per_dm_period(tree)
    violations = []
    base_cond = {}

    def conditional_cost(prof: TreeStrategy, dm: int, k: int, cell) -> float:
        hits = [w for w in outcomes if _cell(tree, dm, k, w[:k]) == cell]
        total = 0.0
        sq = np.sqrt(tree.dt)
        for omega in hits:
            x = tuple(tree.x0)
            cost = 0.0
            for kk in range(tree.periods):
                a = tuple(
                    prof.action(tree, d, kk, _cell(tree, d, kk, omega[:kk]))
                    for d in range(tree.n_dms)
                )
                cost += tree.running_cost(kk, x, a) * tree.dt
                drift = tree.drift(kk, x, a)
                x = tuple(
                    x[i] + drift[i] * tree.dt + tree.noise_scale[i] * omega[kk][i] * sq
                    for i in range(tree.n_subsystems)
                )
            cost += tree.terminal_cost(x)
            total += cost
        return total / len(hits)

    for dm in range(tree.n_dms):
        for k in range(tree.periods):
            for cell in cells[dm][k]:
                base = conditional_cost(profile, dm, k, cell)
                base_cond[(dm, k, cell)] = base
                current = dict(profile.choices[dm][k])[cell]
                for idx in range(len(tree.actions[dm])):
                    if idx == current:
                        continue
                    alt = profile.replace(dm, k, cell, idx)
                    dev = conditional_cost(alt, dm, k, cell)
                    if dev < base - tol:
                        violations.append((dm, k, cell, idx, base - dev))
    return len(violations) == 0, violations
