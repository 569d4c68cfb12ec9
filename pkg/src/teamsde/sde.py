"""Forward Monte Carlo simulation of the controlled distributed system.

Explicit Euler-Maruyama on a uniform grid:

    x_{k+1} = x_k + f(t_k, x_k, u_k) dt + sigma(t_k, x_k, u_k) dW_k

Relaxed strategies enter through measure-averaged drift and diffusion; the
action logged along each path is then a sample from the measure, used for
reporting only.  Noise is generated by a counter-based Philox stream keyed by
the seed, with the increment of (path p, step k, coordinate j) at a fixed
counter offset p*K*m + k*m + j, so ensembles are bit-reproducible under any
worker schedule (a block worker can Philox.advance to its offset).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .model import ModelError, TeamProblem
from .strategies import StrategyProfile

__all__ = [
    "TimeGrid",
    "PathEnsemble",
    "VariationalEnsemble",
    "SimulationDiverged",
    "simulate_forward",
    "simulate_variational",
    "simulate_frozen_mixture",
    "averaged_map",
    "relaxed_coefficient",
    "brownian_increments",
    "ensemble_cache_key",
    "save_ensemble_cache",
    "load_ensemble_cache",
]

_STREAM_NOISE = 0
_STREAM_ACTION = 1
_STREAM_INIT = 2


class SimulationDiverged(RuntimeError):
    """State became non-finite; carries the first offending path and step."""

    def __init__(self, path: int, step: int, last_state: np.ndarray):
        self.path = int(path)
        self.step = int(step)
        self.last_state = np.asarray(last_state)
        super().__init__(
            f"non-finite state on path {path} at step {step}; last finite state {self.last_state}"
        )


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_K = T."""

    steps: int
    horizon: float

    def __post_init__(self):
        if self.steps < 1:
            raise ModelError("grid needs at least one step")
        if self.horizon <= 0:
            raise ModelError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        nodes = np.arange(self.steps + 1) * self.dt
        nodes[-1] = self.horizon  # last step absorbs rounding
        return nodes


def _stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, stream]))


def brownian_increments(seed: int, M: int, K: int, m: int, dt: float) -> np.ndarray:
    """Increments dW of shape (M, K, m), Var = dt, from the counter-based stream.

    Uniforms are mapped through the inverse normal CDF so each increment
    consumes exactly one counter position (rejection-free), which is what
    makes the offset arithmetic above exact.
    """
    u = _stream(seed, _STREAM_NOISE).random((M, K, m))
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    return ndtri(u) * np.sqrt(dt)


@dataclass(frozen=True)
class PathEnsemble:
    """M sampled trajectories of the controlled system on a fixed grid."""

    grid: TimeGrid
    problem: TeamProblem
    states: np.ndarray  # (M, K+1, n)
    brownian_increments: np.ndarray  # (M, K, m)
    w_paths: np.ndarray  # (M, K+1, m) cumulative Brownian paths
    actions: np.ndarray  # (M, K, d) realized actions
    seed: int

    def __post_init__(self):
        if self.paths >= 1000:
            self.check_increments()

    @property
    def paths(self) -> int:
        return self.states.shape[0]

    def check_increments(self) -> None:
        """Sanity bounds on the sampled noise: per-(step, coordinate) mean within
        5 sqrt(dt/M) of zero, variance within 20% of dt."""
        dW = self.brownian_increments
        M = dW.shape[0]
        dt = self.grid.dt
        means = dW.mean(axis=0)
        if np.max(np.abs(means)) > 5.0 * np.sqrt(dt / M):
            raise ModelError("Brownian increment sample means out of bounds")
        variances = dW.var(axis=0, ddof=1)
        if np.max(np.abs(variances - dt)) > 0.2 * dt:
            raise ModelError("Brownian increment sample variances out of bounds")

    def to_csv(self, path) -> None:
        """Columnar export: path, step, t, x..., u..., dW... (u, dW blank at t_K)."""
        n = self.states.shape[2]
        d = self.actions.shape[2]
        m = self.brownian_increments.shape[2]
        K = self.grid.steps
        nodes = self.grid.nodes
        header = (
            ["path", "step", "t"]
            + [f"x{i}" for i in range(n)]
            + [f"u{i}" for i in range(d)]
            + [f"dW{i}" for i in range(m)]
        )
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for p in range(self.paths):
                for k in range(K + 1):
                    row = [str(p), str(k), repr(float(nodes[k]))]
                    row += [repr(float(v)) for v in self.states[p, k]]
                    if k < K:
                        row += [repr(float(v)) for v in self.actions[p, k]]
                        row += [repr(float(v)) for v in self.brownian_increments[p, k]]
                    else:
                        row += [""] * (d + m)
                    fh.write(",".join(row) + "\n")


@dataclass(frozen=True)
class VariationalEnsemble:
    """First-order state sensitivity Z along a base ensemble; Z(0) = 0."""

    grid: TimeGrid
    Z: np.ndarray  # (M, K+1, n)

    @property
    def paths(self) -> int:
        return self.Z.shape[0]


# -- measure-averaged coefficients --------------------------------------------

_MAPS_WITH_TU = {
    "drift",
    "diffusion",
    "running_cost",
    "drift_jac_x",
    "diffusion_jac_x",
    "running_cost_grad_x",
}


def _check_weights(weights: np.ndarray) -> None:
    sums = weights.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-12):
        raise ModelError("relaxed weights must sum to 1 within 1e-12")
    if np.any(weights < -1e-12):
        raise ModelError("relaxed weights must be nonnegative")


def averaged_map(
    problem: TeamProblem,
    name: str,
    t: float,
    x: np.ndarray,
    controls: list,
    replace: Optional[dict] = None,
) -> np.ndarray:
    """Product-measure average of a coefficient map over the DMs' controls.

    ``controls`` holds one entry per DM: ("dirac", actions (M, d_i)) or
    ("measure", atoms, weights) with atoms (G, d_i) or per-path (M, G, d_i)
    and weights (G,) or (M, G).  ``replace`` substitutes controls for selected
    DMs (used for the one-DM-at-a-time variations).
    """
    if name not in _MAPS_WITH_TU:
        raise ModelError(f"unknown coefficient map {name!r}")
    fn = getattr(problem, name)
    M = x.shape[0]
    ctrl = list(controls)
    if replace:
        for i, c in replace.items():
            ctrl[i] = c

    atom_counts = []
    for c in ctrl:
        if c[0] == "dirac":
            atom_counts.append(1)
        else:
            _, atoms, weights = c
            _check_weights(np.asarray(weights, float))
            atom_counts.append(np.asarray(atoms).shape[-2])

    out = None
    combo = [0] * len(ctrl)
    total = int(np.prod(atom_counts))
    for flat in range(total):
        rem = flat
        for i in range(len(ctrl) - 1, -1, -1):
            combo[i] = rem % atom_counts[i]
            rem //= atom_counts[i]
        u_parts = []
        w = np.ones(M)
        for i, c in enumerate(ctrl):
            if c[0] == "dirac":
                u_parts.append(np.asarray(c[1], float))
            else:
                _, atoms, weights = c
                atoms = np.asarray(atoms, float)
                weights = np.asarray(weights, float)
                j = combo[i]
                if atoms.ndim == 3:
                    u_parts.append(atoms[:, j, :])
                else:
                    u_parts.append(np.broadcast_to(atoms[j], (M, atoms.shape[1])))
                w = w * (weights[:, j] if weights.ndim == 2 else weights[j])
        u = np.concatenate(u_parts, axis=1)
        val = fn(t, x, u)
        wv = w.reshape((M,) + (1,) * (val.ndim - 1)) * val
        out = wv if out is None else out + wv
    return out


def relaxed_coefficient(
    problem: TeamProblem,
    name: str,
    t: float,
    x: np.ndarray,
    measures: list,
) -> np.ndarray:
    """Average of drift/diffusion/running_cost over a product of per-DM measures.

    ``measures`` holds (atoms, weights) per DM.  A point mass reproduces the
    map value exactly; the average is linear in each DM's weight vector.
    """
    if name not in ("drift", "diffusion", "running_cost"):
        raise ModelError(f"relaxed_coefficient supports drift/diffusion/running_cost, not {name!r}")
    x = np.atleast_2d(np.asarray(x, float))
    controls = [("measure", np.asarray(a, float), np.asarray(w, float)) for a, w in measures]
    return averaged_map(problem, name, t, x, controls)


# -- forward simulation --------------------------------------------------------


def _sample_measure_actions(atoms: np.ndarray, weights: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(weights, axis=-1)
    idx = np.sum(uniforms[:, None] > cdf[:, :-1], axis=1) if weights.ndim == 2 else np.searchsorted(cdf, uniforms)
    if atoms.ndim == 3:
        return atoms[np.arange(atoms.shape[0]), idx, :]
    return atoms[idx]


class _View:
    """Read-only window onto a partially simulated ensemble for feature maps."""

    __slots__ = ("problem", "states", "w_paths")

    def __init__(self, problem, states, w_paths):
        self.problem = problem
        self.states = states
        self.w_paths = w_paths


def simulate_forward(
    problem: TeamProblem,
    strategy: StrategyProfile,
    grid: TimeGrid,
    M: int,
    seed: int,
) -> PathEnsemble:
    """Euler-Maruyama ensemble under a strategy profile.

    Strategies are evaluated step by step on each DM's information features of
    the trajectory being generated.  A non-finite state aborts with the path
    and step index rather than clipping.
    """
    if M < 1:
        raise ModelError("need at least one path")
    n, d, m = problem.state_dim, problem.action_dim, problem.noise_dim
    K = grid.steps
    dt = grid.dt
    nodes = grid.nodes

    dW = brownian_increments(seed, M, K, m, dt)
    x0 = problem.initial_states(M, _stream(seed, _STREAM_INIT))

    states = np.zeros((M, K + 1, n))
    w_paths = np.zeros((M, K + 1, m))
    actions = np.zeros((M, K, d))
    states[:, 0] = x0
    view = _View(problem, states, w_paths)

    any_relaxed = any(dm.mode == "relaxed" for dm in strategy.dms)
    action_u = (
        _stream(seed, _STREAM_ACTION).random((M, K, len(strategy.dms))) if any_relaxed else None
    )

    for k in range(K):
        t = float(nodes[k])
        xk = states[:, k]
        controls = strategy.controls_at(problem, view, k)
        drift = averaged_map(problem, "drift", t, xk, controls)
        diff = averaged_map(problem, "diffusion", t, xk, controls)
        for i, c in enumerate(controls):
            sl = problem.action_slice(i)
            if c[0] == "dirac":
                actions[:, k, sl] = c[1]
            else:
                actions[:, k, sl] = _sample_measure_actions(c[1], c[2], action_u[:, k, i])
        xn = xk + drift * dt + np.einsum("pnm,pm->pn", diff, dW[:, k])
        bad = ~np.all(np.isfinite(xn), axis=1)
        if np.any(bad):
            p = int(np.argmax(bad))
            raise SimulationDiverged(p, k + 1, xk[p])
        states[:, k + 1] = xn
        w_paths[:, k + 1] = w_paths[:, k] + dW[:, k]

    return PathEnsemble(
        grid=grid,
        problem=problem,
        states=states,
        brownian_increments=dW,
        w_paths=w_paths,
        actions=actions,
        seed=seed,
    )


# -- variational process -------------------------------------------------------


def _frozen_controls(problem: TeamProblem, profile: StrategyProfile, ensemble: PathEnsemble) -> list:
    """Per-step controls of a profile evaluated along the base ensemble (frozen
    nonanticipative processes, the sense in which strategy variations are taken)."""
    out = []
    for k in range(ensemble.grid.steps):
        out.append(profile.controls_at(problem, ensemble, k))
    return out


def simulate_variational(
    problem: TeamProblem,
    base: StrategyProfile,
    direction: StrategyProfile,
    ensemble: PathEnsemble,
) -> VariationalEnsemble:
    """First-order sensitivity of the state to the strategy perturbation
    base -> base + eps (direction - base), reusing the base ensemble's noise.

    Euler recursion of the linear variational equation: the homogeneous part
    carries the state Jacobians of drift and diffusion along the base
    trajectory, and the inhomogeneity sums, over DMs, the coefficient change
    when DM i alone switches from its base control to its direction control.
    """
    K = ensemble.grid.steps
    dt = ensemble.grid.dt
    nodes = ensemble.grid.nodes
    M, _, n = ensemble.states.shape
    N = len(base)

    base_ctl = _frozen_controls(problem, base, ensemble)
    dir_ctl = _frozen_controls(problem, direction, ensemble)

    Z = np.zeros((M, K + 1, n))
    for k in range(K):
        t = float(nodes[k])
        xk = ensemble.states[:, k]
        dWk = ensemble.brownian_increments[:, k]
        fx = averaged_map(problem, "drift_jac_x", t, xk, base_ctl[k])
        sx = averaged_map(problem, "diffusion_jac_x", t, xk, base_ctl[k])
        f0 = averaged_map(problem, "drift", t, xk, base_ctl[k])
        s0 = averaged_map(problem, "diffusion", t, xk, base_ctl[k])
        df = np.zeros_like(f0)
        ds = np.zeros_like(s0)
        for i in range(N):
            rep = {i: dir_ctl[k][i]}
            df += averaged_map(problem, "drift", t, xk, base_ctl[k], replace=rep) - f0
            ds += averaged_map(problem, "diffusion", t, xk, base_ctl[k], replace=rep) - s0
        Zk = Z[:, k]
        drift_term = np.einsum("pij,pj->pi", fx, Zk) + df
        noise_mat = np.einsum("pikj,pj->pik", sx, Zk) + ds
        Z[:, k + 1] = Zk + drift_term * dt + np.einsum("pik,pk->pi", noise_mat, dWk)
    return VariationalEnsemble(grid=ensemble.grid, Z=Z)


def simulate_frozen_mixture(
    problem: TeamProblem,
    ensemble: PathEnsemble,
    direction: StrategyProfile,
    base: StrategyProfile,
    eps: float,
) -> tuple:
    """Simulate under the measure mixture (1-eps) base + eps direction with the
    base ensemble's noise, holding both control processes frozen along the
    base information (common random numbers).

    Returns (states, cost_per_path).  This is the perturbed trajectory whose
    first-order expansion the variational process matches, and the J(u_eps)
    used by the directional-derivative checks.
    """
    K = ensemble.grid.steps
    dt = ensemble.grid.dt
    nodes = ensemble.grid.nodes
    M, _, n = ensemble.states.shape

    base_ctl = _frozen_controls(problem, base, ensemble)
    dir_ctl = _frozen_controls(problem, direction, ensemble)

    def mixture(cb, cd):
        if cb[0] == "dirac" and cd[0] == "dirac":
            atoms = np.stack([cb[1], cd[1]], axis=1)  # (M, 2, d_i)
            return ("measure", atoms, np.array([1.0 - eps, eps]))
        if cb[0] == "measure" and cd[0] == "measure":
            if cb[1].shape != cd[1].shape or not np.allclose(cb[1], cd[1]):
                raise ModelError("relaxed mixture needs a shared atom grid")
            return ("measure", cb[1], (1.0 - eps) * cb[2] + eps * cd[2])
        raise ModelError("mixture of regular and relaxed strategies is not supported")

    states = np.zeros((M, K + 1, n))
    states[:, 0] = ensemble.states[:, 0]
    cost = np.zeros(M)
    for k in range(K):
        t = float(nodes[k])
        xk = states[:, k]
        controls = [mixture(cb, cd) for cb, cd in zip(base_ctl[k], dir_ctl[k])]
        drift = averaged_map(problem, "drift", t, xk, controls)
        diff = averaged_map(problem, "diffusion", t, xk, controls)
        cost += averaged_map(problem, "running_cost", t, xk, controls) * dt
        xn = xk + drift * dt + np.einsum("pnm,pm->pn", diff, ensemble.brownian_increments[:, k])
        bad = ~np.all(np.isfinite(xn), axis=1)
        if np.any(bad):
            p = int(np.argmax(bad))
            raise SimulationDiverged(p, k + 1, xk[p])
        states[:, k + 1] = xn
    cost += problem.terminal_cost(states[:, K])
    return states, cost


# -- binary ensemble cache -----------------------------------------------------


def ensemble_cache_key(
    problem: TeamProblem, strategy: StrategyProfile, grid: TimeGrid, M: int, seed: int
) -> str:
    """Content hash of (problem, strategy, grid, M, seed).

    Built-in families hash their full coefficient arrays; custom problems
    hash only their declared structure, so cache reuse across edits of custom
    callables is the caller's responsibility.
    """
    payload = {
        "family": problem.family_tag,
        "parameters": _jsonable(problem.family_parameters),
        "subsystems": [
            [s.state_dim, s.action_dim, s.noise_dim, list(s.action_low), list(s.action_high)]
            for s in problem.subsystems
        ],
        "strategy": strategy.to_jsonable(),
        "grid": [grid.steps, grid.horizon],
        "paths": M,
        "seed": seed,
    }
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in sorted(obj.items()) if not callable(v)}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def save_ensemble_cache(ensemble: PathEnsemble, strategy: StrategyProfile, directory) -> str:
    import os

    key = ensemble_cache_key(ensemble.problem, strategy, ensemble.grid, ensemble.paths, ensemble.seed)
    path = os.path.join(str(directory), f"ensemble_{key}.npz")
    np.savez_compressed(
        path,
        states=ensemble.states,
        brownian_increments=ensemble.brownian_increments,
        w_paths=ensemble.w_paths,
        actions=ensemble.actions,
        seed=np.array([ensemble.seed]),
        grid=np.array([ensemble.grid.steps, ensemble.grid.horizon]),
    )
    return path


def load_ensemble_cache(
    problem: TeamProblem, strategy: StrategyProfile, grid: TimeGrid, M: int, seed: int, directory
) -> Optional[PathEnsemble]:
    import os

    key = ensemble_cache_key(problem, strategy, grid, M, seed)
    path = os.path.join(str(directory), f"ensemble_{key}.npz")
    if not os.path.exists(path):
        return None
    data = np.load(path)
    return PathEnsemble(
        grid=grid,
        problem=problem,
        states=data["states"],
        brownian_increments=data["brownian_increments"],
        w_paths=data["w_paths"],
        actions=data["actions"],
        seed=int(data["seed"][0]),
    )
