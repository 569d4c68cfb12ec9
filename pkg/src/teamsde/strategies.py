"""Decision-rule representations.

Each DM carries either a regular strategy (a feedback map: per-step linear
coefficients over the DM's information features, projected into the action
box) or a relaxed strategy (a probability vector over a fixed atom grid,
piecewise constant over bins of the DM's information variables).

Profiles are values: updates copy, never mutate, so a profile can be shared
read-only across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .condexp import FeatureMap
from .model import ModelError, TeamProblem

__all__ = [
    "RegularDMStrategy",
    "RelaxedControl",
    "StrategyProfile",
    "action_atoms",
    "initial_profile",
    "measure_entropy",
]

BINS_PER_VARIABLE = 8


def action_atoms(problem: TeamProblem, dm: int, grid_points: int) -> np.ndarray:
    """Uniform product grid over DM ``dm``'s action box, (G^d_i, d_i)."""
    spec = problem.subsystems[dm]
    axes = [
        np.linspace(lo, hi, grid_points) if hi > lo else np.array([lo])
        for lo, hi in zip(spec.action_low, spec.action_high)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class RegularDMStrategy:
    """u_k = clip(coeffs[k] @ features_k) with coeffs of shape (K, d_i, p)."""

    features: FeatureMap
    coeffs: np.ndarray

    mode = "regular"

    def actions(self, problem: TeamProblem, dm: int, ensemble, k: int) -> np.ndarray:
        feats = self.features.matrix(ensemble, k)
        if feats.shape[1] != self.coeffs.shape[2]:
            raise ModelError(
                f"strategy for DM {dm} expects {self.coeffs.shape[2]} features, got {feats.shape[1]}"
            )
        raw = feats @ self.coeffs[k].T
        spec = problem.subsystems[dm]
        return np.clip(raw, np.asarray(spec.action_low), np.asarray(spec.action_high))

    def with_step(self, k: int, new_slice: np.ndarray) -> "RegularDMStrategy":
        coeffs = self.coeffs.copy()
        coeffs[k] = new_slice
        return replace(self, coeffs=coeffs)


@dataclass(frozen=True)
class RelaxedControl:
    """Finite-atom conditional measure on the DM's action box.

    weights[k, b] is a probability vector over ``atoms`` for time step k and
    information bin b; bins are a fixed product grid over the DM's raw
    information variables (``bin_edges`` holds the interior edges per
    variable).
    """

    features: FeatureMap
    atoms: np.ndarray  # (G, d_i)
    bin_edges: tuple  # per variable, array of interior edges
    weights: np.ndarray  # (K, n_bins, G)

    mode = "relaxed"

    def __post_init__(self):
        w = self.weights
        if np.any(w < -1e-12):
            raise ModelError("relaxed weights must be nonnegative")
        sums = w.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-12):
            raise ModelError("relaxed weights must sum to 1 within 1e-12 per conditioning unit")

    def bin_index(self, ensemble, k: int) -> np.ndarray:
        """Flat bin index per path from the raw information variables."""
        v = self.features.variables(ensemble, k)
        idx = np.zeros(v.shape[0], dtype=int)
        for j, edges in enumerate(self.bin_edges):
            idx = idx * (len(edges) + 1) + np.searchsorted(edges, v[:, j])
        return idx

    def path_weights(self, ensemble, k: int) -> np.ndarray:
        return self.weights[k][self.bin_index(ensemble, k)]

    def with_step(self, k: int, new_weights: np.ndarray, bin_edges=None) -> "RelaxedControl":
        weights = self.weights.copy()
        weights[k] = new_weights
        out = replace(self, weights=weights)
        if bin_edges is not None:
            out = replace(out, bin_edges=bin_edges)
        return out


@dataclass(frozen=True)
class StrategyProfile:
    """One decision rule per DM."""

    dms: tuple  # RegularDMStrategy | RelaxedControl per DM

    def __len__(self) -> int:
        return len(self.dms)

    @property
    def steps(self) -> int:
        dm = self.dms[0]
        return dm.coeffs.shape[0] if dm.mode == "regular" else dm.weights.shape[0]

    def with_dm(self, i: int, strategy) -> "StrategyProfile":
        dms = list(self.dms)
        dms[i] = strategy
        return StrategyProfile(dms=tuple(dms))

    def controls_at(self, problem: TeamProblem, ensemble, k: int) -> list:
        """Per-DM control at step k: ("dirac", actions) or ("measure", atoms, weights)."""
        out = []
        for i, dm in enumerate(self.dms):
            if dm.mode == "regular":
                out.append(("dirac", dm.actions(problem, i, ensemble, k)))
            else:
                out.append(("measure", dm.atoms, dm.path_weights(ensemble, k)))
        return out

    def to_jsonable(self) -> dict:
        dms = []
        for dm in self.dms:
            info = dm.features.info
            rec = {
                "mode": dm.mode,
                "basis": dm.features.basis,
                "info": {
                    "kind": info.kind,
                    "sources": list(info.sources),
                    "observed": list(info.observed),
                    "memory": info.memory,
                },
            }
            if dm.mode == "regular":
                rec["coefficients"] = dm.coeffs.tolist()
            else:
                rec["atoms"] = dm.atoms.tolist()
                rec["bin_edges"] = [e.tolist() for e in dm.bin_edges]
                rec["weights"] = dm.weights.tolist()
            dms.append(rec)
        return {"dms": dms}


def measure_entropy(dm: RelaxedControl) -> float:
    """Max over (step, bin) of the Shannon entropy of the atom weights."""
    w = np.clip(dm.weights, 1e-300, 1.0)
    ent = -(dm.weights * np.log(w)).sum(axis=-1)
    return float(ent.max())


def _default_bin_edges(n_vars: int) -> tuple:
    return tuple(np.linspace(-1.0, 1.0, BINS_PER_VARIABLE - 1) for _ in range(n_vars))


def _feature_count(info, basis: str, problem: TeamProblem) -> int:
    v = info.output_dim()
    if info.kind == "NIS":
        if not problem.has_fixed_x0():
            v += sum(problem.subsystems[s].state_dim for s in info.sources)
        if info.memory == "full_path_features":
            from .condexp import reconstructible_subsystems

            v += len(info.sources)
            v += sum(problem.subsystems[j].state_dim for j in reconstructible_subsystems(problem, info.sources))
    elif info.memory == "full_path_features":
        v *= 2
    if basis == "polynomial_deg1":
        return 1 + v
    return 1 + v + v * (v + 1) // 2


def _variable_count(info, problem: TeamProblem) -> int:
    p1 = _feature_count(info, "polynomial_deg1", problem)
    return p1 - 1


def initial_profile(
    problem: TeamProblem,
    steps: int,
    mode: str = "regular",
    basis: str = "polynomial_deg2",
    atom_grid: int = 21,
) -> StrategyProfile:
    """Zero-action starting profile, projected into each DM's box.

    Regular DMs get all-zero coefficients except an intercept moving the
    action to the box projection of 0; relaxed DMs get a point mass on the
    atom nearest that projected action in every bin.
    """
    dms = []
    for i, spec in enumerate(problem.subsystems):
        info = problem.info_structures[i]
        fmap = FeatureMap(info=info, basis=basis)
        lo = np.asarray(spec.action_low)
        hi = np.asarray(spec.action_high)
        anchor = np.clip(np.zeros(spec.action_dim), lo, hi)
        if mode == "regular":
            p = _feature_count(info, basis, problem)
            coeffs = np.zeros((steps, spec.action_dim, p))
            coeffs[:, :, 0] = anchor
            dms.append(RegularDMStrategy(features=fmap, coeffs=coeffs))
        elif mode == "relaxed":
            atoms = action_atoms(problem, i, atom_grid)
            nearest = int(np.argmin(np.linalg.norm(atoms - anchor, axis=1)))
            n_vars = _variable_count(info, problem)
            edges = _default_bin_edges(n_vars)
            n_bins = BINS_PER_VARIABLE ** n_vars
            weights = np.zeros((steps, n_bins, atoms.shape[0]))
            weights[:, :, nearest] = 1.0
            dms.append(RelaxedControl(features=fmap, atoms=atoms, bin_edges=edges, weights=weights))
        else:
            raise ModelError(f"unknown strategy mode {mode!r}")
    return StrategyProfile(dms=tuple(dms))
