"""Regression estimators for conditional expectations given a DM's information.

The conditional expectation E{ . | G^i_t } is realized as a global
least-squares projection onto polynomial features of the DM's information
variables at time t_k (least-squares Monte Carlo).  Features are measurable
with respect to the information sigma-algebra by construction: NIS features
read only the listed source Brownian paths, FIS features read only the
observation map outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import InformationStructure, ModelError, TeamProblem

__all__ = [
    "FeatureMap",
    "RegressionFit",
    "RidgeSolver",
    "fit_predict",
    "information_features",
    "info_variables",
    "reconstructible_subsystems",
]

BASES = ("polynomial_deg1", "polynomial_deg2", "custom")


def reconstructible_subsystems(problem: TeamProblem, sources: tuple) -> tuple:
    """Subsystems whose states are strong-solution functionals of the observed noises.

    A subsystem j qualifies when its own noise is observed, every subsystem it
    couples to qualifies, and every DM acting on it is itself NIS-measurable
    with respect to the observed sources.  Computed as a greatest fixpoint;
    with unknown coupling (custom maps without declared structure) nothing is
    certified.
    """
    if problem.coupling is None or problem.actuation is None:
        return ()
    src = set(sources)
    alive = set(range(problem.n_subsystems))

    def dm_covered(j: int) -> bool:
        ins = problem.info_structures[j]
        return ins.kind == "NIS" and set(ins.sources) <= src

    changed = True
    while changed:
        changed = False
        for j in sorted(alive):
            ok = j in src
            ok = ok and all(k in alive for k in range(problem.n_subsystems) if problem.coupling[j][k] and k != j)
            ok = ok and all(
                dm_covered(dm) for dm in range(problem.n_subsystems) if problem.actuation[j][dm]
            )
            if not ok:
                alive.discard(j)
                changed = True
    return tuple(sorted(alive))


def info_variables(info: InformationStructure, ensemble, k: int) -> np.ndarray:
    """Raw information variables of one DM at time index k, shape (M, v).

    Row r depends only on path r's observed data up to t_k.  The ensemble
    must expose ``problem``, ``states`` (M,K+1,n) and ``w_paths`` (M,K+1,m).
    """
    problem: TeamProblem = ensemble.problem
    states = ensemble.states
    if k > states.shape[1] - 1:
        raise ModelError(f"time index {k} beyond available ensemble data")
    cols = []
    if info.kind == "NIS":
        w = ensemble.w_paths
        for s in info.sources:
            if s >= problem.n_subsystems:
                raise ModelError(f"NIS source index {s} out of range")
            sl = problem.noise_slice(s)
            cols.append(w[:, k, sl])
            if not problem.has_fixed_x0():
                cols.append(states[:, 0, problem.state_slice(s)])
        if info.memory == "full_path_features":
            for s in info.sources:
                sl = problem.noise_slice(s)
                cols.append(np.mean(w[:, : k + 1, sl], axis=1))
            for j in reconstructible_subsystems(problem, info.sources):
                cols.append(states[:, k, problem.state_slice(j)])
    else:
        obs = list(info.observed)
        for c in obs:
            if c >= problem.state_dim:
                raise ModelError(f"FIS observed coordinate {c} out of range")
        mat = np.asarray(info.obs_matrix, float).T if info.obs_matrix is not None else None
        zk = states[:, k, obs]
        cols.append(zk @ mat if mat is not None else zk)
        if info.memory == "full_path_features":
            zbar = np.mean(states[:, : k + 1, obs], axis=1)
            cols.append(zbar @ mat if mat is not None else zbar)
    return np.concatenate(cols, axis=1)


def _expand(v: np.ndarray, basis: str) -> np.ndarray:
    M, p = v.shape
    parts = [np.ones((M, 1)), v]
    if basis == "polynomial_deg2":
        prods = [v[:, i : i + 1] * v[:, j : j + 1] for i in range(p) for j in range(i, p)]
        parts.extend(prods)
    return np.concatenate(parts, axis=1)


def information_features(
    info: InformationStructure,
    ensemble,
    k: int,
    basis: str = "polynomial_deg2",
    custom: Optional[callable] = None,
) -> np.ndarray:
    """Feature matrix (M, p) for DM conditioning at time index k.

    polynomial_deg1 gives [1, v]; polynomial_deg2 adds all pairwise products
    of the information variables v.
    """
    if basis not in BASES:
        raise ModelError(f"unknown basis {basis!r}")
    v = info_variables(info, ensemble, k)
    if basis == "custom":
        if custom is None:
            raise ModelError("custom basis needs a callable")
        return np.asarray(custom(v), float)
    return _expand(v, basis)


@dataclass(frozen=True)
class FeatureMap:
    """A DM's conditioning device: information structure plus basis."""

    info: InformationStructure
    basis: str = "polynomial_deg2"
    custom: Optional[callable] = None

    def __post_init__(self):
        if self.basis not in BASES:
            raise ModelError(f"unknown basis {self.basis!r}")

    def matrix(self, ensemble, k: int) -> np.ndarray:
        return information_features(self.info, ensemble, k, self.basis, self.custom)

    def variables(self, ensemble, k: int) -> np.ndarray:
        return info_variables(self.info, ensemble, k)

    def output_dim(self, ensemble) -> int:
        return self.matrix(ensemble, 0).shape[1]


@dataclass(frozen=True)
class RegressionFit:
    """Record of one per-step least-squares fit."""

    coefficients: np.ndarray  # (p, q); zero row layout when mean fallback
    ridge: float
    time_index: int
    mean_fallback: bool
    residual_se: float  # per-target-average std of residuals / sqrt(M)

    def to_dict(self) -> dict:
        return {
            "ridge": float(self.ridge),
            "time_index": int(self.time_index),
            "mean_fallback": bool(self.mean_fallback),
            "residual_se": float(self.residual_se),
        }


class RidgeSolver:
    """Factored normal-equation solver for repeated fits on one design.

    Solves (F'F + lambda I) beta = F'y.  ridge=None selects
    lambda = 1e-8 * trace(F'F) / p.  A design whose non-intercept columns are
    all constant falls back to the sample mean (the conditional expectation
    given trivial information)."""

    def __init__(self, features: np.ndarray, ridge: Optional[float] = None):
        F = np.asarray(features, float)
        if not np.all(np.isfinite(F)):
            bad = np.argwhere(~np.isfinite(F))[0]
            raise ModelError(f"non-finite feature at row {bad[0]}, column {bad[1]}")
        self.F = F
        M, p = F.shape
        lo = F.min(axis=0)
        hi = F.max(axis=0)
        self.degenerate = bool(np.all(hi - lo <= 1e-12 * (1.0 + np.maximum(np.abs(lo), np.abs(hi)))))
        self.lam = 0.0
        self._chol = None
        if not self.degenerate:
            gram = F.T @ F
            lam = 1e-8 * np.trace(gram) / p if ridge is None else float(ridge)
            from scipy.linalg import cho_factor

            try:
                self._chol = cho_factor(gram + lam * np.eye(p), lower=True)
            except np.linalg.LinAlgError:
                lam = max(lam, 1e-10 * np.trace(gram) / p, 1e-12)
                self._chol = cho_factor(gram + lam * np.eye(p), lower=True)
            self.lam = lam

    def fit(self, targets: np.ndarray, time_index: int = -1, want_se: bool = True) -> tuple:
        y = np.asarray(targets, float)
        squeeze = y.ndim == 1
        if squeeze:
            y = y[:, None]
        if not np.all(np.isfinite(y)):
            bad = np.argwhere(~np.isfinite(y))[0]
            raise ModelError(f"non-finite regression target at row {bad[0]}, column {bad[1]}")
        M, p = self.F.shape
        if self.degenerate:
            mean = y.mean(axis=0)
            fitted = np.broadcast_to(mean, y.shape).copy()
            se = _residual_se(y, fitted) if want_se else 0.0
            fit = RegressionFit(np.zeros((p, y.shape[1])), 0.0, time_index, True, se)
            return (fitted[:, 0] if squeeze else fitted), fit
        from scipy.linalg import cho_solve

        beta = cho_solve(self._chol, self.F.T @ y)
        fitted = self.F @ beta
        se = _residual_se(y, fitted) if want_se else 0.0
        fit = RegressionFit(beta, self.lam, time_index, False, se)
        return (fitted[:, 0] if squeeze else fitted), fit


def _residual_se(y: np.ndarray, fitted: np.ndarray) -> float:
    M = y.shape[0]
    if M < 2:
        return 0.0
    resid = y - fitted
    ssq = np.einsum("pq,pq->q", resid, resid)
    mean = resid.mean(axis=0)
    var = np.maximum(ssq / M - mean**2, 0.0) * (M / (M - 1.0))
    return float(np.mean(np.sqrt(var))) / np.sqrt(M)


def fit_predict(
    features: np.ndarray,
    targets: np.ndarray,
    ridge: Optional[float] = None,
    time_index: int = -1,
) -> tuple:
    """Solve (F'F + lambda I) beta = F'y per target column; return (fitted, fit)."""
    return RidgeSolver(features, ridge).fit(targets, time_index)
