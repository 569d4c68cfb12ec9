"""Backward estimation of the adjoint pair (psi, Q) along a simulated ensemble.

One-step explicit regression scheme, sweeping k = K-1 .. 0:

    Q_k   ~ E[ psi_{k+1} dW_k' | F_k ] / dt
    psi_k ~ E[ psi_{k+1} + Hx(t_k, x_k, psi_{k+1}, Q_k, u_k) dt | F_k ]

with terminal condition psi_K = terminal_cost_grad_x(x_K) assigned exactly
per path.  The Q regression actually targets
(psi_{k+1} - E[psi_{k+1} | F_k]) dW_k' / dt: subtracting the conditional mean
leaves the estimand unchanged (E[m dW | F_k] = 0 for F_k-measurable m) and
removes the O(1/dt) variance of the raw product.  Hx is the state gradient of
the Hamiltonian,

    Hx = drift_jac_x' psi + V_Q + running_cost_grad_x,
    <V_Q, z> = tr(Q' * d sigma(x; z)),  i.e.  V_Q = sum_k (d sigma^(k)/dx)' Q^(k)

column by column; V_Q vanishes identically for state-independent diffusion.
Conditional expectations are estimated with full-information polynomial
features of x(t_k): the adjoint pair lives on the centralized filtration, and
projection onto each DM's information happens later, in the conditional
Hamiltonian.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .condexp import FeatureMap, RidgeSolver, fit_predict
from .model import ModelError, TeamProblem, full_information
from .sde import PathEnsemble, averaged_map
from .strategies import StrategyProfile

__all__ = ["AdjointEnsemble", "solve_adjoint", "check_q_identity", "hamiltonian_grad_x", "QIdentityReport"]


@dataclass(frozen=True)
class AdjointEnsemble:
    """Per-path, per-step adjoint estimates from the backward sweep."""

    grid: object
    psi: np.ndarray  # (M, K+1, n)
    Q: np.ndarray  # (M, K, n, m)
    fits: tuple  # per-step fit summaries, index k -> dict

    @property
    def paths(self) -> int:
        return self.psi.shape[0]

    def to_csv(self, path) -> None:
        n = self.psi.shape[2]
        m = self.Q.shape[3]
        K = self.Q.shape[1]
        header = (
            ["path", "step"]
            + [f"psi{i}" for i in range(n)]
            + [f"Q{i}_{j}" for i in range(n) for j in range(m)]
        )
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for p in range(self.paths):
                for k in range(K + 1):
                    row = [str(p), str(k)] + [repr(float(v)) for v in self.psi[p, k]]
                    if k < K:
                        row += [repr(float(v)) for v in self.Q[p, k].ravel()]
                    else:
                        row += [""] * (n * m)
                    fh.write(",".join(row) + "\n")


def hamiltonian_grad_x(
    problem: TeamProblem,
    t: float,
    x: np.ndarray,
    psi: np.ndarray,
    Q: np.ndarray,
    controls: list,
) -> np.ndarray:
    """State gradient of the Hamiltonian, measure-averaged over the controls."""
    fx = averaged_map(problem, "drift_jac_x", t, x, controls)
    lx = averaged_map(problem, "running_cost_grad_x", t, x, controls)
    sx = averaged_map(problem, "diffusion_jac_x", t, x, controls)
    vq = np.einsum("pikj,pik->pj", sx, Q)
    return np.einsum("pij,pi->pj", fx, psi) + vq + lx


def solve_adjoint(
    problem: TeamProblem,
    strategy: StrategyProfile,
    ensemble: PathEnsemble,
    conditioning: Optional[FeatureMap] = None,
    ridge: Optional[float] = None,
) -> AdjointEnsemble:
    """Regression sweep for the adjoint pair along a forward ensemble.

    ``conditioning`` defaults to degree-2 polynomials of the full state.  A
    failed regression aborts with the step index.
    """
    if conditioning is None:
        conditioning = FeatureMap(info=full_information(problem), basis="polynomial_deg2")
    K = ensemble.grid.steps
    dt = ensemble.grid.dt
    nodes = ensemble.grid.nodes
    M = ensemble.paths
    n, m = problem.state_dim, problem.noise_dim

    psi = np.zeros((M, K + 1, n))
    Q = np.zeros((M, K, n, m))
    psi[:, K] = problem.terminal_cost_grad_x(ensemble.states[:, K])
    fits = []

    for k in range(K - 1, -1, -1):
        t = float(nodes[k])
        xk = ensemble.states[:, k]
        try:
            solver = RidgeSolver(conditioning.matrix(ensemble, k), ridge)
            psi_mean, _ = solver.fit(psi[:, k + 1], time_index=k, want_se=False)
            martingale_part = psi[:, k + 1] - psi_mean
            q_targets = (martingale_part[:, :, None] * ensemble.brownian_increments[:, k, None, :] / dt).reshape(
                M, n * m
            )
            q_fitted, q_fit = solver.fit(q_targets, time_index=k)
            Q[:, k] = q_fitted.reshape(M, n, m)
            controls = strategy.controls_at(problem, ensemble, k)
            hx = hamiltonian_grad_x(problem, t, xk, psi[:, k + 1], Q[:, k], controls)
            psi_fitted, p_fit = solver.fit(psi[:, k + 1] + hx * dt, time_index=k)
            psi[:, k] = psi_fitted
        except ModelError as err:
            raise ModelError(f"adjoint regression failed at step {k}: {err}") from err
        fits.append({"step": k, "q": q_fit.to_dict(), "psi": p_fit.to_dict()})

    if not np.all(np.isfinite(psi)) or not np.all(np.isfinite(Q)):
        raise ModelError("adjoint sweep produced non-finite values")
    return AdjointEnsemble(grid=ensemble.grid, psi=psi, Q=Q, fits=tuple(reversed(fits)))


@dataclass(frozen=True)
class QIdentityReport:
    """L2 comparison of Q against (d psi / d x) sigma, step by step."""

    per_step: tuple  # relative discrepancy per step (None where Q vanishes)
    overall: float  # sqrt(sum ||Q - psihat_x sigma||^2 / sum ||Q||^2)

    def to_dict(self) -> dict:
        return {
            "per_step": [None if v is None else float(v) for v in self.per_step],
            "overall": float(self.overall),
        }


def check_q_identity(
    problem: TeamProblem,
    strategy: StrategyProfile,
    forward: PathEnsemble,
    adjoint: AdjointEnsemble,
) -> QIdentityReport:
    """Diagnostic: regress psi(t_k) linearly on x(t_k), form slope * sigma, and
    report the L2 discrepancy against the estimated Q.  Report-only; no
    tolerance is enforced here."""
    K = forward.grid.steps
    nodes = forward.grid.nodes
    M = forward.paths
    n = problem.state_dim
    per_step = []
    num = 0.0
    den = 0.0
    for k in range(K):
        xk = forward.states[:, k]
        F = np.concatenate([np.ones((M, 1)), xk], axis=1)
        _, fit = fit_predict(F, adjoint.psi[:, k], ridge=None, time_index=k)
        slope = fit.coefficients[1:, :].T  # (n, n): row i = d psi_i / d x
        controls = strategy.controls_at(problem, forward, k)
        sig = averaged_map(problem, "diffusion", float(nodes[k]), xk, controls)
        q_hat = np.einsum("ij,pjm->pim", slope, sig)
        diff = adjoint.Q[:, k] - q_hat
        nk = float(np.sum(diff**2))
        dk = float(np.sum(adjoint.Q[:, k] ** 2))
        num += nk
        den += dk
        per_step.append(None if dk == 0.0 else np.sqrt(nk / dk))
    overall = 0.0 if den == 0.0 else float(np.sqrt(num / den))
    return QIdentityReport(per_step=tuple(per_step), overall=overall)
