"""Distributed stochastic decision problems.

A problem couples N subsystems through joint drift/diffusion maps and a single
team pay-off.  Each decision maker (DM) controls one subsystem's action block
and observes only what its information structure allows: either a subset of
the driving Brownian paths (NIS) or a measurable function of the state (FIS).

All evaluable maps are batched over paths: ``x`` has shape (M, n), ``u`` has
shape (M, d), and outputs follow
    drift          (M, n)
    diffusion      (M, n, m)
    running_cost   (M,)
    terminal_cost  (M,)
    drift_jac_x    (M, n, n)     entry [p, i, j] = d f_i / d x_j
    diffusion_jac_x(M, n, m, j)  entry [p, i, k, j] = d sigma_ik / d x_j
    running_cost_grad_x, terminal_cost_grad_x  (M, n)

Maps must be pure functions; problems are immutable and safe to share across
workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ModelError",
    "SubsystemSpec",
    "InformationStructure",
    "ModelFamily",
    "TeamProblem",
    "build_problem",
    "validate_assumptions",
    "AssumptionReport",
    "full_information",
]


class ModelError(ValueError):
    """Problem construction or validation failure."""


@dataclass(frozen=True)
class SubsystemSpec:
    """Dimensions and action box of one subsystem.

    The action set of each DM is a closed bounded box; projection onto it is a
    per-coordinate clip.
    """

    state_dim: int
    action_dim: int
    noise_dim: int
    action_low: tuple
    action_high: tuple

    def __post_init__(self):
        if min(self.state_dim, self.action_dim, self.noise_dim) < 1:
            raise ModelError("subsystem dimensions must all be >= 1")
        lo = np.asarray(self.action_low, dtype=float)
        hi = np.asarray(self.action_high, dtype=float)
        if lo.shape != (self.action_dim,) or hi.shape != (self.action_dim,):
            raise ModelError("action_box bounds must match action_dim")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ModelError("action_box bounds must be finite (closed bounded box)")
        if np.any(lo > hi):
            raise ModelError("action_box lower bound exceeds upper bound")


@dataclass(frozen=True)
class InformationStructure:
    """What one DM is allowed to condition on.

    kind="NIS": the DM observes the Brownian paths of the subsystems listed in
    ``sources``.  kind="FIS": the DM observes z = h(t, x) where h selects the
    state coordinates in ``observed`` and optionally applies the linear map
    ``obs_matrix`` (rows = outputs, columns = selected coordinates).

    ``memory`` controls which time slices feed the feature map:
    "markov_current" uses only the current value; "full_path_features" adds
    finite path summaries (running averages, and for NIS the current states of
    any subsystem whose strong-solution reconstruction is certified by the
    observed sources -- see ``condexp.reconstructible_subsystems``).
    """

    kind: str  # "NIS" | "FIS"
    sources: tuple = ()  # NIS: subsystem indices whose W paths are observed
    observed: tuple = ()  # FIS: state coordinate indices entering h
    obs_matrix: Optional[tuple] = None  # FIS: optional rows of a linear map
    memory: str = "markov_current"

    def __post_init__(self):
        if self.kind not in ("NIS", "FIS"):
            raise ModelError(f"unknown information kind {self.kind!r}")
        if self.memory not in ("markov_current", "full_path_features"):
            raise ModelError(f"unknown memory setting {self.memory!r}")
        if self.kind == "NIS" and len(self.sources) == 0:
            raise ModelError("NIS information needs at least one source subsystem")
        if self.kind == "FIS":
            if len(self.observed) == 0:
                raise ModelError("FIS information needs at least one observed coordinate")
            if self.obs_matrix is not None:
                mat = np.asarray(self.obs_matrix, dtype=float)
                if mat.ndim != 2 or mat.shape[1] != len(self.observed):
                    raise ModelError("obs_matrix columns must match observed coordinates")
                if mat.shape[0] < 1:
                    raise ModelError("observation map output dimension must be >= 1")

    def output_dim(self) -> int:
        if self.kind == "NIS":
            return len(self.sources)
        if self.obs_matrix is not None:
            return len(self.obs_matrix)
        return len(self.observed)


@dataclass(frozen=True)
class ModelFamily:
    """Tagged coefficient bundle for the built-in problem families."""

    tag: str  # "linear_quadratic" | "bilinear" | "cascade_ss" | "custom"
    parameters: dict = field(default_factory=dict)

    KNOWN_TAGS = ("linear_quadratic", "bilinear", "cascade_ss", "custom")

    def __post_init__(self):
        if self.tag not in self.KNOWN_TAGS:
            raise ModelError(f"unknown family tag {self.tag!r}")


@dataclass(frozen=True)
class TeamProblem:
    """Immutable specification of one distributed decision problem."""

    horizon: float
    subsystems: tuple  # of SubsystemSpec
    drift: Callable
    diffusion: Callable
    running_cost: Callable
    terminal_cost: Callable
    drift_jac_x: Callable
    diffusion_jac_x: Callable
    running_cost_grad_x: Callable
    terminal_cost_grad_x: Callable
    info_structures: tuple  # of InformationStructure, one per DM
    x0: Optional[tuple] = None  # fixed initial state
    x0_mean: Optional[tuple] = None  # Gaussian sampler mean
    x0_std: Optional[tuple] = None  # Gaussian sampler std (per coordinate)
    # coupling[i][j]: subsystem i's coefficients read subsystem j's state
    coupling: Optional[tuple] = None
    # actuation[i][j]: DM j's action enters subsystem i's coefficients
    actuation: Optional[tuple] = None
    family_tag: str = "custom"
    family_parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon <= 0:
            raise ModelError("horizon must be positive")
        if len(self.subsystems) != len(self.info_structures):
            raise ModelError("need exactly one information structure per subsystem DM")
        if self.x0 is None and (self.x0_mean is None or self.x0_std is None):
            raise ModelError("initial state needs a fixed vector or (mean, std) sampler")
        for ins in self.info_structures:
            if ins.kind == "NIS" and max(ins.sources) >= self.n_subsystems:
                raise ModelError(f"NIS source index {max(ins.sources)} out of range")
            if ins.kind == "FIS" and max(ins.observed) >= self.state_dim:
                raise ModelError(f"FIS observed coordinate {max(ins.observed)} out of range")

    # -- dimension bookkeeping ------------------------------------------------

    @property
    def n_subsystems(self) -> int:
        return len(self.subsystems)

    @property
    def state_dim(self) -> int:
        return sum(s.state_dim for s in self.subsystems)

    @property
    def action_dim(self) -> int:
        return sum(s.action_dim for s in self.subsystems)

    @property
    def noise_dim(self) -> int:
        return sum(s.noise_dim for s in self.subsystems)

    def state_slice(self, i: int) -> slice:
        off = sum(s.state_dim for s in self.subsystems[:i])
        return slice(off, off + self.subsystems[i].state_dim)

    def action_slice(self, i: int) -> slice:
        off = sum(s.action_dim for s in self.subsystems[:i])
        return slice(off, off + self.subsystems[i].action_dim)

    def noise_slice(self, i: int) -> slice:
        off = sum(s.noise_dim for s in self.subsystems[:i])
        return slice(off, off + self.subsystems[i].noise_dim)

    def action_bounds(self) -> tuple:
        lo = np.concatenate([np.asarray(s.action_low, float) for s in self.subsystems])
        hi = np.concatenate([np.asarray(s.action_high, float) for s in self.subsystems])
        return lo, hi

    def clip_actions(self, u: np.ndarray) -> np.ndarray:
        lo, hi = self.action_bounds()
        return np.clip(u, lo, hi)

    def initial_states(self, M: int, rng: np.random.Generator) -> np.ndarray:
        if self.x0 is not None:
            return np.tile(np.asarray(self.x0, float), (M, 1))
        mean = np.asarray(self.x0_mean, float)
        std = np.asarray(self.x0_std, float)
        return mean + std * rng.standard_normal((M, self.state_dim))

    def has_fixed_x0(self) -> bool:
        return self.x0 is not None


def full_information(problem: TeamProblem) -> InformationStructure:
    """FIS structure observing every state coordinate (centralized filtration)."""
    return InformationStructure(kind="FIS", observed=tuple(range(problem.state_dim)))


# -- built-in families -------------------------------------------------------


def _as_matrix(params: dict, key: str, shape: tuple) -> np.ndarray:
    try:
        arr = np.asarray(params[key], dtype=float)
    except KeyError:
        raise ModelError(f"family parameters missing {key!r}") from None
    if arr.shape != shape:
        raise ModelError(f"parameter {key!r} has shape {arr.shape}, expected {shape}")
    return arr


def _subsystems_from_params(params: dict) -> tuple:
    state_dims = [int(v) for v in params.get("state_dims", [1] * len(params.get("noise_scale", [1.0])))]
    n_sub = len(state_dims)
    action_dims = [int(v) for v in params.get("action_dims", [1] * n_sub)]
    noise_dims = [int(v) for v in params.get("noise_dims", list(state_dims))]
    d = sum(action_dims)
    lo = np.asarray(params.get("action_low", [-float(params.get("action_radius", 2.0))] * d), float)
    hi = np.asarray(params.get("action_high", [float(params.get("action_radius", 2.0))] * d), float)
    if lo.shape != (d,) or hi.shape != (d,):
        raise ModelError(f"parameter 'action_low'/'action_high' must have length {d}")
    subs = []
    off = 0
    for i in range(n_sub):
        di = action_dims[i]
        subs.append(
            SubsystemSpec(
                state_dim=state_dims[i],
                action_dim=di,
                noise_dim=noise_dims[i],
                action_low=tuple(lo[off : off + di]),
                action_high=tuple(hi[off : off + di]),
            )
        )
        off += di
    return tuple(subs)


def _constant_diffusion(subs: Sequence[SubsystemSpec], params: dict) -> np.ndarray:
    n = sum(s.state_dim for s in subs)
    m = sum(s.noise_dim for s in subs)
    if "noise_matrix" in params:
        return _as_matrix(params, "noise_matrix", (n, m))
    scale = np.asarray(params.get("noise_scale", [1.0] * len(subs)), float)
    if scale.shape != (len(subs),):
        raise ModelError(f"parameter 'noise_scale' must have one entry per subsystem ({len(subs)})")
    sig = np.zeros((n, m))
    roff = coff = 0
    for s, sc in zip(subs, scale):
        blk = min(s.state_dim, s.noise_dim)
        for j in range(blk):
            sig[roff + j, coff + j] = sc
        roff += s.state_dim
        coff += s.noise_dim
    return sig


def _coupling_from_matrix(subs, A: np.ndarray) -> tuple:
    n_sub = len(subs)
    rows = [slice(sum(s.state_dim for s in subs[:i]), sum(s.state_dim for s in subs[: i + 1])) for i in range(n_sub)]
    out = []
    for i in range(n_sub):
        out.append(tuple(bool(np.any(A[rows[i], rows[j]] != 0.0)) for j in range(n_sub)))
    return tuple(out)


def _actuation_from_matrix(subs, B: np.ndarray) -> tuple:
    n_sub = len(subs)
    rows = [slice(sum(s.state_dim for s in subs[:i]), sum(s.state_dim for s in subs[: i + 1])) for i in range(n_sub)]
    cols = [slice(sum(s.action_dim for s in subs[:j]), sum(s.action_dim for s in subs[: j + 1])) for j in range(n_sub)]
    out = []
    for i in range(n_sub):
        out.append(tuple(bool(np.any(B[rows[i], cols[j]] != 0.0)) for j in range(n_sub)))
    return tuple(out)


def _build_linear_quadratic(family: ModelFamily, info: tuple) -> TeamProblem:
    params = family.parameters
    subs = _subsystems_from_params(params)
    n = sum(s.state_dim for s in subs)
    d = sum(s.action_dim for s in subs)
    m = sum(s.noise_dim for s in subs)
    A = _as_matrix(params, "a", (n, n))
    B = _as_matrix(params, "b", (n, d))
    Q = _as_matrix(params, "q", (n, n))
    R = _as_matrix(params, "r", (d, d))
    G = _as_matrix(params, "g", (n, n))
    sig = _constant_diffusion(subs, params)

    def drift(t, x, u):
        return x @ A.T + u @ B.T

    def diffusion(t, x, u):
        return np.broadcast_to(sig, (x.shape[0],) + sig.shape).copy()

    def running_cost(t, x, u):
        return ((x @ Q) * x).sum(axis=1) + ((u @ R) * u).sum(axis=1)

    def terminal_cost(x):
        return ((x @ G) * x).sum(axis=1)

    def drift_jac_x(t, x, u):
        return np.broadcast_to(A, (x.shape[0], n, n)).copy()

    def diffusion_jac_x(t, x, u):
        return np.zeros((x.shape[0], n, m, n))

    def running_cost_grad_x(t, x, u):
        return 2.0 * x @ Q.T

    def terminal_cost_grad_x(x):
        return 2.0 * x @ G.T

    return TeamProblem(
        horizon=float(params.get("horizon", 1.0)),
        subsystems=subs,
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        drift_jac_x=drift_jac_x,
        diffusion_jac_x=diffusion_jac_x,
        running_cost_grad_x=running_cost_grad_x,
        terminal_cost_grad_x=terminal_cost_grad_x,
        info_structures=info,
        x0=tuple(np.asarray(params["x0"], float)) if "x0" in params else None,
        x0_mean=tuple(np.asarray(params["x0_mean"], float)) if "x0_mean" in params else None,
        x0_std=tuple(np.asarray(params["x0_std"], float)) if "x0_std" in params else None,
        coupling=_coupling_from_matrix(subs, A),
        actuation=_actuation_from_matrix(subs, B),
        family_tag=family.tag,
        family_parameters=dict(params),
    )


def _build_bilinear(family: ModelFamily, info: tuple) -> TeamProblem:
    """Scalar-per-subsystem bilinear family.

    Per subsystem i:  dx_i = (A x + B u + c_i x_i (B u)_i) dt
                           + (s_i + g_i x_i) dW_i
    Quadratic costs as in the linear-quadratic family.  With g != 0 the
    diffusion is state-dependent, so the adjoint picks up a nonzero
    Q-contraction term.
    """
    params = family.parameters
    subs = _subsystems_from_params(params)
    if any(s.state_dim != 1 or s.noise_dim != 1 for s in subs):
        raise ModelError("bilinear family needs scalar state/noise per subsystem")
    n = len(subs)
    d = sum(s.action_dim for s in subs)
    A = _as_matrix(params, "a", (n, n))
    B = _as_matrix(params, "b", (n, d))
    Q = _as_matrix(params, "q", (n, n))
    R = _as_matrix(params, "r", (d, d))
    G = _as_matrix(params, "g", (n, n))
    c = _as_matrix(params, "c", (n,))
    s0 = _as_matrix(params, "noise_scale", (n,))
    gdiff = _as_matrix(params, "noise_slope", (n,))

    def drift(t, x, u):
        bu = u @ B.T
        return x @ A.T + bu + c * x * bu

    def diffusion(t, x, u):
        out = np.zeros((x.shape[0], n, n))
        idx = np.arange(n)
        out[:, idx, idx] = s0 + gdiff * x
        return out

    def running_cost(t, x, u):
        return ((x @ Q) * x).sum(axis=1) + ((u @ R) * u).sum(axis=1)

    def terminal_cost(x):
        return ((x @ G) * x).sum(axis=1)

    def drift_jac_x(t, x, u):
        jac = np.broadcast_to(A, (x.shape[0], n, n)).copy()
        bu = u @ B.T
        idx = np.arange(n)
        jac[:, idx, idx] += c * bu
        return jac

    def diffusion_jac_x(t, x, u):
        jac = np.zeros((x.shape[0], n, n, n))
        idx = np.arange(n)
        jac[:, idx, idx, idx] = gdiff
        return jac

    def running_cost_grad_x(t, x, u):
        return 2.0 * x @ Q.T

    def terminal_cost_grad_x(x):
        return 2.0 * x @ G.T

    return TeamProblem(
        horizon=float(params.get("horizon", 1.0)),
        subsystems=subs,
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        drift_jac_x=drift_jac_x,
        diffusion_jac_x=diffusion_jac_x,
        running_cost_grad_x=running_cost_grad_x,
        terminal_cost_grad_x=terminal_cost_grad_x,
        info_structures=info,
        x0=tuple(np.asarray(params["x0"], float)) if "x0" in params else None,
        x0_mean=tuple(np.asarray(params["x0_mean"], float)) if "x0_mean" in params else None,
        x0_std=tuple(np.asarray(params["x0_std"], float)) if "x0_std" in params else None,
        coupling=_coupling_from_matrix(subs, A + np.diag(np.abs(c))),
        actuation=_actuation_from_matrix(subs, B),
        family_tag=family.tag,
        family_parameters=dict(params),
    )


def _build_cascade(family: ModelFamily, info: tuple) -> TeamProblem:
    """Two scalar subsystems in cascade: the first evolves autonomously, the
    second is driven by the first.  Realized as a structured linear-quadratic
    problem,

        dx1 = (a1 x1 + b1 u1) dt + s1 dW1
        dx2 = (a21 x1 + a2 x2 + b21 u1 + b2 u2) dt + s2 dW2
    """
    p = dict(family.parameters)
    a1, a2 = float(p.get("a1", 0.0)), float(p.get("a2", 0.0))
    a21 = float(p.get("a21", 0.0))
    b1, b2 = float(p.get("b1", 1.0)), float(p.get("b2", 1.0))
    b21 = float(p.get("b21", 0.0))
    s1, s2 = float(p.get("s1", 1.0)), float(p.get("s2", 1.0))
    q = np.asarray(p.get("q", [1.0, 1.0]), float)
    r = np.asarray(p.get("r", [1.0, 1.0]), float)
    g = np.asarray(p.get("g", [0.0, 0.0]), float)
    lq = ModelFamily(
        tag="linear_quadratic",
        parameters={
            "state_dims": [1, 1],
            "a": [[a1, 0.0], [a21, a2]],
            "b": [[b1, 0.0], [b21, b2]],
            "noise_scale": [s1, s2],
            "q": np.diag(q).tolist(),
            "r": np.diag(r).tolist(),
            "g": np.diag(g).tolist(),
            "horizon": p.get("horizon", 1.0),
            **{k: p[k] for k in ("x0", "x0_mean", "x0_std", "action_low", "action_high") if k in p},
        },
    )
    built = _build_linear_quadratic(lq, info)
    return TeamProblem(
        **{
            **{f: getattr(built, f) for f in built.__dataclass_fields__},
            "family_tag": "cascade_ss",
            "family_parameters": dict(family.parameters),
        }
    )


def _fd_jacobians(drift, diffusion):
    """Central finite-difference derivative maps, step h_j = 1e-6 * max(1, |x_j|)."""

    def jac(fn):
        def wrapped(t, x, u):
            M, n = x.shape
            base = fn(t, x, u)
            out = np.zeros(base.shape + (n,))
            for j in range(n):
                h = 1e-6 * np.maximum(1.0, np.abs(x[:, j]))
                xp = x.copy()
                xm = x.copy()
                xp[:, j] += h
                xm[:, j] -= h
                diff = (fn(t, xp, u) - fn(t, xm, u)) / (2.0 * h).reshape((M,) + (1,) * (base.ndim - 1))
                out[..., j] = diff
            return out

        return wrapped

    return jac(drift), jac(diffusion)


def _fd_gradient(fn, with_tu: bool):
    def grad(*args):
        if with_tu:
            t, x, u = args
            call = lambda xx: fn(t, xx, u)
        else:
            (x,) = args
            call = fn
        M, n = x.shape
        out = np.zeros((M, n))
        for j in range(n):
            h = 1e-6 * np.maximum(1.0, np.abs(x[:, j]))
            xp = x.copy()
            xm = x.copy()
            xp[:, j] += h
            xm[:, j] -= h
            out[:, j] = (call(xp) - call(xm)) / (2.0 * h)
        return out

    return grad


def _build_custom(family: ModelFamily, info: tuple) -> TeamProblem:
    p = family.parameters
    for key in ("subsystems", "drift", "diffusion", "running_cost", "terminal_cost"):
        if key not in p:
            raise ModelError(f"custom family needs parameter {key!r}")
    subs = tuple(p["subsystems"])
    drift, diffusion = p["drift"], p["diffusion"]
    fjac, sjac = _fd_jacobians(drift, diffusion)
    return TeamProblem(
        horizon=float(p.get("horizon", 1.0)),
        subsystems=subs,
        drift=drift,
        diffusion=diffusion,
        running_cost=p["running_cost"],
        terminal_cost=p["terminal_cost"],
        drift_jac_x=p.get("drift_jac_x") or fjac,
        diffusion_jac_x=p.get("diffusion_jac_x") or sjac,
        running_cost_grad_x=p.get("running_cost_grad_x") or _fd_gradient(p["running_cost"], True),
        terminal_cost_grad_x=p.get("terminal_cost_grad_x") or _fd_gradient(p["terminal_cost"], False),
        info_structures=info,
        x0=tuple(np.asarray(p["x0"], float)) if "x0" in p else None,
        x0_mean=tuple(np.asarray(p["x0_mean"], float)) if "x0_mean" in p else None,
        x0_std=tuple(np.asarray(p["x0_std"], float)) if "x0_std" in p else None,
        coupling=p.get("coupling"),
        actuation=p.get("actuation"),
        family_tag="custom",
        family_parameters={},
    )


_BUILDERS = {
    "linear_quadratic": _build_linear_quadratic,
    "bilinear": _build_bilinear,
    "cascade_ss": _build_cascade,
    "custom": _build_custom,
}


def build_problem(family: ModelFamily, info: Sequence[InformationStructure]) -> TeamProblem:
    """Construct a TeamProblem from a family tag and per-DM information structures.

    Built-in families carry analytic derivative maps; the custom family falls
    back to central finite differences unless derivatives are supplied.
    Construction is deterministic and probes the maps once at a fixed point to
    catch shape mismatches early.
    """
    problem = _BUILDERS[family.tag](family, tuple(info))
    _probe_shapes(problem)
    return problem


def _probe_shapes(problem: TeamProblem) -> None:
    n, d, m = problem.state_dim, problem.action_dim, problem.noise_dim
    x = np.linspace(-1.0, 1.0, 2 * n).reshape(2, n)
    u = np.linspace(-0.5, 0.5, 2 * d).reshape(2, d)
    t = 0.5 * problem.horizon
    checks = [
        ("drift", problem.drift(t, x, u), (2, n)),
        ("diffusion", problem.diffusion(t, x, u), (2, n, m)),
        ("running_cost", problem.running_cost(t, x, u), (2,)),
        ("terminal_cost", problem.terminal_cost(x), (2,)),
        ("drift_jac_x", problem.drift_jac_x(t, x, u), (2, n, n)),
        ("diffusion_jac_x", problem.diffusion_jac_x(t, x, u), (2, n, m, n)),
        ("running_cost_grad_x", problem.running_cost_grad_x(t, x, u), (2, n)),
        ("terminal_cost_grad_x", problem.terminal_cost_grad_x(x), (2, n)),
    ]
    for name, val, shape in checks:
        if np.asarray(val).shape != shape:
            raise ModelError(f"map {name!r} returned shape {np.asarray(val).shape}, expected {shape}")


# -- sampled assumption checks ------------------------------------------------


@dataclass(frozen=True)
class AssumptionReport:
    """Max sampled Lipschitz/growth ratios.  Sampling cannot prove the
    conditions; the report is advisory and only flags gross violations."""

    drift_lipschitz: float
    drift_growth: float
    diffusion_lipschitz: float
    diffusion_growth: float
    cost_gradient_growth: float
    bound: float
    flags: tuple

    @property
    def passed(self) -> bool:
        return len(self.flags) == 0

    def to_dict(self) -> dict:
        return {
            "drift_lipschitz": self.drift_lipschitz,
            "drift_growth": self.drift_growth,
            "diffusion_lipschitz": self.diffusion_lipschitz,
            "diffusion_growth": self.diffusion_growth,
            "cost_gradient_growth": self.cost_gradient_growth,
            "bound": self.bound,
            "flags": list(self.flags),
            "passed": self.passed,
        }


def validate_assumptions(
    problem: TeamProblem,
    probe_count: int = 64,
    seed: int = 0,
    bound: float = 100.0,
) -> AssumptionReport:
    """Probe Lipschitz and linear-growth ratios of the coefficient maps.

    Probes mix moderate Gaussian states with large-radius points (|x| up to
    1e3) so superlinear maps are caught.  A non-finite evaluation anywhere is
    a hard failure reporting the probe point.
    """
    if probe_count < 2:
        raise ModelError("probe_count must be >= 2")
    rng = np.random.default_rng(seed)
    n, d = problem.state_dim, problem.action_dim
    lo, hi = problem.action_bounds()

    radii = np.concatenate(
        [np.ones(probe_count - probe_count // 4), np.full(probe_count // 4, 1e3)]
    )
    x = rng.standard_normal((probe_count, n)) * radii[:, None]
    y = x + rng.standard_normal((probe_count, n))
    u = lo + (hi - lo) * rng.random((probe_count, d))
    ts = rng.random(probe_count) * problem.horizon

    def _check_finite(name, val, k):
        if not np.all(np.isfinite(val)):
            raise ModelError(
                f"map {name!r} returned a non-finite value at probe t={ts[k]:.4g}, x={x[k]}, u={u[k]}"
            )

    lip_f = lip_s = gro_f = gro_s = gro_c = 0.0
    for k in range(probe_count):
        t = float(ts[k])
        xk, yk, uk = x[k : k + 1], y[k : k + 1], u[k : k + 1]
        fx, fy = problem.drift(t, xk, uk), problem.drift(t, yk, uk)
        sx, sy = problem.diffusion(t, xk, uk), problem.diffusion(t, yk, uk)
        gc = problem.terminal_cost_grad_x(xk) + problem.running_cost_grad_x(t, xk, uk)
        for name, val in (("drift", fx), ("drift", fy), ("diffusion", sx), ("diffusion", sy), ("cost gradients", gc)):
            _check_finite(name, val, k)
        dxy = np.linalg.norm(xk - yk)
        growth_den = 1.0 + np.linalg.norm(xk)
        if dxy > 0:
            lip_f = max(lip_f, float(np.linalg.norm(fx - fy) / dxy))
            lip_s = max(lip_s, float(np.linalg.norm(sx - sy) / dxy))
        gro_f = max(gro_f, float(np.linalg.norm(fx) / growth_den))
        gro_s = max(gro_s, float(np.linalg.norm(sx) / growth_den))
        gro_c = max(gro_c, float(np.linalg.norm(gc) / growth_den))

    ratios = {
        "drift_lipschitz": lip_f,
        "drift_growth": gro_f,
        "diffusion_lipschitz": lip_s,
        "diffusion_growth": gro_s,
        "cost_gradient_growth": gro_c,
    }
    flags = tuple(name for name, val in ratios.items() if val > bound)
    return AssumptionReport(bound=bound, flags=flags, **ratios)
