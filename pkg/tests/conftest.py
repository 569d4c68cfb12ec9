import numpy as np
import pytest

from teamsde import InformationStructure, ModelFamily, build_problem


def lq_params(a=0.0, b=1.0, q=1.0, r=1.0, g=0.0, s=1.0, x0=(1.0,), horizon=1.0, box=4.0, **extra):
    """Scalar linear-quadratic coefficient bundle."""
    params = {
        "state_dims": [1],
        "a": [[a]],
        "b": [[b]],
        "q": [[q]],
        "r": [[r]],
        "g": [[g]],
        "noise_scale": [s],
        "horizon": horizon,
        "action_low": [-box],
        "action_high": [box],
    }
    if x0 is not None:
        params["x0"] = list(x0)
    params.update(extra)
    return params


def scalar_lq(info_kind="FIS", **kw):
    params = lq_params(**kw)
    if info_kind == "FIS":
        info = [InformationStructure(kind="FIS", observed=(0,))]
    else:
        info = [InformationStructure(kind="NIS", sources=(0,))]
    return build_problem(ModelFamily("linear_quadratic", params), info)


def coupled_lq2(coupling=0.25, q=1.0, r=1.0, g=0.0, s=0.5, x0=(1.0, 1.0), horizon=1.0, own_state_only=True):
    """Two coupled scalar subsystems; by default each DM observes its own state."""
    params = {
        "state_dims": [1, 1],
        "a": [[-0.5, coupling], [coupling, -0.5]],
        "b": [[1.0, 0.0], [0.0, 1.0]],
        "q": [[q, 0.0], [0.0, q]],
        "r": [[r, 0.0], [0.0, r]],
        "g": [[g, 0.0], [0.0, g]],
        "noise_scale": [s, s],
        "x0": list(x0),
        "horizon": horizon,
        "action_low": [-4.0, -4.0],
        "action_high": [4.0, 4.0],
    }
    if own_state_only:
        info = [
            InformationStructure(kind="FIS", observed=(0,)),
            InformationStructure(kind="FIS", observed=(1,)),
        ]
    else:
        info = [
            InformationStructure(kind="FIS", observed=(0, 1)),
            InformationStructure(kind="FIS", observed=(0, 1)),
        ]
    return build_problem(ModelFamily("linear_quadratic", params), info)


def bilinear_scalar(a=0.2, b=1.0, c=0.6, q=1.0, r=1.0, g=0.5, s=0.4, slope=0.3, x0=(1.0,), horizon=1.0):
    """Scalar bilinear fixture with state-dependent diffusion (nonzero sigma_x)."""
    params = {
        "state_dims": [1],
        "a": [[a]],
        "b": [[b]],
        "c": [c],
        "q": [[q]],
        "r": [[r]],
        "g": [[g]],
        "noise_scale": [s],
        "noise_slope": [slope],
        "x0": list(x0),
        "horizon": horizon,
        "action_low": [-2.0],
        "action_high": [2.0],
    }
    info = [InformationStructure(kind="FIS", observed=(0,))]
    return build_problem(ModelFamily("bilinear", params), info)


def cascade_problem(nis=False, memory="full_path_features", **kw):
    params = dict(
        a1=-0.4, a2=-0.5, a21=0.5, b1=1.0, b2=1.0, b21=0.0,
        s1=0.6, s2=0.6, q=[0.5, 0.5], r=[1.0, 1.0], g=[0.3, 0.3],
        x0=[1.0, -0.5], horizon=1.0,
        action_low=[-3.0, -3.0], action_high=[3.0, 3.0],
    )
    params.update(kw)
    if nis:
        info = [
            InformationStructure(kind="NIS", sources=(0,), memory=memory),
            InformationStructure(kind="NIS", sources=(0, 1), memory=memory),
        ]
    else:
        info = [
            InformationStructure(kind="FIS", observed=(0,)),
            InformationStructure(kind="FIS", observed=(0, 1)),
        ]
    return build_problem(ModelFamily("cascade_ss", params), info)


def riccati_gain_profile(problem, grid, riccati):
    """Regular profile u = -K(t) x from a Riccati solution (full-state FIS info)."""
    from teamsde.strategies import StrategyProfile, initial_profile

    profile = initial_profile(problem, grid.steps)
    dms = []
    for i, dm in enumerate(profile.dms):
        a_sl = problem.action_slice(i)
        coeffs = dm.coeffs.copy()
        obs = list(problem.info_structures[i].observed)
        for k in range(grid.steps):
            K_full = riccati.gain[k]  # (d, n)
            coeffs[k, :, 0] = 0.0
            block = K_full[a_sl, :][:, obs]
            coeffs[k, :, 1 : 1 + len(obs)] = -block
        dms.append(type(dm)(features=dm.features, coeffs=coeffs))
    return StrategyProfile(dms=tuple(dms))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
