import numpy as np
import pytest

from teamsde import (
    InformationStructure,
    ModelError,
    ModelFamily,
    SubsystemSpec,
    build_problem,
    validate_assumptions,
)
from conftest import bilinear_scalar, cascade_problem, lq_params, scalar_lq


def test_zero_lq_all_maps_vanish():
    prob = scalar_lq(a=0.0, b=0.0, q=0.0, r=0.0, g=0.0, s=0.0)
    x = np.array([[1.5], [-2.0]])
    u = np.array([[0.3], [0.7]])
    assert np.all(prob.drift(0.2, x, u) == 0)
    assert np.all(prob.diffusion(0.2, x, u) == 0)
    assert np.all(prob.running_cost(0.2, x, u) == 0)
    assert np.all(prob.terminal_cost(x) == 0)


def test_dimension_bookkeeping_two_subsystems():
    params = {
        "state_dims": [1, 1],
        "a": np.zeros((2, 2)).tolist(),
        "b": np.eye(2).tolist(),
        "q": np.eye(2).tolist(),
        "r": np.eye(2).tolist(),
        "g": np.zeros((2, 2)).tolist(),
        "noise_scale": [1.0, 1.0],
        "x0": [0.0, 0.0],
        "action_low": [-1.0, -1.0],
        "action_high": [1.0, 1.0],
    }
    info = [InformationStructure(kind="FIS", observed=(i,)) for i in range(2)]
    prob = build_problem(ModelFamily("linear_quadratic", params), info)
    assert (prob.state_dim, prob.action_dim, prob.noise_dim) == (2, 2, 2)
    assert prob.state_slice(1) == slice(1, 2)


def test_cascade_identity_diffusion():
    prob = cascade_problem(s1=1.0, s2=1.0)
    x = np.array([[0.3, -0.2]])
    u = np.array([[0.1, 0.4]])
    sig = prob.diffusion(0.7, x, u)[0]
    assert np.allclose(sig, np.eye(2))


def test_dimension_mismatch_names_offending_array():
    params = lq_params()
    params["b"] = [[1.0, 0.0]]  # wrong shape for d=1
    info = [InformationStructure(kind="FIS", observed=(0,))]
    with pytest.raises(ModelError, match="'b'"):
        build_problem(ModelFamily("linear_quadratic", params), info)


def test_action_box_invariants():
    with pytest.raises(ModelError):
        SubsystemSpec(1, 1, 1, action_low=(1.0,), action_high=(-1.0,))
    with pytest.raises(ModelError):
        SubsystemSpec(0, 1, 1, action_low=(), action_high=())


def test_lq_drift_jacobian_is_exactly_a():
    prob = scalar_lq(a=0.7, b=0.2)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 1))
    u = rng.standard_normal((8, 1))
    jac = prob.drift_jac_x(0.3, x, u)
    assert np.all(jac == 0.7)


def test_finite_difference_matches_analytic_on_builtins():
    from teamsde.model import _fd_gradient, _fd_jacobians

    for prob in (scalar_lq(a=0.5, b=1.2, q=0.8, g=0.4), bilinear_scalar()):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((16, prob.state_dim))
        u = rng.uniform(-1, 1, size=(16, prob.action_dim))
        fd_f, fd_s = _fd_jacobians(prob.drift, prob.diffusion)
        assert np.allclose(fd_f(0.3, x, u), prob.drift_jac_x(0.3, x, u), rtol=1e-5, atol=1e-7)
        assert np.allclose(fd_s(0.3, x, u), prob.diffusion_jac_x(0.3, x, u), rtol=1e-5, atol=1e-7)
        fd_lx = _fd_gradient(prob.running_cost, True)
        fd_px = _fd_gradient(prob.terminal_cost, False)
        assert np.allclose(fd_lx(0.3, x, u), prob.running_cost_grad_x(0.3, x, u), rtol=1e-5, atol=1e-7)
        assert np.allclose(fd_px(x), prob.terminal_cost_grad_x(x), rtol=1e-5, atol=1e-7)


def test_build_problem_deterministic():
    probe_x = np.linspace(-1, 1, 6).reshape(3, 2)
    probe_u = np.linspace(-0.5, 0.5, 6).reshape(3, 2)
    outs = []
    for _ in range(2):
        prob = cascade_problem()
        outs.append(
            (
                prob.drift(0.4, probe_x, probe_u).copy(),
                prob.diffusion(0.4, probe_x, probe_u).copy(),
                prob.running_cost(0.4, probe_x, probe_u).copy(),
            )
        )
    for a, b in zip(outs[0], outs[1]):
        assert np.array_equal(a, b)


def test_validate_assumptions_zero_problem_passes():
    prob = scalar_lq(a=0.0, b=0.0, q=0.0, r=0.0, g=0.0, s=0.0)
    report = validate_assumptions(prob, probe_count=32, seed=0)
    assert report.passed
    assert report.drift_lipschitz == 0.0
    assert report.diffusion_growth == 0.0


def test_validate_assumptions_linear_drift_ratio_is_coefficient():
    prob = scalar_lq(a=1.0, b=1.0)
    report = validate_assumptions(prob, probe_count=64, seed=3)
    assert report.drift_lipschitz == pytest.approx(1.0, abs=1e-9)
    assert report.passed


def test_validate_assumptions_flags_superlinear_growth():
    from teamsde.model import SubsystemSpec

    subs = (SubsystemSpec(1, 1, 1, (-1.0,), (1.0,)),)
    params = {
        "subsystems": subs,
        "drift": lambda t, x, u: x**2,
        "diffusion": lambda t, x, u: np.ones(x.shape + (1,)),
        "running_cost": lambda t, x, u: np.zeros(x.shape[0]),
        "terminal_cost": lambda x: np.zeros(x.shape[0]),
        "x0": [0.0],
    }
    prob = build_problem(
        ModelFamily("custom", params), [InformationStructure(kind="FIS", observed=(0,))]
    )
    report = validate_assumptions(prob, probe_count=64, seed=5)
    assert "drift_growth" in report.flags


def test_validate_assumptions_nonfinite_probe_is_hard_failure():
    from teamsde.model import SubsystemSpec

    subs = (SubsystemSpec(1, 1, 1, (-1.0,), (1.0,)),)
    params = {
        "subsystems": subs,
        "drift": lambda t, x, u: np.where(np.abs(x) > 10, np.nan, x),
        "diffusion": lambda t, x, u: np.ones(x.shape + (1,)),
        "running_cost": lambda t, x, u: np.zeros(x.shape[0]),
        "terminal_cost": lambda x: np.zeros(x.shape[0]),
        "x0": [0.0],
    }
    prob = build_problem(
        ModelFamily("custom", params), [InformationStructure(kind="FIS", observed=(0,))]
    )
    with pytest.raises(ModelError, match="non-finite"):
        validate_assumptions(prob, probe_count=64, seed=5)


def test_probe_count_minimum():
    with pytest.raises(ModelError):
        validate_assumptions(scalar_lq(), probe_count=1)


def test_info_structure_validation():
    with pytest.raises(ModelError):
        InformationStructure(kind="NIS", sources=())
    with pytest.raises(ModelError):
        InformationStructure(kind="FIS", observed=())
    with pytest.raises(ModelError):
        InformationStructure(kind="XYZ")
    info = InformationStructure(kind="FIS", observed=(0, 1), obs_matrix=((1.0, -1.0),))
    assert info.output_dim() == 1
