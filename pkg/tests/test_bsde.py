import numpy as np
import pytest

from teamsde import TimeGrid, check_q_identity, riccati_from_family, simulate_forward, solve_adjoint
from teamsde.bsde import hamiltonian_grad_x
from teamsde.strategies import initial_profile
from conftest import bilinear_scalar, riccati_gain_profile, scalar_lq


def test_zero_cost_gives_identically_zero_adjoint():
    prob = scalar_lq(q=0.0, r=0.0, g=0.0, s=0.8)
    grid = TimeGrid(steps=15, horizon=1.0)
    profile = initial_profile(prob, 15)
    ens = simulate_forward(prob, profile, grid, 300, seed=0)
    adj = solve_adjoint(prob, profile, ens)
    assert np.all(adj.psi == 0.0)
    assert np.all(adj.Q == 0.0)


def test_terminal_condition_exact_per_path():
    prob = scalar_lq(g=0.7, s=0.8)
    grid = TimeGrid(steps=10, horizon=1.0)
    profile = initial_profile(prob, 10)
    ens = simulate_forward(prob, profile, grid, 200, seed=1)
    adj = solve_adjoint(prob, profile, ens)
    expected = prob.terminal_cost_grad_x(ens.states[:, -1])
    assert np.array_equal(adj.psi[:, -1], expected)


@pytest.fixture(scope="module")
def lq_adjoint_fixture():
    # random initial state so every step's regression design has spread
    prob = scalar_lq(a=0.0, b=1.0, q=1.0, r=1.0, g=0.0, s=1.0, x0=None,
                     x0_mean=[1.0], x0_std=[0.5])
    grid = TimeGrid(steps=50, horizon=1.0)
    ric = riccati_from_family(prob.family_parameters, grid)
    profile = riccati_gain_profile(prob, grid, ric)
    ens = simulate_forward(prob, profile, grid, 10_000, seed=21)
    adj = solve_adjoint(prob, profile, ens)
    return prob, grid, ric, profile, ens, adj


def test_lq_psi_matches_riccati_oracle(lq_adjoint_fixture):
    # under the optimal feedback, psi(t) = 2 P(t) x(t); relative L2 error <= 5%
    prob, grid, ric, profile, ens, adj = lq_adjoint_fixture
    target = 2.0 * ric.P[None, :-1, 0, 0] * ens.states[:, :-1, 0]
    err = np.linalg.norm(adj.psi[:, :-1, 0] - target) / np.linalg.norm(target)
    assert err < 0.05


def test_lq_q_matches_psi_x_sigma(lq_adjoint_fixture):
    # constant sigma: Q(t) = psi_x sigma = 2 P(t) s, within 10% L2
    prob, grid, ric, profile, ens, adj = lq_adjoint_fixture
    target = 2.0 * ric.P[None, :-1, 0, 0] * np.ones_like(adj.Q[:, :, 0, 0])
    err = np.linalg.norm(adj.Q[:, :, 0, 0] - target) / np.linalg.norm(target)
    assert err < 0.10


def test_q_identity_zero_for_zero_adjoint():
    prob = scalar_lq(q=0.0, r=0.0, g=0.0, s=0.8)
    grid = TimeGrid(steps=12, horizon=1.0)
    profile = initial_profile(prob, 12)
    ens = simulate_forward(prob, profile, grid, 200, seed=2)
    adj = solve_adjoint(prob, profile, ens)
    report = check_q_identity(prob, profile, ens, adj)
    assert report.overall == 0.0


def test_q_identity_lq_within_ten_percent(lq_adjoint_fixture):
    prob, grid, ric, profile, ens, adj = lq_adjoint_fixture
    report = check_q_identity(prob, profile, ens, adj)
    assert report.overall < 0.10


def test_q_identity_nonlinear_fixture_reports_without_tolerance():
    prob = bilinear_scalar()
    grid = TimeGrid(steps=20, horizon=1.0)
    profile = initial_profile(prob, 20)
    ens = simulate_forward(prob, profile, grid, 1000, seed=3)
    adj = solve_adjoint(prob, profile, ens)
    report = check_q_identity(prob, profile, ens, adj)
    assert np.isfinite(report.overall)
    assert len(report.per_step) == 20


def test_psi_update_residuals_orthogonal_to_features():
    prob = scalar_lq(a=0.2, q=1.0, g=0.5, s=0.7, x0=None, x0_mean=[1.0], x0_std=[0.4])
    grid = TimeGrid(steps=8, horizon=1.0)
    profile = initial_profile(prob, 8)
    ens = simulate_forward(prob, profile, grid, 2000, seed=4)
    adj = solve_adjoint(prob, profile, ens)
    k = 6
    from teamsde.condexp import FeatureMap
    from teamsde.model import full_information

    F = FeatureMap(full_information(prob)).matrix(ens, k)
    controls = profile.controls_at(prob, ens, k)
    hx = hamiltonian_grad_x(prob, float(grid.nodes[k]), ens.states[:, k], adj.psi[:, k + 1], adj.Q[:, k], controls)
    target = adj.psi[:, k + 1] + hx * grid.dt
    resid = target[:, 0] - adj.psi[:, k, 0]
    lam = adj.fits[k]["psi"]["ridge"]
    # normal equations: F'(y - F beta) = lambda beta
    lhs = F.T @ resid
    fitted_beta = np.linalg.lstsq(F, adj.psi[:, k, 0], rcond=None)[0]
    rhs = lam * fitted_beta
    assert np.linalg.norm(lhs - rhs) / max(np.linalg.norm(F.T @ target[:, 0]), 1e-12) < 1e-6


def test_vq_contraction_for_state_dependent_diffusion():
    # bilinear family with a = c = 0 and q = 0: Hx reduces to V_Q = slope * Q
    prob = bilinear_scalar(a=0.0, c=0.0, q=0.0, g=0.5, s=0.4, slope=0.3)
    x = np.array([[0.7], [1.3]])
    psi = np.array([[1.1], [-0.4]])
    Q = np.array([[[0.9]], [[2.0]]])
    controls = [("dirac", np.zeros((2, 1)))]
    hx = hamiltonian_grad_x(prob, 0.2, x, psi, Q, controls)
    assert np.allclose(hx, 0.3 * Q[:, :, 0])


def test_grid_refinement_reduces_psi0_error():
    # error vs the Riccati oracle must not grow beyond the MC noise band as
    # the grid refines; the coarse K=5 point shows the bias above the noise
    prob = scalar_lq(a=0.0, b=1.0, q=1.0, r=1.0, g=0.0, s=1.0, x0=None,
                     x0_mean=[1.0], x0_std=[0.5])
    errors = {}
    for K in (5, 25, 50, 100):
        grid = TimeGrid(steps=K, horizon=1.0)
        ric = riccati_from_family(prob.family_parameters, grid)
        profile = riccati_gain_profile(prob, grid, ric)
        ens = simulate_forward(prob, profile, grid, 100_000, seed=31)
        adj = solve_adjoint(prob, profile, ens)
        target = 2.0 * ric.P[0, 0, 0] * ens.states[:, 0, 0]
        errors[K] = np.linalg.norm(adj.psi[:, 0, 0] - target) / np.linalg.norm(target)
    noise_band = 5e-3
    assert errors[50] <= errors[25] + noise_band
    assert errors[100] <= errors[50] + noise_band
    assert errors[5] > errors[100]
    assert all(err < 0.02 for err in errors.values())


def test_adjoint_csv_export(tmp_path):
    prob = scalar_lq(g=0.5, s=0.6)
    grid = TimeGrid(steps=3, horizon=1.0)
    profile = initial_profile(prob, 3)
    ens = simulate_forward(prob, profile, grid, 4, seed=5)
    adj = solve_adjoint(prob, profile, ens)
    path = tmp_path / "adjoint.csv"
    adj.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "path,step,psi0,Q0_0"
    assert len(lines) == 1 + 4 * 4
