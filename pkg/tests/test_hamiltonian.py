import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from teamsde import (
    ModelError,
    TimeGrid,
    conditional_hamiltonian,
    hamiltonian,
    minimize_conditional,
    simulate_forward,
    solve_adjoint,
    stationarity_gap,
)
from teamsde.condexp import FeatureMap
from teamsde.hamiltonian import ConditionalHamiltonianTable, argmin_actions
from teamsde.strategies import RelaxedControl, action_atoms, initial_profile, measure_entropy
from conftest import riccati_gain_profile, scalar_lq


def test_hamiltonian_zero_case():
    prob = scalar_lq(a=1.0, b=1.0, q=1.0, r=1.0, s=1.0)
    val = hamiltonian(prob, 0.0, np.zeros(1), np.zeros(1), np.zeros((1, 1)), np.zeros(1))
    assert val == 0.0


def test_hamiltonian_hand_value():
    # a=1, b=1, s=1, q=1, r=1; xi=1, zeta=2, M=3, u=0.5:
    # <f, zeta> = (1 + 0.5) * 2 = 3, tr(M sigma) = 3, cost = 1 + 0.25
    prob = scalar_lq(a=1.0, b=1.0, q=1.0, r=1.0, s=1.0)
    val = hamiltonian(prob, 0.3, np.array([1.0]), np.array([2.0]), np.array([[3.0]]), np.array([0.5]))
    assert val == pytest.approx(7.25, abs=1e-12)


def test_hamiltonian_relaxed_symmetric_measure():
    prob = scalar_lq(a=1.0, b=1.0, q=1.0, r=1.0, s=1.0)
    measure = [(np.array([[-1.0], [1.0]]), np.array([0.5, 0.5]))]
    val = hamiltonian(prob, 0.0, np.zeros(1), np.zeros(1), np.zeros((1, 1)), measure)
    assert val == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(w=st.floats(0.01, 0.99), xi=st.floats(-2, 2), zeta=st.floats(-2, 2))
def test_hamiltonian_linear_in_measure(w, xi, zeta):
    prob = scalar_lq(a=0.7, b=1.2, q=0.9, r=1.4, s=0.8)
    atoms = np.array([[-1.0], [0.8]])
    weights = np.array([w, 1.0 - w])
    mmat = np.array([[0.4]])
    mixed = hamiltonian(prob, 0.2, np.array([xi]), np.array([zeta]), mmat, [(atoms, weights)])
    parts = [
        hamiltonian(prob, 0.2, np.array([xi]), np.array([zeta]), mmat, atoms[j]) for j in range(2)
    ]
    assert mixed == pytest.approx(w * parts[0] + (1 - w) * parts[1], rel=1e-12, abs=1e-12)


@pytest.fixture(scope="module")
def lq_table_fixture():
    prob = scalar_lq(a=0.3, b=1.0, q=1.0, r=1.0, g=0.5, s=0.8, x0=None, x0_mean=[1.0], x0_std=[0.4])
    grid = TimeGrid(steps=10, horizon=1.0)
    profile = initial_profile(prob, 10)
    ens = simulate_forward(prob, profile, grid, 2000, seed=5)
    adj = solve_adjoint(prob, profile, ens)
    return prob, grid, profile, ens, adj


def test_conditional_table_single_path_equals_raw_hamiltonian():
    prob = scalar_lq(a=0.3, b=1.0, q=1.0, r=1.0, g=0.5, s=0.8)
    grid = TimeGrid(steps=5, horizon=1.0)
    profile = initial_profile(prob, 5)
    ens = simulate_forward(prob, profile, grid, 1, seed=6)
    adj = solve_adjoint(prob, profile, ens)
    cands = np.array([[-0.5], [0.0], [0.5]])
    table = conditional_hamiltonian(
        prob, 0, 2, cands, ens, adj, profile, profile.dms[0].features
    )
    raw = [
        hamiltonian(prob, float(grid.nodes[2]), ens.states[0, 2], adj.psi[0, 2], adj.Q[0, 2], c)
        for c in cands
    ]
    assert np.allclose(table.cond_values[0], raw)


def test_lq_candidate_dependence_quadratic_with_constant_curvature(lq_table_fixture):
    prob, grid, profile, ens, adj = lq_table_fixture
    cands = action_atoms(prob, 0, 9)
    table = conditional_hamiltonian(prob, 0, 4, cands, ens, adj, profile, profile.dms[0].features)
    r = 1.0
    for p in (0, 57, 1234):
        coeffs = np.polyfit(cands[:, 0], table.cond_values[p], 2)
        # exact up to the default ridge shrinkage (lambda ~ 1e-8 trace)
        assert coeffs[0] == pytest.approx(r, rel=1e-5)


def test_identical_candidates_give_identical_columns(lq_table_fixture):
    prob, grid, profile, ens, adj = lq_table_fixture
    cands = np.array([[0.25], [0.25], [0.25]])
    table = conditional_hamiltonian(prob, 0, 3, cands, ens, adj, profile, profile.dms[0].features)
    assert np.array_equal(table.cond_values[:, 0], table.cond_values[:, 1])
    assert np.array_equal(table.cond_values[:, 0], table.cond_values[:, 2])


def test_candidates_outside_box_rejected(lq_table_fixture):
    prob, grid, profile, ens, adj = lq_table_fixture
    with pytest.raises(ModelError, match="action box"):
        conditional_hamiltonian(
            prob, 0, 0, np.array([[99.0]]), ens, adj, profile, profile.dms[0].features
        )


def _quadratic_table(problem, psi_hat, r, grid_points=21):
    cands = action_atoms(problem, 0, grid_points)
    a = cands[:, 0]
    vals = psi_hat * a + r * a**2
    M = 7
    cond = np.tile(vals, (M, 1))
    return ConditionalHamiltonianTable(
        dm=0, time_index=0, candidates=cands, cond_values=cond,
        own_values=None, mean_fallback=False, residual_se=0.0,
    )


def test_argmin_clips_to_action_box():
    # b psi u + r u^2 with psi = 2, r = 1 on A = [-1, 1]: stationary point -1
    prob = scalar_lq(box=1.0)
    table = _quadratic_table(prob, psi_hat=2.0, r=1.0)
    best = argmin_actions(prob, 0, table)
    assert np.allclose(best, -1.0)


def test_argmin_symmetric_minimum_at_zero():
    prob = scalar_lq(box=1.0)
    table = _quadratic_table(prob, psi_hat=0.0, r=1.0)
    best = argmin_actions(prob, 0, table)
    assert np.allclose(best, 0.0, atol=1e-12)


def test_argmin_interior_quadratic_refinement_is_exact():
    # vertex at -psi/(2r) = -0.3, off the grid; the parabola fit recovers it
    prob = scalar_lq(box=1.0)
    table = _quadratic_table(prob, psi_hat=0.6, r=1.0, grid_points=7)
    best = argmin_actions(prob, 0, table)
    assert np.allclose(best, -0.3, atol=1e-10)


def test_relaxed_minimizer_is_point_mass(lq_table_fixture):
    prob, grid, profile, ens, adj = lq_table_fixture
    relaxed = initial_profile(prob, grid.steps, mode="relaxed", atom_grid=9)
    dm0 = relaxed.dms[0]
    table = conditional_hamiltonian(prob, 0, 4, dm0.atoms, ens, adj, relaxed, dm0.features)
    weights = minimize_conditional(prob, 0, 4, table, "relaxed", relaxed, ens)
    assert weights.shape == dm0.weights[4].shape
    assert np.all(np.isin(weights, (0.0, 1.0)))
    assert np.allclose(weights.sum(axis=1), 1.0)
    updated = dm0.with_step(4, weights)
    assert measure_entropy(updated) == 0.0


def test_argmin_invariant_under_positive_cost_scaling():
    scale = 3.0
    base_kw = dict(a=0.3, b=1.0, s=0.8, x0=None, x0_mean=[1.0], x0_std=[0.4])
    prob1 = scalar_lq(q=1.0, r=1.0, g=0.5, **base_kw)
    prob2 = scalar_lq(q=scale, r=scale, g=scale * 0.5, **base_kw)
    grid = TimeGrid(steps=8, horizon=1.0)
    profile = initial_profile(prob1, 8)
    cands = action_atoms(prob1, 0, 11)
    argmins = []
    tables = []
    for prob in (prob1, prob2):
        ens = simulate_forward(prob, profile, grid, 1500, seed=7)
        adj = solve_adjoint(prob, profile, ens)
        table = conditional_hamiltonian(prob, 0, 3, cands, ens, adj, profile, profile.dms[0].features)
        tables.append(table)
        argmins.append(argmin_actions(prob, 0, table))
    assert np.allclose(tables[1].cond_values, scale * tables[0].cond_values, rtol=1e-9)
    assert np.allclose(argmins[0], argmins[1], atol=1e-9)


def test_stationarity_gap_nonnegative_and_additive(lq_table_fixture):
    prob, grid, profile, ens, adj = lq_table_fixture
    report = stationarity_gap(prob, profile, ens, adj, atom_grid=9)
    assert all(g >= 0.0 for g in report.per_dm)
    assert report.team_gap == pytest.approx(sum(report.per_dm), abs=0.0)


def test_gap_small_at_riccati_optimum():
    from teamsde import riccati_from_family

    prob = scalar_lq(a=0.0, b=1.0, q=1.0, r=1.0, g=0.0, s=1.0, x0=None, x0_mean=[1.0], x0_std=[0.5])
    grid = TimeGrid(steps=25, horizon=1.0)
    ric = riccati_from_family(prob.family_parameters, grid)
    profile = riccati_gain_profile(prob, grid, ric)
    ens = simulate_forward(prob, profile, grid, 10_000, seed=9)
    adj = solve_adjoint(prob, profile, ens)
    report = stationarity_gap(prob, profile, ens, adjoint=adj, atom_grid=9)
    assert report.team_gap < 1e-2


def test_relaxed_control_simplex_violation_rejected():
    prob = scalar_lq()
    relaxed = initial_profile(prob, 4, mode="relaxed", atom_grid=5)
    dm0 = relaxed.dms[0]
    bad = dm0.weights.copy()
    bad[0, 0, :] = 0.3
    with pytest.raises(ModelError, match="sum to 1"):
        RelaxedControl(features=dm0.features, atoms=dm0.atoms, bin_edges=dm0.bin_edges, weights=bad)
