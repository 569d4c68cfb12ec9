import numpy as np
import pytest

from teamsde import (
    DiscreteTreeProblem,
    ModelError,
    TimeGrid,
    TreeStrategy,
    enumerate_team_optimum,
    solve_riccati,
    verify_discrete_smp,
)
from teamsde.baselines import expected_cost


def scalar_riccati(a=0.0, b=1.0, q=1.0, r=1.0, g=0.0, s=1.0, K=100, T=1.0, x0=1.0):
    grid = TimeGrid(steps=K, horizon=T)
    return solve_riccati(
        A=[[a]], B=[[b]], Q=[[q]], R=[[r]], G=[[g]], sigma=[[s]],
        grid=grid, x0_second_moment=[[x0**2]],
    )


def test_zero_weights_give_zero_solution():
    ric = scalar_riccati(q=0.0, g=0.0)
    assert np.all(ric.P == 0.0)
    assert np.all(ric.gain == 0.0)
    assert ric.value == 0.0


def test_scalar_riccati_closed_form_tanh():
    # -P' = 1 - P^2, P(1) = 0  =>  P(t) = tanh(1 - t)
    ric = scalar_riccati(a=0.0, b=1.0, q=1.0, r=1.0, g=0.0, K=100)
    assert ric.P[0, 0, 0] == pytest.approx(np.tanh(1.0), abs=1e-8)
    nodes = ric.grid.nodes
    assert np.allclose(ric.P[:, 0, 0], np.tanh(1.0 - nodes), atol=1e-8)
    # value = P(0) x0^2 + int tanh(1 - t) dt = tanh(1) + log(cosh(1));
    # the noise integral uses the trapezoid rule, O(dt^2) at K=100
    assert ric.value == pytest.approx(np.tanh(1.0) + np.log(np.cosh(1.0)), rel=1e-5)


def test_rk4_step_halving_self_check():
    p_100 = scalar_riccati(K=100).P[0, 0, 0]
    p_200 = scalar_riccati(K=200).P[0, 0, 0]
    assert abs(p_100 - p_200) / abs(p_200) < 1e-6


def test_riccati_symmetry_on_coupled_system():
    grid = TimeGrid(steps=80, horizon=1.0)
    ric = solve_riccati(
        A=[[-0.2, 0.7], [0.1, -0.4]],
        B=[[1.0, 0.0], [0.3, 1.0]],
        Q=[[1.0, 0.2], [0.2, 0.8]],
        R=[[1.0, 0.0], [0.0, 0.5]],
        G=[[0.5, 0.1], [0.1, 0.5]],
        sigma=[[0.6, 0.0], [0.0, 0.6]],
        grid=grid,
        x0_second_moment=np.eye(2),
    )
    for k in range(0, 81, 8):
        assert np.linalg.norm(ric.P[k] - ric.P[k].T) < 1e-10


def test_singular_control_weight_rejected():
    with pytest.raises(ModelError, match="invertible"):
        solve_riccati(
            A=[[0.0]], B=[[1.0]], Q=[[1.0]], R=[[0.0]], G=[[0.0]], sigma=[[1.0]],
            grid=TimeGrid(10, 1.0), x0_second_moment=[[1.0]],
        )


# -- discrete tree oracle -------------------------------------------------------


def two_dm_tree(q=(0.0, 0.0), r=(0.1, 0.1), g=(1.0, 1.0), coupling=0.5, periods=2):
    A = np.array([[0.0, coupling], [coupling, 0.0]])

    def drift(k, x, a):
        xv = np.asarray(x)
        return tuple(A @ xv + np.asarray(a))

    def running_cost(k, x, a):
        return float(np.dot(q, np.asarray(x) ** 2) + np.dot(r, np.asarray(a) ** 2))

    def terminal_cost(x):
        return float(np.dot(g, np.asarray(x) ** 2))

    return DiscreteTreeProblem(
        periods=periods,
        dt=0.5,
        x0=(1.0, -1.0),
        noise_scale=(1.0, 1.0),
        actions=((-1.0, 0.0, 1.0), (-1.0, 0.0, 1.0)),
        info=tuple(tuple(["blind"] + ["own"] * (periods - 1)) for _ in range(2)),
        drift=drift,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
    )


def test_zero_cost_tree_every_profile_optimal():
    tree = two_dm_tree(q=(0.0, 0.0), r=(0.0, 0.0), g=(0.0, 0.0), periods=1)
    optima, table = enumerate_team_optimum(tree)
    assert len(optima) == len(table) == 9
    for profile in optima:
        ok, violations = verify_discrete_smp(tree, profile)
        assert ok and not violations


def test_one_period_hand_computed_expectation():
    # x0 = 0, x1 = a + xi with xi = +-1, cost x1^2: E = a^2 + 1, argmin a = 0
    tree = DiscreteTreeProblem(
        periods=1,
        dt=1.0,
        x0=(0.0,),
        noise_scale=(1.0,),
        actions=((-1.0, 0.0, 1.0),),
        info=(("blind",),),
        drift=lambda k, x, a: (a[0],),
        running_cost=lambda k, x, a: 0.0,
        terminal_cost=lambda x: x[0] ** 2,
    )
    optima, table = enumerate_team_optimum(tree)
    costs = sorted(table.values())
    assert costs == pytest.approx([1.0, 2.0, 2.0])
    assert len(optima) == 1
    best = optima[0]
    assert best.action(tree, 0, 0, ()) == 0.0


def test_team_optima_satisfy_discrete_conditional_inequalities():
    tree = two_dm_tree()
    optima, table = enumerate_team_optimum(tree)
    assert len(table) == 729
    for profile in optima:
        ok, violations = verify_discrete_smp(tree, profile)
        assert ok, violations


def test_flipped_action_fails_with_located_violation():
    tree = two_dm_tree()
    optima, _ = enumerate_team_optimum(tree)
    best = optima[0]
    current = dict(best.choices[0][0])[()]
    flipped_idx = (current + 1) % 3
    flipped = best.replace(0, 0, (), flipped_idx)
    ok, violations = verify_discrete_smp(tree, flipped)
    assert not ok
    dms = {v[0] for v in violations}
    periods = {v[1] for v in violations}
    assert (0, 0) in {(v[0], v[1]) for v in violations}
    # restoring the flip is a strictly improving deviation on that cell
    assert any(v[2] == () and v[4] > 0 for v in violations if v[0] == 0 and v[1] == 0)


def test_pbp_stationary_set_can_exceed_team_optima():
    # deterministic one-shot coordination game with two local minima:
    # cost table [[0, 5], [5, 1]] -> (0,0) team optimal, (1,1) only pbp-stationary
    cost = {(-1.0, -1.0): 0.0, (-1.0, 1.0): 5.0, (1.0, -1.0): 5.0, (1.0, 1.0): 1.0}
    tree = DiscreteTreeProblem(
        periods=1,
        dt=1.0,
        x0=(0.0, 0.0),
        noise_scale=(0.0, 0.0),
        actions=((-1.0, 1.0), (-1.0, 1.0)),
        info=(("blind",), ("blind",)),
        drift=lambda k, x, a: (0.0, 0.0),
        running_cost=lambda k, x, a: cost[(a[0], a[1])],
        terminal_cost=lambda x: 0.0,
    )
    optima, table = enumerate_team_optimum(tree)
    assert len(optima) == 1
    stationary = [p for p in table if verify_discrete_smp(tree, p)[0]]
    assert len(stationary) == 2  # the optimum plus the (1, 1) trap
    assert set(optima) <= set(stationary)


def test_enumeration_budget_rejection():
    tree = two_dm_tree(periods=3)
    object.__setattr__(tree, "max_profiles", 100)
    with pytest.raises(ModelError, match="budget"):
        enumerate_team_optimum(tree)


def test_enumeration_matches_monte_carlo():
    tree = two_dm_tree()
    optima, table = enumerate_team_optimum(tree)
    profile = optima[0]
    rng = np.random.default_rng(17)
    M = 40_000
    sq = np.sqrt(tree.dt)
    costs = np.zeros(M)
    for trial in range(M):
        x = np.asarray(tree.x0)
        history = []
        c = 0.0
        for k in range(tree.periods):
            signs = rng.choice((-1, 1), size=2)
            from teamsde.baselines import _cell

            a = np.array(
                [profile.action(tree, dm, k, _cell(tree, dm, k, tuple(history))) for dm in range(2)]
            )
            c += tree.running_cost(k, tuple(x), tuple(a)) * tree.dt
            x = x + np.asarray(tree.drift(k, tuple(x), tuple(a))) * tree.dt + np.asarray(tree.noise_scale) * signs * sq
            history.append(tuple(signs))
        c += tree.terminal_cost(tuple(x))
        costs[trial] = c
    exact = expected_cost(tree, profile)
    se = costs.std(ddof=1) / np.sqrt(M)
    assert abs(costs.mean() - exact) < 3 * se
