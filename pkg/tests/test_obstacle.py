import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import active_set_two_obstacle
from orliczvi import DiscreteOperator, Field, ObstacleProblem
from orliczvi.assembly import apply_A, solve_equation
from orliczvi.mesh import sup_norm
from orliczvi.obstacle import (InfeasibleProblemError, project_box, solve_one_obstacle,
                               solve_two_obstacle, verify_comparison, verify_lewy_stampacchia,
                               verify_linf_dependence)
from orliczvi.young import PowerLaw
from problems import STRUCTURALS, grid_1d, grid_2d, random_obstacle_problem


def op_1d(n=33, p=2.0, scheme="edge"):
    return DiscreteOperator(grid_1d(n), PowerLaw(p), scheme)


# -- problem construction and projection ----------------------------------------------


def test_crossing_obstacles_name_the_node():
    g = grid_1d(5)
    psi = Field(g, [0, 0, 0.3, 0, 0])
    phi = Field(g, [0, 0, 0.1, 0, 0])
    with pytest.raises(InfeasibleProblemError, match="node 2"):
        ObstacleProblem(Field.zeros(g), psi, phi)


def test_boundary_admissibility_is_checked():
    g = grid_1d(5)
    with pytest.raises(InfeasibleProblemError, match="boundary"):
        ObstacleProblem(Field.zeros(g), psi=Field.constant(g, 0.1))


def test_markers_default_to_infinity():
    g = grid_1d(5)
    prob = ObstacleProblem(Field.zeros(g))
    assert np.all(prob.psi.values == -np.inf) and np.all(prob.phi.values == np.inf)
    with pytest.raises(InfeasibleProblemError):
        ObstacleProblem(Field.zeros(g), psi=Field.constant(g, np.inf))


def test_project_box_examples():
    g = grid_1d(3)
    prob = ObstacleProblem(Field.zeros(g), Field(g, [0, 0, 0]), Field(g, [1, 1, 1]))
    assert list(project_box(Field(g, [-1, 0.5, 2]), prob).values) == [0, 0.5, 1]
    inside = Field(g, [0.2, 0.3, 0.9])
    assert np.array_equal(project_box(inside, prob).values, inside.values)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_projection_is_idempotent_and_nonexpansive(seed):
    rng = np.random.default_rng(seed)
    g = grid_1d(9)
    prob = random_obstacle_problem(g, rng)
    u, v = Field(g, rng.normal(size=g.size)), Field(g, rng.normal(size=g.size))
    pu, pv = project_box(u, prob), project_box(v, prob)
    assert np.array_equal(project_box(pu, prob).values, pu.values)
    assert sup_norm(pu - pv) <= sup_norm(u - v)


# -- solver ---------------------------------------------------------------------------


def test_pinned_obstacles_give_zero():
    op = op_1d(17)
    g = op.grid
    prob = ObstacleProblem(Field.constant(g, 50.0), Field.zeros(g), Field.zeros(g))
    u, rep = solve_two_obstacle(op, prob)
    assert rep.converged and np.all(u.values == 0)


def test_zero_force_gives_zero():
    op = DiscreteOperator(grid_2d(9), PowerLaw(3))
    g = op.grid
    prob = ObstacleProblem(Field.zeros(g), Field.constant(g, -0.5), Field.constant(g, 0.5))
    u, rep = solve_two_obstacle(op, prob)
    assert rep.converged and sup_norm(u) <= 1e-12


def test_upper_obstacle_matches_active_set_oracle():
    op = op_1d(9)
    g = op.grid
    phi = Field.constant(g, 0.5)
    u, rep = solve_two_obstacle(op, ObstacleProblem(Field.constant(g, 8.0), phi=phi), tol=1e-12)
    ref, count = active_set_two_obstacle(np.full(7, 8.0), np.full(7, -np.inf), np.full(7, 0.5), 9)
    assert count == 1
    assert np.max(np.abs(u.values[1:-1] - ref)) <= 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_random_two_obstacle_matches_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    op = op_1d(9)
    prob = random_obstacle_problem(op.grid, rng)
    u, rep = solve_two_obstacle(op, prob, tol=1e-12)
    psi, phi = prob.bounds_interior()
    ref, _ = active_set_two_obstacle(prob.f.values[1:-1], psi, phi, 9)
    assert np.max(np.abs(u.values[1:-1] - ref)) <= 1e-8


@pytest.mark.parametrize("scheme", ["edge", "p1"])
@pytest.mark.parametrize("name", list(STRUCTURALS))
def test_feasibility_and_uniqueness(scheme, name):
    rng = np.random.default_rng(7)
    g = grid_2d(9)
    op = DiscreteOperator(g, STRUCTURALS[name](), scheme)
    prob = random_obstacle_problem(g, rng)
    tol = 1e-8
    u, rep = solve_two_obstacle(op, prob, tol)
    assert rep.converged
    assert np.all(u.values >= prob.psi.values - 1e-14)
    assert np.all(u.values <= prob.phi.values + 1e-14)
    assert np.all(u.values[g.boundary_mask] == 0)
    start = project_box(Field(g, np.where(np.isfinite(prob.phi.values), prob.phi.values, 1.0)), prob)
    u2, rep2 = solve_two_obstacle(op, prob, tol, u0=start)
    assert rep2.converged and sup_norm(u - u2) <= 10 * tol


def test_inactive_obstacle_gives_unconstrained_solution():
    op = op_1d(33, p=3.0)
    f = Field.constant(op.grid, 4.0)
    u_free, _ = solve_equation(op, f, tol=1e-10)
    u, rep = solve_two_obstacle(op, ObstacleProblem(f, phi=Field.constant(op.grid, 1e6)), tol=1e-10)
    assert sup_norm(u - u_free) <= 1e-8


def test_nonconvergence_is_reported():
    op = op_1d(33, p=1.5)
    prob = random_obstacle_problem(op.grid, np.random.default_rng(1))
    _, rep = solve_two_obstacle(op, prob, max_iter=2)
    assert not rep.converged


# -- one-obstacle reductions ----------------------------------------------------------


def test_lower_obstacle_below_free_solution_is_inactive():
    op = op_1d(33, p=3.0)
    g = op.grid
    f = Field.constant(g, 6.0)
    x = g.coords[:, 0]
    psi = Field(g, -x * (1 - x))  # A psi <= f and psi below the free solution
    assert np.all(apply_A(op, psi).values <= f.values[op.interior])
    u_free, _ = solve_equation(op, f, tol=1e-10)
    u, _ = solve_one_obstacle(op, f, psi, "lower", tol=1e-10)
    assert sup_norm(u - u_free) <= 1e-8
    rep = verify_lewy_stampacchia(op, u, ObstacleProblem(f, psi=psi), 1e-6)
    assert rep.passed


def test_upper_one_obstacle_reduction():
    # A psi <= f: the lower obstacle never binds, so two- and one-obstacle solutions agree
    op = op_1d(33, p=2.0)
    g = op.grid
    x = g.coords[:, 0]
    f = Field.constant(g, 8.0)
    psi = Field(g, -2 * x * (1 - x))
    phi = Field(g, 0.2 + 0.1 * np.sin(3 * np.pi * x))
    phi.values[[0, -1]] = np.maximum(phi.values[[0, -1]], 0)
    u2, _ = solve_two_obstacle(op, ObstacleProblem(f, psi, phi), tol=1e-10)
    u1, _ = solve_one_obstacle(op, f, phi, "upper", tol=1e-10)
    assert sup_norm(u1 - u2) <= 1e-8


def test_bad_side_is_rejected():
    op = op_1d(9)
    with pytest.raises(ValueError):
        solve_one_obstacle(op, Field.zeros(op.grid), Field.zeros(op.grid), "middle")


# -- Lewy-Stampacchia -----------------------------------------------------------------


def test_ls_inactive_obstacles_saturate_at_f():
    op = op_1d(17)
    g = op.grid
    f = Field.constant(g, 3.0)
    u, _ = solve_equation(op, f, tol=1e-11)
    rep = verify_lewy_stampacchia(op, u, ObstacleProblem(f), 1e-9)
    assert rep.passed


def test_ls_pinned_problem():
    op = op_1d(17)
    g = op.grid
    f = Field(g, np.linspace(-5, 5, g.size))
    prob = ObstacleProblem(f, Field.zeros(g), Field.zeros(g))
    u, _ = solve_two_obstacle(op, prob)
    assert verify_lewy_stampacchia(op, u, prob, 0.0).passed


@pytest.mark.parametrize("name", list(STRUCTURALS))
def test_ls_edge_scheme_random(name):
    rng = np.random.default_rng(42)
    for g in (grid_1d(33), grid_2d(13)):
        op = DiscreteOperator(g, STRUCTURALS[name]())
        for _ in range(3):
            prob = random_obstacle_problem(g, rng)
            u, rep = solve_two_obstacle(op, prob, 1e-8)
            assert rep.converged
            ls = verify_lewy_stampacchia(op, u, prob, 1e3 * 1e-8)
            assert ls.passed, ls


def test_ls_detects_a_wrong_solution():
    op = op_1d(17)
    g = op.grid
    f = Field.constant(g, 8.0)
    prob = ObstacleProblem(f, phi=Field.constant(g, 0.5))
    wrong = Field(g, np.where(g.boundary_mask, 0.0, 0.5))
    rep = verify_lewy_stampacchia(op, wrong, prob, 1e-6)
    assert not rep.passed and rep.upper_violation > 1


# -- comparison, L-infinity dependence, data convergence ----------------------------


def test_comparison_identical_data():
    op = op_1d(17, p=3.0)
    prob = random_obstacle_problem(op.grid, np.random.default_rng(0))
    rep = verify_comparison(op, prob, prob)
    assert rep.passed and sup_norm(rep.u - rep.u_hat) <= 1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(STRUCTURALS)))
def test_comparison_shifted_force(seed, name):
    rng = np.random.default_rng(seed)
    g = grid_1d(17)
    op = DiscreteOperator(g, STRUCTURALS[name]())
    prob = random_obstacle_problem(g, rng)
    lower = ObstacleProblem(prob.f - 1.0, prob.psi, prob.phi)
    assert verify_comparison(op, prob, lower, tol=1e-6).passed


def test_raising_inactive_lower_obstacle_changes_nothing():
    op = op_1d(33, p=2.0)
    g = op.grid
    f = Field.constant(g, 8.0)
    psi = Field.constant(g, -1.0)
    psi.values[[0, -1]] = 0.0
    raised = psi + 0.1
    raised.values[[0, -1]] = 0.0
    rep = verify_comparison(op, ObstacleProblem(f, raised), ObstacleProblem(f, psi), tol=1e-6)
    assert rep.passed and sup_norm(rep.u - rep.u_hat) <= 1e-6


def test_comparison_rejects_unordered_data():
    op = op_1d(9)
    prob = random_obstacle_problem(op.grid, np.random.default_rng(0))
    with pytest.raises(ValueError):
        verify_comparison(op, ObstacleProblem(prob.f - 1.0, prob.psi, prob.phi), prob)


def test_linf_constant_shift():
    op = op_1d(33, p=3.0)
    g = op.grid
    f = Field.constant(g, 20.0)
    x = g.coords[:, 0]
    phi = Field(g, 0.1 + 0.5 * x * (1 - x))
    c = 0.05
    rep = verify_linf_dependence(op, ObstacleProblem(f, phi=phi), ObstacleProblem(f, phi=phi + c))
    assert rep.passed and rep.details["gap"] <= c + 1e-6
    rep = verify_linf_dependence(op, ObstacleProblem(f, phi=phi), ObstacleProblem(f, phi=phi))
    assert rep.passed and rep.details["gap"] <= 1e-6


def test_linf_requires_same_force():
    op = op_1d(9)
    g = op.grid
    with pytest.raises(ValueError):
        verify_linf_dependence(op, ObstacleProblem(Field.zeros(g)), ObstacleProblem(Field.constant(g, 1.0)))


def test_data_convergence_is_monotone():
    op = op_1d(33, p=2.0)
    g = op.grid
    rng = np.random.default_rng(9)
    prob = random_obstacle_problem(g, rng)
    eta = np.abs(rng.normal(size=g.size))
    eta[g.boundary_mask] = 0.0
    tol = 1e-9
    u, _ = solve_two_obstacle(op, prob, tol)
    gaps = []
    for m in range(0, 12, 2):
        shift = Field(g, 2.0**-m * eta)
        pm = ObstacleProblem(prob.f, prob.psi + shift, prob.phi + shift)
        um, _ = solve_two_obstacle(op, pm, tol)
        gaps.append(sup_norm(um - u))
    assert all(b <= a + tol for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 2.0**-10 * eta.max() + 10 * tol
