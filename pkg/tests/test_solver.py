import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from causalvp.fgeometry import ModelParams
from causalvp.measures import ConstraintSpec, action_S, action_T, constraint_residuals
from causalvp.measures import scale_measure
from causalvp.solver import SolverConfig, _spg, estimate_cmin, minimize, penalized_objective, project_simplex

from conftest import P21, delta, random_measure

FAST = SolverConfig(N=3, restarts=1, max_iters=1500, outer_iters=15)


# -- simplex projection ---------------------------------------------------------


def test_simplex_examples():
    assert np.array_equal(project_simplex([1.0, 0.0]), [1.0, 0.0])
    assert np.allclose(project_simplex([2.0, 0.0]), [1.0, 0.0])
    assert np.allclose(project_simplex([0.3, 0.3, 0.3]), [1 / 3] * 3)
    with pytest.raises(ValueError):
        project_simplex([])
    with pytest.raises(ValueError):
        project_simplex([1.0, np.inf])
    assert np.allclose(project_simplex([1e300, -1e300, 3.0]), [1.0, 0.0, 0.0])


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=12))
def test_simplex_projection_is_nearest_point(v):
    v = np.array(v)
    p = project_simplex(v)
    assert np.all(p >= 0)
    assert math.isclose(p.sum(), 1.0, rel_tol=1e-12)
    # optimality: <v - p, q - p> <= 0 for every vertex q of the simplex
    d = v - p
    assert np.all(d - d @ p <= 1e-9 * max(1.0, np.abs(v).max()))
    assert np.allclose(project_simplex(p), p, atol=1e-15)


def active_set_projection(v):
    """Oracle: try every support pattern, keep the closest feasible candidate."""
    v = np.asarray(v, dtype=float)
    best, dist = None, math.inf
    for mask in range(1, 2 ** len(v)):
        on = np.array([(mask >> i) & 1 for i in range(len(v))], dtype=bool)
        p = np.zeros_like(v)
        p[on] = v[on] - (v[on].sum() - 1.0) / on.sum()
        if np.all(p >= 0) and np.sum((p - v) ** 2) < dist:
            best, dist = p, np.sum((p - v) ** 2)
    return best


def test_simplex_example_against_active_set_oracle():
    assert np.allclose(project_simplex([0.6, 0.6, -0.4]), active_set_projection([0.6, 0.6, -0.4]), atol=1e-15)
    assert np.allclose(project_simplex([0.6, 0.6, -0.4]), [0.5, 0.5, 0.0])


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_simplex_matches_active_set_oracle(v):
    assert np.allclose(project_simplex(v), active_set_projection(v), atol=1e-12)


# -- penalized objective -------------------------------------------------------------


@pytest.mark.parametrize("objective,kn,C", [("S", (2, 1), math.inf), ("S", (3, 1), 1.0), ("T", (2, 1), math.inf), ("S", (4, 2), 50.0)])
def test_penalized_gradient_matches_finite_differences(objective, kn, C):
    rng = np.random.default_rng(3)
    p = ModelParams(*kn)
    rho = random_measure(rng, p, 3)
    spec = ConstraintSpec.identity(p.k, C) if kn == (3, 1) else ConstraintSpec.trace(p.k, C)
    prob, v = penalized_objective(p, spec, rho, objective, nu=rng.normal(size=spec.L), mu=3.0, kb=0.5, mub=2.0)
    f, g = prob.value_grad(v)
    f2, gfd = prob.value_grad_fd(v, 1e-6)
    assert math.isclose(f, f2, rel_tol=1e-12)
    assert np.allclose(g, gfd, rtol=1e-5, atol=1e-6 * np.abs(g).max())


def feasible_measure(rng, p, N):
    while True:
        rho = random_measure(rng, p, N)
        tau = sum(w * x.trace() for x, w in zip(rho.points, rho.weights))
        if tau > 0:
            return scale_measure(tau / p.k, rho)


def test_gradient_matches_finite_differences_at_random_feasible_points():
    rng = np.random.default_rng(11)
    spec = ConstraintSpec.trace(2, C=5.0)
    worst = 0.0
    for _ in range(100):
        rho = feasible_measure(rng, P21, 3)
        prob, v = penalized_objective(P21, spec, rho, "S", nu=None, mu=1.0, kb=0.5, mub=2.0)
        _, g = prob.value_grad(v)
        _, gfd = prob.value_grad_fd(v, 1e-6)
        worst = max(worst, np.linalg.norm(g - gfd) / np.linalg.norm(g))
    assert worst <= 1e-4


def test_local_phase_is_monotone():
    rng = np.random.default_rng(5)
    spec = ConstraintSpec.trace(2, C=7.0)
    prob, v = penalized_objective(P21, spec, feasible_measure(rng, P21, 4), "S", nu=None, mu=10.0, kb=0.0, mub=10.0)
    trace = []
    _spg(prob, v, SolverConfig(max_iters=500), trace)
    assert len(trace) > 10
    assert np.all(np.diff(trace) <= 0.0)


# -- minimize -------------------------------------------------------------------------


def test_trace_constrained_solve_beats_single_point():
    spec = ConstraintSpec.trace(2, C=10 * action_T(delta(np.diag([2.0, 0.0]))))
    res = minimize(P21, spec, FAST)
    assert res.S_value <= 8.0
    assert res.constraint_residual_norm <= 1e-8
    assert math.isclose(res.S_value, action_S(res.measure), rel_tol=1e-15)


def test_identity_constrained_solve_is_feasible():
    spec = ConstraintSpec.identity(2)
    res = minimize(P21, spec, FAST)
    assert np.max(np.abs(constraint_residuals(res.measure, spec))) <= 1e-8


def test_solve_is_deterministic():
    spec = ConstraintSpec.trace(2, C=100.0)
    cfg = SolverConfig(N=2, restarts=2, max_iters=500, outer_iters=8, seed=11)
    a, b = minimize(P21, spec, cfg), minimize(P21, spec, cfg)
    assert a.S_value == b.S_value and a.T_value == b.T_value
    assert np.array_equal(a.measure.factors, b.measure.factors)
    assert np.array_equal(a.measure.weights, b.measure.weights)
    assert a.restarts == b.restarts


def test_restarts_are_a_prefix_family():
    spec = ConstraintSpec.trace(2)
    cfg = SolverConfig(N=2, restarts=2, max_iters=400, outer_iters=6, seed=5)
    few = minimize(P21, spec, cfg)
    many = minimize(P21, spec, SolverConfig(N=2, restarts=3, max_iters=400, outer_iters=6, seed=5))
    assert many.restarts[:2] == few.restarts
    assert many.S_value <= few.S_value


def test_init_measure_is_used():
    spec = ConstraintSpec.trace(2)
    init = delta(np.diag([2.0, 0.0]))
    res = minimize(P21, spec, SolverConfig(N=1, restarts=1, max_iters=50, outer_iters=2), init=init)
    # a single atom has nowhere to go: delta_{diag(2,0)} is a critical point
    assert math.isclose(res.S_value, 8.0, rel_tol=1e-9)


def test_bound_below_cmin_reports_infeasible():
    spec = ConstraintSpec.trace(2, C=1.0)
    res = minimize(P21, spec, FAST)
    assert not res.converged
    assert "boundedness" in res.message


def test_boundedness_constraint_is_respected():
    spec = ConstraintSpec.trace(2, C=7.0)
    res = minimize(P21, spec, SolverConfig(N=3, restarts=1))
    assert res.T_value <= 7.0 * (1 + 1e-8)


def test_bad_arguments_rejected():
    with pytest.raises(ValueError):
        minimize(P21, ConstraintSpec.trace(3), FAST)
    with pytest.raises(ValueError):
        minimize(P21, ConstraintSpec.trace(2, C="auto"), FAST)
    with pytest.raises(ValueError):
        minimize(P21, ConstraintSpec.trace(2), FAST, objective="U")
    with pytest.raises(ValueError):
        minimize(P21, ConstraintSpec.trace(2), FAST, init=random_measure(np.random.default_rng(0), ModelParams(3, 1), 2))


@pytest.mark.parametrize("field,value", [("N", 0), ("restarts", 0), ("step_shrink", 1.0), ("penalty_growth", 1.0), ("gradient", "magic"), ("seed", -1)])
def test_config_validation(field, value):
    with pytest.raises(ValueError):
        SolverConfig(**{field: value})


def test_finite_difference_gradient_mode_agrees():
    spec = ConstraintSpec.trace(2)
    cfg = SolverConfig(N=2, restarts=1, max_iters=300, outer_iters=6, seed=2)
    a = minimize(P21, spec, cfg)
    b = minimize(P21, spec, SolverConfig(N=2, restarts=1, max_iters=300, outer_iters=6, seed=2, gradient="fd"))
    assert abs(a.S_value - b.S_value) <= 1e-5 * a.S_value


# -- C_min ---------------------------------------------------------------------------------


def test_cmin_bounded_by_single_point_witness():
    assert estimate_cmin(P21, ConstraintSpec.trace(2), FAST) <= 16.0


def test_cmin_monotone_in_restarts():
    spec = ConstraintSpec.trace(2)
    a = estimate_cmin(P21, spec, SolverConfig(N=3, restarts=1, seed=4))
    b = estimate_cmin(P21, spec, SolverConfig(N=3, restarts=2, seed=4))
    assert b <= a
