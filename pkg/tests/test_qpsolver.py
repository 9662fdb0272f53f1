import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcchance.qpsolver import (
    INFEASIBLE, OPTIMAL, UNBOUNDED, QpConfig, QuadraticProgram, dump_qp, load_qp, lp_solve, qp_solve,
)

from oracles import lp_by_vertices, qp_by_active_sets


def kkt_residuals(qp, sol):
    """Stationarity, primal and complementarity residuals computed from scratch."""
    x, y, z = sol.x, sol.y, sol.s
    stat = qp.P @ x + qp.q + qp.Aeq.T @ y + qp.Gineq.T @ z
    prim = np.concatenate([np.abs(qp.Aeq @ x - qp.beq), np.maximum(qp.Gineq @ x - qp.hineq, 0)])
    comp = np.abs(z * (qp.Gineq @ x - qp.hineq))
    return (np.abs(stat).max(initial=0), prim.max(initial=0), comp.max(initial=0), z.min(initial=0))


def test_unconstrained_scalar():
    sol = qp_solve(QuadraticProgram([[1.0]], [-1.0], None, None, None, None))
    assert sol.status == OPTIMAL and sol.x[0] == pytest.approx(1.0, abs=1e-10)


def test_projection_onto_halfspace():
    sol = qp_solve(QuadraticProgram(np.eye(2), np.zeros(2), None, None, [[-1.0, -1.0]], [-2.0]))
    assert sol.ok
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-8)
    assert sol.s[0] == pytest.approx(1.0, abs=1e-8)


def test_lp_vertex():
    sol = lp_solve([1.0, 2.0], Aeq=[[1.0, 1.0]], beq=[1.0], Gineq=-np.eye(2), hineq=np.zeros(2))
    assert sol.ok
    np.testing.assert_allclose(sol.x, [1.0, 0.0], atol=1e-8)
    assert sol.objective == pytest.approx(1.0, abs=1e-8)


def test_lp_upper_bound():
    sol = lp_solve([-1.0], Gineq=[[1.0]], hineq=[3.0])
    assert sol.ok and sol.x[0] == pytest.approx(3.0, abs=1e-8)


def test_lp_infeasible():
    sol = lp_solve([0.0], Gineq=[[1.0], [-1.0]], hineq=[0.0, -1.0])
    assert sol.status == INFEASIBLE


def test_lp_unbounded():
    sol = lp_solve([-1.0], Gineq=[[-1.0]], hineq=[0.0])
    assert sol.status == UNBOUNDED


def test_equality_only():
    sol = qp_solve(QuadraticProgram(np.eye(2), np.zeros(2), [[1.0, 1.0]], [2.0], None, None))
    assert sol.ok
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-10)


def test_rejects_asymmetric_P():
    with pytest.raises(ValueError):
        QuadraticProgram([[1.0, 1.0], [0.0, 1.0]], [0.0, 0.0], None, None, None, None)


def random_qp(rng, n, mi, with_eq=False):
    L = rng.normal(size=(n, n))
    P = L @ L.T + 0.1 * np.eye(n)
    G = rng.normal(size=(mi, n))
    x_feas = rng.normal(size=n)
    h = G @ x_feas + rng.uniform(0.0, 1.0, mi)
    A = b = None
    if with_eq and n > 1:
        A = rng.normal(size=(1, n))
        b = A @ x_feas
    return P, rng.normal(size=n), G, h, A, b


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(1, 6), mi=st.integers(1, 6), eq=st.booleans())
def test_qp_matches_active_set_enumeration(seed, n, mi, eq):
    rng = np.random.default_rng(seed)
    P, q, G, h, A, b = random_qp(rng, n, mi, eq)
    ref = qp_by_active_sets(P, q, G, h, A, b)
    qp = QuadraticProgram(P, q, A, b, G, h)
    sol = qp_solve(qp)
    assert sol.ok
    assert sol.objective == pytest.approx(ref[1], abs=1e-6)
    stat, prim, comp, zmin = kkt_residuals(qp, sol)
    assert max(stat, prim, comp) <= 1e-6 and zmin >= -1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(1, 5))
def test_lp_matches_vertex_enumeration(seed, n):
    rng = np.random.default_rng(seed)
    # bounded polytope: random cuts plus a box
    G = np.vstack([rng.normal(size=(3, n)), np.eye(n), -np.eye(n)])
    h = np.concatenate([rng.uniform(0.5, 2.0, 3), np.full(2 * n, 3.0)])
    c = rng.normal(size=n)
    ref = lp_by_vertices(c, G, h)
    sol = lp_solve(c, Gineq=G, hineq=h)
    assert sol.ok and sol.objective == pytest.approx(ref[1], abs=1e-7)


def test_warm_start_gives_same_answer():
    rng = np.random.default_rng(3)
    P, q, G, h, _, _ = random_qp(rng, 4, 6)
    qp = QuadraticProgram(P, q, None, None, G, h)
    cold = qp_solve(qp)
    warm = qp_solve(qp, warm_start=cold.x + 0.01)
    np.testing.assert_allclose(warm.x, cold.x, atol=1e-7)


def test_deterministic():
    rng = np.random.default_rng(4)
    P, q, G, h, A, b = random_qp(rng, 5, 6, True)
    qp = QuadraticProgram(P, q, A, b, G, h)
    a, c = qp_solve(qp), qp_solve(qp)
    assert a.x.tobytes() == c.x.tobytes() and a.iterations == c.iterations


def test_tight_config_reaches_tight_residuals():
    rng = np.random.default_rng(5)
    P, q, G, h, _, _ = random_qp(rng, 6, 6)
    qp = QuadraticProgram(P, q, None, None, G, h)
    sol = qp_solve(qp, QpConfig(feas_tol=1e-10, gap_tol=1e-11))
    assert sol.ok and max(sol.residuals[:2]) <= 1e-10


def test_dump_load_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    P, q, G, h, A, b = random_qp(rng, 3, 4, True)
    qp = QuadraticProgram(P, q, A, b, G, h)
    path = tmp_path / "qp.json"
    dump_qp(qp, path)
    back = load_qp(path)
    for name in ("P", "q", "Aeq", "beq", "Gineq", "hineq"):
        np.testing.assert_array_equal(getattr(back, name), getattr(qp, name))


def test_strictly_convex_infeasible():
    # x >= 20 twice against x <= 10: the iteration stalls without a Farkas ray
    qp = QuadraticProgram([[2.0]], [0.0], None, None,
                          [[1.0], [-1.0], [-1.0], [-1.0]], [10.0, 10.0, -20.0, -20.0])
    assert qp_solve(qp).status == INFEASIBLE


def test_degenerate_vertex():
    # three rows through the optimum in two dimensions
    G = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    h = np.array([0.0, 0.0, 0.0, 5.0, 5.0])
    sol = qp_solve(QuadraticProgram(np.eye(2), [-1.0, -1.0], None, None, G, h),
                   QpConfig(feas_tol=1e-10, gap_tol=1e-11))
    assert sol.ok
    np.testing.assert_allclose(sol.x, [0.0, 0.0], atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000), c=st.sampled_from([1e-3, 0.5, 7.0, 1e3]))
def test_objective_scaling_invariance(seed, c):
    rng = np.random.default_rng(seed)
    P, q, G, h, A, b = random_qp(rng, 4, 5, True)
    base = qp_solve(QuadraticProgram(P, q, A, b, G, h))
    scaled = qp_solve(QuadraticProgram(c * P, c * q, A, b, G, h))
    assert base.ok and scaled.ok
    np.testing.assert_allclose(scaled.x, base.x, atol=2e-7)
    np.testing.assert_allclose(scaled.s, c * base.s, atol=2e-7 * max(1.0, c))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_debug_merit_is_monotone(seed):
    rng = np.random.default_rng(seed)
    P, q, G, h, A, b = random_qp(rng, 4, 6, True)
    sol = qp_solve(QuadraticProgram(P, q, A, b, G, h), QpConfig(debug=True))
    assert sol.ok
    m = sol.merit_history
    assert all(b <= a * (1 + 1e-12) for a, b in zip(m, m[1:]))
