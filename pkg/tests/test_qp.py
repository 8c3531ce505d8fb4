import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kktunlearn.qp import AuxiliaryQp, QpError, QpSolution, enumerate_oracle, kkt_residual, solve
from kktunlearn.suites import random_convex_qp


def test_unconstrained_identity():
    sol = solve(AuxiliaryQp(np.eye(2), np.zeros(2)))
    assert sol.optimal
    np.testing.assert_allclose(sol.delta_theta, [0.0, 0.0])


def test_symmetric_equality():
    qp = AuxiliaryQp(np.eye(2), np.zeros(2), [[1.0, 1.0]], [-1.0], ["eq"])
    sol = solve(qp)
    np.testing.assert_allclose(sol.delta_theta, [0.5, 0.5], atol=1e-12)
    # x + gamma a = 0 under the +gamma(a'x + b) convention
    np.testing.assert_allclose(sol.multipliers, [-0.5], atol=1e-12)
    exact = QpSolution(np.array([0.5, 0.5]), np.array([-0.5]), "optimal")
    assert kkt_residual(qp, exact) <= 1e-12


def test_oracle_inactive_and_clamped():
    free = AuxiliaryQp([[1.0]], [1.0], [[1.0]], [0.0], ["ineq"])
    s = enumerate_oracle(free)
    np.testing.assert_allclose(s.delta_theta, [-1.0])
    np.testing.assert_allclose(s.multipliers, [0.0])
    clamped = AuxiliaryQp([[1.0]], [-1.0], [[1.0]], [0.0], ["ineq"])
    s = enumerate_oracle(clamped)
    np.testing.assert_allclose(s.delta_theta, [0.0], atol=1e-14)
    np.testing.assert_allclose(s.multipliers, [1.0])
    s2 = solve(clamped)
    np.testing.assert_allclose(s2.delta_theta, [0.0], atol=1e-14)
    np.testing.assert_allclose(s2.multipliers, [1.0])


def test_oracle_without_inequalities_is_equality_solve():
    H = np.array([[3.0, 1.0], [1.0, 2.0]])
    c = np.array([1.0, -1.0])
    a = np.array([1.0, -2.0])
    qp = AuxiliaryQp(H, c, [a], [0.5], ["eq"])
    K = np.block([[H, a[:, None]], [a[None, :], np.zeros((1, 1))]])
    direct = np.linalg.solve(K, np.r_[-c, -0.5])
    s = enumerate_oracle(qp)
    np.testing.assert_allclose(s.delta_theta, direct[:2], atol=1e-12)
    np.testing.assert_allclose(s.multipliers, direct[2:], atol=1e-12)


def test_random_qp_n5_three_rows_matches_oracle():
    rng = np.random.default_rng(11)
    M = rng.normal(size=(5, 5))
    H = M @ M.T + np.eye(5)
    qp = AuxiliaryQp(H, rng.normal(size=5), rng.normal(size=(3, 5)), rng.normal(size=3), ["ineq"] * 3)
    a, o = solve(qp), enumerate_oracle(qp)
    assert abs(qp.objective(a.delta_theta) - qp.objective(o.delta_theta)) <= 1e-8
    assert kkt_residual(qp, a) <= 1e-8


def test_perturbed_solution_has_residual():
    qp = AuxiliaryQp(np.eye(2), np.zeros(2), [[1.0, 1.0]], [-1.0], ["eq"])
    bad = QpSolution(np.array([0.501, 0.5]), np.array([-0.5]), "optimal")
    assert kkt_residual(qp, bad) >= 1e-4


def test_residual_dimension_mismatch():
    qp = AuxiliaryQp(np.eye(2), np.zeros(2))
    with pytest.raises(QpError):
        kkt_residual(qp, QpSolution(np.zeros(3), np.zeros(0), "optimal"))


def test_infeasible_equalities():
    qp = AuxiliaryQp(np.eye(1), [0.0], [[1.0], [1.0]], [-1.0, 1.0], ["eq", "eq"])
    assert solve(qp).status == "infeasible"


def test_unsymmetric_H_rejected():
    with pytest.raises(QpError):
        AuxiliaryQp([[1.0, 2.0], [0.0, 1.0]], [0.0, 0.0])


def test_indefinite_H_is_damped():
    qp = AuxiliaryQp(np.diag([1.0, -0.5]), [1.0, 1.0])
    sol = solve(qp)
    assert sol.optimal and sol.damping > 0.5
    assert kkt_residual(qp, sol) <= 1e-8


def test_json_roundtrip(tmp_path):
    qp = AuxiliaryQp(np.eye(2), [1.0, 2.0], [[1.0, 0.0]], [0.5], ["ineq"], ("g0",))
    qp.dump(tmp_path / "qp.json")
    import json

    back = AuxiliaryQp.from_json(json.loads((tmp_path / "qp.json").read_text()))
    np.testing.assert_array_equal(back.H, qp.H)
    assert back.kinds == qp.kinds and back.labels == qp.labels


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_oracle_equivalence_property(seed):
    qp = random_convex_qp(np.random.default_rng(seed))
    a = solve(qp)
    o = enumerate_oracle(qp)
    if o.status == "infeasible":
        assert a.status == "infeasible"
        return
    assert a.optimal
    assert abs(qp.objective(a.delta_theta) - qp.objective(o.delta_theta)) <= 1e-8
    assert kkt_residual(qp, a) <= 1e-8
    gam = a.multipliers[qp.index("ineq")]
    assert np.all(gam >= -1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_free_rows_never_change_solution(seed):
    rng = np.random.default_rng(seed)
    qp = random_convex_qp(rng)
    kinds = list(qp.kinds)
    if not kinds:
        return
    if "free" not in kinds:
        kinds[0] = "free"
        qp = AuxiliaryQp(qp.H, qp.c, qp.A, qp.b, kinds)
    a, b = solve(qp), solve(qp.without_free_rows())
    assert a.status == b.status
    if a.optimal:
        np.testing.assert_allclose(a.delta_theta, b.delta_theta, atol=1e-12)
