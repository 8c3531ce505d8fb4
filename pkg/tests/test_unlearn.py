import numpy as np
import pytest

from kktunlearn.core import KktPoint, LinearConstraint, PenaltyConfig, RemovalRequest, WeightedDataset, WeightedObjective
from kktunlearn.diff import DerivativeBundle, lagrangian_derivatives
from kktunlearn.sqp import fit_program
from kktunlearn.toys import (linear_loss_program, linear_loss_retrain, quadratic_point_program, random_linear_instance,
                             ridge_program)
from kktunlearn.unlearn import (KktInconsistency, UnlearnOptions, assemble_auxiliary, certify, classify_index_sets,
                                conjugate_gradient, influence_unconstrained, unlearn)
from kktunlearn import suites


def _fit_and_unlearn(prog, n, req):
    ds = WeightedDataset.full(range(n))
    obj = WeightedObjective(prog, ds, req, PenaltyConfig())
    kkt = fit_program(obj, np.ones(req.size))
    return kkt, obj, unlearn(kkt, prog, ds, req, obj=obj)


def test_classify_mixed_example():
    part = classify_index_sets([0.0, 0.0, -0.3], [0.5, 0.0, 0.1])
    assert part.I == (0, 1) and part.I0 == (1,) and part.I1 == (2,)
    assert len(part.warnings) == 1


def test_classify_all_inactive():
    part = classify_index_sets([-1.0, -2.0], [0.0, 0.0])
    assert part.I == () and part.I0 == () and part.I1 == (0, 1)


def test_classify_within_tolerance_is_active():
    part = classify_index_sets([-1e-12], [0.2], eps_act=1e-9)
    assert part.I == (0,) and part.I0 == ()


def test_classify_rejects_violation_and_negative_multiplier():
    with pytest.raises(KktInconsistency):
        classify_index_sets([0.5], [0.0])
    with pytest.raises(KktInconsistency):
        classify_index_sets([0.0], [-1.0])


def test_assemble_quadratic_toy():
    prog = quadratic_point_program(np.array([[1.0], [3.0]]))
    req = RemovalRequest((1,))
    obj = WeightedObjective(prog, WeightedDataset.full(range(2)), req, PenaltyConfig())
    bundle = lagrangian_derivatives(obj, KktPoint(np.array([2.0]), np.zeros(0), np.zeros(0)))
    qp, carried = assemble_auxiliary(bundle, classify_index_sets([], []), req)
    assert not carried
    np.testing.assert_allclose(qp.H, [[2.0]])
    np.testing.assert_allclose(qp.c, [1.0])
    assert qp.A.shape[0] == 0


def test_inactive_row_is_free_and_changes_nothing():
    ineq = LinearConstraint.fixed("ineq", [1.0], -10.0)
    prog = quadratic_point_program(np.array([[1.0], [3.0]]), [ineq])
    kkt, obj, res = _fit_and_unlearn(prog, 2, RemovalRequest((1,)))
    assert res.qp.kinds == ("free",)
    np.testing.assert_allclose(res.delta_theta, [-0.5], atol=1e-10)


def test_linear_toy_is_exact():
    prog = linear_loss_program(np.array([[1.0], [3.0]]), np.eye(1))
    kkt, obj, res = _fit_and_unlearn(prog, 2, RemovalRequest((1,)))
    np.testing.assert_allclose(kkt.theta, [4.0], atol=1e-12)
    np.testing.assert_allclose(res.delta_theta, [-3.0], atol=1e-12)
    np.testing.assert_allclose(res.theta_updated, [1.0], atol=1e-12)


def test_quadratic_toy_first_order():
    prog = quadratic_point_program(np.array([[1.0], [3.0]]))
    kkt, obj, res = _fit_and_unlearn(prog, 2, RemovalRequest((1,)))
    np.testing.assert_allclose(res.delta_theta, [-0.5], atol=1e-10)
    # retraining on point 0 alone moves by -1; the gap is second order
    assert abs((kkt.theta[0] + res.delta_theta[0]) - 1.0) == pytest.approx(0.5, abs=1e-10)
    assert res.method == "influence"
    assert res.vi_residual <= 1e-8 and res.feasibility_report == []


def test_null_request_gives_zero():
    ineq = LinearConstraint.fixed("ineq", [1.0], -1.5)
    prog = quadratic_point_program(np.array([[1.0], [3.0]]), [ineq])
    kkt, obj, res = _fit_and_unlearn(prog, 2, RemovalRequest((1,), target_weight=1.0))
    np.testing.assert_array_equal(res.delta_theta, [0.0])
    np.testing.assert_array_equal(res.delta_lambda["g"], [0.0])


def test_influence_identity_hessian():
    m = np.array([[0.3], [-2.0], [1.5]])
    b = DerivativeBundle(np.zeros(3), m, hess_theta=np.eye(3))
    res = influence_unconstrained(b, RemovalRequest((0,)))
    np.testing.assert_allclose(res.delta_theta, m[:, 0])


def test_influence_matrix_free_matches_dense():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(6, 6))
    H = M @ M.T + np.eye(6)
    b = DerivativeBundle(np.zeros(6), rng.normal(size=(6, 1)), hess_theta=H)
    dense = influence_unconstrained(b, RemovalRequest((0,)))
    free = influence_unconstrained(b, RemovalRequest((0,)), UnlearnOptions(dense_limit=2))
    assert free.method == "matrix_free"
    np.testing.assert_allclose(free.delta_theta, dense.delta_theta, rtol=1e-8)


def test_singular_hessian_is_damped():
    b = DerivativeBundle(np.zeros(2), np.array([[1.0], [1.0]]), hess_theta=np.diag([1.0, 0.0]))
    res = influence_unconstrained(b, RemovalRequest((0,)))
    assert res.damping > 0
    assert np.all(np.isfinite(res.delta_theta))


def test_cg_rejects_negative_curvature():
    with pytest.raises(np.linalg.LinAlgError):
        conjugate_gradient(lambda v: -v, np.ones(3))


def test_stationarity_residual_is_carried():
    b = DerivativeBundle(np.array([1e-3]), np.array([[1.0]]), hess_theta=np.eye(1))
    res = influence_unconstrained(b, RemovalRequest((0,)))
    assert res.carried_gradient and res.warnings
    np.testing.assert_allclose(res.delta_theta, [1.0 - 1e-3])


def test_untouched_equality_stays_feasible():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(10, 3))
    y = rng.normal(size=10)
    eq = LinearConstraint.fixed("eq", [1.0, 1.0, 1.0], -0.5, name="sum")
    prog = ridge_program(X, y, 0.5, equalities=[eq])
    kkt, obj, res = _fit_and_unlearn(prog, 10, RemovalRequest((4,)))
    rep = certify(res, obj)
    assert rep["max_violation"] <= 1e-6
    assert res.vi_residual <= 1e-8


def test_corrupted_step_reports_violation():
    eq = LinearConstraint.fixed("eq", [1.0, 1.0], -1.0, name="sum")
    prog = quadratic_point_program(np.array([[0.0, 1.0], [2.0, 0.0], [1.0, 1.0]]), equalities=[eq])
    kkt, obj, res = _fit_and_unlearn(prog, 3, RemovalRequest((2,)))
    assert certify(res, obj)["max_violation"] <= 1e-10
    res.theta_updated = res.theta_updated + np.array([0.1, 0.0])
    res.delta_theta = res.delta_theta + np.array([0.1, 0.0])
    rep = certify(res, obj)
    assert rep["max_violation"] > 0
    assert rep["vi_residual"] > 1e-8


def test_multi_point_matches_retrain():
    prog, Z, R, E, f = random_linear_instance(7, n=12, d=4, n_eq=1)
    req = RemovalRequest((1, 5, 9))
    kkt, obj, res = _fit_and_unlearn(prog, 12, req)
    eta = np.ones(12)
    eta[[1, 5, 9]] = 0
    gold = linear_loss_retrain(Z, eta, R, E, f)
    np.testing.assert_allclose(res.theta_updated, gold, rtol=1e-8)


def test_exact_family_suite():
    rep = suites.exact_family_suite(10)
    assert rep["max_rel_error"] <= 1e-8


def test_scaling_suite_ratios():
    rep = suites.scaling_suite(4)
    assert 3.2 <= rep["min_ratio"] and rep["max_ratio"] <= 4.8


def test_vi_suite_small():
    rep = suites.vi_suite(8, svm_seeds=(0,))
    assert rep["max_vi_residual"] <= 1e-8
    assert rep["row_kinds"]["ineq"] > 0 and rep["row_kinds"]["eq"] > 0


def test_report_is_json_ready():
    import json

    prog = quadratic_point_program(np.array([[1.0], [3.0]]))
    _, _, res = _fit_and_unlearn(prog, 2, RemovalRequest((1,)))
    rep = json.loads(json.dumps(res.report()))
    assert rep["method"] == "influence"
    assert rep["delta_theta_norm"] == pytest.approx(0.5)
