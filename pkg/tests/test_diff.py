import numpy as np
import pytest

from kktunlearn.core import KktPoint, PenaltyConfig, RemovalRequest, WeightedDataset, WeightedObjective
from kktunlearn.diff import (DerivativeBundle, DerivativeError, finite_difference_check, hessian_vector_product,
                             lagrangian_derivatives)
from kktunlearn.toys import quadratic_point_program
from kktunlearn import suites, svm


def _quadratic_toy():
    prog = quadratic_point_program(np.array([[1.0], [3.0]]))
    return WeightedObjective(prog, WeightedDataset.full(range(2)), RemovalRequest((1,)), PenaltyConfig())


def test_hand_derivatives_of_quadratic_toy():
    obj = _quadratic_toy()
    kkt = KktPoint(np.array([2.0]), np.zeros(0), np.zeros(0))
    b = lagrangian_derivatives(obj, kkt)
    np.testing.assert_allclose(b.grad_theta, [0.0], atol=1e-15)
    np.testing.assert_allclose(b.hess_theta, [[2.0]])
    np.testing.assert_allclose(b.mixed_theta_eta, [[-1.0]])


def test_finite_differences_match_hand_values():
    obj = _quadratic_toy()
    kkt = KktPoint(np.array([2.0]), np.zeros(0), np.zeros(0))
    a = lagrangian_derivatives(obj, kkt)
    f = lagrangian_derivatives(obj, kkt, "finite_difference", h=1e-5)
    for blk in ("grad_theta", "hess_theta", "mixed_theta_eta"):
        np.testing.assert_allclose(getattr(f, blk), getattr(a, blk), atol=1e-6)


def test_hvp_examples():
    v = np.array([0.3, -1.2, 4.0])
    eye = DerivativeBundle(np.zeros(3), np.zeros((3, 1)), hess_theta=np.eye(3))
    np.testing.assert_array_equal(hessian_vector_product(eye, v), v)
    b = DerivativeBundle(np.zeros(2), np.zeros((2, 1)), hess_theta=np.array([[2.0, 1.0], [1.0, 3.0]]))
    np.testing.assert_array_equal(hessian_vector_product(b, [1.0, 0.0]), [2.0, 1.0])
    with pytest.raises(DerivativeError):
        hessian_vector_product(b, v)


def test_bundle_rejects_non_finite():
    with pytest.raises(DerivativeError):
        DerivativeBundle(np.array([np.nan]), np.zeros((1, 1)), hess_theta=np.eye(1))


def test_check_identical_bundles_pass():
    b = DerivativeBundle(np.array([1.0, -2.0]), np.array([[0.5], [3.0]]), hess_theta=np.array([[2.0, 1], [1, 3]]))
    rep = finite_difference_check(b, b)
    assert rep["passed"]
    assert all(rep[k]["max_rel_error"] == 0.0 for k in ("grad", "hess", "mixed"))


def test_check_sign_flip_fails_grad_only():
    H = np.array([[2.0, 1], [1, 3]])
    a = DerivativeBundle(np.array([1.0, -2.0]), np.array([[0.5], [3.0]]), hess_theta=H)
    b = DerivativeBundle(np.array([1.0, 2.0]), np.array([[0.5], [3.0]]), hess_theta=H)
    rep = finite_difference_check(a, b)
    assert not rep["grad"]["passed"] and rep["hess"]["passed"] and rep["mixed"]["passed"]
    assert not rep["passed"]


def test_smoothed_hinge_derivatives_beta10():
    X, y = svm.gaussian_two_class(6, 0)
    prog, layout = svm.svm_program(X, y, 1.0, 10.0, removed=5)
    obj = WeightedObjective(prog, WeightedDataset.full(range(6)), RemovalRequest((5,)), PenaltyConfig())
    rng = np.random.default_rng(4)
    theta = rng.normal(size=obj.dim)
    theta[2] = (1.0 - 0.05) / y[5] - theta[:2] @ X[5]
    kkt = KktPoint(theta, rng.uniform(0.1, 1, len(obj.hard_ineq)), np.zeros(0))
    a = lagrangian_derivatives(obj, kkt)
    f = lagrangian_derivatives(obj, kkt, "finite_difference")
    assert finite_difference_check(a, f, 1e-4)["passed"]
    assert a.symmetry_error() <= 1e-8


@pytest.mark.parametrize("family", suites.PROGRAM_FAMILIES)
def test_hessian_symmetric(family):
    prog, n, req = suites._program_family(family, 1)
    obj = WeightedObjective(prog, WeightedDataset.full(range(n)), req, PenaltyConfig())
    th = np.random.default_rng(1).normal(size=obj.dim)
    kkt = KktPoint(th, np.full(len(obj.hard_ineq), 0.3), np.full(len(obj.hard_eq), -0.2))
    assert lagrangian_derivatives(obj, kkt).symmetry_error() <= 1e-8


def test_unknown_mode():
    obj = _quadratic_toy()
    with pytest.raises(DerivativeError):
        lagrangian_derivatives(obj, KktPoint(np.array([2.0]), np.zeros(0), np.zeros(0)), "symbolic")
