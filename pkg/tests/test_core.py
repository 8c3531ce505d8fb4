import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kktunlearn.core import (LinearConstraint, PenaltyConfig, ProblemError, RemovalRequest, WeightedDataset,
                             WeightedObjective, penalty_eval, rng_for, weights_for_request)
from kktunlearn.toys import quadratic_point_program, ridge_program


def test_penalty_values():
    cfg = PenaltyConfig()
    assert penalty_eval(cfg, 2.0, -0.5) == 0.0
    assert penalty_eval(cfg, 2.0, 1.0) == pytest.approx(2.0)
    assert penalty_eval(cfg, 2.0, 0.5) == pytest.approx(0.25)
    assert penalty_eval(cfg, 2.0, 0.0) == 0.0


def test_penalty_rejects_bad_constants():
    with pytest.raises(ProblemError):
        penalty_eval(PenaltyConfig(), 0.0, 1.0)
    with pytest.raises(ProblemError):
        PenaltyConfig(C_g=-1.0)
    with pytest.raises(ProblemError):
        PenaltyConfig(p=1.5)


@given(st.floats(0.01, 100), st.floats(-5, 5), st.floats(-5, 5))
def test_penalty_monotone_in_t(C, t1, t2):
    cfg = PenaltyConfig()
    lo, hi = sorted((t1, t2))
    assert penalty_eval(cfg, C, lo) <= penalty_eval(cfg, C, hi)
    assert penalty_eval(cfg, C, lo) >= 0.0


@given(st.floats(0.01, 50), st.floats(0.01, 50), st.floats(0.01, 5))
def test_penalty_monotone_in_C(C1, C2, t):
    cfg = PenaltyConfig()
    lo, hi = sorted((C1, C2))
    if hi > lo * (1 + 1e-9):
        assert penalty_eval(cfg, lo, t) < penalty_eval(cfg, hi, t)


def test_weights_for_request():
    np.testing.assert_array_equal(weights_for_request(3, RemovalRequest((2,))), [1, 1, 0])
    np.testing.assert_array_equal(weights_for_request(4, RemovalRequest((0, 3))), [0, 1, 1, 0])
    np.testing.assert_array_equal(weights_for_request(3, RemovalRequest((1,), 0.25)), [1, 0.25, 1])


def test_empty_and_bad_requests():
    with pytest.raises(ProblemError, match="empty removal set"):
        RemovalRequest(())
    with pytest.raises(ProblemError):
        RemovalRequest((1, 1))
    with pytest.raises(ProblemError):
        weights_for_request(2, RemovalRequest((5,)))


@given(st.sets(st.integers(0, 9), min_size=1))
def test_request_order_independent(K):
    a = weights_for_request(10, RemovalRequest(tuple(K)))
    b = weights_for_request(10, RemovalRequest(tuple(sorted(K, reverse=True))))
    np.testing.assert_array_equal(a, b)
    req = RemovalRequest(tuple(K), 0.3)
    np.testing.assert_allclose(req.direction, np.full(len(K), -0.7))


def test_dataset_invariants():
    ds = WeightedDataset.full(range(4))
    np.testing.assert_array_equal(ds.weights, np.ones(4))
    with pytest.raises(ProblemError):
        WeightedDataset((1, 2), np.array([1.0]))
    with pytest.raises(ProblemError):
        WeightedDataset((1, 2), np.array([1.0, 1.5]))


def test_rng_substreams_independent_and_reproducible():
    a = rng_for(3, "data").normal(size=5)
    np.testing.assert_array_equal(a, rng_for(3, "data").normal(size=5))
    assert not np.allclose(a, rng_for(3, "init").normal(size=5))


def test_weighted_quadratic_toy():
    prog = quadratic_point_program(np.array([[1.0], [3.0]]))
    obj = WeightedObjective(prog, WeightedDataset.full(range(2)), RemovalRequest((1,)), PenaltyConfig())
    for eta in (0.0, 0.4, 1.0):
        for th in (-1.0, 2.0, 5.0):
            expect = 0.5 * (th - 1) ** 2 + eta * 0.5 * (th - 3) ** 2
            assert obj.value([eta], np.array([th])) == pytest.approx(expect, rel=1e-14)


def test_untouched_constraints_stay_hard():
    X = rng_for(0, "t").normal(size=(5, 2))
    y = X @ np.array([1.0, -1.0])
    c = LinearConstraint.fixed("ineq", np.array([1.0, 0.0]), -0.2, name="cap")
    prog = ridge_program(X, y, 1.0, inequalities=[c])
    obj = WeightedObjective(prog, WeightedDataset.full(range(5)), RemovalRequest((2,)), PenaltyConfig())
    assert obj.hard_ineq == [c] and obj.folded_ineq == []


def _folded_eq_toy(C):
    # min 0.5||th - z0||^2 + eta 0.5||th - z1||^2  s.t.  th_0 + th_1 = 1 linked to point 1
    Z = np.array([[2.0, 0.0], [0.0, 2.0]])
    h = LinearConstraint("eq", (1,), [np.zeros(2)], [0.0], np.array([1.0, 1.0]), -1.0, name="h")
    prog = quadratic_point_program(Z, equalities=[h])
    return WeightedObjective(prog, WeightedDataset.full(range(2)), RemovalRequest((1,)), PenaltyConfig(C_h=C))


@pytest.mark.parametrize("C", [10.0, 100.0, 1000.0])
def test_folded_equality_approaches_hard_optimum(C):
    from kktunlearn.sqp import fit_program

    obj = _folded_eq_toy(C)
    assert obj.hard_eq == [] and len(obj.folded_eq) == 1
    theta = fit_program(obj, [1.0]).theta
    # hard-constrained optimum: projection of the mean (1, 1) onto th_0 + th_1 = 1
    err = np.linalg.norm(theta - np.array([0.5, 0.5]))
    assert err < 2.0 / C ** 0.5


def test_all_ones_reproduces_unweighted_plus_penalties():
    obj = _folded_eq_toy(1000.0)
    th = np.array([0.9, 0.4])
    hval = th.sum() - 1.0
    base = 0.5 * np.sum((th - [2, 0]) ** 2) + 0.5 * np.sum((th - [0, 2]) ** 2)
    pen = penalty_eval(obj.pen, 1000.0, hval) + penalty_eval(obj.pen, 1000.0, -hval)
    assert obj.value([1.0], th) == pytest.approx(base + pen, rel=1e-12)


def test_objective_rejects_unknown_linkage():
    from kktunlearn.core import ConstrainedProgram

    c = LinearConstraint("ineq", (7,), [np.zeros(1)], [0.0], np.ones(1), 0.0)
    with pytest.raises(ProblemError):
        ConstrainedProgram(1, 2, [], [c])
