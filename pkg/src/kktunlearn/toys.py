"""Small model families with closed-form derivatives and retrain oracles.

* ``linear_loss_program``: per-point losses ``-z_i . theta`` with a shared
  quadratic regularizer, so the Hessian does not depend on the weights.
* ``ridge_program``: weighted least squares with an L2 regularizer.
* ``logistic_program``: L2-regularized logistic regression.
* ``quadratic_point_program``: ``0.5 ||theta - z_i||^2`` per point.

Any family accepts extra linear constraints.
"""
from __future__ import annotations

import numpy as np

from .core import ConstrainedProgram, LinearConstraint, PointLoss, quadratic_regularizer, rng_for


def _linear_loss(z):
    z = np.array(z, dtype=float)
    return (lambda th: -float(z @ th), lambda th: -z, lambda th: np.zeros((z.size, z.size)))


def linear_loss_program(Z, R=None, inequalities=(), equalities=()) -> ConstrainedProgram:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n, d = Z.shape
    R = np.eye(d) if R is None else np.asarray(R, dtype=float)
    terms = [quadratic_regularizer(R)] + [PointLoss(i, *_linear_loss(Z[i])) for i in range(n)]
    return ConstrainedProgram(d, n, terms, list(inequalities), list(equalities))


def linear_loss_retrain(Z, eta, R=None, E=None, f=None) -> np.ndarray:
    """argmin 0.5 th'R th - sum eta_i z_i'th  s.t.  E th = f, by one KKT solve."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    d = Z.shape[1]
    R = np.eye(d) if R is None else np.asarray(R, dtype=float)
    rhs = Z.T @ np.asarray(eta, dtype=float)
    if E is None or len(E) == 0:
        return np.linalg.solve(R, rhs)
    E = np.atleast_2d(E)
    m = E.shape[0]
    K = np.block([[R, E.T], [E, np.zeros((m, m))]])
    return np.linalg.solve(K, np.concatenate([rhs, np.asarray(f, dtype=float)]))[:d]


def _squared(x, y):
    x = np.array(x, dtype=float)
    y = float(y)
    return (lambda th: 0.5 * (x @ th - y) ** 2, lambda th: (x @ th - y) * x, lambda th: np.outer(x, x))


def ridge_program(X, y, lam=1.0, inequalities=(), equalities=()) -> ConstrainedProgram:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    terms = [quadratic_regularizer(lam * np.eye(d))] + [PointLoss(i, *_squared(X[i], y[i])) for i in range(n)]
    return ConstrainedProgram(d, n, terms, list(inequalities), list(equalities))


def ridge_retrain(X, y, eta, lam=1.0) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    eta = np.asarray(eta, dtype=float)
    A = lam * np.eye(X.shape[1]) + (X * eta[:, None]).T @ X
    return np.linalg.solve(A, X.T @ (eta * np.asarray(y, dtype=float)))


def _logistic(x, y):
    x = np.array(x, dtype=float)
    y = float(y)

    def f(th):
        return float(np.logaddexp(0.0, -y * (x @ th)))

    def g(th):
        s = 1.0 / (1.0 + np.exp(y * (x @ th)))
        return -y * s * x

    def h(th):
        s = 1.0 / (1.0 + np.exp(y * (x @ th)))
        return s * (1 - s) * np.outer(x, x)

    return f, g, h


def logistic_program(X, y, lam=1.0) -> ConstrainedProgram:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    terms = [quadratic_regularizer(lam * np.eye(d))] + [PointLoss(i, *_logistic(X[i], y[i])) for i in range(n)]
    return ConstrainedProgram(d, n, terms)


def _sq_dist(z):
    z = np.array(z, dtype=float)
    return (lambda th: 0.5 * float((th - z) @ (th - z)), lambda th: th - z, lambda th: np.eye(z.size))


def quadratic_point_program(Z, inequalities=(), equalities=()) -> ConstrainedProgram:
    Z = np.asarray(Z, dtype=float)
    Z = Z.reshape(len(Z), -1)
    n, d = Z.shape
    return ConstrainedProgram(d, n, [PointLoss(i, *_sq_dist(Z[i])) for i in range(n)],
                              list(inequalities), list(equalities))


# ---------------------------------------------------------------------------
# seeded instance generators
# ---------------------------------------------------------------------------


def random_linear_instance(seed: int, n: int = 12, d: int = 4, n_eq: int = 0):
    """Linear-loss family with an SPD regularizer and optional data-free equalities."""
    rng = rng_for(seed, "data")
    Z = rng.normal(size=(n, d))
    M = rng.normal(size=(d, d))
    R = M @ M.T + d * np.eye(d)
    E = rng.normal(size=(n_eq, d))
    f = rng.normal(size=n_eq)
    eqs = [LinearConstraint.fixed("eq", E[t], -f[t], name=f"h{t}") for t in range(n_eq)]
    return linear_loss_program(Z, R, equalities=eqs), Z, R, E, f


def random_ridge_instance(seed: int, n: int = 20, d: int = 3, lam: float = 1.0, noise: float = 0.3):
    rng = rng_for(seed, "data")
    X = rng.normal(size=(n, d))
    w = rng.normal(size=d)
    y = X @ w + noise * rng.normal(size=n)
    return ridge_program(X, y, lam), X, y


def random_logistic_instance(seed: int, n: int = 30, d: int = 3, lam: float = 1.0):
    rng = rng_for(seed, "data")
    X = rng.normal(size=(n, d))
    w = rng.normal(size=d)
    y = np.where(X @ w + 0.5 * rng.normal(size=n) > 0, 1.0, -1.0)
    return logistic_program(X, y, lam), X, y
