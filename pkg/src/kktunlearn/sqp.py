"""Newton / SQP trainer for weighted programs with linear hard constraints.

Used as the retrain oracle for the toy families and to train the SVM.  Every
iterate stays feasible: the first point is feasible, each QP step keeps the
(linear) constraints satisfied and the line search moves along a segment.
"""
from __future__ import annotations

import numpy as np

from .core import KktPoint, WeightedObjective
from .qp import AuxiliaryQp, QpError, solve


class TrainingError(RuntimeError):
    pass


def fit_program(obj: WeightedObjective, eta_K, theta0=None, *, tol: float = 1e-10, max_iter: int = 100) -> KktPoint:
    """Minimize the weighted objective at fixed ``eta_K`` over the hard constraints."""
    for c in obj.hard_ineq + obj.hard_eq:
        if not c.is_linear:
            raise TrainingError("fit_program handles linear hard constraints only")
    eta_K = np.asarray(eta_K, dtype=float)
    n = obj.dim
    Jg, Jh = obj.constraint_jacobians(np.zeros(n))
    A = np.vstack([Jg, Jh])
    kinds = ["ineq"] * Jg.shape[0] + ["eq"] * Jh.shape[0]

    def rows_at(theta):
        g, h = obj.constraint_values(theta)
        return np.concatenate([g, h])

    if theta0 is None:
        start = solve(AuxiliaryQp(np.eye(n), np.zeros(n), A, rows_at(np.zeros(n)), kinds))
        if not start.optimal:
            raise TrainingError(f"no feasible starting point ({start.status})")
        theta = start.delta_theta
    else:
        theta = np.array(theta0, dtype=float)

    ws = None
    gam = np.zeros(A.shape[0])
    f = obj.value(eta_K, theta)
    for it in range(1, max_iter + 1):
        grad = obj.grad(eta_K, theta)
        H = obj.hess(eta_K, theta)
        b = rows_at(theta)
        # absorb round-off so the current point is exactly feasible for the QP
        b = np.where(np.array(kinds) == "eq", b, np.minimum(b, 0.0))
        qp = AuxiliaryQp(H, grad, A, b, kinds)
        try:
            sol = solve(qp, x0=np.zeros(n), working_set=ws)
        except QpError as exc:
            raise TrainingError(str(exc)) from exc
        if not sol.optimal:
            raise TrainingError(f"SQP subproblem {sol.status} at iteration {it}")
        d, gam, ws = sol.delta_theta, sol.multipliers, sol.working_set
        slope = grad @ d
        if np.linalg.norm(d) <= tol * max(1.0, np.linalg.norm(theta)):
            break
        step = 1.0
        noise = 16 * np.finfo(float).eps * max(1.0, abs(f))  # values this close are indistinguishable
        while True:
            trial = theta + step * d
            f_new = obj.value(eta_K, trial)
            if f_new <= f + 1e-4 * step * slope + noise or step < 1e-12:
                break
            step *= 0.5
        theta, f = trial, f_new
        if step == 1.0 and abs(slope) <= 1e-15 * max(1.0, abs(f)):
            break
    else:
        raise TrainingError(f"SQP did not converge in {max_iter} iterations")

    lg, lh = gam[: Jg.shape[0]], gam[Jg.shape[0]:]
    lg = np.maximum(lg, 0.0)
    g, h = obj.constraint_values(theta)
    stat = obj.grad(eta_K, theta) + Jg.T @ lg + Jh.T @ lh
    res = {
        "stationarity": float(np.abs(stat).max(initial=0.0)),
        "feasibility": float(max(np.maximum(g, 0).max(initial=0.0), np.abs(h).max(initial=0.0))),
        "complementarity": float(np.abs(lg * g).max(initial=0.0)),
        "iterations": it,
    }
    return KktPoint(theta, lg, lh, res)
