"""Dense convex quadratic programs with equality / inequality / free rows.

    minimize    0.5 x'Hx + c'x
    subject to  a_r'x + b_r  = 0   (kind "eq")
                a_r'x + b_r <= 0   (kind "ineq")
                a_r'x + b_r  free  (kind "free", kept for reporting only)

Multipliers follow the convention that the Lagrangian adds
``+gamma_r (a_r'x + b_r)``, so inequality multipliers are non-negative.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

log = logging.getLogger(__name__)

KINDS = ("eq", "ineq", "free")
DAMPING_SCHEDULE = (1e-8, 1e-6, 1e-4, 1e-2, 1.0)


class QpError(RuntimeError):
    pass


@dataclass
class AuxiliaryQp:
    H: np.ndarray
    c: np.ndarray
    A: np.ndarray = None
    b: np.ndarray = None
    kinds: tuple = ()
    labels: tuple = ()

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        if self.H.shape != (n, n):
            raise QpError(f"H has shape {self.H.shape}, expected {(n, n)}")
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.kinds = tuple(self.kinds)
        if len(self.kinds) != self.A.shape[0] or self.b.size != self.A.shape[0]:
            raise QpError("rows, offsets and kinds disagree in length")
        bad = set(self.kinds) - set(KINDS)
        if bad:
            raise QpError(f"unknown row kinds {sorted(bad)}")
        scale = max(1.0, np.abs(self.H).max(initial=0.0))
        if np.abs(self.H - self.H.T).max(initial=0.0) > 1e-8 * scale:
            raise QpError("H is not symmetric")
        self.H = 0.5 * (self.H + self.H.T)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def rows(self):
        return list(zip(self.A, self.b, self.kinds))

    def index(self, kind) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.kinds) if k == kind], dtype=int)

    def objective(self, x, rho: float = 0.0) -> float:
        return float(0.5 * x @ self.H @ x + 0.5 * rho * x @ x + self.c @ x)

    def without_free_rows(self) -> "AuxiliaryQp":
        keep = [i for i, k in enumerate(self.kinds) if k != "free"]
        return AuxiliaryQp(self.H, self.c, self.A[keep], self.b[keep], [self.kinds[i] for i in keep])

    def to_json(self) -> dict:
        return {"H": self.H.tolist(), "c": self.c.tolist(), "A": self.A.tolist(), "b": self.b.tolist(),
                "kinds": list(self.kinds), "labels": list(self.labels)}

    @classmethod
    def from_json(cls, d) -> "AuxiliaryQp":
        n = len(d["c"])
        A = np.array(d["A"], dtype=float).reshape(-1, n)
        return cls(np.array(d["H"]), np.array(d["c"]), A, np.array(d["b"]), d["kinds"], tuple(d.get("labels", ())))

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


@dataclass
class QpSolution:
    delta_theta: np.ndarray
    multipliers: np.ndarray
    status: str
    kkt_residual: float = np.inf
    damping: float = 0.0
    iterations: int = 0
    working_set: tuple = ()
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def kkt_residual(qp: AuxiliaryQp, sol: QpSolution) -> float:
    """Max of stationarity, primal, dual and complementarity violations."""
    x, gam = np.asarray(sol.delta_theta, dtype=float), np.asarray(sol.multipliers, dtype=float)
    if x.shape != (qp.n,) or gam.shape != (qp.A.shape[0],):
        raise QpError("solution dimensions do not match the QP")
    H = qp.H + sol.damping * np.eye(qp.n)
    eq, ineq, free = qp.index("eq"), qp.index("ineq"), qp.index("free")
    act = np.concatenate([eq, ineq]).astype(int)
    r = qp.A @ x + qp.b
    parts = [np.abs(H @ x + qp.c + qp.A[act].T @ gam[act]).max(initial=0.0)]
    parts.append(np.abs(r[eq]).max(initial=0.0))
    parts.append(np.maximum(r[ineq], 0.0).max(initial=0.0))
    parts.append(np.maximum(-gam[ineq], 0.0).max(initial=0.0))
    parts.append(np.abs(gam[ineq] * r[ineq]).max(initial=0.0))
    parts.append(np.abs(gam[free]).max(initial=0.0))
    return float(max(parts))


# ---------------------------------------------------------------------------
# primal active-set solver
# ---------------------------------------------------------------------------


def _independent(rows: np.ndarray, tol: float) -> bool:
    if rows.shape[0] == 0:
        return True
    s = np.linalg.svd(rows, compute_uv=False)
    return s[-1] > tol * max(1.0, s[0]) and rows.shape[0] <= rows.shape[1]


def _feasible_start(qp, eq, ineq, tol):
    n = qp.n
    x = np.zeros(n)
    if eq.size:
        x = np.linalg.lstsq(qp.A[eq], -qp.b[eq], rcond=None)[0]
    ok = lambda z: (np.abs(qp.A[eq] @ z + qp.b[eq]).max(initial=0.0) <= tol
                    and (qp.A[ineq] @ z + qp.b[ineq]).max(initial=-1.0) <= tol)
    if ok(x):
        return x
    res = linprog(np.zeros(n), A_ub=qp.A[ineq] if ineq.size else None, b_ub=-qp.b[ineq] if ineq.size else None,
                  A_eq=qp.A[eq] if eq.size else None, b_eq=-qp.b[eq] if eq.size else None,
                  bounds=[(None, None)] * n, method="highs")
    if res.status != 0 or not ok(res.x):
        return None
    return res.x


def solve(qp: AuxiliaryQp, x0=None, *, max_iter: int = 5000, tol: float = 1e-10,
          damping=DAMPING_SCHEDULE, working_set=None) -> QpSolution:
    """Primal active-set method with lowest-index entering/leaving rules.

    Zero-curvature directions of the reduced Hessian are followed until a row
    blocks (convex, positive semidefinite case).  Negative curvature triggers
    damping: ``H`` is replaced by ``H + rho I`` with ``rho`` taken from the
    ``damping`` sequence, and the ``rho`` in force is reported.
    """
    n = qp.n
    eq, ineq = qp.index("eq"), qp.index("ineq")
    m = qp.A.shape[0]
    feas_tol = 1e-9 * max(1.0, np.abs(qp.b).max(initial=0.0))

    if x0 is None:
        x = _feasible_start(qp, eq, ineq, feas_tol)
        if x is None:
            return QpSolution(np.full(n, np.nan), np.zeros(m), "infeasible")
    else:
        x = np.array(x0, dtype=float)
        r = qp.A @ x + qp.b
        if np.abs(r[eq]).max(initial=0.0) > 1e3 * feas_tol or r[ineq].max(initial=-1.0) > 1e3 * feas_tol:
            raise QpError("starting point is infeasible")

    # working set: all equality rows (independent subset) + active inequalities
    W = []
    candidates = list(eq)
    r = qp.A @ x + qp.b
    if working_set is not None:
        candidates += [i for i in working_set if qp.kinds[i] == "ineq" and abs(r[i]) <= 1e3 * feas_tol]
    candidates += [i for i in ineq if abs(r[i]) <= feas_tol and i not in candidates]
    for i in candidates:
        if _independent(qp.A[W + [i]], 1e-10):
            W.append(int(i))
        elif qp.kinds[i] == "eq":
            # dependent equality: must be consistent with the ones kept
            pass
    scaleH = max(1.0, np.abs(qp.H).max(initial=0.0))
    rho_idx = -1
    rho = 0.0
    gam = np.zeros(m)

    for it in range(1, max_iter + 1):
        Hr = qp.H + rho * np.eye(n)
        g = Hr @ x + qp.c
        AW = qp.A[W]
        Z = null_space(AW) if W else np.eye(n)
        p = np.zeros(n)
        unbounded_dir = False
        if Z.shape[1]:
            Hz = Z.T @ Hr @ Z
            gz = Z.T @ g
            lam, U = np.linalg.eigh(Hz)
            if lam[0] < -1e-10 * scaleH:
                rho_idx += 1
                if rho_idx >= len(damping):
                    return QpSolution(x, gam, "indefinite", damping=rho, iterations=it, working_set=tuple(W))
                rho = damping[rho_idx] * scaleH
                log.info("QP reduced Hessian indefinite; damping rho=%g", rho)
                continue
            zero = lam <= 1e-11 * scaleH
            gn = U[:, zero] @ (U[:, zero].T @ gz)
            if np.linalg.norm(gn) > 1e-12 * max(1.0, np.linalg.norm(g)):
                p = -Z @ gn
                unbounded_dir = True
            else:
                inv = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, lam))
                p = -Z @ (U @ (inv * (U.T @ gz)))
        if np.linalg.norm(p) <= tol * max(1.0, np.linalg.norm(x)):
            # stationary on the working set: check multipliers
            gam = np.zeros(m)
            if W:
                gam[W] = np.linalg.lstsq(AW.T, -g, rcond=None)[0]
            neg = [i for i in W if qp.kinds[i] == "ineq" and gam[i] < -1e-12 * max(1.0, np.abs(gam).max())]
            if not neg:
                sol = QpSolution(x, gam, "optimal", damping=rho, iterations=it, working_set=tuple(W))
                sol.kkt_residual = kkt_residual(qp, sol)
                return sol
            W.remove(min(neg))
            continue
        # ratio test over inequality rows not in the working set
        Ap = qp.A @ p
        r = qp.A @ x + qp.b
        alpha, block = (np.inf if unbounded_dir else 1.0), None
        for i in ineq:
            if i in W or Ap[i] <= 1e-14 * np.linalg.norm(p) * max(1.0, np.linalg.norm(qp.A[i])):
                continue
            a_i = max(-r[i], 0.0) / Ap[i]
            if a_i < alpha - 1e-15:
                alpha, block = a_i, int(i)
        if not np.isfinite(alpha):
            return QpSolution(x, gam, "unbounded", damping=rho, iterations=it, working_set=tuple(W))
        x = x + alpha * p
        if block is not None:
            W.append(block)
    return QpSolution(x, gam, "max_iter", damping=rho, iterations=max_iter, working_set=tuple(W))


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------


def enumerate_oracle(qp: AuxiliaryQp, *, tol: float = 1e-9, max_rows: int = 12, rho: float = 0.0) -> QpSolution:
    """Try every subset of inequality rows as active and keep the best KKT point."""
    eq, ineq = list(qp.index("eq")), list(qp.index("ineq"))
    if len(ineq) > max_rows:
        raise QpError(f"oracle limited to {max_rows} inequality rows, got {len(ineq)}")
    n, m = qp.n, qp.A.shape[0]
    H = qp.H + rho * np.eye(n)
    best, best_obj = None, np.inf
    for k in range(len(ineq) + 1):
        for subset in itertools.combinations(ineq, k):
            act = eq + list(subset)
            Aa = qp.A[act]
            K = np.block([[H, Aa.T], [Aa, np.zeros((len(act), len(act)))]])
            rhs = np.concatenate([-qp.c, -qp.b[act]])
            try:
                if np.linalg.cond(K) > 1e12:
                    continue
                z = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam = z[:n], z[n:]
            r = qp.A[ineq] @ x + qp.b[ineq] if ineq else np.zeros(0)
            if r.size and r.max() > tol:
                continue
            if k and lam[len(eq):].min() < -tol:
                continue
            obj = 0.5 * x @ H @ x + qp.c @ x
            if obj < best_obj - 1e-14:
                gam = np.zeros(m)
                gam[act] = lam
                best_obj, best = obj, QpSolution(x, gam, "optimal", damping=rho, working_set=tuple(act))
    if best is None:
        return QpSolution(np.full(n, np.nan), np.zeros(m), "infeasible")
    best.kkt_residual = kkt_residual(qp, best)
    return best
