"""Unlearning by solving the auxiliary problem at a trained KKT point."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh

from .core import ConstrainedProgram, KktPoint, PenaltyConfig, RemovalRequest, WeightedDataset, WeightedObjective
from .diff import DENSE_LIMIT, DerivativeBundle, hessian_vector_product, lagrangian_derivatives
from .qp import AuxiliaryQp, QpSolution, kkt_residual, solve

log = logging.getLogger(__name__)


class KktInconsistency(ValueError):
    pass


class UnlearnError(RuntimeError):
    pass


@dataclass
class UnlearnOptions:
    eps_act: float = 1e-6
    stationarity_tol: float = 1e-6
    mode: str = "analytic"
    damping_init: float = 0.0  # absolute rho for the first attempt
    damping_growth: float = 10.0
    damping_max_tries: int = 12
    dense_limit: int = DENSE_LIMIT
    cg_tol: float = 1e-10
    cg_max_iter: int = 2000


@dataclass
class IndexPartition:
    I: tuple
    I0: tuple
    I1: tuple
    eps_act: float
    warnings: tuple = ()


@dataclass
class UnlearnResult:
    delta_theta: np.ndarray
    delta_lambda: dict
    theta_updated: np.ndarray
    method: str
    feasibility_report: list = field(default_factory=list)
    damping: float = 0.0
    carried_gradient: bool = False
    vi_residual: float = np.nan
    timings: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    qp: AuxiliaryQp = None
    qp_solution: QpSolution = None
    bundle: DerivativeBundle = None
    partition: IndexPartition = None
    direction: np.ndarray = None
    damping_trials: list = field(default_factory=list)

    def report(self) -> dict:
        return {
            "method": self.method,
            "delta_theta_norm": float(np.linalg.norm(self.delta_theta)),
            "damping": float(self.damping),
            "carried_gradient": bool(self.carried_gradient),
            "vi_residual": float(self.vi_residual),
            "feasibility": self.feasibility_report,
            "warnings": list(self.warnings),
            "damping_trials": list(self.damping_trials),
            "timings": dict(self.timings),
        }


def classify_index_sets(g_values, lambda_g, eps_act: float = 1e-6) -> IndexPartition:
    """Active (I), weakly active (I0) and inactive (I1) hard inequalities."""
    g = np.asarray(g_values, dtype=float)
    lam = np.asarray(lambda_g, dtype=float)
    if g.shape != lam.shape:
        raise KktInconsistency("constraint values and multipliers differ in length")
    I, I0, I1, warn = [], [], [], []
    for j, (gj, lj) in enumerate(zip(g, lam)):
        if lj < -eps_act:
            raise KktInconsistency(f"negative multiplier {lj:g} on inequality {j}")
        if abs(gj) <= eps_act:
            I.append(j)
            if lj <= eps_act:
                I0.append(j)
        elif gj < -eps_act:
            I1.append(j)
            if lj > eps_act:
                warn.append(f"inequality {j} inactive (g={gj:.3g}) with multiplier {lj:.3g}")
        else:
            raise KktInconsistency(f"inequality {j} violated: g={gj:g}")
    return IndexPartition(tuple(I), tuple(I0), tuple(I1), eps_act, tuple(warn))


def assemble_auxiliary(bundle: DerivativeBundle, part: IndexPartition, req: RemovalRequest,
                       stationarity_tol: float = 1e-6, warnings=None):
    """Quadratic model of the Lagrangian plus linearized hard constraints.

    Returns ``(qp, carried)`` where ``carried`` says whether the stationarity
    residual was large enough to be kept in the linear term.
    """
    if bundle.hess_theta is None:
        raise UnlearnError("auxiliary QP needs a materialized Hessian")
    q = req.direction
    if bundle.mixed_theta_eta.shape[1] != q.size:
        raise UnlearnError(f"cross block has {bundle.mixed_theta_eta.shape[1]} columns, request has {q.size}")
    c = bundle.mixed_theta_eta @ q
    stat = float(np.abs(bundle.grad_theta).max(initial=0.0))
    carried = stat > stationarity_tol
    if carried:
        msg = f"stationarity residual {stat:.3g} exceeds {stationarity_tol:g}; kept in the linear term"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        c = c + bundle.grad_theta
    ng = bundle.g_values.size
    kinds, labels = [], []
    strong = set(part.I) - set(part.I0)
    for j in range(ng):
        kinds.append("eq" if j in strong else "ineq" if j in part.I0 else "free")
        labels.append(f"g{j}")
    kinds += ["eq"] * bundle.h_values.size
    labels += [f"h{t}" for t in range(bundle.h_values.size)]
    A = np.vstack([bundle.g_jac, bundle.h_jac])
    b = np.concatenate([bundle.g_values, bundle.h_values])
    return AuxiliaryQp(bundle.hess_theta, c, A, b, kinds, tuple(labels)), carried


# ---------------------------------------------------------------------------
# unconstrained path
# ---------------------------------------------------------------------------


def conjugate_gradient(matvec, b, tol=1e-10, max_iter=2000):
    """Plain CG; raises on non-positive curvature so the caller can damp."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = r @ r
    bnorm = max(np.linalg.norm(b), 1e-300)
    for it in range(1, max_iter + 1):
        if np.sqrt(rs) <= tol * bnorm:
            return x, it - 1
        Ap = matvec(p)
        curv = p @ Ap
        if curv <= 0:
            raise np.linalg.LinAlgError("non-positive curvature in CG")
        a = rs / curv
        x += a * p
        r -= a * Ap
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
    if np.sqrt(rs) <= tol * bnorm:
        return x, max_iter
    raise UnlearnError(f"CG stagnated: relative residual {np.sqrt(rs) / bnorm:.3g} after {max_iter} iterations")


def _damped_solve(bundle, rhs, opts: UnlearnOptions):
    """Solve (H + rho I) x = rhs, growing rho until the system is positive definite."""
    n = bundle.dim
    dense = bundle.hess_theta is not None and n <= opts.dense_limit
    if dense:
        H = bundle.hess_theta
        scale = max(float(np.abs(np.diag(H)).mean()), 1e-12)
    else:
        scale = max(float(np.mean([abs(hessian_vector_product(bundle, e)[i])
                                   for i, e in ((i, np.eye(n)[i]) for i in range(min(n, 16)))])), 1e-12)
    rho = opts.damping_init
    for attempt in range(opts.damping_max_tries):
        try:
            if dense:
                L = np.linalg.cholesky(H + rho * np.eye(n))
                y = np.linalg.solve(L, rhs)
                return np.linalg.solve(L.T, y), rho, "influence"
            x, _ = conjugate_gradient(lambda v: hessian_vector_product(bundle, v) + rho * v, rhs,
                                      opts.cg_tol, opts.cg_max_iter)
            return x, rho, "matrix_free"
        except np.linalg.LinAlgError:
            base = max(opts.damping_init, 1e-8 * scale)
            if dense and attempt == 0:
                # shift past the most negative eigenvalue, keeping a margin of `base`
                lam_min = float(eigvalsh(H, subset_by_index=[0, 0])[0])
                rho = base + max(0.0, -lam_min)
            else:
                rho = max(rho * opts.damping_growth, base)
            log.info("damping increased to rho=%g", rho)
    raise UnlearnError("damping exhausted without a positive definite system")


def influence_unconstrained(bundle: DerivativeBundle, req: RemovalRequest, opts: UnlearnOptions = None,
                            warnings=None) -> UnlearnResult:
    """Influence-function step ``-(H + rho I)^-1 (cross block @ q)``."""
    opts = opts or UnlearnOptions()
    if bundle.has_constraints:
        raise UnlearnError("influence path requires a problem without hard constraints")
    warnings = [] if warnings is None else warnings
    q = req.direction
    if bundle.mixed_theta_eta.shape[1] != q.size:
        raise UnlearnError(f"cross block has {bundle.mixed_theta_eta.shape[1]} columns, request has {q.size}")
    rhs = bundle.mixed_theta_eta @ q
    stat = float(np.abs(bundle.grad_theta).max(initial=0.0))
    carried = stat > opts.stationarity_tol
    if carried:
        msg = f"stationarity residual {stat:.3g} exceeds {opts.stationarity_tol:g}; kept in the linear term"
        log.warning(msg)
        warnings.append(msg)
        rhs = rhs + bundle.grad_theta
    if not np.any(rhs):
        dtheta, rho, method = np.zeros(bundle.dim), 0.0, "influence"
    else:
        dtheta, rho, method = _damped_solve(bundle, -rhs, opts)
    return UnlearnResult(dtheta, {"g": np.zeros(0), "h": np.zeros(0)}, None, method, damping=rho,
                         carried_gradient=carried, warnings=warnings, bundle=bundle, direction=q)


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def unlearn(kkt: KktPoint, prog: ConstrainedProgram, ds: WeightedDataset, req: RemovalRequest,
            pen: PenaltyConfig = None, opts: UnlearnOptions = None, obj: WeightedObjective = None) -> UnlearnResult:
    """Estimate the parameters retrained without ``req.removed_indices``."""
    opts = opts or UnlearnOptions()
    obj = obj or WeightedObjective(prog, ds, req, pen or PenaltyConfig())
    t0 = time.perf_counter()
    bundle = lagrangian_derivatives(obj, kkt, opts.mode)
    t1 = time.perf_counter()
    warnings = []
    theta = np.asarray(kkt.theta, dtype=float)
    if np.all(req.direction == 0):
        res = UnlearnResult(np.zeros(obj.dim), {"g": np.zeros(len(obj.hard_ineq)), "h": np.zeros(len(obj.hard_eq))},
                            None, "aux_qp" if bundle.has_constraints else "influence", bundle=bundle,
                            direction=req.direction)
    elif not bundle.has_constraints:
        res = influence_unconstrained(bundle, req, opts, warnings)
    else:
        part = classify_index_sets(bundle.g_values, kkt.lambda_g, opts.eps_act)
        warnings += list(part.warnings)
        qp, carried = assemble_auxiliary(bundle, part, req, opts.stationarity_tol, warnings)
        sol = solve(qp, x0=np.zeros(qp.n) if _zero_feasible(qp) else None)
        if not sol.optimal:
            raise UnlearnError(f"auxiliary QP {sol.status}")
        ng = bundle.g_values.size
        gam = sol.multipliers
        res = UnlearnResult(sol.delta_theta, {"g": gam[:ng].copy(), "h": gam[ng:].copy()}, None, "aux_qp",
                            damping=sol.damping, carried_gradient=carried, warnings=warnings, qp=qp,
                            qp_solution=sol, bundle=bundle, partition=part, direction=req.direction)
    res.theta_updated = theta + res.delta_theta
    res.timings = {"derivatives_s": t1 - t0, "solve_s": time.perf_counter() - t1}
    certify(res, obj)
    res.timings["total_s"] = time.perf_counter() - t0
    return res


def _zero_feasible(qp: AuxiliaryQp, tol: float = 1e-8) -> bool:
    r = qp.b
    eq, ineq = qp.index("eq"), qp.index("ineq")
    return np.abs(r[eq]).max(initial=0.0) <= tol and r[ineq].max(initial=-1.0) <= tol


def vi_residual(bundle: DerivativeBundle, result: UnlearnResult, kinds=None) -> float:
    """Residual of the auxiliary variational inequality at (delta_theta, gamma).

    Stationarity ``H dtheta + J' gamma + cross @ q`` (plus the carried
    gradient, if any) and the sign structure of the multiplier set: free
    rows carry zero multipliers, weakly active rows carry non-negative ones
    that vanish unless the linearized row is tight.
    """
    dth = result.delta_theta
    q = result.direction
    gam_g, gam_h = result.delta_lambda["g"], result.delta_lambda["h"]
    stat = hessian_vector_product(bundle, dth) + bundle.mixed_theta_eta @ q + result.damping * dth
    if gam_g.size:
        stat = stat + bundle.g_jac.T @ gam_g
    if gam_h.size:
        stat = stat + bundle.h_jac.T @ gam_h
    if result.carried_gradient:
        stat = stat + bundle.grad_theta
    parts = [np.abs(stat).max(initial=0.0)]
    if kinds is not None and gam_g.size:
        lin = bundle.g_values + bundle.g_jac @ dth
        for j, k in enumerate(kinds[: gam_g.size]):
            if k == "free":
                parts.append(abs(gam_g[j]))
            elif k == "ineq":
                parts += [max(-gam_g[j], 0.0), abs(gam_g[j] * lin[j]), max(lin[j], 0.0)]
            else:
                parts.append(abs(lin[j]))
    if gam_h.size:
        parts.append(np.abs(bundle.h_values + bundle.h_jac @ dth).max(initial=0.0))
    return float(max(parts))


def certify(result: UnlearnResult, obj: WeightedObjective) -> dict:
    """Evaluate remaining hard constraints at the updated parameters and the VI residual."""
    theta = result.theta_updated
    g, h = obj.constraint_values(theta)
    table = []
    for j, (c, v) in enumerate(zip(obj.hard_ineq, g)):
        table.append({"name": c.name or f"g{j}", "kind": "ineq", "value": float(v), "violation": float(max(v, 0.0))})
    for t, (c, v) in enumerate(zip(obj.hard_eq, h)):
        table.append({"name": c.name or f"h{t}", "kind": "eq", "value": float(v), "violation": float(abs(v))})
    result.feasibility_report = table
    kinds = result.qp.kinds if result.qp is not None else None
    result.vi_residual = vi_residual(result.bundle, result, kinds) if result.bundle is not None else np.nan
    if result.qp_solution is not None:
        result.qp_solution.kkt_residual = kkt_residual(result.qp, result.qp_solution)
    return {
        "max_violation": max((r["violation"] for r in table), default=0.0),
        "vi_residual": result.vi_residual,
        "constraints": table,
    }
