"""Linear soft-margin SVM with one down-weighted point.

Parameters are laid out as ``theta = (w, b, xi)`` where ``xi`` holds the slacks
of the kept points (all points except ``removed``).  The removed point enters
the objective through ``eta * C * softplus_beta(1 - y (w.x + b))``; the kept
points keep their hard margin and slack constraints.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .core import (ConstrainedProgram, KktPoint, LinearConstraint, PenaltyConfig, PointLoss, RemovalRequest,
                   Regularizer, WeightedDataset, WeightedObjective, rng_for)
from .qp import AuxiliaryQp, kkt_residual, solve
from .sqp import fit_program
from .unlearn import UnlearnError, UnlearnOptions, UnlearnResult, certify, lagrangian_derivatives

PARTITION_TOL = 1e-6


class SvmError(ValueError):
    pass


def softplus(u, beta):
    return np.logaddexp(0.0, beta * np.asarray(u, dtype=float)) / beta


def logistic(z):
    z = np.asarray(z, dtype=float)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


# ---------------------------------------------------------------------------
# program
# ---------------------------------------------------------------------------


@dataclass
class SvmLayout:
    d: int
    kept: tuple
    removed: int

    @property
    def dim(self):
        return self.d + 1 + len(self.kept)

    def xi_slot(self, j):  # j-th kept point
        return self.d + 1 + j

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta[: self.d], float(theta[self.d]), theta[self.d + 1:]


def _check_data(X, y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.size:
        raise SvmError("features and labels differ in length")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise SvmError("labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise SvmError("degenerate data: only one class present")
    return X, y


def svm_program(X, y, C: float, beta: float, removed: int, smooth: bool = True):
    """Weighted SVM as a constrained program (see module docstring).

    With ``smooth=False`` the removed point keeps the exact hinge through its
    own slack ``xi_N`` (cost ``eta C xi_N``) and its constraints are not linked
    to its weight; this form is used only for training at fixed weight.
    """
    X, y = _check_data(X, y)
    if C <= 0 or beta <= 0:
        raise SvmError("C and beta must be positive")
    n, d = X.shape
    kept = tuple(i for i in range(n) if i != removed)
    layout = SvmLayout(d, kept, int(removed))
    dim = layout.dim + (0 if smooth else 1)
    P = np.zeros((dim, dim))
    P[:d, :d] = np.eye(d)
    terms = [Regularizer(lambda th: 0.5 * th[:d] @ th[:d], lambda th: P @ th, lambda th: P)]
    ineq = []
    for j, i in enumerate(kept):
        s = layout.xi_slot(j)
        e = np.zeros(dim)
        e[s] = C
        terms.append(PointLoss(i, lambda th, s=s: C * th[s], lambda th, e=e: e, lambda th: np.zeros((dim, dim))))
    for j, i in enumerate(kept):
        a = np.zeros(dim)
        a[:d], a[d], a[layout.xi_slot(j)] = -y[i] * X[i], -y[i], -1.0
        ineq.append(LinearConstraint("ineq", (i,), a[None, :], [1.0], np.zeros(dim), name=f"margin{i}"))
    for j, i in enumerate(kept):
        a = np.zeros(dim)
        a[layout.xi_slot(j)] = -1.0
        ineq.append(LinearConstraint("ineq", (i,), a[None, :], [0.0], np.zeros(dim), name=f"slack{i}"))
    xN, yN = X[removed], y[removed]
    v = np.zeros(dim)
    v[:d], v[d] = xN, 1.0
    if smooth:
        def f(th):
            return C * float(softplus(1.0 - yN * (v @ th), beta))

        def g(th):
            return -C * yN * float(logistic(beta * (1.0 - yN * (v @ th)))) * v

        def h(th):
            s = float(logistic(beta * (1.0 - yN * (v @ th))))
            return C * beta * s * (1 - s) * np.outer(v, v)

        terms.append(PointLoss(removed, f, g, h))
    else:
        sN = dim - 1
        e = np.zeros(dim)
        e[sN] = C
        terms.append(PointLoss(removed, lambda th: C * th[sN], lambda th: e, lambda th: np.zeros((dim, dim))))
        a = v * -yN
        a[sN] = -1.0
        ineq.append(LinearConstraint.fixed("ineq", a, 1.0, name=f"margin{removed}"))
        a = np.zeros(dim)
        a[sN] = -1.0
        ineq.append(LinearConstraint.fixed("ineq", a, 0.0, name=f"slack{removed}"))
    return ConstrainedProgram(dim, n, terms, ineq), layout


def weighted_objective(X, y, w, b, C, removed, eta, beta=None) -> float:
    """Objective of the weighted SVM at (w, b) with slacks at their optimal values.

    ``beta=None`` uses the exact hinge for the removed point.
    """
    X, y = _check_data(X, y)
    m = y * (X @ w + b)
    hinge = np.maximum(0.0, 1.0 - m)
    kept = np.arange(len(y)) != removed
    u = 1.0 - m[removed]
    tail = max(0.0, u) if beta is None else float(softplus(u, beta))
    return float(0.5 * w @ w + C * hinge[kept].sum() + eta * C * tail)


def plain_objective(X, y, w, b, C) -> float:
    X, y = _check_data(X, y)
    return float(0.5 * w @ w + C * np.maximum(0.0, 1.0 - y * (X @ w + b)).sum())


# ---------------------------------------------------------------------------
# model, partition, training
# ---------------------------------------------------------------------------


@dataclass
class SupportPartition:
    S: tuple
    E0: tuple
    E1: tuple
    R0: tuple
    R1: tuple
    alpha: np.ndarray
    mu: np.ndarray
    kept: tuple = ()

    def label_of(self, i) -> str:
        for name in ("S", "E0", "E1", "R0", "R1"):
            if i in getattr(self, name):
                return name
        raise KeyError(i)

    def summary(self) -> dict:
        return {name: list(getattr(self, name)) for name in ("S", "E0", "E1", "R0", "R1")}


@dataclass
class SvmModel:
    w: np.ndarray
    b: float
    xi: np.ndarray
    C: float
    beta: float
    removed: int
    eta: float = 1.0
    kkt: KktPoint = None
    partition: SupportPartition = None
    train_time_s: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def theta(self):
        return np.concatenate([self.w, [self.b], self.xi])

    def decision(self, X):
        return np.atleast_2d(X) @ self.w + self.b

    def to_json(self) -> dict:
        d = {"task": "svm", "w": self.w.tolist(), "b": float(self.b), "xi": self.xi.tolist(), "C": self.C,
             "beta": self.beta, "removed": int(self.removed), "eta": self.eta, "partition": None, "kkt": None,
             **self.meta}
        if self.partition is not None:
            p = self.partition
            d["partition"] = {**p.summary(), "alpha": p.alpha.tolist(), "kept": list(p.kept)}
        if self.kkt is not None:
            d["kkt"] = {"lambda_g": self.kkt.lambda_g.tolist(), "lambda_h": self.kkt.lambda_h.tolist()}
        return d

    @classmethod
    def from_json(cls, d) -> "SvmModel":
        m = cls(np.array(d["w"], dtype=float), float(d["b"]), np.array(d["xi"], dtype=float), d["C"], d["beta"],
                int(d["removed"]), d.get("eta", 1.0))
        if d.get("kkt"):
            m.kkt = KktPoint(m.theta, np.array(d["kkt"]["lambda_g"], dtype=float),
                             np.array(d["kkt"]["lambda_h"], dtype=float))
        p = d.get("partition")
        if p and "alpha" in p:
            alpha = np.array(p["alpha"], dtype=float)
            m.partition = SupportPartition(*(tuple(p[k]) for k in ("S", "E0", "E1", "R0", "R1")), alpha,
                                           m.C - alpha, tuple(p["kept"]))
        return m


def partition_vectors(alpha, margins, C, kept=None, tol: float = PARTITION_TOL) -> SupportPartition:
    """Assign every kept point to S, E0, E1, R0 or R1.

    ``margins`` are the values ``y_i (w.x_i + b)``; ``alpha`` the margin
    multipliers.  Indices refer to ``kept`` (defaults to ``range(len(alpha))``).
    """
    alpha = np.asarray(alpha, dtype=float)
    margins = np.asarray(margins, dtype=float)
    kept = tuple(range(alpha.size)) if kept is None else tuple(kept)
    sets = {k: [] for k in ("S", "E0", "E1", "R0", "R1")}
    for i, a, m in zip(kept, alpha, margins):
        gap = m - 1.0
        if a < -tol or a > C + tol:
            raise SvmError(f"point {i}: multiplier {a:g} outside [0, C]")
        if a <= tol:
            if abs(gap) <= tol:
                sets["R0"].append(i)
            elif gap > tol:
                sets["R1"].append(i)
            else:
                raise SvmError(f"point {i}: alpha=0 but margin {m:g} < 1")
        elif a >= C - tol:
            if abs(gap) <= tol:
                sets["E0"].append(i)
            elif gap < -tol:
                sets["E1"].append(i)
            else:
                raise SvmError(f"point {i}: alpha=C but margin {m:g} > 1")
        else:
            if abs(gap) > tol:
                raise SvmError(f"point {i}: 0<alpha<C but margin {m:g} != 1")
            sets["S"].append(i)
    mu = C - alpha
    return SupportPartition(*(tuple(sets[k]) for k in ("S", "E0", "E1", "R0", "R1")), alpha, mu, kept)


def train(X, y, C: float = 1.0, beta: float = 50.0, removed: int = None, eta: float = 1.0,
          smooth: bool = True, tol: float = PARTITION_TOL) -> SvmModel:
    """Solve the weighted SVM to KKT tolerance and partition the kept points."""
    X, y = _check_data(X, y)
    n, d = X.shape
    removed = n - 1 if removed is None else int(removed)
    if not 0 <= removed < n:
        raise SvmError(f"removed index {removed} out of range")
    prog, layout = svm_program(X, y, C, beta, removed, smooth=smooth)
    obj = WeightedObjective(prog, WeightedDataset.full(range(n)), RemovalRequest((removed,)), PenaltyConfig())
    theta0 = np.zeros(prog.dim)
    theta0[d + 1:] = 1.0
    t0 = time.perf_counter()
    kkt = fit_program(obj, [eta], theta0)
    elapsed = time.perf_counter() - t0
    w, b, xi = layout.split(kkt.theta)
    if not smooth:
        xi = xi[:-1]
        nk = len(layout.kept)
        lg = np.concatenate([kkt.lambda_g[:nk], kkt.lambda_g[nk + 1: 2 * nk + 1]])
        kkt = KktPoint(np.concatenate([w, [b], xi]), lg, kkt.lambda_h, kkt.residuals)
    nk = len(layout.kept)
    alpha = kkt.lambda_g[:nk]
    margins = y[list(layout.kept)] * (X[list(layout.kept)] @ w + b)
    part = partition_vectors(alpha, margins, C, layout.kept, tol)
    return SvmModel(w, b, xi, C, beta, removed, eta, kkt, part, elapsed)


def retrain(X, y, C: float = 1.0, beta: float = 50.0, removed: int = None) -> SvmModel:
    """Gold standard: the plain soft-margin SVM on the N - 1 kept points."""
    X, y = _check_data(X, y)
    removed = len(y) - 1 if removed is None else int(removed)
    keep = np.arange(len(y)) != removed
    m = train(X[keep], y[keep], C, beta, removed=int(keep.sum()) - 1, smooth=False)
    m.meta = {"retrained_without": removed}
    return m


def predict_accuracy(w, b, X, y) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise SvmError("empty dataset")
    return float(np.mean(np.sign(X @ np.asarray(w) + b) == y))


# ---------------------------------------------------------------------------
# auxiliary problem
# ---------------------------------------------------------------------------


@dataclass
class SmoothedHingeTerms:
    sigma: float
    bigM: float
    gamma_vec: np.ndarray
    form: str = "logistic"


def smoothed_hinge_terms(model: SvmModel, X, y, q: float = -1.0, form: str = "logistic") -> SmoothedHingeTerms:
    """sigma, M = sigma (1 - sigma) and gamma at the trained point.

    ``form="logistic"`` uses the derivative of the Softplus term (the logistic
    function of ``beta u``); ``form="literal"`` evaluates
    ``exp(beta u) / (1 + ln(1 + exp(beta u)))`` instead.
    """
    X, y = _check_data(X, y)
    xN, yN = X[model.removed], y[model.removed]
    u = 1.0 - yN * (xN @ model.w + model.b)
    if form == "logistic":
        sigma = float(logistic(model.beta * u))
    elif form == "literal":
        e = np.exp(model.beta * u)
        sigma = float(e / (1.0 + np.log1p(e)))
    else:
        raise SvmError(f"unknown sigma form {form!r}")
    M = sigma * (1.0 - sigma)
    nk = X.shape[0] - 1
    gamma = np.concatenate([q * model.C * yN * sigma * xN, [q * model.C * sigma * yN], np.zeros(nk)])
    return SmoothedHingeTerms(sigma, M, gamma, form)


def assemble_aux_svm(model: SvmModel, partition: SupportPartition, terms: SmoothedHingeTerms, X, y,
                     e1_margin_free: bool = False, doubled_bias_coefficient: bool = False) -> AuxiliaryQp:
    """Auxiliary QP in (dw, db, dxi) for removing the down-weighted point.

    Objective ``0.5 dw'dw + (C beta M / 2) (dw.x_N + db)^2 - gamma . dtheta``;
    rows are the linearized margin rows ``g_i`` followed by the slack rows
    ``h_i`` with kinds set by the support partition.
    """
    X, y = _check_data(X, y)
    d = X.shape[1]
    kept = partition.kept
    nk = len(kept)
    n = d + 1 + nk
    xN = X[model.removed]
    k = model.C * model.beta * terms.bigM * model.eta
    H = np.zeros((n, n))
    H[:d, :d] = np.eye(d) + k * np.outer(xN, xN)
    H[:d, d] = H[d, :d] = k * xN
    H[d, d] = 2 * k if doubled_bias_coefficient else k
    c = -terms.gamma_vec
    A = np.zeros((2 * nk, n))
    b = np.zeros(2 * nk)
    kinds = []
    for j, i in enumerate(kept):
        A[j, :d], A[j, d], A[j, d + 1 + j] = -y[i] * X[i], -y[i], -1.0
        b[j] = 1.0 - model.xi[j] - y[i] * (X[i] @ model.w + model.b)
        cls = partition.label_of(i)
        if cls in ("S", "E0") or (cls == "E1" and not e1_margin_free):
            kinds.append("eq")
        elif cls == "R0":
            kinds.append("ineq")
        else:
            kinds.append("free")
    for j, i in enumerate(kept):
        A[nk + j, d + 1 + j] = -1.0
        b[nk + j] = -model.xi[j]
        cls = partition.label_of(i)
        kinds.append({"S": "eq", "R0": "eq", "R1": "eq", "E0": "ineq", "E1": "free"}[cls])
    labels = tuple(f"g{i}" for i in kept) + tuple(f"h{i}" for i in kept)
    return AuxiliaryQp(H, c, A, b, kinds, labels)


def unlearn_svm(model: SvmModel, X, y, q: float = -1.0, form: str = "logistic",
                e1_margin_free: bool = False) -> tuple[SvmModel, UnlearnResult]:
    """Remove the down-weighted point by one auxiliary QP solve."""
    X, y = _check_data(X, y)
    t0 = time.perf_counter()
    terms = smoothed_hinge_terms(model, X, y, q, form)
    qp = assemble_aux_svm(model, model.partition, terms, X, y, e1_margin_free)
    # offsets of tight rows are round-off; snap them so dtheta = 0 is a valid start
    tight = np.array([k != "free" for k in qp.kinds]) & (np.abs(qp.b) <= 1e-7)
    qp.b[tight & (np.array(qp.kinds) == "eq")] = 0.0
    qp.b[tight & (np.array(qp.kinds) == "ineq")] = np.minimum(qp.b[tight & (np.array(qp.kinds) == "ineq")], 0.0)
    sol = solve(qp, x0=np.zeros(qp.n))
    if not sol.optimal:
        raise UnlearnError(f"auxiliary SVM QP {sol.status}")
    d = X.shape[1]
    dth = sol.delta_theta
    nk = len(model.partition.kept)
    res = UnlearnResult(dth, {"g": sol.multipliers[: 2 * nk].copy(), "h": np.zeros(0)}, model.theta + dth, "aux_qp",
                        damping=sol.damping, qp=qp, qp_solution=sol, direction=np.array([q]))
    res.vi_residual = kkt_residual(qp, sol)
    res.feasibility_report = feasibility_table(X, y, model.w + dth[:d], model.b + dth[d], model.xi + dth[d + 1:],
                                               model.partition.kept)
    res.timings = {"total_s": time.perf_counter() - t0}
    new = SvmModel(model.w + dth[:d], model.b + dth[d], model.xi + dth[d + 1:], model.C, model.beta,
                   model.removed, model.eta + q, meta={"unlearned": True})
    return new, res


def feasibility_table(X, y, w, b, xi, kept) -> list:
    """Margin and slack rows of the kept points: value and violation."""
    table = []
    for j, i in enumerate(kept):
        g = 1.0 - y[i] * (X[i] @ w + b) - xi[j]
        table.append({"name": f"margin{i}", "kind": "ineq", "value": float(g), "violation": float(max(g, 0.0))})
        table.append({"name": f"slack{i}", "kind": "ineq", "value": float(-xi[j]),
                      "violation": float(max(-xi[j], 0.0))})
    return table


def bias_from_support(dw, dxi, partition: SupportPartition, X, y) -> np.ndarray:
    """db implied by each margin support vector: y_i x_i.dw + y_i db + dxi_i = 0."""
    X, y = _check_data(X, y)
    out = []
    for j, i in enumerate(partition.kept):
        if i in partition.S:
            out.append(-(y[i] * (X[i] @ dw) + dxi[j]) / y[i])
    return np.array(out)


def generic_unlearn(model: SvmModel, X, y, opts: UnlearnOptions = None) -> UnlearnResult:
    """Same removal through the generic weighted-program path (cross-check)."""
    from .unlearn import unlearn

    X, y = _check_data(X, y)
    prog, _ = svm_program(X, y, model.C, model.beta, model.removed)
    ds = WeightedDataset.full(range(len(y)))
    return unlearn(model.kkt, prog, ds, RemovalRequest((model.removed,)), PenaltyConfig(), opts)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def gaussian_two_class(n: int = 60, seed: int = 0, separation: float = 1.5, scale: float = 1.0):
    """Two isotropic Gaussian blobs in 2D, labels +1 / -1, half the points each."""
    rng = rng_for(seed, "data")
    n_pos = n // 2
    mu = np.array([separation, separation]) / np.sqrt(2.0)
    X = np.vstack([rng.normal(mu, scale, size=(n_pos, 2)), rng.normal(-mu, scale, size=(n - n_pos, 2))])
    y = np.concatenate([np.ones(n_pos), -np.ones(n - n_pos)])
    perm = rng.permutation(n)
    return X[perm], y[perm]


def select_removal(X, y, C: float, kind: str, tol: float = PARTITION_TOL, beta: float = 50.0) -> int:
    """Pick a point to remove from the plain SVM solution.

    ``reserve``: the reserve point with the largest margin.  ``support``: the
    margin support vector with the largest multiplier.  ``error``: the error
    vector with the deepest margin violation among those not misclassified
    (``0 < margin < 1``), falling back to the deepest one overall.
    """
    X, y = _check_data(X, y)
    base = train(X, y, C, beta, removed=len(y) - 1, smooth=False, tol=tol)
    w, b = base.w, base.b
    margins = y * (X @ w + b)
    part = base.partition
    if kind == "reserve":
        pool = list(part.R1) + list(part.R0)
        if not pool:
            raise SvmError("no reserve points")
        return int(max(pool, key=lambda i: margins[i]))
    if kind == "support":
        if not part.S:
            raise SvmError("no margin support vectors")
        alpha = dict(zip(part.kept, part.alpha))
        return int(max(part.S, key=lambda i: (alpha[i], -i)))
    if kind == "error":
        pool = [i for i in part.E1 if margins[i] > 0] or list(part.E1)
        if not pool:
            raise SvmError("no error vectors")
        return int(min(pool, key=lambda i: margins[i]))
    raise SvmError(f"unknown removal kind {kind!r}")


def load_dataset(path):
    """Delimited text, one row per point: f1,...,fd,label."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return _check_data(data[:, :-1], data[:, -1])


def save_dataset(path, X, y):
    np.savetxt(path, np.column_stack([X, y]), delimiter=",", fmt="%.17g")


def save_model(path, model: SvmModel):
    with open(path, "w") as fh:
        json.dump(model.to_json(), fh, indent=2, sort_keys=True)
