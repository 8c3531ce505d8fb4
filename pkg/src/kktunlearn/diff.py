"""Derivative blocks of the weighted Lagrangian used by the auxiliary problem."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import KktPoint, WeightedObjective

DENSE_LIMIT = 2000
FD_STEP = 1e-5


class DerivativeError(RuntimeError):
    pass


@dataclass
class DerivativeBundle:
    """Gradient, Hessian (or HVP oracle) and theta/eta cross block at one point.

    ``g_values``/``g_jac`` and ``h_values``/``h_jac`` describe the hard
    constraints that remain in the weighted problem.
    """

    grad_theta: np.ndarray
    mixed_theta_eta: np.ndarray
    hess_theta: Optional[np.ndarray] = None
    hvp: Optional[Callable] = None
    g_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    g_jac: np.ndarray = None
    h_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    h_jac: np.ndarray = None
    mode: str = "analytic"

    def __post_init__(self):
        n = self.grad_theta.size
        self.mixed_theta_eta = np.asarray(self.mixed_theta_eta, dtype=float).reshape(n, -1)
        if self.g_jac is None:
            self.g_jac = np.zeros((0, n))
        if self.h_jac is None:
            self.h_jac = np.zeros((0, n))
        if self.hess_theta is None and self.hvp is None:
            raise DerivativeError("bundle needs a dense Hessian or an HVP oracle")
        if self.hess_theta is not None:
            H = np.asarray(self.hess_theta, dtype=float)
            if H.shape != (n, n):
                raise DerivativeError("Hessian shape does not match gradient")
            self.hess_theta = H
        for name in ("grad_theta", "mixed_theta_eta", "g_values", "h_values"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DerivativeError(f"non-finite values in {name}")

    @property
    def dim(self) -> int:
        return self.grad_theta.size

    @property
    def has_constraints(self) -> bool:
        return self.g_values.size + self.h_values.size > 0

    def symmetry_error(self) -> float:
        if self.hess_theta is None:
            return 0.0
        return float(np.abs(self.hess_theta - self.hess_theta.T).max())

    def dense_hessian(self) -> np.ndarray:
        if self.hess_theta is not None:
            return self.hess_theta
        if self.dim > DENSE_LIMIT:
            raise DerivativeError(f"refusing to materialize a {self.dim}x{self.dim} Hessian")
        H = np.column_stack([self.hvp(e) for e in np.eye(self.dim)])
        return 0.5 * (H + H.T)


def hessian_vector_product(bundle: DerivativeBundle, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (bundle.dim,):
        raise DerivativeError(f"vector has shape {v.shape}, expected ({bundle.dim},)")
    if bundle.hess_theta is not None:
        return bundle.hess_theta @ v
    return np.asarray(bundle.hvp(v), dtype=float)


# ---------------------------------------------------------------------------
# central differences
# ---------------------------------------------------------------------------


def fd_gradient(f: Callable, x, h: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(F: Callable, x, h: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of a vector function, columns per input."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        cols.append((np.asarray(F(x + e)) - np.asarray(F(x - e))) / (2 * h))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def lagrangian_derivatives(obj: WeightedObjective, kkt: KktPoint, mode: str = "analytic",
                           h: float = FD_STEP, eta_K=None) -> DerivativeBundle:
    """Derivatives of the weighted Lagrangian at ``(eta_K, theta, lambda)``.

    ``eta_K`` defaults to all ones.  ``mode="finite_difference"`` builds the
    gradient from values, the Hessian from differences of the gradient and the
    cross block from differences of the gradient in eta.
    """
    theta = np.asarray(kkt.theta, dtype=float)
    lg, lh = np.asarray(kkt.lambda_g, dtype=float), np.asarray(kkt.lambda_h, dtype=float)
    eta_K = np.ones(obj.n_weights) if eta_K is None else np.asarray(eta_K, dtype=float)
    g_val, h_val = obj.constraint_values(theta)
    Jg, Jh = obj.constraint_jacobians(theta)
    if mode == "analytic":
        grad = obj.lagrangian_grad(eta_K, theta, lg, lh)
        H = obj.lagrangian_hess(eta_K, theta, lg, lh)
        mixed = obj.mixed(eta_K, theta)
    elif mode == "finite_difference":
        grad = fd_gradient(lambda th: obj.lagrangian(eta_K, th, lg, lh), theta, h)
        H = fd_jacobian(lambda th: obj.lagrangian_grad(eta_K, th, lg, lh), theta, h)
        H = 0.5 * (H + H.T)
        mixed = fd_jacobian(lambda e: obj.lagrangian_grad(e, theta, lg, lh), eta_K, h)
    else:
        raise DerivativeError(f"unknown derivative mode {mode!r}")
    return DerivativeBundle(grad, mixed, hess_theta=H, g_values=g_val, g_jac=Jg,
                            h_values=h_val, h_jac=Jh, mode=mode)


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------


def _rel_error(a, b, clip: float) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        return np.inf
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.abs(a), np.abs(b))
    diff = np.abs(a - b)
    err = np.where(scale < clip, diff, diff / np.where(scale < clip, 1.0, scale))
    return float(err.max())


def finite_difference_check(analytic: DerivativeBundle, numeric: DerivativeBundle, rtol: float = 1e-4,
                            clip: float = 1e-8) -> dict:
    """Blockwise max relative error; entries below ``clip`` compare absolutely."""
    blocks = {
        "grad": (analytic.grad_theta, numeric.grad_theta),
        "hess": (analytic.dense_hessian(), numeric.dense_hessian()),
        "mixed": (analytic.mixed_theta_eta, numeric.mixed_theta_eta),
    }
    report = {}
    for name, (a, b) in blocks.items():
        err = _rel_error(a, b, clip)
        report[name] = {"max_rel_error": err, "passed": bool(err <= rtol)}
    report["passed"] = all(v["passed"] for v in report.values())
    return report
