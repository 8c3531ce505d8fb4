"""Weighted constrained learning problems.

A problem is a list of smooth objective terms (per-point losses and shared
regularizers) plus data-linked inequality/equality constraints.  Every term
and constraint sees the data weights ``eta`` of the points it touches, so a
removal request can be expressed as moving those weights from 1 toward 0.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

SUBSTREAMS = ("data", "init", "split", "removal")


class ProblemError(ValueError):
    """Raised for malformed problems, datasets or removal requests."""


def rng_for(seed: int, name: str) -> np.random.Generator:
    """Named, independent random substream derived from one integer seed."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))


# ---------------------------------------------------------------------------
# data and requests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightedDataset:
    points: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.points),):
            raise ProblemError("weights length must equal number of points")
        if np.any(w < 0.0) or np.any(w > 1.0):
            raise ProblemError("data weights must lie in [0, 1]")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def full(cls, points: Sequence[Any]) -> "WeightedDataset":
        return cls(tuple(points), np.ones(len(points)))

    @property
    def n(self) -> int:
        return len(self.points)

    def with_weights(self, weights) -> "WeightedDataset":
        return WeightedDataset(self.points, np.asarray(weights, dtype=float))


@dataclass(frozen=True)
class RemovalRequest:
    """Indices ``K`` (0-based) whose weights move from 1 to ``target_weight``.

    With ``shared=True`` all removed points ride on a single weight, so the
    perturbation direction has one entry instead of ``|K|``.
    """

    removed_indices: tuple
    target_weight: float = 0.0
    shared: bool = False

    def __post_init__(self):
        idx = tuple(int(i) for i in self.removed_indices)
        if not idx:
            raise ProblemError("empty removal set")
        if len(set(idx)) != len(idx):
            raise ProblemError("removal indices must be distinct")
        if min(idx) < 0:
            raise ProblemError("removal indices must be non-negative")
        if not 0.0 <= self.target_weight <= 1.0:
            raise ProblemError("target_weight must lie in [0, 1]")
        object.__setattr__(self, "removed_indices", tuple(sorted(idx)))

    @property
    def size(self) -> int:
        return 1 if self.shared else len(self.removed_indices)

    @property
    def direction(self) -> np.ndarray:
        return np.full(self.size, self.target_weight - 1.0)

    def check(self, n: int) -> None:
        if max(self.removed_indices) >= n:
            raise ProblemError(f"removal index {max(self.removed_indices)} out of range for {n} points")


def weights_for_request(n: int, req: RemovalRequest) -> np.ndarray:
    """Weight vector of the retrained problem: target weight on K, 1 elsewhere."""
    req.check(n)
    eta = np.ones(n)
    eta[list(req.removed_indices)] = req.target_weight
    return eta


# ---------------------------------------------------------------------------
# penalty
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PenaltyConfig:
    C_g: float = 1e3
    C_h: float = 1e3
    p: float = 3.0

    def __post_init__(self):
        if self.C_g <= 0 or self.C_h <= 0:
            raise ProblemError("penalty constants must be positive")
        if self.p < 2:
            raise ProblemError("penalty exponent must be >= 2")


def penalty_eval(cfg: PenaltyConfig, C: float, t: float) -> float:
    """phi(C, t) = C * t**p for t > 0, else 0."""
    if C <= 0:
        raise ProblemError("penalty constant must be positive")
    return C * t ** cfg.p if t > 0 else 0.0


def _penalty_derivs(p: float, C: float, t: float) -> tuple[float, float, float]:
    if t <= 0:
        return 0.0, 0.0, 0.0
    return C * t ** p, C * p * t ** (p - 1), C * p * (p - 1) * t ** (p - 2)


# ---------------------------------------------------------------------------
# terms and constraints
# ---------------------------------------------------------------------------


class Term:
    """Smooth scalar function of (theta, eta[indices]) with analytic derivatives.

    ``grad``/``hess`` are with respect to theta, ``d_eta`` is the gradient with
    respect to the local weights and ``mixed`` is the ``dim x len(indices)``
    block of cross derivatives.
    """

    indices: tuple = ()

    def value(self, theta, eta):
        raise NotImplementedError

    def grad(self, theta, eta):
        raise NotImplementedError

    def hess(self, theta, eta):
        raise NotImplementedError

    def d_eta(self, theta, eta):
        return np.zeros(len(self.indices))

    def mixed(self, theta, eta):
        return np.zeros((theta.size, len(self.indices)))


class PointLoss(Term):
    """``eta_i * f(theta)`` for a single data point ``i``."""

    def __init__(self, index: int, fun: Callable, grad: Callable, hess: Callable):
        self.indices = (int(index),)
        self._f, self._g, self._h = fun, grad, hess

    def value(self, theta, eta):
        return float(eta[0]) * self._f(theta)

    def grad(self, theta, eta):
        return float(eta[0]) * self._g(theta)

    def hess(self, theta, eta):
        return float(eta[0]) * self._h(theta)

    def d_eta(self, theta, eta):
        return np.array([self._f(theta)])

    def mixed(self, theta, eta):
        return self._g(theta)[:, None]


class Regularizer(Term):
    """Weight-independent term shared by all points."""

    indices = ()

    def __init__(self, fun: Callable, grad: Callable, hess: Callable):
        self._f, self._g, self._h = fun, grad, hess

    def value(self, theta, eta):
        return self._f(theta)

    def grad(self, theta, eta):
        return self._g(theta)

    def hess(self, theta, eta):
        return self._h(theta)


def quadratic_regularizer(R) -> Regularizer:
    R = np.asarray(R, dtype=float)
    return Regularizer(lambda th: 0.5 * th @ R @ th, lambda th: R @ th, lambda th: R)


@dataclass
class Constraint(Term):
    """Data-linked constraint ``g(theta, eta_local) <= 0`` (or ``== 0``)."""

    kind: str = "ineq"
    indices: tuple = ()
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("ineq", "eq"):
            raise ProblemError(f"constraint kind must be ineq or eq, got {self.kind!r}")
        self.indices = tuple(int(i) for i in self.indices)

    @property
    def is_linear(self) -> bool:
        return False


class LinearConstraint(Constraint):
    """``sum_i eta_i (a_i . theta + b_i) + a0 . theta + b0``.

    Each linked point contributes a weighted affine piece, so at weight 0 the
    constraint is the one built without that point.
    """

    def __init__(self, kind, indices, point_normals, point_offsets, normal0, offset0=0.0, name=""):
        super().__init__(kind=kind, indices=tuple(indices), name=name)
        self.normal0 = np.asarray(normal0, dtype=float).reshape(-1)
        self.point_normals = np.asarray(point_normals, dtype=float).reshape(len(self.indices), self.normal0.size)
        self.point_offsets = np.asarray(point_offsets, dtype=float).reshape(len(self.indices))
        self.offset0 = float(offset0)

    @classmethod
    def fixed(cls, kind, normal, offset, name=""):
        """Constraint that touches no data point."""
        normal = np.asarray(normal, dtype=float)
        return cls(kind, (), np.zeros((0, normal.size)), np.zeros(0), normal, offset, name)

    @property
    def is_linear(self):
        return True

    def value(self, theta, eta):
        eta = np.asarray(eta, dtype=float)
        return float(eta @ (self.point_normals @ theta + self.point_offsets) + self.normal0 @ theta + self.offset0)

    def grad(self, theta, eta):
        return np.asarray(eta, dtype=float) @ self.point_normals + self.normal0

    def hess(self, theta, eta):
        return np.zeros((theta.size, theta.size))

    def d_eta(self, theta, eta):
        return self.point_normals @ theta + self.point_offsets

    def mixed(self, theta, eta):
        return self.point_normals.T.copy()


class PenaltyTerm(Term):
    """``phi(C, sign * g(theta, eta))`` for a folded constraint ``g``."""

    def __init__(self, constraint: Constraint, C: float, p: float, sign: float = 1.0):
        self.constraint = constraint
        self.indices = constraint.indices
        self.C, self.p, self.sign = float(C), float(p), float(sign)

    def _d(self, theta, eta):
        return _penalty_derivs(self.p, self.C, self.sign * self.constraint.value(theta, eta))

    def value(self, theta, eta):
        return self._d(theta, eta)[0]

    def grad(self, theta, eta):
        _, d1, _ = self._d(theta, eta)
        return d1 * self.sign * self.constraint.grad(theta, eta)

    def hess(self, theta, eta):
        _, d1, d2 = self._d(theta, eta)
        g = self.constraint.grad(theta, eta)
        return d2 * np.outer(g, g) + d1 * self.sign * self.constraint.hess(theta, eta)

    def d_eta(self, theta, eta):
        _, d1, _ = self._d(theta, eta)
        return d1 * self.sign * self.constraint.d_eta(theta, eta)

    def mixed(self, theta, eta):
        _, d1, d2 = self._d(theta, eta)
        g = self.constraint.grad(theta, eta)
        ge = self.constraint.d_eta(theta, eta)
        return d2 * np.outer(g, ge) + d1 * self.sign * self.constraint.mixed(theta, eta)


@dataclass
class ConstrainedProgram:
    dim: int
    n_points: int
    terms: list
    inequalities: list = field(default_factory=list)
    equalities: list = field(default_factory=list)

    def __post_init__(self):
        for c in self.inequalities:
            if c.kind != "ineq":
                raise ProblemError("equality constraint listed among inequalities")
        for c in self.equalities:
            if c.kind != "eq":
                raise ProblemError("inequality constraint listed among equalities")
        for item in [*self.terms, *self.inequalities, *self.equalities]:
            if any(i < 0 or i >= self.n_points for i in item.indices):
                raise ProblemError("term or constraint linked to an unknown data index")


@dataclass
class KktPoint:
    theta: np.ndarray
    lambda_g: np.ndarray
    lambda_h: np.ndarray
    residuals: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# weighted objective
# ---------------------------------------------------------------------------


class WeightedObjective:
    """Objective of the data-weighted problem as a function of (eta_K, theta).

    Constraints linked to removed points are folded into the objective through
    the penalty; all other constraints stay hard and carry multipliers.
    """

    def __init__(self, prog: ConstrainedProgram, ds: WeightedDataset, req: RemovalRequest, pen: PenaltyConfig):
        if ds.n != prog.n_points:
            raise ProblemError("dataset size does not match program")
        req.check(ds.n)
        self.prog, self.ds, self.req, self.pen = prog, ds, req, pen
        K = set(req.removed_indices)
        self.removed = req.removed_indices
        self.folded_ineq = [c for c in prog.inequalities if K & set(c.indices)]
        self.folded_eq = [c for c in prog.equalities if K & set(c.indices)]
        self.hard_ineq = [c for c in prog.inequalities if not K & set(c.indices)]
        self.hard_eq = [c for c in prog.equalities if not K & set(c.indices)]
        self.terms = list(prog.terms)
        self.terms += [PenaltyTerm(c, pen.C_g, pen.p) for c in self.folded_ineq]
        for c in self.folded_eq:
            self.terms += [PenaltyTerm(c, pen.C_h, pen.p, 1.0), PenaltyTerm(c, pen.C_h, pen.p, -1.0)]

    @property
    def dim(self) -> int:
        return self.prog.dim

    @property
    def n_weights(self) -> int:
        return self.req.size

    def full_eta(self, eta_K) -> np.ndarray:
        eta = np.array(self.ds.weights, dtype=float)
        eta_K = np.broadcast_to(np.asarray(eta_K, dtype=float), (self.req.size,))
        if self.req.shared:
            eta[list(self.removed)] = eta_K[0]
        else:
            eta[list(self.removed)] = eta_K
        return eta

    def _columns(self, term) -> list:
        """Map each of a term's local weights to a column of eta_K (or -1)."""
        if self.req.shared:
            return [0 if i in self.removed else -1 for i in term.indices]
        pos = {k: j for j, k in enumerate(self.removed)}
        return [pos.get(i, -1) for i in term.indices]

    def value(self, eta_K, theta) -> float:
        eta = self.full_eta(eta_K)
        theta = np.asarray(theta, dtype=float)
        return float(sum(t.value(theta, eta[list(t.indices)]) for t in self.terms))

    def grad(self, eta_K, theta) -> np.ndarray:
        eta = self.full_eta(eta_K)
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(self.dim)
        for t in self.terms:
            out += t.grad(theta, eta[list(t.indices)])
        return out

    def hess(self, eta_K, theta) -> np.ndarray:
        eta = self.full_eta(eta_K)
        theta = np.asarray(theta, dtype=float)
        out = np.zeros((self.dim, self.dim))
        for t in self.terms:
            out += t.hess(theta, eta[list(t.indices)])
        return out

    def mixed(self, eta_K, theta) -> np.ndarray:
        """Cross derivatives d/d eta_K of the theta-gradient, ``dim x |K|``."""
        eta = self.full_eta(eta_K)
        theta = np.asarray(theta, dtype=float)
        out = np.zeros((self.dim, self.req.size))
        for t in self.terms:
            cols = self._columns(t)
            if all(c < 0 for c in cols):
                continue
            block = t.mixed(theta, eta[list(t.indices)])
            for j, c in enumerate(cols):
                if c >= 0:
                    out[:, c] += block[:, j]
        return out

    # hard constraints never touch K, so they are evaluated at the base weights
    def constraint_values(self, theta):
        eta = np.asarray(self.ds.weights)
        g = np.array([c.value(theta, eta[list(c.indices)]) for c in self.hard_ineq])
        h = np.array([c.value(theta, eta[list(c.indices)]) for c in self.hard_eq])
        return g, h

    def constraint_jacobians(self, theta):
        eta = np.asarray(self.ds.weights)
        Jg = np.array([c.grad(theta, eta[list(c.indices)]) for c in self.hard_ineq]).reshape(-1, self.dim)
        Jh = np.array([c.grad(theta, eta[list(c.indices)]) for c in self.hard_eq]).reshape(-1, self.dim)
        return Jg, Jh

    def constraint_hessian(self, theta, lambda_g, lambda_h):
        eta = np.asarray(self.ds.weights)
        out = np.zeros((self.dim, self.dim))
        for lam, c in zip(lambda_g, self.hard_ineq):
            if not c.is_linear:
                out += lam * c.hess(theta, eta[list(c.indices)])
        for lam, c in zip(lambda_h, self.hard_eq):
            if not c.is_linear:
                out += lam * c.hess(theta, eta[list(c.indices)])
        return out

    def lagrangian(self, eta_K, theta, lambda_g, lambda_h) -> float:
        g, h = self.constraint_values(theta)
        return self.value(eta_K, theta) + float(np.dot(lambda_g, g) + np.dot(lambda_h, h))

    def lagrangian_grad(self, eta_K, theta, lambda_g, lambda_h) -> np.ndarray:
        Jg, Jh = self.constraint_jacobians(theta)
        return self.grad(eta_K, theta) + Jg.T @ np.asarray(lambda_g) + Jh.T @ np.asarray(lambda_h)

    def lagrangian_hess(self, eta_K, theta, lambda_g, lambda_h) -> np.ndarray:
        return self.hess(eta_K, theta) + self.constraint_hessian(theta, lambda_g, lambda_h)


def assemble_weighted_objective(prog, ds, req, pen=None) -> WeightedObjective:
    return WeightedObjective(prog, ds, req, pen or PenaltyConfig())
