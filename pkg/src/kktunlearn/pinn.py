"""Physics-informed velocity-field reconstruction with data-weighted bin speeds.

The network maps normalized (x, t) in [-1, 1]^2 to a speed in [0, v_f]
through tanh hidden layers and a scaled sigmoid output.  Spatial and temporal
partials are propagated forward through the layers alongside the values, so
the LWR residual is exact and stays differentiable in the parameters.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from torch.func import grad, jacrev, jvp

from .core import RemovalRequest, rng_for
from .diff import DENSE_LIMIT, DerivativeBundle
from .traffic import BinnedVelocityField, GreenshieldsParams, GridSpec
from .unlearn import UnlearnError, UnlearnOptions, UnlearnResult, influence_unconstrained

log = logging.getLogger(__name__)
DTYPE = torch.float64
HESSIAN_CHUNK = 128


class PinnError(RuntimeError):
    pass


class EmptyBinError(ValueError):
    pass


def weighted_bin_speed(kept_sum, kept_count, removed_sum, removed_count, eta):
    """(S_k + eta S_r) / (n_k + eta n_r)."""
    den = np.asarray(kept_count, dtype=float) + eta * np.asarray(removed_count, dtype=float)
    if np.any(den <= 0):
        raise EmptyBinError("bin has no effective data at this weight")
    return (np.asarray(kept_sum, dtype=float) + eta * np.asarray(removed_sum, dtype=float)) / den


def weighted_bin_speed_deta(kept_sum, kept_count, removed_sum, removed_count, eta):
    """d/d eta of the weighted mean: (S_r n_k - S_k n_r) / (n_k + eta n_r)^2."""
    Sk, nk, Sr, nr = (np.asarray(a, dtype=float) for a in (kept_sum, kept_count, removed_sum, removed_count))
    den = nk + eta * nr
    if np.any(den <= 0):
        raise EmptyBinError("bin has no effective data at this weight")
    return (Sr * nk - Sk * nr) / den ** 2


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


@dataclass
class MlpModel:
    sizes: tuple
    v_f: float
    L: float
    T: float
    theta: np.ndarray = None

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2 or self.sizes[0] != 2 or self.sizes[-1] != 1:
            raise PinnError("network must map 2 inputs to 1 output")
        if self.theta is not None:
            self.theta = np.asarray(self.theta, dtype=float)
            if self.theta.size != self.n_params:
                raise PinnError(f"expected {self.n_params} parameters, got {self.theta.size}")

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def initialize(self, seed: int) -> "MlpModel":
        """Glorot-normal weights, zero biases."""
        rng = rng_for(seed, "init")
        parts = []
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            parts += [rng.normal(0.0, np.sqrt(2.0 / (a + b)), a * b), np.zeros(b)]
        self.theta = np.concatenate(parts)
        return self

    def copy_with(self, theta) -> "MlpModel":
        return MlpModel(self.sizes, self.v_f, self.L, self.T, np.array(theta, dtype=float))

    def _layers(self, th):
        out, o = [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = th[o:o + a * b].reshape(b, a)
            o += a * b
            out.append((W, th[o:o + b]))
            o += b
        return out

    def _inputs(self, x, t):
        x = torch.as_tensor(np.asarray(x, dtype=float), dtype=DTYPE)
        t = torch.as_tensor(np.asarray(t, dtype=float), dtype=DTYPE)
        return torch.stack([2.0 * x / self.L - 1.0, 2.0 * t / self.T - 1.0], dim=-1)

    def forward(self, th, Z, partials: bool = False):
        """Speeds at normalized inputs ``Z``; with ``partials`` also physical (v_x, v_t)."""
        layers = self._layers(th)
        h = Z
        if partials:
            dx = torch.zeros_like(Z)
            dx[:, 0] = 2.0 / self.L
            dt = torch.zeros_like(Z)
            dt[:, 1] = 2.0 / self.T
        for k, (W, b) in enumerate(layers):
            z = h @ W.T + b
            if partials:
                zx, zt = dx @ W.T, dt @ W.T
            if k < len(layers) - 1:
                h = torch.tanh(z)
                if partials:
                    s = 1.0 - h * h
                    dx, dt = s * zx, s * zt
            else:
                sg = torch.sigmoid(z[:, 0])
                v = self.v_f * sg
                if not partials:
                    return v
                d = self.v_f * sg * (1.0 - sg)
                return v, d * zx[:, 0], d * zt[:, 0]

    def predict(self, x, t, theta=None) -> np.ndarray:
        th = torch.as_tensor(self.theta if theta is None else theta, dtype=DTYPE)
        with torch.no_grad():
            return self.forward(th, self._inputs(np.ravel(x), np.ravel(t))).numpy()

    def partials(self, x, t, theta=None):
        th = torch.as_tensor(self.theta if theta is None else theta, dtype=DTYPE)
        with torch.no_grad():
            v, vx, vt = self.forward(th, self._inputs(np.ravel(x), np.ravel(t)), partials=True)
        return v.numpy(), vx.numpy(), vt.numpy()

    def to_json(self) -> dict:
        return {"task": "pinn", "sizes": list(self.sizes), "v_f": self.v_f, "L": self.L, "T": self.T,
                "theta": self.theta.tolist()}

    @classmethod
    def from_json(cls, d) -> "MlpModel":
        return cls(tuple(d["sizes"]), d["v_f"], d["L"], d["T"], np.array(d["theta"], dtype=float))


def lwr_residual(model: MlpModel, params: GreenshieldsParams, x, t, theta=None) -> np.ndarray:
    """v_t + (2 v - v_f) v_x through the network."""
    v, vx, vt = model.partials(x, t, theta)
    r = vt + (2.0 * v - params.v_f) * vx
    if not np.all(np.isfinite(r)):
        raise PinnError("non-finite residual")
    return r


def residual_of_field(v, vx, vt, params: GreenshieldsParams):
    return np.asarray(vt) + (2.0 * np.asarray(v) - params.v_f) * np.asarray(vx)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


class PinnObjective:
    """sum_O (v(x_o, t_o) - v_w(eta))^2 + lam_phys * sum_A N(x_a, t_a)^2.

    Observed bins whose effective count vanishes at ``eta`` are left out, so
    ``eta = 0`` reproduces the objective built from the kept data alone.
    """

    def __init__(self, model: MlpModel, field_: BinnedVelocityField, params: GreenshieldsParams,
                 lam_phys: float = 1.0, eta: float = 1.0):
        if field_.observed is None or field_.auxiliary is None:
            raise PinnError("field has no observed/auxiliary split")
        if len(field_.observed) == 0 or len(field_.auxiliary) == 0:
            raise PinnError("empty observed or auxiliary set")
        self.model, self.field, self.params = model, field_, params
        self.lam_phys, self.eta = float(lam_phys), float(eta)
        O = np.asarray(field_.observed, dtype=int)
        den = field_.kept_count[O] + eta * field_.removed_count[O]
        self.obs = O[den > 0]
        if self.obs.size == 0:
            raise PinnError("no observed bin has data")
        self.targets, self.dtargets = self._weighted(eta)
        X, T = field_.grid.centers()
        self.Zo = model._inputs(X[self.obs], T[self.obs])
        self.Za = model._inputs(X[field_.auxiliary], T[field_.auxiliary])
        self._targets_t = torch.as_tensor(self.targets, dtype=DTYPE)

    @classmethod
    def for_retrain(cls, model, field_, params, lam_phys=1.0):
        return cls(model, field_, params, lam_phys, eta=0.0)

    def _terms(self, th):
        v = self.model.forward(th, self.Zo)
        va, vx, vt = self.model.forward(th, self.Za, partials=True)
        r = vt + (2.0 * va - self.params.v_f) * vx
        return ((v - self._targets_t) ** 2).sum(), (r ** 2).sum()

    def loss_t(self, th):
        d, p = self._terms(th)
        return d + self.lam_phys * p

    def _th(self, theta):
        return torch.as_tensor(np.asarray(theta, dtype=float), dtype=DTYPE)

    def value(self, theta) -> float:
        with torch.no_grad():
            return float(self.loss_t(self._th(theta)))

    def parts(self, theta) -> dict:
        with torch.no_grad():
            d, p = self._terms(self._th(theta))
        return {"data": float(d), "physics": float(p), "total": float(d + self.lam_phys * p)}

    def gradient(self, theta) -> np.ndarray:
        return grad(self.loss_t)(self._th(theta)).numpy()

    def hessian(self, theta, chunk_size: int = HESSIAN_CHUNK) -> np.ndarray:
        H = jacrev(grad(self.loss_t), chunk_size=chunk_size)(self._th(theta)).numpy()
        return 0.5 * (H + H.T)

    def hvp(self, theta):
        th = self._th(theta)
        g = grad(self.loss_t)

        def apply(v):
            return jvp(g, (th,), (torch.as_tensor(v, dtype=DTYPE),))[1].numpy()

        return apply

    def _weighted(self, eta):
        f, o = self.field, self.obs
        args = (f.kept_sum[o], f.kept_count[o], f.removed_sum[o], f.removed_count[o])
        return weighted_bin_speed(*args, eta), weighted_bin_speed_deta(*args, eta)

    def mixed(self, theta, eta: float = None) -> np.ndarray:
        """d/d eta of the gradient: -2 sum_O (dv_w/d eta) grad_theta v(x_o, t_o)."""
        dv = self.dtargets if eta is None else self._weighted(eta)[1]
        w = torch.as_tensor(-2.0 * dv, dtype=DTYPE)
        return grad(lambda th: (self.model.forward(th, self.Zo) * w).sum())(self._th(theta)).numpy()

    def _loss_with_targets(self, th, targets):
        v = self.model.forward(th, self.Zo)
        va, vx, vt = self.model.forward(th, self.Za, partials=True)
        r = vt + (2.0 * va - self.params.v_f) * vx
        return ((v - targets) ** 2).sum() + self.lam_phys * (r ** 2).sum()

    def value_at_eta(self, theta, eta: float) -> float:
        """Loss on the same observed set with targets re-weighted at ``eta``."""
        tg = torch.as_tensor(self._weighted(eta)[0], dtype=DTYPE)
        with torch.no_grad():
            return float(self._loss_with_targets(self._th(theta), tg))

    def gradient_at_eta(self, theta, eta: float) -> np.ndarray:
        tg = torch.as_tensor(self._weighted(eta)[0], dtype=DTYPE)
        return grad(lambda th: self._loss_with_targets(th, tg))(self._th(theta)).numpy()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 10000
    lr: float = 3e-3
    lr_final: float = 1e-4
    log_every: int = 500
    target_loss: float = None
    seed: int = 0


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    wall_time_s: float = 0.0

    def to_json(self):
        return {"steps": self.steps, "loss": self.loss, "wall_time_s": self.wall_time_s}


def train_pinn(obj: PinnObjective, config: TrainConfig = None, theta0=None) -> tuple[MlpModel, TrainLog]:
    """Full-batch Adam with an exponential learning-rate decay from ``lr`` to ``lr_final``."""
    cfg = config or TrainConfig()
    torch.manual_seed(cfg.seed)
    model = obj.model
    if theta0 is None:
        theta0 = MlpModel(model.sizes, model.v_f, model.L, model.T).initialize(cfg.seed).theta
    th = torch.tensor(np.asarray(theta0, dtype=float), dtype=DTYPE, requires_grad=True)
    opt = torch.optim.Adam([th], lr=cfg.lr)
    gamma = (cfg.lr_final / cfg.lr) ** (1.0 / max(cfg.steps, 1))
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma)
    tlog = TrainLog()
    t0 = time.perf_counter()
    loss = None
    for step in range(1, cfg.steps + 1):
        opt.zero_grad()
        loss = obj.loss_t(th)
        if not torch.isfinite(loss):
            raise PinnError(f"loss diverged at step {step}")
        loss.backward()
        opt.step()
        sched.step()
        if step % cfg.log_every == 0 or step == cfg.steps:
            tlog.steps.append(step)
            tlog.loss.append(float(loss.detach()))
    tlog.wall_time_s = time.perf_counter() - t0
    final = obj.value(th.detach().numpy())
    if not np.isfinite(final):
        raise PinnError("loss diverged")
    if cfg.target_loss is not None and final > cfg.target_loss:
        raise PinnError(f"budget exhausted: loss {final:g} above target {cfg.target_loss:g}")
    return model.copy_with(th.detach().numpy()), tlog


# ---------------------------------------------------------------------------
# unlearning
# ---------------------------------------------------------------------------


def pinn_bundle(obj: PinnObjective, theta, dense_limit: int = DENSE_LIMIT) -> DerivativeBundle:
    g = obj.gradient(theta)
    m = obj.mixed(theta)
    if obj.model.n_params <= dense_limit:
        return DerivativeBundle(g, m, hess_theta=obj.hessian(theta))
    return DerivativeBundle(g, m, hvp=obj.hvp(theta), mode="matrix_free")


def unlearn_pinn(model: MlpModel, obj: PinnObjective, req: RemovalRequest,
                 opts: UnlearnOptions = None, damping_rel: float = 1e-4, gain_min: float = 0.25) -> UnlearnResult:
    """Newton-type correction -(H + rho I)^-1 (cross block . q [+ gradient]) at the trained parameters.

    ``obj`` must be the eta = 1 objective.  ``rho`` starts at ``damping_rel``
    times the mean absolute Hessian diagonal, is raised until H + rho I is
    positive definite, then grows by ``opts.damping_growth`` until the step
    passes a Levenberg-Marquardt gain test on the kept-data loss: the actual
    decrease must reach ``gain_min`` times the quadratic-model prediction.
    """
    if obj.eta != 1.0:
        raise PinnError("unlearning starts from the eta = 1 objective")
    opts = opts or UnlearnOptions()
    t0 = time.perf_counter()
    theta = model.theta
    bundle = pinn_bundle(obj, theta, opts.dense_limit)
    target = PinnObjective.for_retrain(obj.model, obj.field, obj.params, obj.lam_phys)
    g0 = target.gradient(theta)
    f0 = target.value(theta)
    t1 = time.perf_counter()
    if bundle.hess_theta is not None:
        hv = lambda v: bundle.hess_theta @ v
        scale = float(np.abs(np.diag(bundle.hess_theta)).mean())
    else:
        hv = bundle.hvp
        probe = np.eye(model.n_params)[: min(16, model.n_params)]
        scale = float(np.mean([abs(hv(e) @ e) for e in probe]))
    rho = max(opts.damping_init, damping_rel * scale)
    trials = []
    if not np.any(bundle.mixed_theta_eta @ req.direction):
        # the removal leaves every observed target unchanged
        res = UnlearnResult(np.zeros(model.n_params), {"g": np.zeros(0), "h": np.zeros(0)}, None, "influence",
                            bundle=bundle, direction=req.direction)
        res.theta_updated = theta.copy()
        res.vi_residual = 0.0
        res.timings = {"derivatives_s": t1 - t0, "solve_s": 0.0, "total_s": time.perf_counter() - t0}
        return res
    for _ in range(opts.damping_max_tries):
        trial = UnlearnOptions(**{**opts.__dict__, "damping_init": rho})
        res = influence_unconstrained(bundle, req, trial, [])
        step = res.delta_theta
        pred = float(g0 @ step + 0.5 * step @ hv(step))
        actual = target.value(theta + step) - f0
        trials.append({"rho": res.damping, "predicted": pred, "actual": float(actual)})
        if not np.any(step) or (pred < 0 and actual <= gain_min * pred):
            break
        rho = res.damping * opts.damping_growth
    else:
        raise UnlearnError(f"no damping up to rho={rho:g} passed the gain test")
    if len(trials) > 1:
        res.warnings.append(f"damping raised to {res.damping:g} by the gain test")
    res.theta_updated = theta + res.delta_theta
    res.vi_residual = float(np.abs(
        hv(res.delta_theta) + res.damping * res.delta_theta + bundle.mixed_theta_eta @ req.direction
        + (bundle.grad_theta if res.carried_gradient else 0.0)).max())
    res.damping_trials = trials
    res.timings = {"derivatives_s": t1 - t0, "solve_s": time.perf_counter() - t1,
                   "total_s": time.perf_counter() - t0}
    return res


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def field_metrics(model: MlpModel, obj: PinnObjective, truth=None, theta=None) -> dict:
    """Data MAE on O, physics-residual MAE on A, relative L2 error on the whole grid (None without truth)."""
    grid: GridSpec = obj.field.grid
    X, T = grid.centers()
    th = model.theta if theta is None else theta
    v_obs = model.predict(X[obj.obs], T[obj.obs], th)
    r = lwr_residual(model, obj.params, X[obj.field.auxiliary], T[obj.field.auxiliary], th)
    return {
        "data_mae": float(np.abs(v_obs - obj.targets).mean()),
        "physics_mae": float(np.abs(r).mean()),
        "rel_l2": None if truth is None else relative_l2(model.predict(X, T, th), truth),
    }


def relative_l2(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    return float(np.linalg.norm(pred - truth) / np.linalg.norm(truth))
