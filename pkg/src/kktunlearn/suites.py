"""Seeded experiment suites shared by the acceptance tests and the command line."""
from __future__ import annotations

import time

import numpy as np

from . import pinn, svm, traffic
from .core import (ProblemError, LinearConstraint, PenaltyConfig, RemovalRequest, WeightedDataset, WeightedObjective,
                   KktPoint, assemble_weighted_objective, rng_for, weights_for_request)
from .diff import finite_difference_check, lagrangian_derivatives, DerivativeBundle, fd_gradient, fd_jacobian
from .qp import AuxiliaryQp, enumerate_oracle, kkt_residual, solve
from .sqp import fit_program
from .toys import (linear_loss_retrain, logistic_program, quadratic_point_program, random_linear_instance,
                   random_logistic_instance, random_ridge_instance, ridge_program, ridge_retrain)
from .unlearn import unlearn


# ---------------------------------------------------------------------------
# QP oracle equivalence
# ---------------------------------------------------------------------------


def random_convex_qp(rng, n_max: int = 6, m_max: int = 8) -> AuxiliaryQp:
    """Feasible convex QP with a mix of eq / ineq / free rows (at most n-1 equalities)."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(0, m_max + 1))
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    c = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    kinds = list(rng.choice(["eq", "ineq", "ineq", "free"], size=m))
    n_eq = 0
    for i, k in enumerate(kinds):
        if k == "eq":
            n_eq += 1
            if n_eq > n - 1:
                kinds[i] = "ineq"
    x0 = rng.normal(size=n)
    slack = np.where(np.array(kinds) == "eq", 0.0, rng.uniform(0.0, 1.0, m))
    return AuxiliaryQp(H, c, A, -(A @ x0) - slack, kinds)


def qp_oracle_suite(n_instances: int = 100, seed: int = 0) -> dict:
    rng = rng_for(seed, "qp-suite")
    t0 = time.perf_counter()
    gap = kkt = 0.0
    statuses = []
    for _ in range(n_instances):
        qp = random_convex_qp(rng)
        s, o = solve(qp), enumerate_oracle(qp)
        statuses.append(s.status)
        gap = max(gap, abs(qp.objective(s.delta_theta) - qp.objective(o.delta_theta)))
        kkt = max(kkt, s.kkt_residual, o.kkt_residual)
    return {"n": n_instances, "max_objective_gap": gap, "max_kkt_residual": kkt,
            "all_optimal": all(s == "optimal" for s in statuses), "elapsed_s": time.perf_counter() - t0}


# ---------------------------------------------------------------------------
# exactness and first-order accuracy
# ---------------------------------------------------------------------------


def exact_family_suite(n_instances: int = 50, seed: int = 0) -> dict:
    """Linear per-point losses with a shared regularizer: unlearning is exact."""
    t0 = time.perf_counter()
    errs, vis = [], []
    for k in range(n_instances):
        s = seed * 1000 + k
        prog, Z, R, E, f = random_linear_instance(s, n=12, d=4, n_eq=k % 3)
        n = len(Z)
        rng = rng_for(s, "removal")
        size = 1 if k % 2 == 0 else int(rng.integers(2, 5))
        req = RemovalRequest(tuple(rng.choice(n, size=size, replace=False)))
        ds = WeightedDataset.full(range(n))
        obj = assemble_weighted_objective(prog, ds, req)
        kkt = fit_program(obj, np.ones(req.size))
        res = unlearn(kkt, prog, ds, req, obj=obj)
        gold = linear_loss_retrain(Z, weights_for_request(n, req), R, E, f)
        errs.append(np.linalg.norm(res.theta_updated - gold) / max(np.linalg.norm(gold), 1e-300))
        vis.append(res.vi_residual)
    return {"n": n_instances, "max_rel_error": float(max(errs)), "max_vi_residual": float(np.nanmax(vis)),
            "elapsed_s": time.perf_counter() - t0}


def _retrain_logistic(prog, n, req):
    obj = WeightedObjective(prog, WeightedDataset.full(range(n)), req, PenaltyConfig())
    return fit_program(obj, [req.target_weight]).theta


def scaling_suite(n_seeds: int = 20, eps: float = 0.5, seed: int = 0) -> dict:
    """Error ratio between down-weighting by eps and eps/2 on ridge and logistic toys."""
    t0 = time.perf_counter()
    ratios = []
    for k in range(n_seeds):
        s = seed * 1000 + k
        if k % 2 == 0:
            prog, X, y = random_ridge_instance(s)
        else:
            prog, X, y = random_logistic_instance(s)
        n = len(X)
        ds = WeightedDataset.full(range(n))
        errs = []
        for e in (eps, eps / 2):
            req = RemovalRequest((int(rng_for(s, "removal").integers(n)),), target_weight=1.0 - e)
            obj = assemble_weighted_objective(prog, ds, req)
            kkt = fit_program(obj, [1.0])
            res = unlearn(kkt, prog, ds, req, obj=obj)
            gold = (ridge_retrain(X, y, weights_for_request(n, req)) if k % 2 == 0
                    else _retrain_logistic(prog, n, req))
            errs.append(np.linalg.norm(gold - res.theta_updated))
        ratios.append(errs[0] / errs[1])
    return {"ratios": [float(r) for r in ratios], "min_ratio": float(min(ratios)), "max_ratio": float(max(ratios)),
            "elapsed_s": time.perf_counter() - t0}


# ---------------------------------------------------------------------------
# auxiliary QP / VI equivalence
# ---------------------------------------------------------------------------


def constrained_instances(n: int = 20, seed: int = 0):
    """Quadratic and ridge toys with fixed linear inequalities (some active) and equalities."""
    out = []
    for k in range(n):
        rng = rng_for(seed * 1000 + k, "constrained")
        d = int(rng.integers(2, 5))
        npts = int(rng.integers(4, 9))
        Z = rng.normal(size=(npts, d)) * 2.0
        center = Z.mean(0)
        cons = []
        for j in range(int(rng.integers(1, 4))):
            a = rng.normal(size=d)
            # pass near the unconstrained optimum so that some rows end up active
            off = -(a @ center) + rng.uniform(-0.5, 0.3)
            cons.append(LinearConstraint.fixed("ineq", a, off, name=f"g{j}"))
        if k % 4 == 3:
            # weakly active row through the unconstrained optimum (multiplier zero)
            a = rng.normal(size=d)
            cons = [LinearConstraint.fixed("ineq", a, -(a @ center), name="g_weak")]
        eqs = []
        if k % 3 == 0 and k % 4 != 3:
            a = rng.normal(size=d)
            eqs.append(LinearConstraint.fixed("eq", a, -(a @ center), name="h0"))
        if k % 2 == 0 or k % 4 == 3:
            prog = quadratic_point_program(Z, cons, eqs)
        else:
            prog = ridge_program(Z, rng.normal(size=npts), 0.5, cons, eqs)
        size = 1 + k % 2
        req = RemovalRequest(tuple(rng.choice(npts, size=size, replace=False)))
        out.append((prog, WeightedDataset.full(range(npts)), req))
    return out


def vi_suite(n: int = 20, seed: int = 0, svm_seeds=(0, 1)) -> dict:
    t0 = time.perf_counter()
    vis, kinds = [], {"eq": 0, "ineq": 0, "free": 0}
    for prog, ds, req in constrained_instances(n, seed):
        obj = assemble_weighted_objective(prog, ds, req)
        kkt = fit_program(obj, np.ones(req.size))
        res = unlearn(kkt, prog, ds, req, obj=obj)
        vis.append(res.vi_residual)
        for kd in res.qp.kinds:
            kinds[kd] += 1
    for s in svm_seeds:
        X, y = svm.gaussian_two_class(60, s)
        for kind in ("reserve", "support"):
            N = svm.select_removal(X, y, 1.0, kind)
            model = svm.train(X, y, 1.0, 50.0, removed=N)
            _, r = svm.unlearn_svm(model, X, y)
            vis.append(kkt_residual(r.qp, r.qp_solution))
            g = svm.generic_unlearn(model, X, y)
            vis.append(g.vi_residual)
    return {"n": len(vis), "max_vi_residual": float(max(vis)), "row_kinds": kinds,
            "elapsed_s": time.perf_counter() - t0}


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


def _program_family(name, seed):
    rng = rng_for(seed, f"family-{name}")
    if name == "quadratic":
        Z = rng.normal(size=(5, 3))
        return quadratic_point_program(Z), 5, RemovalRequest((1, 3))
    if name == "linear":
        prog, Z, *_ = random_linear_instance(seed, n=6, d=3, n_eq=1)
        return prog, 6, RemovalRequest((2,))
    if name == "ridge":
        prog, X, y = random_ridge_instance(seed, n=8, d=3)
        return prog, 8, RemovalRequest((0, 5))
    if name == "logistic":
        prog, X, y = random_logistic_instance(seed, n=8, d=3)
        return prog, 8, RemovalRequest((4,))
    if name == "folded":
        # constraints linked to the removed point are folded into the objective
        Z = rng.normal(size=(5, 3))
        a = rng.normal(size=(1, 3))
        g = LinearConstraint("ineq", (2,), a, [0.1], np.zeros(3), name="g_linked")
        h = LinearConstraint("eq", (2,), -a, [0.2], rng.normal(size=3), name="h_linked")
        return quadratic_point_program(Z, [g], [h]), 5, RemovalRequest((2,))
    if name == "svm":
        X, y = svm.gaussian_two_class(6, seed)
        prog, _ = svm.svm_program(X, y, 1.0, 10.0, removed=5)
        return prog, 6, RemovalRequest((5,))
    raise KeyError(name)


PROGRAM_FAMILIES = ("quadratic", "linear", "ridge", "logistic", "folded", "svm")


def derivative_suite(n_points: int = 20, seed: int = 0, rtol: float = 1e-4) -> dict:
    """Analytic vs central differences at random points for every model family."""
    t0 = time.perf_counter()
    report = {}
    for name in PROGRAM_FAMILIES:
        prog, n, req = _program_family(name, seed)
        obj = WeightedObjective(prog, WeightedDataset.full(range(n)), req, PenaltyConfig())
        rng = rng_for(seed, f"points-{name}")
        worst = {"grad": 0.0, "hess": 0.0, "mixed": 0.0}
        ok = True
        for _ in range(n_points):
            theta = rng.normal(size=obj.dim)
            if name == "svm":
                # keep the smoothed point within a few 1/beta of its hinge
                X, y = svm.gaussian_two_class(6, seed)
                u = rng.uniform(-0.3, 0.3)
                theta[2] = (1.0 - u) / y[5] - theta[:2] @ X[5]
            kkt = KktPoint(theta, rng.uniform(0.1, 1.0, len(obj.hard_ineq)), rng.normal(size=len(obj.hard_eq)))
            eta = rng.uniform(0.2, 1.0, obj.n_weights)
            a = lagrangian_derivatives(obj, kkt, "analytic", eta_K=eta)
            f = lagrangian_derivatives(obj, kkt, "finite_difference", eta_K=eta)
            rep = finite_difference_check(a, f, rtol)
            ok &= rep["passed"]
            for b in worst:
                worst[b] = max(worst[b], rep[b]["max_rel_error"])
        report[name] = {**worst, "passed": bool(ok)}
    report["pinn"] = pinn_derivative_check(n_points, seed, rtol)
    report["passed"] = all(v["passed"] for v in report.values() if isinstance(v, dict))
    report["elapsed_s"] = time.perf_counter() - t0
    return report


def three_bin_field(params=None):
    """Three observed bins with mixed kept/removed data, used by the small derivative checks."""
    grid = traffic.GridSpec(L=30.0, T_total=10.0, dx=10.0, dt=10.0)
    f = traffic.BinnedVelocityField(grid, np.array([30.0, 12.0, 40.0]), np.array([2.0, 1.0, 3.0]),
                                    np.array([30.0, 20.0, 0.0]), np.array([1.0, 2.0, 0.0]))
    return f.with_split([0, 1, 2], [0, 1, 2])


def pinn_derivative_check(n_points: int = 20, seed: int = 0, rtol: float = 1e-4) -> dict:
    params = traffic.GreenshieldsParams()
    f = three_bin_field()
    model = pinn.MlpModel((2, 5, 5, 1), params.v_f, f.grid.L, f.grid.T_total)
    obj = pinn.PinnObjective(model, f, params)
    rng = rng_for(seed, "points-pinn")
    worst = {"grad": 0.0, "hess": 0.0, "mixed": 0.0, "partials": 0.0}
    ok = True
    for _ in range(n_points):
        th = rng.normal(0.0, 0.7, model.n_params)
        eta = float(rng.uniform(0.3, 1.0))
        a = DerivativeBundle(obj.gradient_at_eta(th, eta), obj.mixed(th, eta), hess_theta=obj.hessian(th))
        num = DerivativeBundle(
            fd_gradient(lambda t: obj.value_at_eta(t, eta), th),
            fd_jacobian(lambda e: obj.gradient_at_eta(th, float(e[0])), np.array([eta])),
            hess_theta=0.5 * (lambda J: J + J.T)(fd_jacobian(obj.gradient, th)))
        rep = finite_difference_check(a, num, rtol)
        ok &= rep["passed"]
        for b in ("grad", "hess", "mixed"):
            worst[b] = max(worst[b], rep[b]["max_rel_error"])
        x, t = rng.uniform(0, f.grid.L, 5), rng.uniform(0, f.grid.T_total, 5)
        v, vx, vt = model.partials(x, t, th)
        h = 1e-4
        fx = (model.predict(x + h, t, th) - model.predict(x - h, t, th)) / (2 * h)
        ft = (model.predict(x, t + h, th) - model.predict(x, t - h, th)) / (2 * h)
        e = max(_rel(vx, fx), _rel(vt, ft))
        worst["partials"] = max(worst["partials"], e)
        ok &= e <= rtol
    return {**worst, "passed": bool(ok)}


def _rel(a, b, clip=1e-8):
    scale = np.maximum(np.abs(a), np.abs(b))
    d = np.abs(a - b)
    return float(np.where(scale < clip, d, d / np.maximum(scale, clip)).max())


# ---------------------------------------------------------------------------
# SVM
# ---------------------------------------------------------------------------


def svm_grid(X, n: int = 100):
    lo, hi = X.min(0), X.max(0)
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n))
    return np.column_stack([gx.ravel(), gy.ravel()])


def svm_removal_experiment(X, y, N: int, C: float = 1.0, beta: float = 50.0, form: str = "logistic",
                           e1_margin_free: bool = False) -> dict:
    t0 = time.perf_counter()
    model = svm.train(X, y, C, beta, removed=N)
    t1 = time.perf_counter()
    unl, res = svm.unlearn_svm(model, X, y, form=form, e1_margin_free=e1_margin_free)
    t2 = time.perf_counter()
    gold = svm.retrain(X, y, C, beta, removed=N)
    t3 = time.perf_counter()
    th = lambda m: np.r_[m.w, m.b]
    G = svm_grid(X)
    keep = np.arange(len(y)) != N
    return {
        "removed": int(N),
        "removed_class": _margin_class(svm.train(X, y, C, beta, removed=N, smooth=False), X[N], y[N]),
        "original": th(model).tolist(), "unlearned": th(unl).tolist(), "retrained": th(gold).tolist(),
        "delta_theta_norm": float(np.linalg.norm(res.delta_theta[: X.shape[1] + 1])),
        "dist_unlearned": float(np.linalg.norm(th(unl) - th(gold))),
        "dist_original": float(np.linalg.norm(th(model) - th(gold))),
        "grid_agreement": float(np.mean(np.sign(unl.decision(G)) == np.sign(gold.decision(G)))),
        "accuracy": {"original": svm.predict_accuracy(model.w, model.b, X[keep], y[keep]),
                     "unlearned": svm.predict_accuracy(unl.w, unl.b, X[keep], y[keep]),
                     "retrained": svm.predict_accuracy(gold.w, gold.b, X[keep], y[keep])},
        "partition": {k: len(v) for k, v in model.partition.summary().items()},
        "qp_kkt_residual": float(res.qp_solution.kkt_residual),
        "timings": {"train_s": t1 - t0, "unlearn_s": t2 - t1, "retrain_s": t3 - t2},
    }


def _margin_class(model, x, y, tol: float = 1e-6) -> str:
    m = float(y * (x @ model.w + model.b))
    if abs(m - 1.0) <= tol:
        return "support"
    return "error" if m < 1.0 else "reserve"


def svm_suite(seed: int = 0, n: int = 60, C: float = 1.0, beta: float = 50.0) -> dict:
    """Reserve and support-vector removal plus the eta_N = 0 endpoint on one seeded dataset.

    The support vector removed is the margin support vector with the largest
    multiplier in the plain SVM; the reserve point is the one furthest from
    the margin.
    """
    t0 = time.perf_counter()
    X, y = svm.gaussian_two_class(n, seed)
    sv = svm.select_removal(X, y, C, "support", beta=beta)
    rv = svm.select_removal(X, y, C, "reserve")
    reserve = svm_removal_experiment(X, y, rv, C, beta)
    support = svm_removal_experiment(X, y, sv, C, beta)
    m0 = svm.train(X, y, C, beta, removed=sv, eta=0.0)
    gold = svm.retrain(X, y, C, beta, removed=sv)
    eta0 = float(np.linalg.norm(np.r_[m0.w - gold.w, m0.b - gold.b]))
    return {"seed": seed, "reserve": reserve, "support": support, "eta0_vs_retrain": eta0,
            "ratio": support["dist_unlearned"] / support["dist_original"],
            "elapsed_s": time.perf_counter() - t0}


def svm_endpoint_identities(seed: int = 0, C: float = 1.0) -> dict:
    """Weighted program objective (exact hinge for point N) at eta = 1 and eta = 0."""
    X, y = svm.gaussian_two_class(60, seed)
    n = len(y)
    N = n // 2
    model = svm.train(X, y, C, removed=N, smooth=False)
    prog, layout = svm.svm_program(X, y, C, 50.0, N, smooth=False)
    obj = WeightedObjective(prog, WeightedDataset.full(range(n)), RemovalRequest((N,)), PenaltyConfig())
    m = y * (X @ model.w + model.b)
    slack = np.maximum(0.0, 1.0 - m)
    theta = np.concatenate([model.w, [model.b], slack[list(layout.kept)], [slack[N]]])
    keep = np.arange(n) != N
    full = svm.plain_objective(X, y, model.w, model.b, C)
    kept = svm.plain_objective(X[keep], y[keep], model.w, model.b, C)
    return {"eta1_rel": abs(obj.value([1.0], theta) - full) / abs(full),
            "eta0_rel": abs(obj.value([0.0], theta) - kept) / abs(kept)}


# ---------------------------------------------------------------------------
# traffic / PINN
# ---------------------------------------------------------------------------


def lwr_truth_suite(params=None, grid=None) -> dict:
    """LWR residual of the analytic fields away from shocks, and of constant fields."""
    params = params or traffic.GreenshieldsParams()
    grid = grid or traffic.GridSpec()
    X, T = grid.centers()
    out = {}
    specs = {"shock": {"kind": "riemann"}, "rarefaction": {"kind": "riemann", "rho_left": 0.09, "rho_right": 0.02},
             "pulse": {"kind": "congestion_pulse"}}
    for name, spec in specs.items():
        sc = traffic.make_scenario(spec, params, grid)
        v = sc.speed(X, T)
        vx, vt = sc.partials(X, T)
        far = sc.shock_distance(X, T) > 2 * grid.dx
        out[name] = float(np.abs(pinn.residual_of_field(v, vx, vt, params))[far].max())
    const = traffic.make_scenario({"kind": "riemann", "rho_left": 0.05, "rho_right": 0.05}, params, grid)
    v = const.speed(X, T)
    vx, vt = const.partials(X, T)
    out["constant_analytic"] = float(np.abs(pinn.residual_of_field(v, vx, vt, params)).max())
    model = pinn.MlpModel((2, 8, 1), params.v_f, grid.L, grid.T_total).initialize(0)
    model.theta[-9:] = 0.0  # output layer weights and bias
    out["constant_network"] = float(np.abs(pinn.lwr_residual(model, params, X, T)).max())
    return out


PINN_TRAIN = dict(steps=10000, lr=1e-2, lr_final=1e-4)
PINN_NOISE = dict(driver_sd=1.0, noise_sd=0.5)


def pinn_problem(trajs, removed, params, grid, seed: int = 0, observed_fraction: float = 0.14,
                 aux_fraction: float = 0.3, sizes=(2, 32, 32, 1), lam_phys: float = 1.0) -> dict:
    """Binned field with the removal marked, observed/auxiliary split and both objectives."""
    if not removed:
        raise ProblemError("removal selects no trajectories")
    trajs = trajs.with_removal(removed)
    fld = traffic.bin_trajectories(trajs, grid)
    O, A = traffic.split_observed(fld, observed_fraction, seed, aux_fraction)
    fld = fld.with_split(O, A)
    model = pinn.MlpModel(tuple(sizes), params.v_f, grid.L, grid.T_total)
    return {"trajectories": trajs, "removed": frozenset(removed), "field": fld, "model": model,
            "objective": pinn.PinnObjective(model, fld, params, lam_phys),
            "retrain_objective": pinn.PinnObjective.for_retrain(model, fld, params, lam_phys),
            "params": params, "grid": grid}


def pinn_setup(seed: int = 0, n_vehicles: int = 300, removal_fraction: float = 0.1,
               observed_fraction: float = 0.14, aux_fraction: float = 0.3, sizes=(2, 32, 32, 1),
               scenario=None, params=None, grid=None, lam_phys: float = 1.0, noise=None) -> dict:
    """Synthetic shock scenario with a seeded fraction of trajectories removed.

    Recorded speeds carry the ``PINN_NOISE`` offsets unless ``noise`` overrides them.
    """
    params = params or traffic.GreenshieldsParams()
    grid = grid or traffic.GridSpec()
    scen = traffic.generate_greenshields_scenario(params, grid, scenario or {"kind": "riemann"}, n_vehicles, seed,
                                                  **{**PINN_NOISE, **(noise or {})})
    removed = traffic.choose_removal(scen.trajectories, removal_fraction, seed)
    return {"scenario": scen, **pinn_problem(scen.trajectories, removed, params, grid, seed, observed_fraction,
                                             aux_fraction, sizes, lam_phys)}


def pinn_experiment(seed: int = 0, train=None, **setup_kw) -> dict:
    """Train on all data, unlearn the removed trajectories, retrain on the rest, compare to truth."""
    t_start = time.perf_counter()
    st = pinn_setup(seed, **setup_kw)
    cfg = pinn.TrainConfig(**{**PINN_TRAIN, **(train or {})}, seed=seed)
    orig, log_o = pinn.train_pinn(st["objective"], cfg)
    gold, log_r = pinn.train_pinn(st["retrain_objective"], cfg)
    res = pinn.unlearn_pinn(orig, st["objective"], RemovalRequest((0,)))
    truth = st["scenario"].truth
    robj = st["retrain_objective"]
    metrics = {name: pinn.field_metrics(orig, robj, truth, th)
               for name, th in (("original", orig.theta), ("unlearned", res.theta_updated),
                                ("retrained", gold.theta))}
    unlearn_s = res.timings["total_s"]
    return {
        "seed": seed, "n_params": orig.n_params, "n_observed": int(len(st["field"].observed)),
        "n_auxiliary": int(len(st["field"].auxiliary)), "n_removed": len(st["removed"]),
        "metrics": metrics,
        "rel_l2_ratio": metrics["unlearned"]["rel_l2"] / metrics["retrained"]["rel_l2"],
        "dist_unlearned": float(np.linalg.norm(res.theta_updated - gold.theta)),
        "dist_original": float(np.linalg.norm(orig.theta - gold.theta)),
        "vi_residual": res.vi_residual, "damping": res.damping,
        "timings": {"train_s": log_o.wall_time_s, "retrain_s": log_r.wall_time_s, "unlearn_s": unlearn_s,
                    **{f"unlearn_{k}": v for k, v in res.timings.items()},
                    "speedup": log_r.wall_time_s / unlearn_s, "elapsed_s": time.perf_counter() - t_start},
        "models": {"original": orig, "unlearned": orig.copy_with(res.theta_updated), "retrained": gold},
    }


def pinn_endpoint_identities(seed: int = 0, n_points: int = 5) -> dict:
    """Weighted PINN loss at eta = 1 and eta = 0 against losses built from unsplit data."""
    st = pinn_setup(seed, n_vehicles=120, sizes=(2, 8, 8, 1))
    fld, params, grid = st["field"], st["params"], st["grid"]
    trajs = st["trajectories"]
    full = traffic.bin_trajectories(trajs.with_removal(()), grid).with_split(fld.observed, fld.auxiliary)
    kept = traffic.bin_trajectories(trajs.kept_only(), grid).with_split(fld.observed, fld.auxiliary)
    m = st["model"]
    o1 = pinn.PinnObjective(m, full, params)
    o0 = pinn.PinnObjective(m, kept, params)
    rng = rng_for(seed, "endpoint")
    e1 = e0 = 0.0
    for _ in range(n_points):
        th = rng.normal(0.0, 0.5, m.n_params)
        a1, b1 = st["objective"].value(th), o1.value(th)
        a0, b0 = st["retrain_objective"].value(th), o0.value(th)
        e1 = max(e1, abs(a1 - b1) / abs(b1))
        e0 = max(e0, abs(a0 - b0) / abs(b0))
    return {"eta1_rel": e1, "eta0_rel": e0}
