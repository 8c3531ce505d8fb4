"""Command line: gen-data, train, unlearn, retrain, compare.

Every command rebuilds the dataset from the run config (generated from the
seed, or read from the paths it names), so artifacts only carry parameters,
logs and timings.  Wall-clock values live under ``timings`` keys; everything
else in a report is a deterministic function of (config, seed).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, pinn, suites, svm, traffic
from .core import PenaltyConfig, RemovalRequest, WeightedDataset, WeightedObjective, rng_for
from .sqp import fit_program
from .toys import (logistic_program, random_linear_instance, random_logistic_instance, random_ridge_instance,
                   ridge_program)
from .unlearn import UnlearnOptions, unlearn

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "task", "seed"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "task": {"enum": ["svm", "pinn", "toy"]},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "n": _POS_INT, "d": _POS_INT, "separation": _POS,
                "family": {"enum": ["ridge", "logistic", "linear"]}, "lam": _POS, "n_eq": {"type": "integer", "minimum": 0},
                "trajectories": {"type": "string"}, "truth": {"type": "string"},
                "x_scale": _POS, "t_scale": _POS, "v_scale": _POS,
                "n_vehicles": _POS_INT, "driver_sd": {"type": "number", "minimum": 0},
                "noise_sd": {"type": "number", "minimum": 0},
                "scenario": {"type": "object", "required": ["kind"]},
                "params": {"type": "object", "additionalProperties": False,
                           "properties": {"v_f": _POS, "rho_m": _POS}},
                "grid": {"type": "object", "additionalProperties": False,
                         "properties": {"L": _POS, "T_total": _POS, "dx": _POS, "dt": _POS}},
                "observed_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "aux_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"C": _POS, "beta": _POS, "hidden": {"type": "array", "items": _POS_INT, "minItems": 1},
                           "lam_phys": {"type": "number", "minimum": 0}},
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"steps": _POS_INT, "lr": _POS, "lr_final": _POS, "log_every": _POS_INT,
                           "target_loss": _POS},
        },
        "removal": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ids": {"type": "array", "items": {"type": ["integer", "string"]}},
                "fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "kind": {"enum": ["support", "error", "reserve"]},
                "target_weight": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
            "minProperties": 1,
        },
        "penalty": {"type": "object", "additionalProperties": False,
                    "properties": {"C_g": _POS, "C_h": _POS, "p": {"type": "number", "minimum": 2}}},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps_act": _POS, "stationarity_tol": _POS, "damping_init": {"type": "number", "minimum": 0},
                "damping_growth": {"type": "number", "exclusiveMinimum": 1}, "damping_max_tries": _POS_INT,
                "dense_limit": _POS_INT, "cg_tol": _POS, "cg_max_iter": _POS_INT, "damping_rel": _POS,
                "sigma_form": {"enum": ["logistic", "literal"]}, "e1_margin_free": {"type": "boolean"},
            },
        },
    },
}

_MODEL_ROW = {
    "type": "object",
    "required": ["metrics", "theta_norm"],
    "properties": {"metrics": {"type": "object"}, "theta_norm": _NUM},
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "task", "seed", "models", "distances", "vi_residual", "feasibility", "timings"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "task": {"enum": ["svm", "pinn", "toy"]},
        "models": {"type": "object", "required": ["original", "unlearned", "retrained"],
                   "properties": {k: _MODEL_ROW for k in ("original", "unlearned", "retrained")}},
        "distances": {"type": "object", "required": ["unlearned_retrained", "original_retrained"],
                      "properties": {"unlearned_retrained": _NUM, "original_retrained": _NUM}},
        "vi_residual": {"type": ["number", "null"]},
        "feasibility": {"type": "array", "items": {"type": "object", "required": ["name", "kind", "value", "violation"]}},
        "timings": {"type": "object", "required": ["train_s", "unlearn_s", "retrain_s", "speedup"],
                    "properties": {"unlearn_s": _POS, "retrain_s": _POS, "speedup": _POS}},
    },
}


class CliError(Exception):
    """Usage or configuration problem (exit code 2)."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def load_config(path, seed=None) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise CliError(f"cannot read config {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise CliError(f"config {path} is not valid JSON: {e}") from None
    validate_config(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg["_dir"] = str(Path(path).resolve().parent)
    return cfg


def validate_config(cfg) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(map(str, e.absolute_path)) or "<root>"
        raise CliError(f"config schema error at {where}: {e.message}") from None


def config_digest(cfg) -> str:
    body = {k: v for k, v in cfg.items() if k not in ("output", "_dir")}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _path(cfg, p) -> Path:
    q = Path(p)
    return q if q.is_absolute() else Path(cfg["_dir"]) / q


def _section(cfg, name) -> dict:
    return dict(cfg.get(name, {}))


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def read_artifact(path) -> dict:
    try:
        with open(path) as fh:
            art = json.load(fh)
    except OSError:
        raise CliError(f"missing artifact {path}") from None
    except json.JSONDecodeError as e:
        raise CliError(f"artifact {path} is not valid JSON: {e}") from None
    for k in ("task", "role", "model", "theta", "timings"):
        if k not in art:
            raise CliError(f"artifact {path} lacks {k!r}")
    return art


def strip_timings(obj):
    """Copy of a report with every ``timings`` entry removed (for determinism checks)."""
    if isinstance(obj, dict):
        return {k: strip_timings(v) for k, v in obj.items() if k != "timings"}
    if isinstance(obj, list):
        return [strip_timings(v) for v in obj]
    return obj


def _solver_options(cfg) -> UnlearnOptions:
    s = _section(cfg, "solver")
    keys = set(UnlearnOptions.__dataclass_fields__)
    return UnlearnOptions(**{k: v for k, v in s.items() if k in keys})


def _penalty(cfg) -> PenaltyConfig:
    return PenaltyConfig(**_section(cfg, "penalty"))


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _int_ids(removal, n) -> tuple:
    ids = removal.get("ids")
    if ids is not None:
        if not all(isinstance(i, int) for i in ids):
            raise CliError("removal ids must be integer row indices for this task")
        bad = [i for i in ids if not 0 <= i < n]
        if bad:
            raise CliError(f"removal ids not found: {bad[:5]}")
        if len(set(ids)) != len(ids):
            raise CliError("duplicate removal ids")
        return tuple(sorted(ids))
    raise CliError("removal needs 'ids' or 'fraction'")


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


class SvmTask:
    name = "svm"

    def __init__(self, cfg):
        self.cfg = cfg
        d = _section(cfg, "data")
        m = _section(cfg, "model")
        self.C, self.beta = float(m.get("C", 1.0)), float(m.get("beta", 50.0))
        if "path" in d:
            self.X, self.y = svm.load_dataset(_path(cfg, d["path"]))
        else:
            self.X, self.y = svm.gaussian_two_class(d.get("n", 60), cfg["seed"], d.get("separation", 1.5))
        rem = _section(cfg, "removal")
        if "kind" in rem:
            self.removed = (svm.select_removal(self.X, self.y, self.C, rem["kind"], beta=self.beta),)
        elif "fraction" in rem:
            raise CliError("svm removal takes one point: use 'ids' or 'kind'")
        else:
            self.removed = _int_ids(rem, len(self.y))
        if not self.removed:
            raise CliError("removal set is empty")
        if len(self.removed) > 1:
            raise CliError("svm removal takes one point per request")
        self.keep = np.ones(len(self.y), dtype=bool)
        self.keep[self.removed[0]] = False

    def gen_data(self, out: Path) -> dict:
        svm.save_dataset(out / "data.csv", self.X, self.y)
        return {"files": ["data.csv"], "n": int(len(self.y)), "d": int(self.X.shape[1])}

    def train(self, role):
        N = self.removed[0]
        if role == "original":
            m = svm.train(self.X, self.y, self.C, self.beta, removed=N)
        else:
            m = svm.retrain(self.X, self.y, self.C, self.beta, removed=N)
        log = {"kkt_residuals": _plain(m.kkt.residuals), "partition": {k: len(v) for k, v in m.partition.summary().items()}}
        return m.to_json(), np.r_[m.w, m.b], log

    def unlearn(self, art):
        model = svm.SvmModel.from_json(art["model"])
        if model.partition is None or model.kkt is None:
            raise CliError("svm model artifact lacks its multipliers and support partition")
        s = _section(self.cfg, "solver")
        new, res = svm.unlearn_svm(model, self.X, self.y, form=s.get("sigma_form", "logistic"),
                                   e1_margin_free=s.get("e1_margin_free", False))
        return new.to_json(), np.r_[new.w, new.b], res

    def metrics(self, art) -> dict:
        m = art["model"]
        w, b = np.array(m["w"]), float(m["b"])
        Xk, yk = self.X[self.keep], self.y[self.keep]
        return {"accuracy_kept": svm.predict_accuracy(w, b, Xk, yk),
                "objective_kept": svm.plain_objective(Xk, yk, w, b, self.C), "w": w.tolist(), "b": b}

    def extras(self, arts) -> dict:
        G = suites.svm_grid(self.X)
        dec = {k: G @ np.array(a["model"]["w"]) + a["model"]["b"] for k, a in arts.items()}
        agree = lambda a, b: float(np.mean(np.sign(dec[a]) == np.sign(dec[b])))
        return {"grid_agreement": {"unlearned_retrained": agree("unlearned", "retrained"),
                                   "original_retrained": agree("original", "retrained")},
                "removed": list(self.removed)}

    def plot(self, arts, out: Path) -> str:
        if self.X.shape[1] != 2:
            return None
        G = suites.svm_grid(self.X)
        cols = {k: G @ np.array(a["model"]["w"]) + a["model"]["b"] for k, a in arts.items()}
        with open(out / "svm_decision_grid.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x1", "x2", *cols])
            for r in range(len(G)):
                w.writerow([repr(float(G[r, 0])), repr(float(G[r, 1]))] + [repr(float(v[r])) for v in cols.values()])
        return "svm_decision_grid.csv"


class ToyTask:
    name = "toy"

    def __init__(self, cfg):
        self.cfg = cfg
        d = _section(cfg, "data")
        self.family = d.get("family", "ridge")
        lam = d.get("lam", 1.0)
        if "path" in d:
            if self.family == "linear":
                raise CliError("the linear toy family is generated only")
            data = np.loadtxt(_path(cfg, d["path"]), delimiter=",", ndmin=2)
            self.X, self.y = data[:, :-1], data[:, -1]
            self.prog = (ridge_program if self.family == "ridge" else logistic_program)(self.X, self.y, lam)
        elif self.family == "ridge":
            self.prog, self.X, self.y = random_ridge_instance(cfg["seed"], d.get("n", 20), d.get("d", 3), lam)
        elif self.family == "logistic":
            self.prog, self.X, self.y = random_logistic_instance(cfg["seed"], d.get("n", 30), d.get("d", 3), lam)
        else:
            self.prog, self.X, *_ = random_linear_instance(cfg["seed"], d.get("n", 12), d.get("d", 4),
                                                           d.get("n_eq", 0))
            self.y = np.zeros(len(self.X))
        n = len(self.X)
        rem = _section(cfg, "removal")
        if "kind" in rem:
            raise CliError("removal kind applies to the svm task only")
        ids = rem.get("ids")
        if ids is None and "fraction" in rem:
            k = int(round(rem["fraction"] * n))
            ids = sorted(int(i) for i in rng_for(cfg["seed"], "removal").choice(n, size=k, replace=False))
            rem = {**rem, "ids": ids}
        self.removed = _int_ids(rem, n)
        if not self.removed:
            raise CliError("removal set is empty")
        self.req = RemovalRequest(self.removed, rem.get("target_weight", 0.0))
        self.ds = WeightedDataset.full(range(n))
        self.obj = WeightedObjective(self.prog, self.ds, self.req, _penalty(cfg))

    def gen_data(self, out: Path) -> dict:
        np.savetxt(out / "data.csv", np.column_stack([self.X, self.y]), delimiter=",", fmt="%.17g")
        return {"files": ["data.csv"], "n": int(len(self.X)), "family": self.family}

    def train(self, role):
        eta = np.ones(self.req.size) if role == "original" else np.full(self.req.size, self.req.target_weight)
        kkt = fit_program(self.obj, eta)
        model = {"theta": kkt.theta.tolist(), "lambda_g": kkt.lambda_g.tolist(), "lambda_h": kkt.lambda_h.tolist()}
        return model, kkt.theta, {"kkt_residuals": _plain(kkt.residuals)}

    def unlearn(self, art):
        from .core import KktPoint

        m = art["model"]
        kkt = KktPoint(np.array(m["theta"]), np.array(m["lambda_g"]), np.array(m["lambda_h"]))
        res = unlearn(kkt, self.prog, self.ds, self.req, _penalty(self.cfg), _solver_options(self.cfg), obj=self.obj)
        model = {"theta": res.theta_updated.tolist(), "lambda_g": (kkt.lambda_g + res.delta_lambda["g"]).tolist(),
                 "lambda_h": (kkt.lambda_h + res.delta_lambda["h"]).tolist()}
        return model, res.theta_updated, res

    def metrics(self, art) -> dict:
        th = np.array(art["theta"])
        return {"objective_kept": float(self.obj.value(np.full(self.req.size, self.req.target_weight), th))}

    def extras(self, arts) -> dict:
        return {"removed": list(self.removed)}

    def plot(self, arts, out: Path) -> str:
        with open(out / "toy_parameters.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", *arts])
            cols = [np.array(a["theta"]) for a in arts.values()]
            for j in range(len(cols[0])):
                w.writerow([j] + [repr(float(c[j])) for c in cols])
        return "toy_parameters.csv"


class PinnTask:
    name = "pinn"

    def __init__(self, cfg):
        self.cfg = cfg
        seed = cfg["seed"]
        d = _section(cfg, "data")
        self.params = traffic.GreenshieldsParams(**d.get("params", {}))
        self.grid = traffic.GridSpec(**d.get("grid", {}))
        self.scenario = None
        if "trajectories" in d:
            trajs = traffic.parse_trajectories(_path(cfg, d["trajectories"]), d.get("x_scale", 1.0),
                                               d.get("v_scale"), d.get("t_scale", 1.0), self.grid)
            self.truth = traffic.read_grid_csv(_path(cfg, d["truth"]), self.grid) if "truth" in d else None
        else:
            self.scenario = traffic.generate_greenshields_scenario(
                self.params, self.grid, d.get("scenario", {"kind": "riemann"}), d.get("n_vehicles", 300), seed,
                driver_sd=d.get("driver_sd", suites.PINN_NOISE["driver_sd"]),
                noise_sd=d.get("noise_sd", suites.PINN_NOISE["noise_sd"]))
            trajs, self.truth = self.scenario.trajectories, self.scenario.truth
        self.trajectories = trajs
        rem = _section(cfg, "removal")
        if "kind" in rem:
            raise CliError("removal kind applies to the svm task only")
        if "ids" in rem:
            removed = frozenset(str(i) for i in rem["ids"])
        elif "fraction" in rem:
            removed = traffic.choose_removal(trajs, rem["fraction"], seed)
        else:
            raise CliError("removal needs 'ids' or 'fraction'")
        if not removed:
            raise CliError("removal set is empty")
        m = _section(cfg, "model")
        sizes = (2, *m.get("hidden", [32, 32]), 1)
        self.problem = suites.pinn_problem(trajs, removed, self.params, self.grid, seed,
                                           d.get("observed_fraction", 0.14), d.get("aux_fraction", 0.3), sizes,
                                           m.get("lam_phys", 1.0))
        self.removed = sorted(removed, key=traffic._id_key)
        t = {**suites.PINN_TRAIN, **_section(cfg, "train")}
        self.train_cfg = pinn.TrainConfig(**t, seed=seed)

    def gen_data(self, out: Path) -> dict:
        traffic.write_trajectories(out / "trajectories.csv", self.trajectories)
        files = ["trajectories.csv"]
        if self.truth is not None:
            traffic.write_grid_csv(out / "truth.csv", self.grid, self.truth)
            files.append("truth.csv")
        man = self.scenario.manifest() if self.scenario is not None else {}
        man["removed_ids"] = self.removed
        write_json(out / "scenario.json", _plain(man))
        return {"files": files + ["scenario.json"], "n_records": len(self.trajectories),
                "n_vehicles": len(self.trajectories.ids)}

    def train(self, role):
        obj = self.problem["objective" if role == "original" else "retrain_objective"]
        model, log = pinn.train_pinn(obj, self.train_cfg)
        return model.to_json(), model.theta, {"steps": log.steps, "loss": log.loss,
                                              "final_loss": obj.value(model.theta)}

    def unlearn(self, art):
        model = pinn.MlpModel.from_json(art["model"])
        if model.n_params != self.problem["model"].n_params:
            raise CliError("model artifact does not match the configured network")
        s = _section(self.cfg, "solver")
        res = pinn.unlearn_pinn(model, self.problem["objective"], RemovalRequest((0,)), _solver_options(self.cfg),
                                s.get("damping_rel", 1e-4))
        new = model.copy_with(res.theta_updated)
        return new.to_json(), new.theta, res

    def _model(self, art):
        return pinn.MlpModel.from_json(art["model"])

    def metrics(self, art) -> dict:
        m = self._model(art)
        return pinn.field_metrics(m, self.problem["retrain_objective"], self.truth)

    def extras(self, arts) -> dict:
        out = {"removed": self.removed, "n_observed": int(len(self.problem["field"].observed)),
               "n_auxiliary": int(len(self.problem["field"].auxiliary))}
        if self.truth is not None:
            rl = {k: self.metrics(a)["rel_l2"] for k, a in arts.items()}
            lo, hi = sorted((rl["original"], rl["retrained"]))
            out["rel_l2"] = rl
            out["unlearned_between"] = bool(lo <= rl["unlearned"] <= hi)
        return out

    def plot(self, arts, out: Path) -> str:
        X, T = self.grid.centers()
        v = {k: self._model(a).predict(X, T) for k, a in arts.items()}
        cols = dict(v)
        if self.truth is not None:
            cols["truth"] = self.truth
        cols["abs_diff_unlearned_retrained"] = np.abs(v["unlearned"] - v["retrained"])
        cols["abs_diff_original_retrained"] = np.abs(v["original"] - v["retrained"])
        traffic.write_grid_csv(out / "pinn_velocity_diff.csv", self.grid, cols)
        return "pinn_velocity_diff.csv"


TASKS = {"svm": SvmTask, "toy": ToyTask, "pinn": PinnTask}


def make_task(cfg):
    return TASKS[cfg["task"]](cfg)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _artifact(cfg, task, role, model, theta, log, wall_s, extra=None) -> dict:
    art = {"schema_version": SCHEMA_VERSION, "task": cfg["task"], "role": role, "seed": cfg["seed"],
           "config_sha256": config_digest(cfg), "removal": _plain(list(task.removed)), "model": _plain(model),
           "theta": _plain(np.asarray(theta, dtype=float)), "log": _plain(log), "timings": {"wall_s": wall_s}}
    art.update(extra or {})
    return art


def _check_artifact(cfg, task, art, path):
    if art["task"] != cfg["task"]:
        raise CliError(f"{path} is a {art['task']} artifact, config task is {cfg['task']}")
    if art.get("removal") != _plain(list(task.removed)) and cfg["task"] == "svm":
        raise CliError(f"{path} was trained for removal {art.get('removal')}, config removes {list(task.removed)}")
    if art.get("config_sha256") != config_digest(cfg):
        print(f"warning: {path} was produced with a different config", file=sys.stderr)


def cmd_gen_data(cfg, out: Path, args) -> dict:
    task = make_task(cfg)
    info = task.gen_data(out)
    report = {"schema_version": SCHEMA_VERSION, "task": cfg["task"], "seed": cfg["seed"],
              "removal": _plain(list(task.removed)), **info}
    write_json(out / "data_manifest.json", _plain(report))
    return report


def _train_role(cfg, out: Path, role: str) -> dict:
    task = make_task(cfg)
    t0 = time.perf_counter()
    model, theta, log = task.train(role)
    wall = time.perf_counter() - t0
    art = _artifact(cfg, task, role, model, theta, log, wall)
    write_json(out / f"{role}.json", art)
    write_json(out / f"{role}_log.json", {"role": role, "log": _plain(log), "timings": {"wall_s": wall}})
    return art


def cmd_train(cfg, out, args):
    return _train_role(cfg, out, "original")


def cmd_retrain(cfg, out, args):
    return _train_role(cfg, out, "retrained")


def cmd_unlearn(cfg, out: Path, args) -> dict:
    if not args.model:
        raise CliError("unlearn needs --model")
    task = make_task(cfg)
    art = read_artifact(args.model)
    _check_artifact(cfg, task, art, args.model)
    if art["role"] != "original":
        raise CliError(f"{args.model} is a {art['role']} model; unlearning starts from the original")
    t0 = time.perf_counter()
    model, theta, res = task.unlearn(art)
    wall = time.perf_counter() - t0
    if args.retrained:
        ref = read_artifact(args.retrained)
        basis = "retrain"
    else:
        ref, basis = art, "train"
    ref_s = float(ref["timings"]["wall_s"])
    rep = res.report()
    rep.pop("timings")
    info = {**rep, "delta_theta_norm": float(np.linalg.norm(np.asarray(theta) - np.asarray(art["theta"])))}
    timings = {"wall_s": wall, "reference_s": ref_s, "speedup_basis": basis, "speedup": ref_s / wall,
               **{f"unlearn_{k}": v for k, v in res.timings.items()}}
    new = _artifact(cfg, task, "unlearned", model, theta, {}, wall, {"unlearn": _plain(info)})
    new["timings"] = timings
    write_json(out / "unlearned.json", new)
    report = {"schema_version": SCHEMA_VERSION, "task": cfg["task"], "seed": cfg["seed"],
              "removal": _plain(list(task.removed)), **_plain(info), "timings": timings}
    write_json(out / "unlearn_report.json", report)
    return report


def cmd_compare(cfg, out: Path, args) -> dict:
    paths = {"original": args.original, "unlearned": args.unlearned, "retrained": args.retrained}
    missing = [k for k, p in paths.items() if not p]
    if missing:
        raise CliError(f"compare needs --{' --'.join(missing)}")
    task = make_task(cfg)
    arts = {k: read_artifact(p) for k, p in paths.items()}
    for k, a in arts.items():
        _check_artifact(cfg, task, a, paths[k])
    th = {k: np.asarray(a["theta"], dtype=float) for k, a in arts.items()}
    if len({v.size for v in th.values()}) != 1:
        raise CliError("artifacts have different parameter sizes")
    dist = lambda a, b: float(np.linalg.norm(th[a] - th[b]))
    d_u, d_o = dist("unlearned", "retrained"), dist("original", "retrained")
    unl = arts["unlearned"].get("unlearn", {})
    t = {k: float(a["timings"]["wall_s"]) for k, a in arts.items()}
    report = {
        "schema_version": SCHEMA_VERSION, "task": cfg["task"], "seed": cfg["seed"], "version": __version__,
        "removal": _plain(list(task.removed)),
        "models": {k: {"metrics": _plain(task.metrics(a)), "theta_norm": float(np.linalg.norm(th[k]))}
                   for k, a in arts.items()},
        "distances": {"unlearned_retrained": d_u, "original_retrained": d_o,
                      "original_unlearned": dist("original", "unlearned"),
                      "ratio": d_u / d_o if d_o > 0 else None},
        "vi_residual": unl.get("vi_residual"),
        "feasibility": unl.get("feasibility", []),
        "max_violation": max((r["violation"] for r in unl.get("feasibility", [])), default=0.0),
        task.name: _plain(task.extras(arts)),
        "timings": {"train_s": t["original"], "unlearn_s": t["unlearned"], "retrain_s": t["retrained"],
                    "speedup": t["retrained"] / t["unlearned"]},
    }
    report["plot_csv"] = task.plot(arts, out)
    jsonschema.validate(report, REPORT_SCHEMA)
    write_json(out / "report.json", report)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = sorted({k for m in report["models"].values() for k, v in m["metrics"].items()
                       if isinstance(v, (int, float)) or v is None})
        w.writerow(["model", *keys, "dist_to_retrained"])
        for name in ("original", "unlearned", "retrained"):
            met = report["models"][name]["metrics"]
            w.writerow([name, *(met.get(k) for k in keys), dist(name, "retrained")])
    return report


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "unlearn": cmd_unlearn, "retrain": cmd_retrain,
            "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kktunlearn", description="Unlearning for constrained models.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config (JSON)")
        p.add_argument("--out", help="output directory (overrides config 'output')")
        p.add_argument("--seed", type=int, help="override the config seed")
        if name == "unlearn":
            p.add_argument("--model", help="original model artifact")
            p.add_argument("--retrained", help="retrained artifact, used as the speedup reference")
        if name == "compare":
            p.add_argument("--original")
            p.add_argument("--unlearned")
            p.add_argument("--retrained")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        out = Path(args.out or cfg.get("output") or "")
        if not (args.out or cfg.get("output")):
            raise CliError("no output directory: pass --out or set 'output'")
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise CliError(f"cannot create output directory {out}: {e.strerror}") from None
        report = COMMANDS[args.command](cfg, out, args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, LookupError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(_summary(args.command, report), sort_keys=True))
    return EXIT_OK


def _summary(command, report) -> dict:
    keep = ("task", "role", "removal", "distances", "delta_theta_norm", "vi_residual", "method", "files")
    return {"command": command, **{k: report[k] for k in keep if k in report}}


def main(argv=None):
    try:
        code = run(argv)
    except SystemExit as e:  # argparse usage errors already exit with 2
        code = e.code
    sys.exit(code)
