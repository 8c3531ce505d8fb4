"""Trajectory data, analytic Greenshields scenarios, binning and observation splits."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import rng_for


class TrafficDataError(ValueError):
    pass


@dataclass(frozen=True)
class GreenshieldsParams:
    v_f: float = 30.0
    rho_m: float = 0.12

    def __post_init__(self):
        if not (self.v_f > 0 and self.rho_m > 0):
            raise TrafficDataError("v_f and rho_m must be positive")

    def speed(self, rho):
        return self.v_f * (1.0 - np.asarray(rho, dtype=float) / self.rho_m)

    def density(self, v):
        """Greenshields inverse, rho = rho_m (1 - v / v_f)."""
        return self.rho_m * (1.0 - np.asarray(v, dtype=float) / self.v_f)

    def flow(self, v):
        return self.density(v) * np.asarray(v, dtype=float)

    def char_speed(self, rho):
        return self.v_f * (1.0 - 2.0 * np.asarray(rho, dtype=float) / self.rho_m)

    def shock_speed(self, rho_l, rho_r):
        return self.v_f * (1.0 - (rho_l + rho_r) / self.rho_m)


@dataclass(frozen=True)
class GridSpec:
    L: float = 500.0
    T_total: float = 120.0
    dx: float = 12.5
    dt: float = 2.0

    def __post_init__(self):
        for a, b in ((self.L, self.dx), (self.T_total, self.dt)):
            if a <= 0 or b <= 0 or abs(a / b - round(a / b)) > 1e-9:
                raise TrafficDataError(f"{a} is not an integer multiple of {b}")

    @property
    def nx(self) -> int:
        return int(round(self.L / self.dx))

    @property
    def nt(self) -> int:
        return int(round(self.T_total / self.dt))

    @property
    def n_points(self) -> int:
        return self.nx * self.nt

    def centers(self):
        """Grid-point centers, flattened with x as the fast index: p = j * nx + i."""
        xs = (np.arange(self.nx) + 0.5) * self.dx
        ts = (np.arange(self.nt) + 0.5) * self.dt
        X, T = np.meshgrid(xs, ts)
        return X.ravel(), T.ravel()

    def bin_of(self, x, t):
        """Flat bin index; values on an interior boundary go to the lower-index bin."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        i = np.clip(np.ceil(x / self.dx) - 1, 0, self.nx - 1).astype(int)
        j = np.clip(np.ceil(t / self.dt) - 1, 0, self.nt - 1).astype(int)
        return j * self.nx + i


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass
class TrajectorySet:
    vehicle_id: np.ndarray
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    removed_ids: frozenset = frozenset()

    def __post_init__(self):
        self.vehicle_id = np.asarray(self.vehicle_id).astype(str)
        self.t, self.x, self.v = (np.asarray(a, dtype=float) for a in (self.t, self.x, self.v))
        if not (self.vehicle_id.size == self.t.size == self.x.size == self.v.size):
            raise TrafficDataError("record columns differ in length")
        self.removed_ids = frozenset(str(i) for i in self.removed_ids)
        unknown = self.removed_ids - set(self.vehicle_id.tolist())
        if unknown:
            raise TrafficDataError(f"removal ids not in the trajectory set: {sorted(unknown)[:5]}")

    def __len__(self):
        return self.t.size

    @property
    def ids(self) -> list:
        return sorted(set(self.vehicle_id.tolist()), key=_id_key)

    @property
    def removed_mask(self) -> np.ndarray:
        return np.isin(self.vehicle_id, list(self.removed_ids))

    def with_removal(self, ids) -> "TrajectorySet":
        return TrajectorySet(self.vehicle_id, self.t, self.x, self.v, frozenset(ids))

    def kept_only(self) -> "TrajectorySet":
        keep = ~self.removed_mask
        return TrajectorySet(self.vehicle_id[keep], self.t[keep], self.x[keep], self.v[keep])


def _id_key(s):
    return (0, int(s), "") if s.isdigit() else (1, 0, s)


def choose_removal(trajs: TrajectorySet, fraction: float, seed: int) -> frozenset:
    """Seeded uniform choice of round(fraction * n_vehicles) vehicle ids."""
    ids = trajs.ids
    k = int(round(fraction * len(ids)))
    rng = rng_for(seed, "removal")
    return frozenset(ids[i] for i in sorted(rng.choice(len(ids), size=k, replace=False)))


TRAJ_COLUMNS = ("vehicle_id", "t", "x", "v")


def parse_trajectories(path, x_scale: float = 1.0, v_scale: float = None, t_scale: float = 1.0,
                       grid: GridSpec = None) -> TrajectorySet:
    """Read a vehicle_id,t,x,v CSV; ``x_scale``/``v_scale`` convert units (e.g. 0.3048 for feet).

    ``v_scale`` defaults to ``x_scale / t_scale``.  Malformed rows raise with their line number.
    """
    v_scale = x_scale / t_scale if v_scale is None else v_scale
    ids, ts, xs, vs = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TrafficDataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in TRAJ_COLUMNS if c not in header]
        if missing:
            raise TrafficDataError(f"{path}: missing columns {missing}")
        col = {c: header.index(c) for c in TRAJ_COLUMNS}
        for line, row in enumerate(reader, start=2):
            if not row or all(not r.strip() for r in row):
                continue
            if len(row) < len(header):
                raise TrafficDataError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            try:
                t, x, v = (float(row[col[c]]) for c in ("t", "x", "v"))
            except ValueError:
                raise TrafficDataError(f"{path}:{line}: non-numeric field") from None
            t, x, v = t * t_scale, x * x_scale, v * v_scale
            if not all(map(math.isfinite, (t, x, v))):
                raise TrafficDataError(f"{path}:{line}: non-finite value")
            if v < 0:
                raise TrafficDataError(f"{path}:{line}: negative speed {v:g}")
            if t < 0 or x < 0:
                raise TrafficDataError(f"{path}:{line}: negative time or position")
            if grid is not None and (t > grid.T_total or x > grid.L):
                raise TrafficDataError(f"{path}:{line}: record outside the grid")
            ids.append(row[col["vehicle_id"]].strip())
            ts.append(t), xs.append(x), vs.append(v)
    return TrajectorySet(np.array(ids, dtype=str), ts, xs, vs)


def write_trajectories(path, trajs: TrajectorySet):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJ_COLUMNS)
        for row in zip(trajs.vehicle_id, trajs.t, trajs.x, trajs.v):
            w.writerow([row[0]] + [repr(float(a)) for a in row[1:]])


def write_grid_csv(path, grid: GridSpec, values, name: str = "v"):
    """One row per bin center: x, t and one column per field (``values`` may be a dict of columns)."""
    cols = dict(values) if isinstance(values, dict) else {name: values}
    cols = {k: np.asarray(v, dtype=float).ravel() for k, v in cols.items()}
    if any(v.size != grid.n_points for v in cols.values()):
        raise TrafficDataError("field size does not match the grid")
    X, T = grid.centers()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "t", *cols])
        for r in range(grid.n_points):
            w.writerow([repr(float(X[r])), repr(float(T[r]))] + [repr(float(v[r])) for v in cols.values()])


def read_grid_csv(path, grid: GridSpec, name: str = "v") -> np.ndarray:
    """Inverse of :func:`write_grid_csv` for one column; rows must follow the grid order."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or name not in rows[0]:
        raise TrafficDataError(f"{path}: no column {name!r}")
    j = rows[0].index(name)
    body = [r for r in rows[1:] if r]
    if len(body) != grid.n_points:
        raise TrafficDataError(f"{path}: {len(body)} rows for a grid of {grid.n_points} bins")
    try:
        xt = np.array([[float(r[0]), float(r[1])] for r in body])
        v = np.array([float(r[j]) for r in body])
    except (ValueError, IndexError):
        raise TrafficDataError(f"{path}: malformed row") from None
    X, T = grid.centers()
    if not (np.allclose(xt[:, 0], X) and np.allclose(xt[:, 1], T)):
        raise TrafficDataError(f"{path}: rows do not follow the grid")
    return v


# ---------------------------------------------------------------------------
# analytic scenarios
# ---------------------------------------------------------------------------


class Scenario:
    """Entropy solution of the LWR equation with Greenshields flux."""

    params: GreenshieldsParams

    def speed(self, x, t):
        raise NotImplementedError

    def partials(self, x, t):
        """Exact (v_x, v_t) away from shocks."""
        raise NotImplementedError

    def shock_distance(self, x, t):
        """|x - shock position| at time t (inf without a shock)."""
        raise NotImplementedError

    def manifest(self) -> dict:
        raise NotImplementedError


def _fan(params, x, t, x0):
    t = np.maximum(t, 1e-9)
    xi = (x - x0) / t
    return 0.5 * (params.v_f + xi), 0.5 / t, -0.5 * xi / t


@dataclass
class RiemannScenario(Scenario):
    params: GreenshieldsParams
    rho_left: float
    rho_right: float
    x0: float

    def __post_init__(self):
        for r in (self.rho_left, self.rho_right):
            if not 0 < r < self.params.rho_m:
                raise TrafficDataError(f"density {r} outside (0, rho_m)")

    @property
    def is_shock(self) -> bool:
        return self.rho_left < self.rho_right

    @property
    def shock_speed(self) -> float:
        return float(self.params.shock_speed(self.rho_left, self.rho_right))

    def _eval(self, x, t):
        p = self.params
        x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
        vl, vr = float(p.speed(self.rho_left)), float(p.speed(self.rho_right))
        v = np.where(x < self.x0, vl, vr).astype(float)
        vx = np.zeros_like(v)
        vt = np.zeros_like(v)
        if self.rho_left == self.rho_right:
            return np.full_like(v, vl), vx, vt
        if self.is_shock:
            v = np.where(x < self.x0 + self.shock_speed * t, vl, vr)
            return v, vx, vt
        cl, cr = float(p.char_speed(self.rho_left)), float(p.char_speed(self.rho_right))
        fv, fx, ft = _fan(p, x, t, self.x0)
        left, right = x <= self.x0 + cl * t, x >= self.x0 + cr * t
        inside = ~left & ~right
        v = np.where(left, vl, np.where(right, vr, fv))
        return v, np.where(inside, fx, 0.0), np.where(inside, ft, 0.0)

    def speed(self, x, t):
        return self._eval(x, t)[0]

    def partials(self, x, t):
        _, vx, vt = self._eval(x, t)
        return vx, vt

    def shock_distance(self, x, t):
        x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
        if not self.is_shock:
            return np.full(x.shape, np.inf)
        return np.abs(x - (self.x0 + self.shock_speed * t))

    def manifest(self):
        return {"kind": "riemann", "rho_left": self.rho_left, "rho_right": self.rho_right, "x0": self.x0}


@dataclass
class CongestionPulse(Scenario):
    """Initial density rho_high on [a, b], rho_low elsewhere.

    A shock leaves ``a`` and a rarefaction fan leaves ``b``.  Once the shock
    catches the fan's tail at ``t_star`` it follows ``b + c_l t + D sqrt(t)``.
    """

    params: GreenshieldsParams
    rho_low: float
    rho_high: float
    a: float
    b: float

    def __post_init__(self):
        if not 0 < self.rho_low < self.rho_high < self.params.rho_m:
            raise TrafficDataError("need 0 < rho_low < rho_high < rho_m")
        if not self.a < self.b:
            raise TrafficDataError("need a < b")
        p = self.params
        self.s1 = float(p.shock_speed(self.rho_low, self.rho_high))
        self.c_h = float(p.char_speed(self.rho_high))
        self.c_l = float(p.char_speed(self.rho_low))
        self.t_star = (self.b - self.a) / (p.v_f * (self.rho_high - self.rho_low) / p.rho_m)
        z_star = self.a + self.s1 * self.t_star - self.b
        self.D = (z_star - self.c_l * self.t_star) / math.sqrt(self.t_star)

    def shock_position(self, t):
        t = np.asarray(t, dtype=float)
        early = self.a + self.s1 * t
        late = self.b + self.c_l * t + self.D * np.sqrt(np.maximum(t, 0.0))
        return np.where(t <= self.t_star, early, late)

    def _eval(self, x, t):
        p = self.params
        x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
        vl, vh = float(p.speed(self.rho_low)), float(p.speed(self.rho_high))
        fv, fx, ft = _fan(p, x, t, self.b)
        s = self.shock_position(t)
        fan_tail = self.b + self.c_h * t
        fan_head = self.b + self.c_l * t
        in_fan = (x > np.maximum(s, fan_tail)) & (x < fan_head)
        in_high = (x > s) & (x <= fan_tail)
        v = np.where(in_fan, fv, np.where(in_high, vh, vl))
        return v, np.where(in_fan, fx, 0.0), np.where(in_fan, ft, 0.0)

    def speed(self, x, t):
        return self._eval(x, t)[0]

    def partials(self, x, t):
        _, vx, vt = self._eval(x, t)
        return vx, vt

    def shock_distance(self, x, t):
        return np.abs(np.asarray(x, dtype=float) - self.shock_position(t))

    def manifest(self):
        return {"kind": "congestion_pulse", "rho_low": self.rho_low, "rho_high": self.rho_high,
                "a": self.a, "b": self.b}


def make_scenario(spec: dict, params: GreenshieldsParams, grid: GridSpec) -> Scenario:
    spec = dict(spec)
    kind = spec.pop("kind", "riemann")
    if kind == "riemann":
        return RiemannScenario(params, float(spec.get("rho_left", 0.02)), float(spec.get("rho_right", 0.09)),
                               float(spec.get("x0", 0.25 * grid.L)))
    if kind == "congestion_pulse":
        return CongestionPulse(params, float(spec.get("rho_low", 0.02)), float(spec.get("rho_high", 0.09)),
                               float(spec.get("a", 0.3 * grid.L)), float(spec.get("b", 0.5 * grid.L)))
    raise TrafficDataError(f"unknown scenario kind {kind!r}")


@dataclass
class SyntheticScenario:
    trajectories: TrajectorySet
    truth: np.ndarray  # speeds at grid centers
    scenario: Scenario
    grid: GridSpec
    params: GreenshieldsParams
    seed: int
    meta: dict = field(default_factory=dict)

    def manifest(self) -> dict:
        return {"seed": self.seed, "params": {"v_f": self.params.v_f, "rho_m": self.params.rho_m},
                "grid": {"L": self.grid.L, "T_total": self.grid.T_total, "dx": self.grid.dx, "dt": self.grid.dt},
                "scenario": self.scenario.manifest(), "removed_ids": sorted(self.trajectories.removed_ids, key=_id_key),
                **self.meta}


def generate_greenshields_scenario(params: GreenshieldsParams, grid: GridSpec, scenario, n_vehicles: int = 300,
                                   seed: int = 0, substeps: int = 5, driver_sd: float = 0.0,
                                   noise_sd: float = 0.0) -> SyntheticScenario:
    """Sample vehicle trajectories through an analytic scenario.

    Half of the vehicles start on the road at t = 0 (uniform positions), the
    rest enter at x = 0 at uniform times.  Positions advance with midpoint
    steps of dt/substeps; one record is kept per dt.  Recorded speeds carry a
    per-vehicle offset (sd ``driver_sd``) and per-record noise (sd
    ``noise_sd``), clipped at zero; positions follow the noise-free field.
    """
    if not isinstance(scenario, Scenario):
        scenario = make_scenario(scenario, params, grid)
    if n_vehicles < 1:
        raise TrafficDataError("n_vehicles must be positive")
    if driver_sd < 0 or noise_sd < 0:
        raise TrafficDataError("noise levels must be non-negative")
    rng = rng_for(seed, "vehicles")
    noise = rng_for(seed, "speed-noise")
    offset = noise.normal(0.0, driver_sd, n_vehicles) if driver_sd > 0 else np.zeros(n_vehicles)
    n0 = n_vehicles // 2
    x_start = np.concatenate([np.sort(rng.uniform(0.0, grid.L, n0)), np.zeros(n_vehicles - n0)])
    t_start = np.concatenate([np.zeros(n0), np.sort(rng.uniform(0.0, grid.T_total, n_vehicles - n0))])
    h = grid.dt / substeps
    x = x_start.copy()
    gone = np.zeros(n_vehicles, dtype=bool)
    ids, ts, xs, vs = [], [], [], []

    def record(t):
        on = (t_start <= t + 1e-12) & ~gone
        k = np.flatnonzero(on)
        v = scenario.speed(x[k], t) + offset[k]
        if noise_sd > 0:
            v = v + noise.normal(0.0, noise_sd, k.size)
        ids.append(k), ts.append(np.full(k.size, t)), xs.append(x[k]), vs.append(np.maximum(v, 0.0))

    record(0.0)
    for j in range(grid.nt):
        for s in range(substeps):
            t = j * grid.dt + s * h
            t1 = t + h
            # vehicles entering inside this substep only move for the remaining part
            t0 = np.clip(t_start, t, t1)
            step = t1 - t0
            mid = x + 0.5 * step * scenario.speed(x, t0)
            x = np.where(step > 0, x + step * scenario.speed(mid, t0 + 0.5 * step), x)
        gone |= x > grid.L
        record((j + 1) * grid.dt)
    vid = np.concatenate(ids)
    order = np.lexsort((np.concatenate(ts), vid))
    trajs_cols = [np.concatenate(a)[order] for a in (ts, xs, vs)]
    X, T = grid.centers()
    trajs = TrajectorySet(vid[order].astype(str), *trajs_cols)
    return SyntheticScenario(trajs, np.asarray(scenario.speed(X, T), dtype=float), scenario, grid, params, seed,
                             {"n_vehicles": n_vehicles, "driver_sd": driver_sd, "noise_sd": noise_sd})


# ---------------------------------------------------------------------------
# binning and splits
# ---------------------------------------------------------------------------


@dataclass
class BinnedVelocityField:
    grid: GridSpec
    kept_sum: np.ndarray
    kept_count: np.ndarray
    removed_sum: np.ndarray
    removed_count: np.ndarray
    observed: np.ndarray = None  # flat bin indices O
    auxiliary: np.ndarray = None  # flat bin indices A

    @property
    def total_count(self):
        return self.kept_count + self.removed_count

    def mean_speed(self, eta: float = 1.0) -> np.ndarray:
        """Weighted bin means (NaN where the effective count is zero)."""
        den = self.kept_count + eta * self.removed_count
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, (self.kept_sum + eta * self.removed_sum) / np.where(den > 0, den, 1), np.nan)

    def with_split(self, observed, auxiliary) -> "BinnedVelocityField":
        return BinnedVelocityField(self.grid, self.kept_sum, self.kept_count, self.removed_sum, self.removed_count,
                                   np.asarray(observed, dtype=int), np.asarray(auxiliary, dtype=int))


def bin_trajectories(trajs: TrajectorySet, grid: GridSpec) -> BinnedVelocityField:
    if len(trajs) and (trajs.x.min() < 0 or trajs.x.max() > grid.L or trajs.t.min() < 0
                       or trajs.t.max() > grid.T_total):
        raise TrafficDataError("record outside the grid")
    p = grid.bin_of(trajs.x, trajs.t)
    rem = trajs.removed_mask
    n = grid.n_points
    return BinnedVelocityField(
        grid,
        np.bincount(p[~rem], weights=trajs.v[~rem], minlength=n),
        np.bincount(p[~rem], minlength=n).astype(float),
        np.bincount(p[rem], weights=trajs.v[rem], minlength=n),
        np.bincount(p[rem], minlength=n).astype(float),
    )


def split_observed(field_: BinnedVelocityField, fraction: float, seed: int, aux_fraction: float = 0.3):
    """(O, A): round(fraction * non-empty bins) observed bins and an independent sample of the grid."""
    if not 0 < fraction < 1:
        raise TrafficDataError("observed fraction must lie in (0, 1)")
    if not 0 < aux_fraction <= 1:
        raise TrafficDataError("auxiliary fraction must lie in (0, 1]")
    nonempty = np.flatnonzero(field_.total_count > 0)
    k = int(round(fraction * nonempty.size))
    if k < 1:
        raise TrafficDataError("not enough non-empty bins for the observed set")
    O = np.sort(rng_for(seed, "observed").choice(nonempty, size=k, replace=False))
    n = field_.grid.n_points
    A = np.sort(rng_for(seed, "auxiliary").choice(n, size=max(1, int(round(aux_fraction * n))), replace=False))
    return O, A


def save_manifest(path, scen: SyntheticScenario, extra=None):
    with open(path, "w") as fh:
        json.dump({**scen.manifest(), **(extra or {})}, fh, indent=2, sort_keys=True)
