import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kktunlearn import traffic
from kktunlearn.suites import lwr_truth_suite
from kktunlearn.traffic import GreenshieldsParams, GridSpec, TrafficDataError, TrajectorySet

P = GreenshieldsParams(30.0, 0.12)
SMALL = GridSpec(L=100.0, T_total=20.0, dx=10.0, dt=2.0)


def _write(path, text):
    path.write_text(text)
    return path


def test_parse_three_rows(tmp_path):
    f = _write(tmp_path / "t.csv", "vehicle_id,t,x,v\n1,0,0,10\n1,1,10,12\n2,0,5,8\n")
    s = traffic.parse_trajectories(f)
    assert len(s) == 3 and s.ids == ["1", "2"]
    np.testing.assert_array_equal(s.v, [10, 12, 8])


def test_parse_negative_speed_reports_line(tmp_path):
    f = _write(tmp_path / "t.csv", "vehicle_id,t,x,v\n1,0,0,10\n1,1,10,-5\n")
    with pytest.raises(TrafficDataError, match=":3:"):
        traffic.parse_trajectories(f)


def test_parse_feet(tmp_path):
    f = _write(tmp_path / "t.csv", "vehicle_id,t,x,v\n1,0,100,10\n")
    s = traffic.parse_trajectories(f, x_scale=0.3048)
    assert s.x[0] == pytest.approx(30.48)
    assert s.v[0] == pytest.approx(3.048)


@pytest.mark.parametrize("text,msg", [
    ("vehicle_id,t,x\n1,0,0\n", "missing columns"),
    ("vehicle_id,t,x,v\n1,0,abc,3\n", "non-numeric"),
    ("vehicle_id,t,x,v\n1,0,0\n", "expected"),
    ("", "empty"),
])
def test_parse_malformed(tmp_path, text, msg):
    with pytest.raises(TrafficDataError, match=msg):
        traffic.parse_trajectories(_write(tmp_path / "t.csv", text))


def test_parse_outside_grid(tmp_path):
    f = _write(tmp_path / "t.csv", "vehicle_id,t,x,v\n1,0,150,3\n")
    with pytest.raises(TrafficDataError, match="outside"):
        traffic.parse_trajectories(f, grid=SMALL)


def test_trajectory_csv_roundtrip(tmp_path):
    scen = traffic.generate_greenshields_scenario(P, SMALL, {"kind": "riemann"}, n_vehicles=10, seed=1,
                                                  driver_sd=1.0, noise_sd=0.5)
    traffic.write_trajectories(tmp_path / "t.csv", scen.trajectories)
    back = traffic.parse_trajectories(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.v, scen.trajectories.v)
    np.testing.assert_array_equal(back.vehicle_id, scen.trajectories.vehicle_id)


def test_stationary_shock_speed():
    assert P.shock_speed(0.02, 0.10) == pytest.approx(0.0, abs=1e-12)
    sc = traffic.RiemannScenario(P, 0.02, 0.10, 50.0)
    assert sc.is_shock and sc.shock_speed == pytest.approx(0.0, abs=1e-12)


def test_constant_density_gives_equal_speeds():
    scen = traffic.generate_greenshields_scenario(P, SMALL, {"kind": "riemann", "rho_left": 0.05, "rho_right": 0.05},
                                                  n_vehicles=20, seed=0)
    np.testing.assert_allclose(scen.truth, P.speed(0.05))
    np.testing.assert_allclose(scen.trajectories.v, P.speed(0.05))


def test_invalid_densities():
    with pytest.raises(TrafficDataError):
        traffic.RiemannScenario(P, 0.0, 0.2, 10.0)
    with pytest.raises(TrafficDataError):
        traffic.make_scenario({"kind": "tsunami"}, P, SMALL)


def test_generator_is_deterministic_and_valid():
    kw = dict(n_vehicles=40, seed=3, driver_sd=1.0, noise_sd=0.5)
    a = traffic.generate_greenshields_scenario(P, GridSpec(), {"kind": "riemann"}, **kw)
    b = traffic.generate_greenshields_scenario(P, GridSpec(), {"kind": "riemann"}, **kw)
    for col in ("vehicle_id", "t", "x", "v"):
        np.testing.assert_array_equal(getattr(a.trajectories, col), getattr(b.trajectories, col))
    s = a.trajectories
    assert s.v.min() >= 0 and s.x.min() >= 0 and s.x.max() <= 500.0 and s.t.max() <= 120.0
    c = traffic.generate_greenshields_scenario(P, GridSpec(), {"kind": "riemann"}, **{**kw, "seed": 4})
    assert len(c.trajectories) != len(s) or not np.array_equal(c.trajectories.v, s.v)


def test_generator_rejects_negative_noise():
    with pytest.raises(TrafficDataError):
        traffic.generate_greenshields_scenario(P, SMALL, {"kind": "riemann"}, n_vehicles=5, noise_sd=-1.0)


def _set(x, t, v, ids=None, removed=()):
    ids = [str(i) for i in range(len(x))] if ids is None else ids
    return TrajectorySet(np.array(ids), t, x, v, frozenset(removed))


def test_one_record_per_bin():
    x = [5.0, 15.0, 25.0]
    f = traffic.bin_trajectories(_set(x, [1.0] * 3, [3.0, 4.0, 5.0]), SMALL)
    np.testing.assert_array_equal(f.mean_speed()[:3], [3.0, 4.0, 5.0])


def test_boundary_goes_to_lower_bin():
    f = traffic.bin_trajectories(_set([10.0], [2.0], [7.0]), SMALL)
    assert f.kept_count[0] == 1
    assert SMALL.bin_of(0.0, 0.0) == 0 and SMALL.bin_of(100.0, 20.0) == SMALL.n_points - 1


def test_accumulation_example():
    s = _set([5.0, 6.0, 7.0], [1.0, 1.0, 1.0], [10.0, 20.0, 30.0], ids=["a", "b", "c"], removed=["c"])
    f = traffic.bin_trajectories(s, SMALL)
    assert (f.kept_sum[0], f.kept_count[0], f.removed_sum[0], f.removed_count[0]) == (30, 2, 30, 1)
    assert f.mean_speed(1.0)[0] == pytest.approx(20.0)
    assert f.mean_speed(0.0)[0] == pytest.approx(15.0)


def test_record_outside_grid():
    with pytest.raises(TrafficDataError):
        traffic.bin_trajectories(_set([120.0], [1.0], [3.0]), SMALL)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 60))
def test_binning_conserves_records(seed, n):
    rng = np.random.default_rng(seed)
    s = _set(rng.uniform(0, 100, n), rng.uniform(0, 20, n), rng.uniform(0, 30, n),
             ids=[str(i % 7) for i in range(n)], removed=[str(i) for i in range(min(n, 7)) if i % 2])
    f = traffic.bin_trajectories(s, SMALL)
    assert f.total_count.sum() == n
    np.testing.assert_allclose((f.kept_sum + f.removed_sum).sum(), s.v.sum())


def test_removal_consistency():
    scen = traffic.generate_greenshields_scenario(P, GridSpec(), {"kind": "riemann"}, n_vehicles=60, seed=2,
                                                  driver_sd=1.0, noise_sd=0.5)
    rem = traffic.choose_removal(scen.trajectories, 0.2, 2)
    assert len(rem) == 12
    marked = traffic.bin_trajectories(scen.trajectories.with_removal(rem), GridSpec())
    kept = traffic.bin_trajectories(scen.trajectories.with_removal(rem).kept_only(), GridSpec())
    on = marked.kept_count > 0
    np.testing.assert_array_equal(marked.mean_speed(0.0)[on], kept.mean_speed()[on])


def test_unknown_removal_id():
    with pytest.raises(TrafficDataError):
        _set([1.0], [1.0], [1.0], removed=["zz"])


def test_split_examples():
    f = traffic.BinnedVelocityField(GridSpec(L=100, T_total=100, dx=10, dt=10), np.ones(100), np.ones(100),
                                    np.zeros(100), np.zeros(100))
    with pytest.raises(TrafficDataError):
        traffic.split_observed(f, 1.0, 0)
    O, A = traffic.split_observed(f, 0.14, 0)
    assert O.size == 14 and A.size == 30
    O2, A2 = traffic.split_observed(f, 0.14, 0)
    np.testing.assert_array_equal(O, O2)
    np.testing.assert_array_equal(A, A2)


def test_split_skips_empty_bins():
    counts = np.zeros(100)
    counts[:10] = 1
    f = traffic.BinnedVelocityField(GridSpec(L=100, T_total=100, dx=10, dt=10), counts, counts, np.zeros(100),
                                    np.zeros(100))
    O, _ = traffic.split_observed(f, 0.5, 1)
    assert O.size == 5 and set(O) <= set(range(10))
    with pytest.raises(TrafficDataError):
        traffic.split_observed(f, 0.01, 1)


def test_lwr_truth_residual():
    rep = lwr_truth_suite()
    assert rep["shock"] <= 1e-6 and rep["rarefaction"] <= 1e-6 and rep["pulse"] <= 1e-6
    assert rep["constant_analytic"] == 0.0 and rep["constant_network"] == 0.0


def test_grid_csv_roundtrip(tmp_path):
    v = np.random.default_rng(0).uniform(0, 30, SMALL.n_points)
    traffic.write_grid_csv(tmp_path / "g.csv", SMALL, {"v": v, "w": 2 * v})
    np.testing.assert_array_equal(traffic.read_grid_csv(tmp_path / "g.csv", SMALL, "w"), 2 * v)
    with pytest.raises(TrafficDataError):
        traffic.read_grid_csv(tmp_path / "g.csv", GridSpec(), "v")
    with pytest.raises(TrafficDataError):
        traffic.write_grid_csv(tmp_path / "h.csv", SMALL, v[:-1])


def test_grid_spec_validation():
    with pytest.raises(TrafficDataError):
        GridSpec(L=100.0, dx=30.0)
    assert GridSpec().nx == 40 and GridSpec().nt == 60
