import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixedflow.metrics import (
    EdieRegion,
    InsufficientDataError,
    MeasurementRecord,
    NeCriteria,
    PlatoonPolicy,
    detect_equilibrium,
    edie_measures,
    edie_table,
    fundamental_diagram,
    hellinger_1d,
    hellinger_2d,
    lane_change_frequency,
    pareto_check,
    platoon_benefit,
    platoon_partition,
    spatial_distribution,
    spatial_metric,
    spatial_series,
)
from mixedflow.metrics.analysis import lane_change_counts
from mixedflow.metrics.equilibrium import rolling_pooled_std
from mixedflow.traffic import Trajectories


def make_traj(t, pos, lane=None, cls=None, speed=None, ring_length=1000.0, n_lanes=1, changed=None):
    t = np.asarray(t, dtype=float)
    pos = np.asarray(pos, dtype=float)
    if pos.ndim == 1:
        pos = pos[:, None]
    T, n = pos.shape
    lane = np.zeros((T, n), int) if lane is None else np.asarray(lane).reshape(T, n)
    cls = np.ones(n, np.int8) if cls is None else np.asarray(cls, np.int8)
    speed = np.zeros((T, n)) if speed is None else np.asarray(speed, float).reshape(T, n)
    changed = np.zeros((T, n), bool) if changed is None else np.asarray(changed, bool).reshape(T, n)
    return Trajectories(float(ring_length), n_lanes, cls, t, pos % ring_length, lane, speed, changed)


def dense_oracle(traj, x0, dx, t0, dt, sel=None, sub=40000):
    """TTD and TTS by brute-force sub-sampling of every linear tick segment."""
    L = traj.ring_length
    ttd = tts = 0.0
    n = traj.pos.shape[1]
    for k in range(len(traj.t) - 1):
        h = traj.t[k + 1] - traj.t[k]
        tau = (np.arange(sub) + 0.5) / sub * h
        for i in range(n):
            if sel is not None and not sel[i]:
                continue
            v = ((traj.pos[k + 1, i] - traj.pos[k, i]) % L) / h
            x = (traj.pos[k, i] + v * tau) % L
            tt = traj.t[k] + tau
            inside = ((x - x0) % L < dx) & (tt >= t0) & (tt < t0 + dt)
            tts += inside.sum() * h / sub
            ttd += inside.sum() * h / sub * v
    return ttd, tts


# --- Edie ----------------------------------------------------------------------------------

def test_single_vehicle_constant_speed():
    t = np.arange(0, 20.5, 0.5)
    traj = make_traj(t, 20.0 * t)
    rec = edie_measures(traj, EdieRegion(0.0, 0.0, 250.0, 8.0))
    # 160 m and 8 s inside a 250 m x 8 s region
    assert rec.u_mps == pytest.approx(20.0, rel=1e-12)
    assert rec.q_vph == pytest.approx(160 / 2000 * 3600, rel=1e-12)
    assert rec.rho_vpkm == pytest.approx(8 / 2000 * 1000, rel=1e-12)


def test_empty_region_is_nan_speed():
    t = np.arange(0, 10.5, 0.5)
    traj = make_traj(t, np.full(len(t), 600.0))
    rec = edie_measures(traj, EdieRegion(0.0, 0.0, 250.0, 8.0))
    assert rec.q_vph == 0.0 and rec.rho_vpkm == 0.0 and rec.empty


def test_stopped_vehicle_counts_time_not_distance():
    t = np.arange(0, 10.5, 0.5)
    traj = make_traj(t, np.full(len(t), 100.0))
    rec = edie_measures(traj, EdieRegion(0.0, 0.0, 250.0, 8.0))
    assert rec.q_vph == 0.0 and rec.rho_vpkm == pytest.approx(8 / 2000 * 1000) and rec.u_mps == 0.0


def test_doubling_vehicles_doubles_q_and_rho():
    t = np.arange(0, 20.5, 0.5)
    one = make_traj(t, 15.0 * t + 3.0)
    two = make_traj(t, np.stack([15.0 * t + 3.0, 15.0 * t + 3.0], axis=1))
    reg = EdieRegion(0.0, 4.0, 250.0, 8.0)
    a, b = edie_measures(one, reg), edie_measures(two, reg)
    assert b.q_vph == pytest.approx(2 * a.q_vph) and b.rho_vpkm == pytest.approx(2 * a.rho_vpkm)
    assert b.u_mps == pytest.approx(a.u_mps)


def test_wraparound_region_and_per_lane_normalisation():
    t = np.arange(0, 20.5, 0.5)
    traj = make_traj(t, 900.0 + 20.0 * t, n_lanes=3)
    rec = edie_measures(traj, EdieRegion(950.0, 0.0, 100.0, 10.0))
    # in the region [950, 1050) from t = 2.5 to t = 7.5
    assert rec.rho_vpkm == pytest.approx(5.0 / (100 * 10 * 3) * 1000)
    assert rec.u_mps == pytest.approx(20.0)


def _random_traj(seed, n=6, T=25, L=500.0):
    rng = np.random.default_rng(seed)
    t = np.arange(T) * 0.5
    v = rng.uniform(0, 25, (T - 1, n))
    pos = np.vstack([rng.uniform(0, L, n), rng.uniform(0, L, n) + np.cumsum(v * 0.5, axis=0)])
    cls = rng.integers(1, 3, n)
    return make_traj(t, pos, cls=cls, speed=np.vstack([v[:1], v]), ring_length=L)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_edie_matches_dense_oracle(seed):
    traj = _random_traj(seed)
    for x0, t0 in ((0.0, 0.0), (375.0, 3.7), (120.0, 8.0)):
        for c in (None, 1, 2):
            reg = EdieRegion(x0, t0, 125.0, 4.0)
            rec = edie_measures(traj, reg, c)
            sel = None if c is None else traj.cls == c
            ttd, tts = dense_oracle(traj, x0, 125.0, t0, 4.0, sel)
            assert rec.q_vph == pytest.approx(ttd / 500.0 * 3600, abs=0.5)
            assert rec.rho_vpkm == pytest.approx(tts / 500.0 * 1000, abs=0.02)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), x0=st.floats(0, 500), t0=st.floats(0, 8), split=st.floats(0.1, 0.9))
def test_edie_identity_and_spatial_additivity(seed, x0, t0, split):
    traj = _random_traj(seed)
    whole = edie_measures(traj, EdieRegion(x0, t0, 100.0, 4.0))
    if not whole.empty:
        assert whole.q_vph == pytest.approx(whole.rho_vpkm * whole.u_mps * 3.6, rel=1e-9)
    a = edie_measures(traj, EdieRegion(x0, t0, 100.0 * split, 4.0))
    b = edie_measures(traj, EdieRegion(x0 + 100.0 * split, t0, 100.0 * (1 - split), 4.0))
    # per-area measures weighted by the sub-region lengths add up
    assert split * a.q_vph + (1 - split) * b.q_vph == pytest.approx(whole.q_vph, rel=1e-9, abs=1e-9)
    assert split * a.rho_vpkm + (1 - split) * b.rho_vpkm == pytest.approx(whole.rho_vpkm, rel=1e-9, abs=1e-9)


def test_edie_table_windows_match_single_regions():
    traj = _random_traj(4, T=41)
    recs = edie_table(traj, dx=125.0, dt=4.0)
    assert len(recs) == 5 * 4 * 2
    for r in recs[::7]:
        single = edie_measures(traj, EdieRegion(r.region_id * 125.0, r.t, 125.0, 4.0), 1 if r.cls == "HV" else 2)
        assert (r.q_vph, r.rho_vpkm) == pytest.approx((single.q_vph, single.rho_vpkm), rel=1e-12, abs=1e-12)


def test_region_validation():
    with pytest.raises(ValueError):
        EdieRegion(0.0, 0.0, 0.0, 8.0)


# --- NE detection --------------------------------------------------------------------

def test_constant_series_detected_after_one_window():
    u = np.full((200, 5), 20.0)
    g = np.full((200, 5), 30.0)
    assert detect_equilibrium(u, g, 0.5, t0=100.0) == pytest.approx(120.0)


def test_white_noise_never_settles():
    # standardized white noise with std 0.5, 100 seeded draws
    for seed in range(100):
        rng = np.random.default_rng(seed)
        u = 1.0 + 0.5 * rng.normal(size=(400, 4))
        g = 1.0 + 0.5 * rng.normal(size=(400, 4))
        assert detect_equilibrium(u, g, 0.5) is None


def test_settling_after_400_s():
    t = np.arange(0, 800, 0.5)
    u = np.where(t < 400, 20 + 15 * np.sign(np.sin(t)), 20.0)
    g = np.where(t < 400, 30 + 25 * np.sign(np.cos(t)), 30.0)
    t_ne = detect_equilibrium(u, g, 0.5)
    assert 400.0 <= t_ne <= 420.0


def test_insufficient_data():
    with pytest.raises(InsufficientDataError):
        detect_equilibrium(np.ones(30), np.ones(30), 0.5)
    with pytest.raises(ValueError):
        detect_equilibrium(np.ones(100), np.ones(90), 0.5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), c=st.floats(0.1, 10.0))
def test_detection_is_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    t = np.arange(0, 300, 0.5)
    decay = np.exp(-t / 60)[:, None]
    u = 20 + 10 * decay * rng.normal(size=(len(t), 3))
    g = 30 + 20 * decay * rng.normal(size=(len(t), 3))
    assert detect_equilibrium(u, g, 0.5) == detect_equilibrium(c * u, c * g, 0.5)


def test_rolling_pooled_std_oracle():
    x = np.random.default_rng(1).normal(size=(50, 3))
    out = rolling_pooled_std(x, 7)
    assert np.isnan(out[:6]).all()
    for k in range(6, 50):
        assert out[k] == pytest.approx(np.std(x[k - 6:k + 1]), rel=1e-9)


def test_criteria_validation():
    with pytest.raises(ValueError):
        NeCriteria(speed_threshold=0.0)


# --- Pareto ---------------------------------------------------------------------------

def test_pareto_cases():
    nc = {"HV": 20.0, "AV": 25.0}
    assert pareto_check({"HV": 20.0, "AV": 25.0}, nc, 0.0).passed
    v = pareto_check({"HV": 19.0, "AV": 26.0}, nc, 0.0)
    assert not v.passed and v.failing == ["HV"]
    assert pareto_check({"HV": 19.0, "AV": 26.0}, nc, 0.05).passed
    assert pareto_check({"HV": 18.9, "AV": 26.0}, nc, 0.05).failing == ["HV"]
    assert pareto_check({"HV": 21.0}, {"HV": 20.0, "AV": 25.0}, 0.0).per_class == {"HV": True}
    assert pareto_check({"HV": 0.97 * 20, "AV": 0.97 * 25}, nc, 0.04).passed
    assert not pareto_check({"HV": 0.97 * 20, "AV": 0.97 * 25}, nc, 0.01).passed
    v = pareto_check({"HV": 22.0, "AV": 0.9 * 25}, nc, 0.04)
    assert not v.passed and v.failing == ["AV"]
    with pytest.raises(ValueError):
        pareto_check(nc, nc, 1.5)


@settings(max_examples=100, deadline=None)
@given(a=st.floats(0.1, 40), b=st.floats(0.1, 40), t1=st.floats(0, 1), t2=st.floats(0, 1))
def test_pareto_monotone_in_tau(a, b, t1, t2):
    lo, hi = sorted((t1, t2))
    if pareto_check({"HV": a}, {"HV": b}, lo).passed:
        assert pareto_check({"HV": a}, {"HV": b}, hi).passed


# --- platoons, Hellinger, M_t ------------------------------------------------------------------

def test_platoon_21m_boundary():
    # follower at 20 m/s links when the bumper gap is <= 20 * 1.0 + 1 = 21 m
    assert platoon_partition([0.0, 26.0], [0, 0], [20.0, 0.0], [2, 2], 1000.0, 1) == [[1, 0]]
    assert platoon_partition([0.0, 26.001], [0, 0], [20.0, 0.0], [2, 2], 1000.0, 1) == []
    assert PlatoonPolicy().max_spacing(20.0) == 21.0


def test_hv_breaks_platoon():
    assert platoon_partition([0.0, 10.0, 20.0], [0, 0, 0], [20.0] * 3, [2, 1, 2], 1000.0, 1) == []
    # different lanes never link
    assert platoon_partition([0.0, 10.0], [0, 1], [20.0] * 2, [2, 2], 1000.0, 2) == []


def test_full_ring_is_one_platoon():
    plats = platoon_partition([0.0, 25.0, 50.0, 75.0], [0] * 4, [30.0] * 4, [2] * 4, 100.0, 1)
    assert len(plats) == 1 and sorted(plats[0]) == [0, 1, 2, 3]
    assert platoon_benefit(plats, 4).b == pytest.approx(0.75)


def test_chain_across_ring_seam_merges():
    plats = platoon_partition([990.0, 5.0, 500.0], [0] * 3, [20.0] * 3, [2, 2, 1], 1000.0, 1)
    assert plats == [[1, 0]]


def test_platoon_benefit_cases():
    b = platoon_benefit([[0, 1, 2], [3, 4, 5, 6, 7]], 10)
    assert (b.p_e, b.p_s, b.b) == pytest.approx((0.8, 0.2, 0.6))
    assert platoon_benefit([list(range(10))], 10).b == pytest.approx(0.9)
    assert (platoon_benefit([], 10).p_e, platoon_benefit([], 10).b) == (0.0, 0.0)
    assert not platoon_benefit([], 0).defined


def _hellinger_oracle(p, q):
    return math.sqrt(max(0.0, 1.0 - float(np.sum(np.sqrt(np.asarray(p) * np.asarray(q))))))


def test_hellinger_cases():
    assert hellinger_1d([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert hellinger_1d([1, 0], [0, 1]) == pytest.approx(1.0)
    assert hellinger_1d([1, 0, 0, 0], [0.25] * 4) == pytest.approx(math.sqrt(0.5), abs=1e-12)
    with pytest.raises(ValueError):
        hellinger_1d([0.5, 0.6], [0.5, 0.5])
    with pytest.raises(ValueError):
        hellinger_1d([1.5, -0.5], [0.5, 0.5])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 30))
def test_hellinger_properties(seed, n):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    h = hellinger_1d(p, q)
    assert 0.0 <= h <= 1.0
    assert h == pytest.approx(hellinger_1d(q, p), abs=1e-12)
    assert h == pytest.approx(_hellinger_oracle(p, q), abs=1e-7)
    assert hellinger_2d(p.reshape(1, n), q.reshape(1, n)) == pytest.approx(h, abs=1e-15)


def test_spatial_distribution_cells():
    grid = spatial_distribution([0.0, 99.99, 999.99, 500.0], [0, 1, 2, 0], [2, 2, 2, 1], 1000.0, 3, 10)
    assert grid.complete
    assert grid.av.sum() == pytest.approx(1.0) and grid.hv.sum() == pytest.approx(1.0)
    assert grid.av[0, 0] == grid.av[1, 0] == grid.av[2, 9] == pytest.approx(1 / 3)
    assert grid.hv[0, 5] == 1.0
    assert spatial_distribution([1.0], [0], [2], 1000.0, 3).hv is None


def test_spatial_metric_value():
    assert spatial_metric(0.6, math.sqrt(0.5)) == pytest.approx(1.0071, abs=1e-4)


def test_spatial_series_on_trajectory():
    t = np.arange(3) * 0.5
    pos = np.array([[0.0, 26.0, 500.0]] * 3)
    speed = np.array([[20.0, 20.0, 5.0]] * 3)
    traj = make_traj(t, pos, cls=[2, 2, 1], speed=speed, n_lanes=1)
    s = spatial_series(traj, n_cells=10)
    assert np.allclose(s.B, 0.5)
    assert np.allclose(s.H, 1.0)
    assert np.allclose(s.M, 1.25)
    only_av = make_traj(t, pos[:, :2], cls=[2, 2], speed=speed[:, :2])
    assert np.isnan(spatial_series(only_av).H).all()


# --- lane changes and the fundamental diagram -----------------------------------------------------

def test_lane_change_frequency():
    t = np.arange(0, 200, 10.0)
    changed = np.zeros((len(t), 3), bool)
    for i, n in enumerate((2, 4, 6)):
        changed[11:11 + n, i] = True  # t >= 110
    changed[5, :] = True  # during loading, ignored
    traj = make_traj(t, np.zeros((len(t), 3)), changed=changed, cls=[1, 2, 2])
    assert lane_change_frequency(traj) == pytest.approx(4.0)
    assert lane_change_frequency(traj, cls=2) == pytest.approx(5.0)
    assert lane_change_frequency(traj, cls=2, loading_time=0.0) == pytest.approx(6.0)
    assert math.isnan(lane_change_frequency(make_traj(t, np.zeros(len(t))), cls=2))
    assert lane_change_counts([2, 4, 6]) == 4.0


def test_fundamental_diagram_sums_classes():
    recs = [MeasurementRecord(0, 0.0, "HV", 100.0, 5.0, 20.0), MeasurementRecord(0, 0.0, "AV", 300.0, 10.0, 8.0),
            MeasurementRecord(1, 0.0, "HV", 500.0, 20.0, 7.0), MeasurementRecord(1, 0.0, "AV", 0.0, 0.0, np.nan),
            MeasurementRecord(0, 0.0, "all", 9e9, 9e9, 1.0)]
    fd = fundamental_diagram(recs)
    assert sorted(zip(fd.rho.tolist(), fd.q.tolist())) == [(15.0, 400.0), (20.0, 500.0)]
    assert (fd.max_flow, fd.rho_at_max) == (500.0, 20.0)
    assert math.isnan(fundamental_diagram([]).max_flow)


@settings(max_examples=100, deadline=None)
@given(sizes=st.lists(st.integers(2, 6), max_size=6), extra=st.integers(0, 10))
def test_platoon_benefit_bounds(sizes, extra):
    n_av = sum(sizes) + extra
    if n_av == 0:
        return
    ids = iter(range(n_av))
    b = platoon_benefit([[next(ids) for _ in range(k)] for k in sizes], n_av)
    assert 0.0 <= b.p_e <= 1.0 and 0.0 <= b.p_s <= 0.5 and 0.0 <= b.b < 1.0
