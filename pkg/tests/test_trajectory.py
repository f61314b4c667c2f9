import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfcal.synthetic import GroundTruth, generate, reported_model
from cfcal.trajectory import (DataError, SchemaError, Trajectory, cf_state_at, downsample,
                              filter_min_duration, load_trajectories, write_trajectories)

HEADER = "t,driver_id,x_follower,v_follower,x_leader,v_leader,lead_length\n"


def _traj(T=10, dt=0.2, gap=20.0, driver="a"):
    t = dt * np.arange(T)
    xf = 10.0 * t
    return Trajectory(driver, dt, 0.0, xf, np.full(T, 10.0), xf + gap + 5.0, np.full(T, 10.0))


def test_minimal_file(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(HEADER + "0.0,7,0,10,25,10,5\n0.2,7,2,10,27,10,5\n")
    (tr,) = load_trajectories(p)
    assert len(tr) == 2 and tr.dt == 0.2 and tr.driver_id == "7"
    assert tr.gap == pytest.approx([20.0, 20.0])
    assert not tr.has_accel


def test_crlf_accepted(tmp_path):
    p = tmp_path / "d.csv"
    p.write_bytes((HEADER + "0.0,7,0,10,25,10,5\n0.2,7,2,10,27,10,5\n").replace("\n", "\r\n").encode())
    assert len(load_trajectories(p)[0]) == 2


def test_negative_gap_names_driver_and_time(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(HEADER + "0.0,car9,0,10,25,10,5\n0.2,car9,2,10,6.5,10,5\n0.4,car9,4,10,29,10,5\n")
    with pytest.raises(DataError, match=r"car9.*-0\.5.*t=0\.2"):
        load_trajectories(p)


def test_missing_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("t,driver_id,x_follower\n0,1,0\n")
    with pytest.raises(SchemaError):
        load_trajectories(p)


def test_single_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(HEADER + "0.0,1,0,10,25,10,5\n")
    with pytest.raises(DataError):
        load_trajectories(p)


def test_nonuniform_spacing(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(HEADER + "0.0,1,0,10,25,10,5\n0.2,1,2,10,27,10,5\n0.5,1,5,10,30,10,5\n"
                 "0.7,1,7,10,32,10,5\n")
    with pytest.raises(DataError, match="non-uniform"):
        load_trajectories(p)


def _synthetic_25hz():
    m = reported_model(1)
    gt = GroundTruth([m], [("sawtooth", dict(low=10, high=20, period=20))], 0.0, 0.0, seed=3)
    return generate(gt, 60.0, 0.04)[0][0]


def test_25hz_file_roundtrip(tmp_path):
    tr = _synthetic_25hz()
    p = tmp_path / "hz25.csv"
    write_trajectories(p, [tr])
    (back,) = load_trajectories(p)
    assert back.dt == 0.04 and len(back) == 1500
    np.testing.assert_array_equal(back.x_f, tr.x_f)
    np.testing.assert_array_equal(back.a_f, tr.a_f)


def test_downsample_every_fifth():
    tr = _synthetic_25hz()
    ds = downsample(tr, 5.0)
    assert len(ds) == 300 and ds.dt == 0.2
    np.testing.assert_array_equal(ds.v_f, tr.v_f[::5])
    assert downsample(tr, 25.0) is tr


def test_downsample_non_integer_ratio():
    with pytest.raises(ValueError):
        downsample(_traj(dt=0.1), 4.0)


@given(T=st.integers(20, 400), k=st.sampled_from([1, 2, 5, 10]))
def test_downsample_keeps_duration(T, k):
    tr = _traj(T=T, dt=0.02)
    ds = downsample(tr, 50.0 / k)
    assert tr.duration - ds.duration <= (k - 1) * tr.dt + 1e-9
    assert ds.duration <= tr.duration + 1e-9


def test_filter_min_duration():
    trs = [_traj(T=n + 1, driver=str(n)) for n in (249, 250, 305)]  # 49.8, 50.0, 61.0 s
    assert [t.driver_id for t in filter_min_duration(trs, 50.0)] == ["250", "305"]
    assert filter_min_duration(trs, 0.0) == trs
    assert filter_min_duration([], 50.0) == []


def test_cf_state_example():
    tr = Trajectory("a", 0.2, 0.0, [75.0, 77.0], [12.0, 10.0], [100.0, 102.0], [10.0, 10.0])
    st0 = cf_state_at(tr, 0)
    assert (st0.s, st0.v, st0.dv) == (20.0, 12.0, 2.0)
    assert cf_state_at(tr, 1).dv == 0.0
    with pytest.raises(IndexError):
        cf_state_at(tr, 2)


def test_dv_matches_gap_rate():
    # follower 3 m/s faster: the gap shrinks 0.6 m per 0.2 s step
    T, dt = 20, 0.2
    t = dt * np.arange(T)
    tr = Trajectory("a", dt, 0.0, 13.0 * t, np.full(T, 13.0), 40.0 + 10.0 * t, np.full(T, 10.0))
    assert np.diff(tr.gap) == pytest.approx(np.full(T - 1, -0.6))
    assert cf_state_at(tr, 4).dv == pytest.approx(3.0)
    assert -np.diff(tr.gap) / dt == pytest.approx(tr.dv[:-1])


@given(a0=st.floats(-2, 2), da=st.floats(-1, 1))
def test_dv_first_order_under_acceleration(a0, da):
    # leader cruises, follower brakes/accelerates with constant acceleration
    dt, T = 0.2, 30
    t = dt * np.arange(T)
    vl = np.full(T, 15.0)
    xl = 200.0 + 15.0 * t
    vf = 15.0 + (a0 + da) * t
    xf = (a0 + da) * 0.5 * t ** 2 + 15.0 * t
    tr = Trajectory("a", dt, 0.0, xf, vf, xl, vl, validate=False)
    fd = -np.diff(tr.gap) / dt
    assert np.all(np.abs(fd - tr.dv[:-1]) <= 0.5 * abs(a0 + da) * dt + 1e-9)


def test_sequences_must_match():
    with pytest.raises(DataError):
        Trajectory("a", 0.2, 0.0, [0, 1, 2], [1, 1], [30, 31, 32], [1, 1, 1])
    with pytest.raises(DataError):
        Trajectory("a", 0.0, 0.0, [0, 1], [1, 1], [30, 31], [1, 1])
