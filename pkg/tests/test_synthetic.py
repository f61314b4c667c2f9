import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfcal.ar import ArCoefficients, autocovariance, is_stationary
from cfcal.idm import THETA_REC, IdmParams, equilibrium_gap, idm_term
from cfcal.likelihood import DriverModel
from cfcal.simulation import FollowerInit, simulate_follower
from cfcal.synthetic import (REPORTED_POSTERIOR_MEANS, GroundTruth, generate, leader_profile,
                             recovery_fixture, reported_model, rollout_latent)
from cfcal.trajectory import load_trajectories, write_trajectories


def _residuals(traj, m):
    p = m.idm
    return traj.a_f - idm_term(traj.gap, traj.v_f, traj.dv, p.v0, p.s0, p.T_hw, p.alpha, p.beta)


def _long_run(rho, sigma, n, seed):
    """Latent trajectory behind a steady 25 m/s leader."""
    m = DriverModel.from_arrays(THETA_REC, rho, sigma)
    gt = GroundTruth([m], [("constant", dict(speed=25.0))], seed=seed)
    latent, _ = generate(gt, n * 0.2, 0.2)
    return m, latent[0]


def _batch_autocov(x, max_lag, n_batches=50):
    """Per-lag biased autocovariance and its batch-means standard error."""
    def acov(y):
        c = y - y.mean()
        return np.array([np.dot(c[:len(c) - k], c[k:]) / len(c) for k in range(max_lag + 1)])

    batches = np.array([acov(b) for b in np.array_split(x, n_batches)])
    return acov(x), batches.std(axis=0, ddof=1) / np.sqrt(n_batches)


# ---------------------------------------------------------------- leader profiles

def test_constant_leader():
    lead = leader_profile("constant", dict(speed=20.0), 100.0, 0.2)
    assert len(lead) == 500
    assert np.all(np.diff(lead.x) > 0)
    assert np.all(lead.v == 20.0)


def test_sawtooth_range():
    lead = leader_profile("sawtooth", dict(low=15.0, high=25.0, period=40.0), 200.0, 0.2)
    assert (lead.v.min(), lead.v.max()) == (15.0, 25.0)
    # positions integrate the piecewise-linear speed exactly
    assert np.diff(lead.x) == pytest.approx(0.1 * (lead.v[1:] + lead.v[:-1]), abs=1e-12)


def test_recorded_leader_passes_through():
    _, obs = generate(recovery_fixture(0, n_drivers=1), 20.0, 0.2)
    lead = leader_profile("recorded", dict(trajectory=obs[0]))
    assert np.array_equal(lead.x, obs[0].x_l) and np.array_equal(lead.v, obs[0].v_l)
    assert leader_profile("recorded", dict(trajectory=lead)) is lead


@pytest.mark.parametrize("kind, params", [
    ("zigzag", {}),
    ("sawtooth", dict(low=20.0, high=10.0, period=10.0)),
    ("sawtooth", dict(low=5.0, high=10.0, period=10.0, rise=1.0)),
])
def test_leader_profile_rejects(kind, params):
    with pytest.raises(ValueError):
        leader_profile(kind, params, 10.0, 0.2)


def test_duration_must_be_multiple_of_dt():
    with pytest.raises(ValueError):
        leader_profile("constant", dict(speed=10.0), 10.1, 0.2)


# ---------------------------------------------------------------- generate

def test_noise_free_generation_is_deterministic_idm():
    m = DriverModel.from_arrays(THETA_REC, [0.6], 1e-300)
    gt = GroundTruth([m], [("sawtooth", dict(low=5.0, high=20.0, period=30.0))])
    latent, observed = generate(gt, 60.0, 0.2)
    lat, obs = latent[0], observed[0]
    assert np.array_equal(lat.x_f, obs.x_f) and np.array_equal(lat.v_f, obs.v_f)
    lead = leader_profile("sawtooth", dict(low=5.0, high=20.0, period=30.0), 60.0, 0.2)
    init = FollowerInit(float(lat.x_f[0]), float(lat.v_f[0]))
    ref = simulate_follower(lead, init, m, 1, seed=0, noise_scale=0.0)
    assert lat.x_f == pytest.approx(ref.x[0], abs=1e-9)
    assert lat.v_f == pytest.approx(ref.v[0], abs=1e-9)


def test_constant_leader_fixed_point():
    m = DriverModel.from_arrays(THETA_REC, [], 1.0)
    lead = leader_profile("constant", dict(speed=25.0), 60.0, 0.2)
    lat = rollout_latent(m, lead, np.zeros(len(lead)))
    assert lat.gap == pytest.approx(np.full(len(lead), equilibrium_gap(25.0, m.idm)), abs=1e-9)


def test_latent_residuals_reproduce_ar_autocovariance():
    rho, sigma = [0.7, -0.2], 0.05
    m, lat = _long_run(rho, sigma, 100_000, seed=1)
    gamma_hat, se = _batch_autocov(_residuals(lat, m), 5)
    gamma = autocovariance(m.ar, 5).gamma
    assert np.all(np.abs(gamma_hat - gamma) < 3 * se)


def test_white_residuals_for_order_zero():
    n = 100_000
    m, lat = _long_run([], 0.05, n, seed=2)
    r = _residuals(lat, m)
    r = r - r.mean()
    acf = np.array([np.dot(r[:-k], r[k:]) for k in range(1, 11)]) / np.dot(r, r)
    assert np.all(np.abs(acf) < 3 / np.sqrt(n))


def test_observation_noise_variance():
    gt = recovery_fixture(3, n_drivers=4, sigma_v=0.02, sigma_x=0.01)
    latent, observed = generate(gt, 600.0, 0.2)
    dv = np.concatenate([o.v_f - l.v_f for l, o in zip(latent, observed)])
    dx = np.concatenate([o.x_f - l.x_f for l, o in zip(latent, observed)])
    n = len(dv)
    for diff, sd in ((dv, 0.02), (dx, 0.01)):
        assert abs(diff.var() - sd ** 2) < 3 * sd ** 2 * np.sqrt(2 / n)
    # leader channel and accelerations are not perturbed
    for l, o in zip(latent, observed):
        assert np.array_equal(l.x_l, o.x_l) and np.array_equal(l.a_f, o.a_f)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 20))
def test_generate_deterministic(seed):
    gt = recovery_fixture(seed, n_drivers=2, order=2)
    a_lat, a_obs = generate(gt, 20.0, 0.2)
    b_lat, b_obs = generate(gt, 20.0, 0.2)
    for a, b in zip(a_obs + a_lat, b_obs + b_lat):
        assert np.array_equal(a.x_f, b.x_f) and np.array_equal(a.v_f, b.v_f)


def test_csv_round_trip(tmp_path):
    _, obs = generate(recovery_fixture(4, n_drivers=3, order=1), 30.0, 0.2)
    path = tmp_path / "obs.csv"
    write_trajectories(path, obs)
    back = load_trajectories(path)
    assert [t.driver_id for t in back] == [t.driver_id for t in obs]
    for a, b in zip(obs, back):
        assert a.dt == b.dt
        for name in ("x_f", "v_f", "x_l", "v_l", "a_f"):
            assert np.array_equal(getattr(a, name), getattr(b, name))


# ---------------------------------------------------------------- ground truth

def test_ground_truth_validation():
    m = reported_model(1)
    with pytest.raises(ValueError):
        GroundTruth([m, m], [("constant", dict(speed=10.0))])
    explosive = DriverModel(IdmParams.from_array(THETA_REC), ArCoefficients([1.1], 0.1))
    with pytest.raises(ValueError, match="stationary"):
        GroundTruth([explosive], [("constant", dict(speed=10.0))])


def test_reported_models_are_stationary():
    for p in REPORTED_POSTERIOR_MEANS:
        m = reported_model(p)
        assert m.order == p and is_stationary(m.ar)


def test_recovery_fixture_shape():
    gt = recovery_fixture(0)
    assert len(gt.drivers) == 20 and len(gt.leaders) == 20
    assert all(m.order == 5 for m in gt.drivers)
    theta, sigma_eta, rho = REPORTED_POSTERIOR_MEANS[5]
    assert gt.population["theta"] == pytest.approx(theta)
    assert gt.population["sigma_eta"] == sigma_eta
    log_theta = np.log([m.idm.as_array() for m in gt.drivers])
    # driver offsets around the population, spread 0.05 on the log scale
    assert np.abs(log_theta.mean(axis=0) - np.log(theta)).max() < 4 * 0.05 / np.sqrt(20)
    again = recovery_fixture(0)
    assert again.leaders == gt.leaders
    assert all(np.array_equal(a.ar.rho, b.ar.rho) for a, b in zip(again.drivers, gt.drivers))
