import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfcal.ar import ArCoefficients, autocovariance, sample_path
from cfcal.evaluation import (ScoreReport, crps, crps_ensemble, empirical_autocovariance,
                              extract_residuals, read_reports_csv, rmse, score_fractions,
                              write_reports_csv, write_summary_csv)
from cfcal.idm import THETA_REC
from cfcal.likelihood import DriverModel
from cfcal.simulation import SimEnsemble
from cfcal.synthetic import GroundTruth, generate, recovery_fixture, reported_model

finite = st.floats(-50, 50, allow_nan=False)


def _crps_by_integration(y, members):
    """Exact integral of (F(x) - 1{x >= y})^2 for the empirical step CDF."""
    xs = np.asarray(members, dtype=float)
    knots = np.unique(np.append(xs, y))
    total = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        F = np.mean(xs <= lo)
        H = 1.0 if lo >= y else 0.0
        total += (F - H) ** 2 * (hi - lo)
    return total


# ---------------------------------------------------------------- rmse

def test_rmse_zero_when_mean_matches(rng):
    truth = rng.normal(size=30)
    ens = np.stack([truth - 1.0, truth + 1.0])
    assert rmse(truth, ens) == pytest.approx(0.0, abs=1e-15)


def test_rmse_constant_offset(rng):
    truth = rng.normal(size=30)
    assert rmse(truth, (truth - 2.5)[None, :]) == pytest.approx(2.5, abs=1e-12)


def test_rmse_white_noise_decay(rng):
    sigma, steps = 2.0, 2000
    for n in (4, 16, 64):
        r = rmse(np.zeros(steps), rng.normal(0, sigma, (n, steps)))
        # per-step mean has variance sigma^2/n; mean of squares over 2000 steps
        assert r == pytest.approx(sigma / np.sqrt(n), rel=4 * np.sqrt(2 / steps))


def test_rmse_on_ensemble_and_errors():
    z = np.zeros((2, 5))
    ens = SimEnsemble(0.2, 0.0, x=z, v=z + 1.0, a=z, s=z)
    assert rmse(np.zeros(5), ens, "v") == 1.0
    with pytest.raises(ValueError):
        rmse(np.zeros(5), ens)
    with pytest.raises(ValueError, match="length"):
        rmse(np.zeros(4), ens, "v")


# ---------------------------------------------------------------- crps

def test_crps_degenerate():
    assert crps(3.0, [3.0] * 7) == 0.0


def test_crps_two_point():
    assert crps(0.0, [0.0, 1.0]) == pytest.approx(0.25, abs=1e-15)


def test_crps_gaussian_closed_form(rng):
    mu, sigma = 1.5, 0.7
    x = rng.normal(mu, sigma, 100_000)
    expected = sigma * (np.sqrt(2) - 1) / np.sqrt(np.pi)
    assert crps(mu, x) == pytest.approx(expected, rel=0.02)


def test_crps_empty():
    with pytest.raises(ValueError):
        crps(0.0, [])


@settings(max_examples=200, deadline=None)
@given(y=finite, members=st.lists(finite, min_size=1, max_size=8))
def test_crps_matches_integration(y, members):
    assert crps(y, members) == pytest.approx(_crps_by_integration(y, members), abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(y=finite, members=st.lists(finite, min_size=1, max_size=30))
def test_crps_below_mean_absolute_error(y, members):
    mae = float(np.mean(np.abs(np.asarray(members) - y)))
    assert 0.0 <= crps(y, members) <= mae + 1e-12


@settings(max_examples=100, deadline=None)
@given(shift=finite, seed=st.integers(0, 2 ** 20))
def test_scores_translation_equivariant(shift, seed):
    r = np.random.default_rng(seed)
    truth, ens = r.normal(size=12), r.normal(size=(6, 12))
    assert rmse(truth + shift, ens + shift) == pytest.approx(rmse(truth, ens), abs=1e-9)
    assert crps_ensemble(truth + shift, ens + shift) == pytest.approx(
        crps_ensemble(truth, ens), abs=1e-9)


def test_crps_ensemble_vectorizes(rng):
    obs, ens = rng.normal(size=9), rng.normal(size=(5, 9))
    batch = crps_ensemble(obs, ens)
    assert batch == pytest.approx([crps(obs[i], ens[:, i]) for i in range(9)], abs=1e-14)


# ---------------------------------------------------------------- residuals

def _single_driver(m, seed=0, duration=60.0, leader=None):
    leader = leader or ("sawtooth", dict(low=5.0, high=20.0, period=30.0))
    gt = GroundTruth([m], [leader], seed=seed)
    return generate(gt, duration, 0.2)[0][0]


def test_residuals_zero_for_deterministic_idm():
    m = DriverModel.from_arrays(THETA_REC, [], 1e-300)
    traj = _single_driver(m)
    assert np.max(np.abs(extract_residuals(traj, m.idm))) < 1e-12


def test_residuals_constant_bias():
    m = DriverModel.from_arrays(THETA_REC, [], 1e-300)
    traj = _single_driver(m)
    biased = dataclasses.replace(traj, a_f=traj.a_f + 0.3)
    assert extract_residuals(biased, m.idm) == pytest.approx(np.full(len(traj), 0.3), abs=1e-12)


def test_residuals_ar1_lag_one_correlation():
    rho, n = 0.8, 50_000
    m = DriverModel.from_arrays(THETA_REC, [rho], 0.05)
    traj = _single_driver(m, seed=3, duration=n * 0.2, leader=("constant", dict(speed=25.0)))
    r = extract_residuals(traj, m.idm)
    r = r - r.mean()
    r1 = np.dot(r[:-1], r[1:]) / np.dot(r, r)
    # Bartlett: var(r1) ~ (1 - rho^2) / n for AR(1)
    assert abs(r1 - rho) < 3 * np.sqrt((1 - rho ** 2) / n)


def test_residuals_need_acceleration():
    traj = _single_driver(reported_model(0))
    with pytest.raises(ValueError, match="acceleration"):
        extract_residuals(dataclasses.replace(traj, a_f=None), reported_model(0).idm)


# ---------------------------------------------------------------- autocovariance

def test_autocovariance_constant_sequence():
    assert empirical_autocovariance(np.full(20, 4.2), 3).gamma[0] == pytest.approx(0.0, abs=1e-24)


def test_autocovariance_alternating():
    N = 40
    x = (-1.0) ** np.arange(N)
    g = empirical_autocovariance(x, 6).gamma
    assert g == pytest.approx([(-1) ** k * (1 - k / N) for k in range(7)], abs=1e-12)


def test_autocovariance_short_sequence():
    with pytest.raises(ValueError):
        empirical_autocovariance(np.zeros(3), 3)


def test_autocovariance_ar5_matches_closed_form(ar5_model):
    c = ar5_model.ar
    n, n_batches, lags = 1_000_000, 100, 10
    x = sample_path(c, n + 5000, 21)[5000:]
    g = empirical_autocovariance(x, lags, dt=0.2)
    batches = np.array([empirical_autocovariance(b, lags).gamma
                        for b in np.array_split(x, n_batches)])
    se = batches.std(axis=0, ddof=1) / np.sqrt(n_batches)
    assert np.all(np.abs(g.gamma - autocovariance(c, lags).gamma) < 3 * se)
    assert g.lag[1] == pytest.approx(0.2)


# ---------------------------------------------------------------- fraction scoring

def _fraction_data(order, seed, n_drivers=3, duration=40.0):
    gt = recovery_fixture(seed, n_drivers=n_drivers, order=order, sigma_v=0.0, sigma_x=0.0)
    return gt, generate(gt, duration, 0.2)[1]


def test_noiseless_scores_vanish():
    gt, _ = _fraction_data(0, 0)
    quiet = [dataclasses.replace(m, ar=ArCoefficients(m.ar.rho, 1e-300)) for m in gt.drivers]
    data = generate(GroundTruth(quiet, gt.leaders), 40.0, 0.2)[1]
    rep = score_fractions(data, [quiet], horizons=(5,), stride=2.0)[0]
    for name in ("rmse_a", "rmse_v", "rmse_s", "crps_a", "crps_v", "crps_s"):
        assert np.max(getattr(rep, name)) < 1e-9
    # same data scored with real process noise: scores move off zero
    loud = [dataclasses.replace(m, ar=ArCoefficients(m.ar.rho, 0.5)) for m in quiet]
    rep_loud = score_fractions(data, [loud] * 20, horizons=(5,), stride=2.0)[0]
    assert rep_loud.summary()["rmse_v"] > 1e-3


def test_report_counts_and_horizons():
    gt, data = _fraction_data(2, 1)
    draws = [list(gt.drivers)] * 4
    reps = score_fractions(data, draws, horizons=range(1, 11), stride=1.0, model="truth")
    assert [r.horizon for r in reps] == [float(h) for h in range(1, 11)]
    # 40 s at 5 Hz: starts 2, 7, ... up to 199 - n_steps, stride 5 steps
    for r in reps:
        n_steps = int(round(r.horizon / 0.2))
        per_driver = len(range(2, 199 - n_steps + 1, 5))
        assert r.n_fractions == 3 * per_driver
        assert r.meta["rollouts"] == 4 and r.model == "truth"


def test_score_fractions_errors():
    gt, data = _fraction_data(0, 2, duration=6.0)
    with pytest.raises(ValueError, match="too short"):
        score_fractions(data, [list(gt.drivers)], horizons=(10,))
    with pytest.raises(ValueError, match="drivers"):
        score_fractions(data, [list(gt.drivers)[:2]], horizons=(1,))
    with pytest.raises(ValueError):
        score_fractions(data, [], horizons=(1,))


def test_true_ar_model_beats_white_model_on_crps_a():
    """Paired check with known generating models, 10 seeds."""
    wins = 0
    for seed in range(10):
        gt, data = _fraction_data(5, seed, n_drivers=4, duration=60.0)
        white = [reported_model(0)] * 4
        draws_ar = [list(gt.drivers)] * 50
        draws_white = [white] * 50
        ar = score_fractions(data, draws_ar, horizons=(5,), seed=seed)[0]
        wn = score_fractions(data, draws_white, horizons=(5,), seed=seed, warm_start=5)[0]
        wins += ar.summary()["crps_a"] < wn.summary()["crps_a"]
    assert wins >= 8


def _report(rng, n=4, horizon=5.0, model="m"):
    cols = {f: rng.uniform(0, 1, n) for f in ("rmse_a", "rmse_v", "rmse_s",
                                              "crps_a", "crps_v", "crps_s")}
    cols["crps_a"][0] = math.nan
    return ScoreReport(horizon=horizon, fraction_length=horizon, n_fractions=n, model=model, **cols)


def test_report_csv_round_trip(tmp_path, rng):
    reps = [_report(rng, horizon=h, model=m) for m in ("p0", "p5") for h in (1.0, 2.0)]
    write_reports_csv(tmp_path / "r.csv", reps)
    back = read_reports_csv(tmp_path / "r.csv")
    assert len(back) == 4
    for a, b in zip(reps, back):
        assert (a.model, a.horizon, a.n_fractions) == (b.model, b.horizon, b.n_fractions)
        for f in ("rmse_v", "crps_s"):
            assert np.array_equal(getattr(a, f), getattr(b, f))
        assert np.isnan(b.crps_a[0])


def test_report_json_round_trip(rng):
    r = _report(rng)
    back = ScoreReport.from_json(r.to_json())
    assert np.array_equal(back.rmse_s, r.rmse_s)
    assert np.isnan(back.crps_a[0]) and back.crps_a[1] == r.crps_a[1]


def test_report_validation_and_display(rng, tmp_path):
    with pytest.raises(ValueError, match="negative"):
        ScoreReport(1.0, 1.0, 1, *([np.array([0.1])] * 5), np.array([-0.1]))
    with pytest.raises(ValueError, match="one value"):
        ScoreReport(1.0, 1.0, 2, *([np.array([0.1])] * 6))
    r = _report(rng)
    r.display_scale = 10.0
    assert r.summary(display=True)["rmse_v"] == pytest.approx(10 * r.summary()["rmse_v"])
    write_summary_csv(tmp_path / "s.csv", [r])
    header = (tmp_path / "s.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["model", "horizon", "n_fractions"] and "crps_a_std" in header
