"""Generative oracle: trajectories from IDM mean + AR(p) error + measurement noise."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ar import ArCoefficients, is_stationary
from .idm import IdmParams, equilibrium_gap, idm_term
from .likelihood import DriverModel
from .trajectory import Leader, Trajectory

# Posterior means reported for a naturalistic car-following sample, keyed by AR
# order: (theta [v0, s0, T, alpha, beta], sigma_eta, rho).
REPORTED_POSTERIOR_MEANS = {
    0: ((21.090, 3.724, 0.946, 0.518, 1.542), 0.240, ()),
    1: ((29.738, 3.220, 1.186, 0.769, 4.130), 0.019, (0.989,)),
    2: ((27.592, 3.367, 1.191, 0.741, 3.483), 0.019, (1.234, -0.247)),
    3: ((25.004, 2.974, 1.206, 0.811, 2.442), 0.017, (1.123, 0.425, -0.572)),
    4: ((26.181, 2.850, 1.222, 0.811, 3.145), 0.016, (0.901, 0.590, -0.149, -0.377)),
    5: ((27.099, 2.843, 1.235, 0.813, 3.422), 0.016, (0.874, 0.580, -0.105, -0.315, -0.071)),
    6: ((28.089, 2.702, 1.259, 0.826, 3.325), 0.015,
        (0.902, 0.632, -0.100, -0.427, -0.217, 0.181)),
    7: ((28.574, 2.594, 1.276, 0.817, 3.439), 0.014,
        (0.866, 0.690, -0.001, -0.413, -0.378, -0.032, 0.248)),
    8: ((28.446, 2.573, 1.264, 0.796, 3.805), 0.014,
        (0.816, 0.700, 0.075, -0.331, -0.381, -0.172, 0.080, 0.200)),
}


def reported_model(order: int) -> DriverModel:
    theta, sigma_eta, rho = REPORTED_POSTERIOR_MEANS[order]
    return DriverModel.from_arrays(theta, np.array(rho, dtype=float), sigma_eta)


def leader_profile(kind: str, params: dict, duration: float = 60.0, dt: float = 0.2) -> Leader:
    """Deterministic leader kinematics.

    kind ``constant``: ``speed`` (m/s), optional ``x0``.
    kind ``sawtooth``: speed ramps linearly ``low`` -> ``high`` -> ``low`` with
    ``period`` (s); ``rise`` is the rising fraction of the period (default
    0.5), ``phase`` shifts the waveform in seconds.
    kind ``recorded``: ``trajectory`` (a Trajectory or Leader), passed through.
    Positions integrate speed exactly for piecewise-linear speed between samples.
    """
    if kind == "recorded":
        src = params["trajectory"]
        return src.leader() if isinstance(src, Trajectory) else src
    n = _n_samples(duration, dt)
    t = dt * np.arange(n)
    length = float(params.get("length", 5.0))
    if kind == "constant":
        v = np.full(n, float(params["speed"]))
    elif kind == "sawtooth":
        low, high = float(params["low"]), float(params["high"])
        period = float(params["period"])
        rise = float(params.get("rise", 0.5))
        if not (high > low >= 0 and period > 0 and 0 < rise < 1):
            raise ValueError("sawtooth needs high > low >= 0, period > 0, 0 < rise < 1")
        tau = np.mod(t + float(params.get("phase", 0.0)), period) / period
        up = low + (high - low) * tau / rise
        down = high - (high - low) * (tau - rise) / (1 - rise)
        v = np.clip(np.where(tau < rise, up, down), low, high)
    else:
        raise ValueError(f"unknown leader profile kind {kind!r}")
    x = float(params.get("x0", 0.0)) + np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)])
    return Leader(dt=dt, x=x, v=v, length=length)


def _n_samples(duration: float, dt: float) -> int:
    """Samples in a record of ``duration`` seconds at step ``dt`` (100 s at 5 Hz is 500)."""
    n = duration / dt
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise ValueError("duration must be an integer multiple of dt")
    return int(round(n))


@dataclass(frozen=True)
class GroundTruth:
    """Known generative parameters for a set of drivers.

    ``leaders`` holds one ``(kind, params)`` descriptor per driver.
    """

    drivers: Sequence[DriverModel]
    leaders: Sequence[tuple]
    sigma_v: float = 0.0
    sigma_x: float = 0.0
    seed: int = 0
    population: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.drivers) != len(self.leaders):
            raise ValueError("one leader descriptor per driver required")
        for m in self.drivers:
            if not is_stationary(m.ar):
                raise ValueError("ground-truth AR processes must be stationary")


def rollout_latent(model: DriverModel, leader: Leader, eta: np.ndarray,
                   driver_id: str = "0") -> Trajectory:
    """Latent trajectory of a follower driven by unit white-noise draws ``eta``.

    Starts at the leader's initial speed and the matching equilibrium gap
    with zero error history.
    """
    n = len(leader)
    dt = leader.dt
    p = model.idm
    rho = model.ar.rho
    order = len(rho)
    v = np.empty(n)
    x = np.empty(n)
    a = np.empty(n)
    v[0] = leader.v[0]
    x[0] = leader.x[0] - leader.length - float(equilibrium_gap(v[0], p))
    eps = np.zeros(n + order)  # eps[order + t] is eps_t; leading zeros are the history
    for t in range(n):
        s = leader.x[t] - x[t] - leader.length
        mean = idm_term(s, v[t], v[t] - leader.v[t], p.v0, p.s0, p.T_hw, p.alpha, p.beta)
        e = model.ar.sigma_eta * eta[t]
        for k in range(1, order + 1):
            e += rho[k - 1] * eps[order + t - k]
        eps[order + t] = e
        a[t] = mean + e
        if t + 1 < n:
            x[t + 1] = x[t] + v[t] * dt + 0.5 * a[t] * dt * dt
            v[t + 1] = v[t] + a[t] * dt
    return Trajectory(driver_id=driver_id, dt=dt, t0=leader.t0, x_f=x, v_f=v,
                      x_l=leader.x, v_l=leader.v, a_f=a, lead_length=leader.length)


def generate(gt: GroundTruth, duration: float, dt: float):
    """Return (latent, observed) lists of trajectories, one per driver.

    Observed follower positions and speeds carry i.i.d. Gaussian noise
    (sigma_x, sigma_v); accelerations and the leader channel are noise-free.
    """
    n = _n_samples(duration, dt)
    streams = np.random.SeedSequence(gt.seed).spawn(len(gt.drivers))
    latent, observed = [], []
    for d, (model, (kind, params)) in enumerate(zip(gt.drivers, gt.leaders)):
        rng = np.random.default_rng(streams[d])
        leader = leader_profile(kind, params, duration, dt)
        eta = rng.standard_normal(n)
        lat = rollout_latent(model, leader, eta, driver_id=str(d))
        nx = gt.sigma_x * rng.standard_normal(n)
        nv = gt.sigma_v * rng.standard_normal(n)
        obs = Trajectory(driver_id=lat.driver_id, dt=dt, t0=lat.t0, x_f=lat.x_f + nx,
                         v_f=lat.v_f + nv, x_l=lat.x_l, v_l=lat.v_l, a_f=lat.a_f,
                         lead_length=lat.lead_length)
        latent.append(lat)
        observed.append(obs)
    return latent, observed


def recovery_fixture(seed: int = 0, n_drivers: int = 20, order: int = 5,
                     theta_spread: float = 0.05, rho_spread: float = 0.02,
                     sigma_v: float = 1e-4, sigma_x: float = 1e-5,
                     truth_order: int | None = None, leader_low: float = 2.0,
                     leader_high: float = 25.0, period: float = 40.0) -> GroundTruth:
    """Population truth at the reported posterior means, drivers drawn around it.

    Driver log-parameters get independent N(0, theta_spread^2) offsets; AR
    coefficients get N(0, rho_spread^2) offsets, redrawn until stationary.
    Each driver follows a sawtooth leader (2-25 m/s by default) with a random
    phase. The low end matters: jam spacing only separates from time headway
    in the desired gap when the follower spends time near standstill.
    """
    truth_order = order if truth_order is None else truth_order
    theta, sigma_eta, rho = REPORTED_POSTERIOR_MEANS[truth_order]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    log_theta = np.log(theta)
    rho = np.asarray(rho, dtype=float)
    drivers, leaders = [], []
    for _ in range(n_drivers):
        th = np.exp(log_theta + theta_spread * rng.standard_normal(5))
        while True:
            r = rho + rho_spread * rng.standard_normal(len(rho))
            if is_stationary(ArCoefficients(r, sigma_eta)):
                break
        drivers.append(DriverModel(IdmParams.from_array(th), ArCoefficients(r, sigma_eta)))
        leaders.append(("sawtooth", dict(low=leader_low, high=leader_high, period=period,
                                         phase=float(rng.uniform(0, period)))))
    pop = dict(theta=np.array(theta), sigma_eta=sigma_eta, rho=rho)
    return GroundTruth(drivers=drivers, leaders=leaders, sigma_v=sigma_v, sigma_x=sigma_x,
                       seed=seed, population=pop)
