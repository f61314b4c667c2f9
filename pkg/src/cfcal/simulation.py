"""Stochastic rollouts: single follower, platoon, and ring road.

Every simulator shares one kernel per step: IDM mean from the simulated
state, AR correction from the rollout's own past errors, a fresh white-noise
draw, then the ballistic update. Speeds are floored at zero by truncating
the realized acceleration to ``-v/dt``; the error history records the
realized ``a - IDM`` so the AR recursion stays consistent with what happened.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .idm import IdmParams, equilibrium_gap, equilibrium_speed, idm_term
from .likelihood import DriverModel
from .trajectory import Leader

MIN_GAP_INPUT = 0.01
STATES = ("x", "v", "a", "s")


@dataclass(frozen=True)
class FollowerInit:
    """Follower position and speed at the first step, plus error history (newest first)."""

    x: float
    v: float
    eps_history: tuple = ()


@dataclass
class SimEnsemble:
    """Rollouts ``[n_rollouts, n_steps]`` of follower position, speed, acceleration, gap."""

    dt: float
    t0: float
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    s: np.ndarray
    collisions: list = field(default_factory=list)  # (rollout, time) pairs, first contact only
    speed_floor_events: int = 0

    @property
    def n_rollouts(self) -> int:
        return self.x.shape[0]

    @property
    def n_steps(self) -> int:
        return self.x.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps)

    def state(self, name: str) -> np.ndarray:
        if name not in STATES:
            raise ValueError(f"unknown state {name!r}; choose from {STATES}")
        return getattr(self, name)

    def mean(self, name: str) -> np.ndarray:
        return self.state(name).mean(axis=0)

    def quantiles(self, name: str, levels: Sequence[float]) -> np.ndarray:
        return np.quantile(self.state(name), list(levels), axis=0)


def _stack_models(models: Sequence[DriverModel]):
    p = max(m.order for m in models)
    theta = np.array([m.idm.as_array() for m in models])
    rho = np.zeros((len(models), p))
    for i, m in enumerate(models):
        rho[i, :m.order] = m.ar.rho
    sigma = np.array([m.ar.sigma_eta for m in models])
    return theta, rho, sigma


def _per_rollout(m, n_rollouts: int) -> list[DriverModel]:
    if isinstance(m, DriverModel):
        return [m] * n_rollouts
    m = list(m)
    if len(m) != n_rollouts:
        raise ValueError(f"need one model per rollout ({n_rollouts}), got {len(m)}")
    return m


def _history(init: FollowerInit, p: int, n: int) -> np.ndarray:
    h = np.zeros((n, p))
    given = np.atleast_2d(np.asarray(init.eps_history, dtype=float))
    if given.size:
        k = min(p, given.shape[1])
        h[:, :k] = given[:, :k]
    return h


def _rollout(lead_x, lead_v, lead_len, dt, theta, rho, sigma, eta, x0, v0, hist):
    """Vectorized follower kernel. ``lead_x`` is [n] or [R, n]; returns dict of [R, n]."""
    R, n = eta.shape
    lead_x = np.broadcast_to(lead_x, (R, n))
    lead_v = np.broadcast_to(lead_v, (R, n))
    p = rho.shape[1]
    x = np.empty((R, n))
    v = np.empty((R, n))
    a = np.empty((R, n))
    s_out = np.empty((R, n))
    x[:, 0] = x0
    v[:, 0] = v0
    hist = hist.copy()
    collided = np.zeros(R, dtype=bool)
    collisions = []
    floors = 0
    v0p, s0p, Tp, ap, bp = theta.T
    for t in range(n):
        s = lead_x[:, t] - x[:, t] - lead_len
        s_out[:, t] = s
        hit = (s <= 0) & ~collided
        if hit.any():
            collisions.extend((int(r), t) for r in np.flatnonzero(hit))
            collided |= hit
        mean = idm_term(np.maximum(s, MIN_GAP_INPUT), v[:, t], v[:, t] - lead_v[:, t],
                        v0p, s0p, Tp, ap, bp)
        eps = sigma * eta[:, t]
        for k in range(p):
            eps = eps + rho[:, k] * hist[:, k]
        acc = mean + eps
        stop = v[:, t] + acc * dt < 0
        if stop.any():
            floors += int(stop.sum())
            acc = np.where(stop, -v[:, t] / dt, acc)
        a[:, t] = acc
        if p:
            hist[:, 1:] = hist[:, :-1]
            hist[:, 0] = acc - mean
        if t + 1 < n:
            x[:, t + 1] = x[:, t] + v[:, t] * dt + 0.5 * acc * dt * dt
            v[:, t + 1] = np.where(stop, 0.0, v[:, t] + acc * dt)
    return dict(x=x, v=v, a=a, s=s_out), collisions, floors


def _noise(seed, n_rollouts: int, shape) -> np.ndarray:
    """Per-rollout substreams: rollout r uses child r of SeedSequence(seed)."""
    streams = np.random.SeedSequence(seed).spawn(n_rollouts)
    return np.stack([np.random.default_rng(s).standard_normal(shape) for s in streams])


def simulate_follower(leader: Leader, init: FollowerInit, m, n_rollouts: int,
                      seed: int, noise_scale: float = 1.0) -> SimEnsemble:
    """Ensemble of follower rollouts behind a fixed leader.

    ``m`` is one DriverModel (shared) or one per rollout (posterior draws).
    ``noise_scale`` multiplies every sigma_eta; 0 gives deterministic IDM rollouts.
    """
    models = _per_rollout(m, n_rollouts)
    theta, rho, sigma = _stack_models(models)
    sigma = noise_scale * sigma
    eta = _noise(seed, n_rollouts, len(leader))
    hist = _history(init, rho.shape[1], n_rollouts)
    out, coll, floors = _rollout(leader.x, leader.v, leader.length, leader.dt, theta, rho,
                                 sigma, eta, init.x, init.v, hist)
    return SimEnsemble(leader.dt, leader.t0, collisions=[(r, leader.t0 + t * leader.dt)
                                                         for r, t in coll],
                       speed_floor_events=floors, **out)


def simulate_platoon(leader: Leader, followers: Sequence, inits: Sequence[FollowerInit],
                     n_rollouts: int, seed: int, vehicle_length: float = 5.0,
                     noise_scale: float = 1.0) -> list[SimEnsemble]:
    """Chain of followers; vehicle k follows vehicle k-1's realized rollout.

    ``followers[k]`` is a DriverModel or a per-rollout list. Within rollout r
    the white noise for vehicle k is row k of substream r, so a one-vehicle
    platoon reproduces ``simulate_follower`` exactly.
    """
    if len(followers) != len(inits) or not followers:
        raise ValueError("one init per follower required")
    n = len(leader)
    eta = _noise(seed, n_rollouts, (len(followers), n))
    lead_x, lead_v, lead_len = leader.x, leader.v, leader.length
    out = []
    for k, (m, init) in enumerate(zip(followers, inits)):
        theta, rho, sigma = _stack_models(_per_rollout(m, n_rollouts))
        sigma = noise_scale * sigma
        hist = _history(init, rho.shape[1], n_rollouts)
        res, coll, floors = _rollout(lead_x, lead_v, lead_len, leader.dt, theta, rho, sigma,
                                     eta[:, k, :], init.x, init.v, hist)
        out.append(SimEnsemble(leader.dt, leader.t0, collisions=[
            (r, leader.t0 + t * leader.dt) for r, t in coll], speed_floor_events=floors, **res))
        lead_x, lead_v, lead_len = res["x"], res["v"], vehicle_length
    return out


def equilibrium_platoon_inits(leader: Leader, models: Sequence[DriverModel],
                              vehicle_length: float = 5.0) -> list[FollowerInit]:
    """Stationary starting line-up at the leader's initial speed."""
    v = float(leader.v[0])
    x_ahead, len_ahead = float(leader.x[0]), leader.length
    inits = []
    for m in models:
        x = x_ahead - len_ahead - float(equilibrium_gap(v, m.idm))
        inits.append(FollowerInit(x, v))
        x_ahead, len_ahead = x, vehicle_length
    return inits


def speed_variance_ratios(leader: Leader, platoon: Sequence[SimEnsemble]) -> np.ndarray:
    """Temporal speed variance of each follower over the leader's, rollout-averaged.

    Values above 1 mean perturbations amplify downstream.
    """
    base = float(np.var(leader.v))
    if base == 0:
        raise ValueError("leader speed is constant; variance ratio undefined")
    return np.array([float(np.mean(np.var(e.v, axis=1))) / base for e in platoon])


def ensemble_envelope(e: SimEnsemble, levels: Sequence[float] = (0.025, 0.5, 0.975)) -> dict:
    """Pointwise quantile bands, ``{state: [len(levels), n_steps]}``."""
    if e.n_rollouts == 0:
        raise ValueError("empty ensemble")
    return {name: e.quantiles(name, levels) for name in STATES}


def write_envelope_csv(path, e: SimEnsemble, levels=(0.025, 0.5, 0.975)) -> None:
    env = ensemble_envelope(e, levels)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "state", "mean", *[f"q{100 * q:g}" for q in levels]])
        for name in STATES:
            mean = e.mean(name)
            for i, t in enumerate(e.times):
                w.writerow([repr(float(t)), name, repr(float(mean[i])),
                            *(repr(float(env[name][j, i])) for j in range(len(levels)))])


def write_rollouts_csv(path, e: SimEnsemble, max_rollouts: int | None = None) -> None:
    n = e.n_rollouts if max_rollouts is None else min(max_rollouts, e.n_rollouts)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rollout", "t", "x", "v", "a", "s"])
        for r in range(n):
            for i, t in enumerate(e.times):
                w.writerow([r, repr(float(t)), repr(float(e.x[r, i])), repr(float(e.v[r, i])),
                            repr(float(e.a[r, i])), repr(float(e.s[r, i]))])


# ---------------------------------------------------------------- ring road

@dataclass(frozen=True)
class RingConfig:
    radius: float = 128.0
    n_vehicles: int = 32
    v_init: float = 11.6
    steps: int = 15000
    dt: float = 0.2
    vehicle_length: float = 5.0
    min_gap: float = 2.0

    def __post_init__(self):
        if self.radius <= 0 or self.n_vehicles < 2 or self.steps < 1 or self.dt <= 0:
            raise ValueError("radius, dt > 0; n_vehicles >= 2; steps >= 1 required")
        if self.circumference <= self.n_vehicles * (self.min_gap + self.vehicle_length):
            raise ValueError(f"{self.n_vehicles} vehicles do not fit on a "
                             f"{self.circumference:.1f} m ring")

    @property
    def circumference(self) -> float:
        return 2 * math.pi * self.radius

    @property
    def spacing(self) -> float:
        return self.circumference / self.n_vehicles


@dataclass
class RingRollout:
    """Unwrapped positions ``x[step, vehicle]`` (vehicle i follows i+1, the last follows 0)."""

    cfg: RingConfig
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    collisions: list = field(default_factory=list)
    speed_floor_events: int = 0

    @property
    def times(self) -> np.ndarray:
        return self.cfg.dt * np.arange(self.x.shape[0])

    def gaps(self) -> np.ndarray:
        return _ring_gaps(self.x, self.cfg.circumference, self.cfg.vehicle_length)

    def wrapped(self) -> np.ndarray:
        return np.mod(self.x, self.cfg.circumference)

    def spatial_speed_std(self) -> np.ndarray:
        return self.v.std(axis=1)


def _ring_gaps(x, circumference, length):
    ahead = np.roll(x, -1, axis=-1)
    ahead[..., -1] = ahead[..., -1] + circumference
    return ahead - x - length


def ring_initial_positions(cfg: RingConfig) -> np.ndarray:
    return cfg.spacing * np.arange(cfg.n_vehicles)


def simulate_ring(cfg: RingConfig, models, seed: int, v_init=None, x_init=None,
                  noise_scale: float = 1.0) -> RingRollout:
    """Synchronous ring-road simulation.

    ``models`` is one DriverModel for all vehicles or one per vehicle.
    ``v_init`` overrides the uniform initial speed (scalar or per vehicle).
    """
    N = cfg.n_vehicles
    models = [models] * N if isinstance(models, DriverModel) else list(models)
    if len(models) != N:
        raise ValueError(f"need {N} driver models, got {len(models)}")
    x0 = ring_initial_positions(cfg) if x_init is None else np.asarray(x_init, dtype=float)
    if np.any(_ring_gaps(x0, cfg.circumference, cfg.vehicle_length) <= 0):
        raise ValueError("vehicles overlap at initialization")
    theta, rho, sigma = _stack_models(models)
    sigma = noise_scale * sigma
    p = rho.shape[1]
    v0p, s0p, Tp, ap, bp = theta.T
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = cfg.steps + 1
    dt, C, L = cfg.dt, cfg.circumference, cfg.vehicle_length
    x = np.empty((n, N))
    v = np.empty((n, N))
    a = np.empty((n, N))
    x[0] = x0
    v[0] = cfg.v_init if v_init is None else v_init
    hist = np.zeros((N, p))
    collided = np.zeros(N, dtype=bool)
    collisions, floors = [], 0
    for t in range(n):
        s = _ring_gaps(x[t], C, L)
        hit = (s <= 0) & ~collided
        if hit.any():
            collisions.extend((int(i), t * dt) for i in np.flatnonzero(hit))
            collided |= hit
        vl = np.roll(v[t], -1)
        mean = idm_term(np.maximum(s, MIN_GAP_INPUT), v[t], v[t] - vl, v0p, s0p, Tp, ap, bp)
        eps = sigma * rng.standard_normal(N)
        for k in range(p):
            eps = eps + rho[:, k] * hist[:, k]
        acc = mean + eps
        stop = v[t] + acc * dt < 0
        if stop.any():
            floors += int(stop.sum())
            acc = np.where(stop, -v[t] / dt, acc)
        a[t] = acc
        if p:
            hist[:, 1:] = hist[:, :-1]
            hist[:, 0] = acc - mean
        if t + 1 < n:
            x[t + 1] = x[t] + v[t] * dt + 0.5 * acc * dt * dt
            v[t + 1] = np.where(stop, 0.0, v[t] + acc * dt)
    return RingRollout(cfg, x, v, a, collisions, floors)


def ring_equilibrium_speed(cfg: RingConfig, p: IdmParams) -> float:
    return equilibrium_speed(cfg.spacing - cfg.vehicle_length, p)


def write_time_space_csv(path, ring: RingRollout, every: int = 1, frame_speed: float = 0.0) -> None:
    """Long-format (t, vehicle, x, v) rows; ``x`` is wrapped position minus
    ``frame_speed * t`` (mod circumference) for a moving observer frame."""
    C = ring.cfg.circumference
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "vehicle", "x", "v"])
        for i in range(0, ring.x.shape[0], every):
            t = i * ring.cfg.dt
            xs = np.mod(ring.x[i] - frame_speed * t, C)
            for j in range(ring.x.shape[1]):
                w.writerow([repr(float(t)), j, repr(float(xs[j])), repr(float(ring.v[i, j]))])
