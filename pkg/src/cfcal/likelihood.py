"""Conditional log-likelihoods of the dynamic IDM.

All four flavours condition on observed lagged data (one-step-ahead
densities). The array-level core works on padded ``[D, T]`` batches and is
written with ``jax.numpy`` so the sampler can differentiate it; the
per-trajectory wrappers call the same core with D = 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import jax
import jax.numpy as jnp
import numpy as np

from .ar import ArCoefficients
from .idm import IdmParams, idm_from_theta
from .trajectory import Trajectory

jax.config.update("jax_enable_x64", True)

MODES = ("accel", "speed", "position", "joint")
LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class ObservationNoise:
    sigma_v: float = 0.0
    sigma_x: float = 0.0

    def __post_init__(self):
        if self.sigma_v < 0 or self.sigma_x < 0:
            raise ValueError("observation noise std must be non-negative")


@dataclass(frozen=True)
class DriverModel:
    idm: IdmParams
    ar: ArCoefficients

    @property
    def order(self) -> int:
        return self.ar.order

    @classmethod
    def from_arrays(cls, theta, rho, sigma_eta) -> DriverModel:
        return cls(IdmParams.from_array(theta), ArCoefficients(np.asarray(rho), float(sigma_eta)))


@dataclass(frozen=True)
class StackedData:
    """Drivers padded to a common length; padding repeats the last sample."""

    x: np.ndarray
    v: np.ndarray
    s: np.ndarray
    dv: np.ndarray
    a: np.ndarray | None
    lengths: np.ndarray
    dt: np.ndarray  # [D, 1]

    @property
    def n_drivers(self) -> int:
        return self.x.shape[0]

    def term_mask(self, mode: str, order: int) -> np.ndarray:
        """1.0 where a term index t (starting at ``order``) is in range."""
        T = self.x.shape[1]
        last = self.lengths - (1 if mode == "accel" else 2)
        n_terms = T - order - (0 if mode == "accel" else 1)
        t = order + np.arange(n_terms)
        return (t[None, :] <= last[:, None]).astype(float)


def stack(trajs: Sequence[Trajectory], need_accel: bool = False) -> StackedData:
    T = max(len(tr) for tr in trajs)

    def pad(arr):
        return np.concatenate([arr, np.full(T - len(arr), arr[-1])])

    has_a = all(tr.has_accel for tr in trajs)
    if need_accel and not has_a:
        raise ValueError("acceleration likelihood needs acceleration data for every driver")
    return StackedData(
        x=np.stack([pad(tr.x_f) for tr in trajs]),
        v=np.stack([pad(tr.v_f) for tr in trajs]),
        s=np.stack([pad(tr.gap) for tr in trajs]),
        dv=np.stack([pad(tr.dv) for tr in trajs]),
        a=np.stack([pad(tr.a_f) for tr in trajs]) if has_a else None,
        lengths=np.array([len(tr) for tr in trajs]),
        dt=np.array([[tr.dt] for tr in trajs]),
    )


def _normal_logpdf(r, var):
    return -0.5 * (LOG_2PI + jnp.log(var) + r * r / var)


def _ar_filter(e, rho, start):
    """e[:, t] - sum_k rho[:, k-1] e[:, t-k] for t = start .. end."""
    n = e.shape[1]
    out = e[:, start:]
    for k in range(1, rho.shape[1] + 1):
        out = out - rho[:, k - 1:k] * e[:, start - k:n - k]
    return out


def term_logliks(mode, data: StackedData, theta, rho, sigma_eta, sigma_v=0.0, sigma_x=0.0):
    """Per-term log densities ``[D, n_terms]`` (unmasked).

    ``theta`` is ``[D, 5]`` in natural units, ``rho`` is ``[D, p]``.
    """
    p = rho.shape[1]
    dt = data.dt
    idm = idm_from_theta(data.s, data.v, data.dv, theta[:, None, :])
    if mode == "accel":
        r = _ar_filter(data.a - idm, rho, p)
        return _normal_logpdf(r, sigma_eta ** 2)

    dx = data.x[:, 1:] - data.x[:, :-1]
    # w_t = v_{t+1} - v_t - IDM_t dt, i.e. eps_t dt on noiseless data
    w = (data.v[:, 1:] - data.v[:, :-1]) - idm[:, :-1] * dt
    r_v = _ar_filter(w, rho, p)
    if mode == "speed":
        return _normal_logpdf(r_v, (sigma_eta * dt) ** 2 + sigma_v ** 2)

    base_x = dx - data.v[:, :-1] * dt - 0.5 * idm[:, :-1] * dt * dt
    r_x = base_x[:, p:] - 0.5 * dt * (w[:, p:] - r_v)
    if mode == "position":
        return _normal_logpdf(r_x, (0.5 * sigma_eta * dt * dt) ** 2 + sigma_x ** 2)
    if mode != "joint":
        raise ValueError(f"unknown likelihood mode {mode!r}")

    se2 = sigma_eta ** 2
    c11 = 0.25 * se2 * dt ** 4 + sigma_x ** 2
    c22 = se2 * dt ** 2 + sigma_v ** 2
    c12 = 0.5 * se2 * dt ** 3
    # cancellation-free form of c11 c22 - c12^2
    det = sigma_x ** 2 * se2 * dt ** 2 + 0.25 * se2 * dt ** 4 * sigma_v ** 2 + sigma_x ** 2 * sigma_v ** 2
    quad = (c22 * r_x ** 2 - 2.0 * c12 * r_x * r_v + c11 * r_v ** 2) / det
    return -LOG_2PI - 0.5 * jnp.log(det) - 0.5 * quad


def batch_loglik(mode, data: StackedData, mask, theta, rho, sigma_eta, sigma_v=0.0, sigma_x=0.0):
    """Summed log-likelihood over all drivers (sequential per driver, then over drivers)."""
    terms = term_logliks(mode, data, theta, rho, sigma_eta, sigma_v, sigma_x)
    return jnp.sum(jnp.sum(terms * mask, axis=1))


def _single(mode, traj: Trajectory, m: DriverModel, noise: ObservationNoise | None):
    p = m.order
    T = len(traj)
    if mode == "accel":
        if not traj.has_accel:
            raise ValueError(f"driver {traj.driver_id}: no acceleration data")
        if T <= p:
            raise ValueError(f"need T > p, got T={T}, p={p}")
    elif T <= p + 1:
        raise ValueError(f"need T > p + 1, got T={T}, p={p}")
    noise = noise or ObservationNoise()
    if mode == "joint" and noise.sigma_v == 0 and noise.sigma_x == 0:
        raise ValueError("joint likelihood is degenerate with sigma_x = sigma_v = 0; "
                         "position and speed process errors share one innovation")
    data = stack([traj], need_accel=(mode == "accel"))
    mask = data.term_mask(mode, p)
    val = batch_loglik(mode, data, mask, jnp.asarray(m.idm.as_array()[None, :]),
                       jnp.asarray(m.ar.rho[None, :]).reshape(1, p), m.ar.sigma_eta,
                       noise.sigma_v, noise.sigma_x)
    return float(val)


def accel_loglik(traj: Trajectory, m: DriverModel) -> float:
    return _single("accel", traj, m, None)


def speed_loglik(traj: Trajectory, m: DriverModel, noise: ObservationNoise) -> float:
    return _single("speed", traj, m, noise)


def position_loglik(traj: Trajectory, m: DriverModel, noise: ObservationNoise) -> float:
    return _single("position", traj, m, noise)


def joint_loglik(traj: Trajectory, m: DriverModel, noise: ObservationNoise) -> float:
    return _single("joint", traj, m, noise)


def loglik(mode: str, traj: Trajectory, m: DriverModel, noise: ObservationNoise | None = None):
    if mode not in MODES:
        raise ValueError(f"unknown likelihood mode {mode!r}")
    return _single(mode, traj, m, noise)


def one_step_means(traj: Trajectory, m: DriverModel):
    """Conditional means (x_bar, v_bar) of observations t+1 for t = p .. T-2."""
    p = m.order
    data = stack([traj])
    theta = m.idm.as_array()
    idm = np.asarray(idm_from_theta(data.s, data.v, data.dv, theta))[0]
    v, x, dt = traj.v_f, traj.x_f, traj.dt
    t = np.arange(p, len(traj) - 1)
    corr_v = np.zeros(len(t))
    corr_i = np.zeros(len(t))
    for k in range(1, p + 1):
        corr_v += m.ar.rho[k - 1] * (v[t - k + 1] - v[t - k])
        corr_i += m.ar.rho[k - 1] * idm[t - k]
    v_bar = v[t] + idm[t] * dt + corr_v - corr_i * dt
    x_bar = x[t] + v[t] * dt + 0.5 * idm[t] * dt ** 2 + 0.5 * corr_v * dt - 0.5 * corr_i * dt ** 2
    return x_bar, v_bar
