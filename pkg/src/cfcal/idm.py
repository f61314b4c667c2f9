"""Intelligent Driver Model: acceleration law and ballistic kinematics.

The arithmetic helpers only use operators, so they accept Python floats,
numpy arrays and traced JAX arrays alike.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PARAM_NAMES = ("v0", "s0", "T", "alpha", "beta")

# Treiber et al. recommended values, [v0, s0, T, alpha, beta]
THETA_REC = (33.3, 2.0, 1.6, 1.5, 1.67)


@dataclass(frozen=True)
class IdmParams:
    """Physical IDM parameters of one driver (natural units)."""

    v0: float
    s0: float
    T_hw: float
    alpha: float
    beta: float
    s1: float = 0.0

    def __post_init__(self):
        for name in ("v0", "s0", "T_hw", "alpha", "beta"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"IDM parameter {name} must be positive, got {val}")
        if self.s1 != 0.0:
            raise ValueError("s1 is fixed at 0")

    @classmethod
    def from_array(cls, theta) -> IdmParams:
        v0, s0, T, alpha, beta = (float(t) for t in theta)
        return cls(v0, s0, T, alpha, beta)

    @classmethod
    def recommended(cls) -> IdmParams:
        return cls.from_array(THETA_REC)

    def as_array(self) -> np.ndarray:
        return np.array([self.v0, self.s0, self.T_hw, self.alpha, self.beta])


@dataclass(frozen=True)
class SamplingConfig:
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


def gap_term(v, dv, v0, s0, T, alpha, beta):
    """Desired minimum gap s*; not clamped, may go negative for large -dv."""
    return s0 + v * T + v * dv / (2.0 * (alpha * beta) ** 0.5)


def idm_term(s, v, dv, v0, s0, T, alpha, beta):
    """Vectorised IDM acceleration, all arguments broadcast."""
    s_star = gap_term(v, dv, v0, s0, T, alpha, beta)
    return alpha * (1.0 - (v / v0) ** 4 - (s_star / s) ** 2)


def idm_from_theta(s, v, dv, theta):
    """IDM acceleration with ``theta[..., :]`` ordered as PARAM_NAMES."""
    return idm_term(s, v, dv, theta[..., 0], theta[..., 1], theta[..., 2],
                    theta[..., 3], theta[..., 4])


def desired_gap(v: float, dv: float, p: IdmParams) -> float:
    return gap_term(v, dv, p.v0, p.s0, p.T_hw, p.alpha, p.beta)


def idm_accel(state, p: IdmParams) -> float:
    """IDM acceleration for a single car-following state (s, v, dv)."""
    if not state.s > 0:
        raise ValueError(f"gap must be positive, got s={state.s}")
    return idm_term(state.s, state.v, state.dv, p.v0, p.s0, p.T_hw, p.alpha, p.beta)


def ballistic_step(x, v, a, cfg: SamplingConfig):
    """One constant-acceleration step; returns (x_next, v_next)."""
    dt = cfg.dt
    return x + v * dt + 0.5 * a * dt * dt, v + a * dt


def equilibrium_gap(v, p: IdmParams):
    """Gap at which a follower at speed v (dv = 0) has zero acceleration.

    Only defined for 0 <= v < v0.
    """
    v = np.asarray(v, dtype=float)
    if np.any(v < 0) or np.any(v >= p.v0):
        raise ValueError("equilibrium gap requires 0 <= v < v0")
    return desired_gap(v, 0.0, p) / np.sqrt(1.0 - (v / p.v0) ** 4)


def equilibrium_speed(s: float, p: IdmParams) -> float:
    """Speed at which gap s is an equilibrium (inverse of equilibrium_gap)."""
    from scipy.optimize import brentq

    if s <= p.s0:
        return 0.0
    return brentq(lambda v: float(idm_term(s, v, 0.0, p.v0, p.s0, p.T_hw, p.alpha, p.beta)),
                  0.0, p.v0, xtol=1e-14, rtol=4 * np.finfo(float).eps)
