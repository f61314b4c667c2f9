"""AR(p) process errors: recursion, sampling, stationarity, autocovariance."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz
from scipy.signal import lfilter, lfiltic

MAX_ORDER = 32


@dataclass(frozen=True)
class ArCoefficients:
    """Lag coefficients ``rho[k-1]`` for lag k and white-noise scale sigma_eta."""

    rho: np.ndarray
    sigma_eta: float

    def __post_init__(self):
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float)).copy()
        if rho.ndim != 1:
            raise ValueError("rho must be a vector")
        if not np.all(np.isfinite(rho)):
            raise ValueError("rho must be finite")
        if not self.sigma_eta > 0:
            raise ValueError(f"sigma_eta must be positive, got {self.sigma_eta}")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @property
    def order(self) -> int:
        return len(self.rho)


@dataclass(frozen=True)
class CovarianceFunction:
    """Autocovariances ``gamma[i]`` at lags ``lag[i]`` (steps or seconds)."""

    gamma: np.ndarray
    lag: np.ndarray = field(default=None)

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        object.__setattr__(self, "gamma", g)
        lag = np.arange(len(g), dtype=float) if self.lag is None else np.asarray(self.lag, float)
        object.__setattr__(self, "lag", lag)

    def __len__(self):
        return len(self.gamma)

    def correlation(self) -> np.ndarray:
        return self.gamma / self.gamma[0]

    def matrix(self, n: int | None = None) -> np.ndarray:
        """Stationary covariance matrix over n consecutive steps."""
        n = len(self.gamma) if n is None else n
        if n > len(self.gamma):
            raise ValueError("not enough lags for requested matrix size")
        return toeplitz(self.gamma[:n])


def companion(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    p = len(rho)
    C = np.zeros((p, p))
    C[0, :] = rho
    C[1:, :-1] = np.eye(p - 1)
    return C


def is_stationary(c: ArCoefficients, tol: float = 1e-9) -> bool:
    if c.order == 0:
        return True
    moduli = np.abs(np.linalg.eigvals(companion(c.rho)))
    return bool(np.max(moduli) < 1.0 - tol)


def step_error(c: ArCoefficients, history, eta: float) -> float:
    """Next AR error; ``history`` is [eps_{t-1}, ..., eps_{t-p}], newest first."""
    history = np.asarray(history, dtype=float)
    if history.shape != (c.order,):
        raise ValueError(f"history must have length {c.order}, got {history.shape}")
    return float(np.dot(c.rho, history) + eta)


def yule_walker_gamma(rho, sigma2: float) -> np.ndarray:
    """Solve for gamma(0..p) given AR coefficients and innovation variance."""
    rho = np.asarray(rho, dtype=float)
    p = len(rho)
    A = np.eye(p + 1)
    for k in range(p + 1):
        for j in range(1, p + 1):
            A[k, abs(k - j)] -= rho[j - 1]
    b = np.zeros(p + 1)
    b[0] = sigma2
    return np.linalg.solve(A, b)


def autocovariance(c: ArCoefficients, max_lag: int, dt: float = 1.0) -> CovarianceFunction:
    if c.order > MAX_ORDER:
        raise ValueError(f"AR order {c.order} exceeds {MAX_ORDER}")
    if not is_stationary(c):
        raise ValueError("autocovariance requires a stationary AR process")
    p = c.order
    g0 = yule_walker_gamma(c.rho, c.sigma_eta ** 2)
    gamma = np.empty(max_lag + 1)
    n0 = min(p, max_lag) + 1
    gamma[:n0] = g0[:n0]
    for k in range(n0, max_lag + 1):
        gamma[k] = np.dot(c.rho, gamma[k - 1::-1][:p])
    return CovarianceFunction(gamma, dt * np.arange(max_lag + 1))


def sample_path(c: ArCoefficients, n: int, rng_seed: int, init=None) -> np.ndarray:
    """n AR errors driven by i.i.d. N(0, sigma_eta^2) draws.

    ``init`` holds the p errors preceding the path, newest first (zeros if
    omitted). Stationarity is not required.
    """
    rng = np.random.default_rng(rng_seed)
    eta = c.sigma_eta * rng.standard_normal(n)
    if c.order == 0:
        return eta
    a = np.concatenate([[1.0], -c.rho])
    init = np.zeros(c.order) if init is None else np.asarray(init, dtype=float)
    if init.shape != (c.order,):
        raise ValueError(f"init must have length {c.order}")
    zi = lfiltic([1.0], a, init)
    out, _ = lfilter([1.0], a, eta, zi=zi)
    return out


def se_kernel(sigma_k: float, ell: float, lags) -> CovarianceFunction:
    """Squared-exponential covariance, for comparison against AR structure."""
    if sigma_k <= 0 or ell <= 0:
        raise ValueError("sigma_k and ell must be positive")
    tau = np.asarray(lags, dtype=float)
    return CovarianceFunction(sigma_k ** 2 * np.exp(-tau ** 2 / (2 * ell ** 2)), tau)
