"""Hierarchical prior, unconstrained parameterisation and posterior target.

Unconstrained layout (flat vector ``u``)::

    log_theta_pop[5] | log_sigma0[5] | cpc[10] | rho_pop[p]
    | z_theta[D, 5] | rho_d[D, p] | log_sigma_eta | log_sigma_v | log_sigma_x

Driver IDM parameters are non-centred,
``log_theta_d = log_theta_pop + diag(sigma0) L z_theta_d``, because their
scale sigma0 is learned. Driver AR coefficients are stored directly: their
spread sigma_rho is a fixed hyperparameter, so there is no funnel, and the
centred form avoids a long ridge between rho_pop and the offsets when the
data pin each rho_d down. The correlation factor L is built from
tanh-transformed canonical partial correlations.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property
from pathlib import Path
from typing import Sequence

import jax
import jax.numpy as jnp
import numpy as np
from scipy.optimize import minimize
from scipy.special import betaln

from .idm import PARAM_NAMES, THETA_REC
from .likelihood import MODES, DriverModel, StackedData, batch_loglik, stack
from .trajectory import Trajectory

jax.config.update("jax_enable_x64", True)

K = len(PARAM_NAMES)
N_CPC = K * (K - 1) // 2
NOISE_NAMES = ("sigma_eta", "sigma_v", "sigma_x")


@dataclass(frozen=True)
class HyperParams:
    lambda0: float = 100.0
    eta_lkj: float = 2.0
    Sigma0: tuple = tuple(tuple(0.1 if i == j else 0.0 for j in range(K)) for i in range(K))
    lambda_eta: float = 2e6
    sigma_rho0: float = 1.0
    sigma_rho: float = 0.1
    lambda_v: float = 1e6
    lambda_x: float = 1e7
    theta_rec: tuple = THETA_REC

    def __post_init__(self):
        S = np.asarray(self.Sigma0, dtype=float)
        if S.shape != (K, K) or not np.allclose(S, S.T):
            raise ValueError("Sigma0 must be a symmetric 5x5 matrix")
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise ValueError("Sigma0 must be positive definite") from None
        object.__setattr__(self, "Sigma0", tuple(tuple(float(x) for x in r) for r in S))
        object.__setattr__(self, "theta_rec", tuple(float(t) for t in self.theta_rec))
        for name in ("lambda0", "lambda_eta", "sigma_rho0", "sigma_rho", "lambda_v", "lambda_x"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.eta_lkj < 1:
            raise ValueError("eta_lkj must be >= 1")
        if len(self.theta_rec) != K or min(self.theta_rec) <= 0:
            raise ValueError("theta_rec must be 5 positive values")

    @classmethod
    def from_dict(cls, d: dict) -> HyperParams:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameter(s): {', '.join(sorted(unknown))}")
        d = dict(d)
        if "Sigma0" in d:
            S = np.asarray(d["Sigma0"], dtype=float)
            d["Sigma0"] = np.diag(S) if S.ndim == 1 else S
        return cls(**d)

    @classmethod
    def load(cls, path) -> HyperParams:
        """Read a TOML or JSON file; a ``[prior]`` table is used if present."""
        d = read_config(path)
        return cls.from_dict(d.get("prior", d))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["Sigma0"] = [list(r) for r in self.Sigma0]
        d["theta_rec"] = list(self.theta_rec)
        return d


def read_config(path) -> dict:
    """Parse a TOML (by suffix) or JSON configuration file."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ImportError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    return json.loads(path.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Layout:
    n_drivers: int
    order: int

    @cached_property
    def slices(self) -> dict:
        D, p = self.n_drivers, self.order
        sizes = [("log_theta_pop", K), ("log_sigma0", K), ("cpc", N_CPC), ("rho_pop", p),
                 ("z_theta", D * K), ("rho_d", D * p), ("log_sigma_eta", 1),
                 ("log_sigma_v", 1), ("log_sigma_x", 1)]
        out, i = {}, 0
        for name, n in sizes:
            out[name] = slice(i, i + n)
            i += n
        return out

    @property
    def size(self) -> int:
        return self.slices["log_sigma_x"].stop

    def names(self) -> list[str]:
        """Labels of the constrained quantities emitted by ``flat_constrained``."""
        names = [f"{n}_pop" for n in PARAM_NAMES]
        names += [f"sigma0_{n}" for n in PARAM_NAMES]
        names += [f"corr_{PARAM_NAMES[i]}_{PARAM_NAMES[j]}" for i in range(K) for j in range(i)]
        names += [f"rho{k + 1}_pop" for k in range(self.order)]
        for d in range(self.n_drivers):
            names += [f"{n}[{d}]" for n in PARAM_NAMES]
        for d in range(self.n_drivers):
            names += [f"rho{k + 1}[{d}]" for k in range(self.order)]
        names += list(NOISE_NAMES)
        return names


@dataclass(frozen=True)
class HierarchyState:
    """Population and driver parameters; positives stored as logs."""

    log_theta_pop: np.ndarray
    log_sigma0: np.ndarray
    chol_corr: np.ndarray
    rho_pop: np.ndarray
    log_theta_d: np.ndarray
    rho_d: np.ndarray
    log_sigma_eta: float
    log_sigma_v: float
    log_sigma_x: float

    @property
    def layout(self) -> Layout:
        return Layout(self.log_theta_d.shape[0], len(self.rho_pop))

    @property
    def theta_pop(self) -> np.ndarray:
        return np.exp(self.log_theta_pop)

    @property
    def sigma0(self) -> np.ndarray:
        return np.exp(self.log_sigma0)

    @property
    def sigma_eta(self) -> float:
        return float(np.exp(self.log_sigma_eta))

    @property
    def sigma_v(self) -> float:
        return float(np.exp(self.log_sigma_v))

    @property
    def sigma_x(self) -> float:
        return float(np.exp(self.log_sigma_x))

    @property
    def Sigma(self) -> np.ndarray:
        A = self.sigma0[:, None] * self.chol_corr
        return A @ A.T

    def driver_model(self, d: int) -> DriverModel:
        return DriverModel.from_arrays(np.exp(self.log_theta_d[d]), self.rho_d[d], self.sigma_eta)

    def driver_models(self) -> list[DriverModel]:
        return [self.driver_model(d) for d in range(self.log_theta_d.shape[0])]


# -- correlation Cholesky factor ---------------------------------------------

def cpc_to_chol(y, dim: int = K):
    """Unconstrained CPC vector (row-major strict lower triangle) -> (L, log|J|)."""
    z = jnp.tanh(y)
    logjac = jnp.sum(jnp.log1p(-z * z))
    rows = [jnp.zeros(dim).at[0].set(1.0)]
    idx = 0
    for i in range(1, dim):
        row = []
        ss = 0.0
        for j in range(i):
            zij = z[idx]
            idx += 1
            if j == 0:
                lij = zij
            else:
                logjac = logjac + 0.5 * jnp.log1p(-ss)
                lij = zij * jnp.sqrt(1.0 - ss)
            row.append(lij)
            ss = ss + lij * lij
        row.append(jnp.sqrt(1.0 - ss))
        rows.append(jnp.concatenate([jnp.stack(row), jnp.zeros(dim - i - 1)]))
    return jnp.stack(rows), logjac


def chol_to_cpc(L) -> np.ndarray:
    L = np.asarray(L, dtype=float)
    out = []
    for i in range(1, L.shape[0]):
        ss = 0.0
        for j in range(i):
            z = L[i, j] if j == 0 else L[i, j] / np.sqrt(1.0 - ss)
            out.append(np.arctanh(z))
            ss += L[i, j] ** 2
    return np.array(out)


def lkj_log_normalizer(eta: float, dim: int = K) -> float:
    """log c_K(eta) such that LKJ density = det(Omega)^(eta-1) / c_K."""
    out = 0.0
    for k in range(1, dim):
        b = eta + (dim - k - 1) / 2.0
        out += (2 * eta - 2 + dim - k) * (dim - k) * np.log(2.0) + (dim - k) * betaln(b, b)
    return float(out)


def lkj_chol_logpdf(L, eta: float):
    """Density of the Cholesky factor induced by LKJ(eta) on the correlation."""
    dim = L.shape[0]
    expo = np.array([dim - i + 2 * eta - 3 for i in range(1, dim)])
    return jnp.sum(expo * jnp.log(jnp.diagonal(L)[1:])) - lkj_log_normalizer(eta, dim)


def sample_lkj_cpc(rng, eta: float, n: int, dim: int = K) -> np.ndarray:
    """Unconstrained CPC vectors whose Cholesky factors follow LKJ(eta)."""
    out = np.empty((n, dim * (dim - 1) // 2))
    idx = 0
    for i in range(1, dim):
        for j in range(i):
            b = eta + (dim - 2 - j) / 2.0
            out[:, idx] = np.arctanh(2 * rng.beta(b, b, size=n) - 1)
            idx += 1
    return out


# -- transforms ----------------------------------------------------------------

def unpack(u, layout: Layout):
    """Constrained quantities (JAX arrays) plus the correlation-factor log-Jacobian."""
    sl = layout.slices
    D, p = layout.n_drivers, layout.order
    log_theta_pop = u[sl["log_theta_pop"]]
    log_sigma0 = u[sl["log_sigma0"]]
    L, cpc_jac = cpc_to_chol(u[sl["cpc"]])
    rho_pop = u[sl["rho_pop"]]
    z_theta = u[sl["z_theta"]].reshape(D, K)
    rho_d = u[sl["rho_d"]].reshape(D, p)
    sigma0 = jnp.exp(log_sigma0)
    log_theta_d = log_theta_pop + (z_theta @ L.T) * sigma0
    return dict(log_theta_pop=log_theta_pop, log_sigma0=log_sigma0, L=L, rho_pop=rho_pop,
                log_theta_d=log_theta_d, rho_d=rho_d, z_theta=z_theta,
                log_sigma_eta=u[sl["log_sigma_eta"]][0], log_sigma_v=u[sl["log_sigma_v"]][0],
                log_sigma_x=u[sl["log_sigma_x"]][0], cpc_jac=cpc_jac)


def constrain(u, layout: Layout, hp: HyperParams | None = None) -> HierarchyState:
    hp = hp or HyperParams()
    u = np.asarray(u, dtype=float)
    if u.shape != (layout.size,):
        raise ValueError(f"expected vector of length {layout.size}, got {u.shape}")
    q = unpack(u, layout)
    return HierarchyState(
        log_theta_pop=np.asarray(q["log_theta_pop"]), log_sigma0=np.asarray(q["log_sigma0"]),
        chol_corr=np.asarray(q["L"]), rho_pop=np.asarray(q["rho_pop"]),
        log_theta_d=np.asarray(q["log_theta_d"]), rho_d=np.asarray(q["rho_d"]),
        log_sigma_eta=float(q["log_sigma_eta"]), log_sigma_v=float(q["log_sigma_v"]),
        log_sigma_x=float(q["log_sigma_x"]))


def unconstrain(state: HierarchyState, hp: HyperParams | None = None) -> np.ndarray:
    hp = hp or HyperParams()
    layout = state.layout
    A = state.sigma0[:, None] * state.chol_corr
    dev = state.log_theta_d - state.log_theta_pop
    z_theta = np.linalg.solve(A, dev.T).T
    u = np.empty(layout.size)
    sl = layout.slices
    u[sl["log_theta_pop"]] = state.log_theta_pop
    u[sl["log_sigma0"]] = state.log_sigma0
    u[sl["cpc"]] = chol_to_cpc(state.chol_corr)
    u[sl["rho_pop"]] = state.rho_pop
    u[sl["z_theta"]] = z_theta.ravel()
    u[sl["rho_d"]] = state.rho_d.ravel()
    u[sl["log_sigma_eta"]] = state.log_sigma_eta
    u[sl["log_sigma_v"]] = state.log_sigma_v
    u[sl["log_sigma_x"]] = state.log_sigma_x
    return u


# -- densities -----------------------------------------------------------------

def _log_exponential_of_log(log_s, lam):
    """Exp(lam) density of s = exp(log_s) including the log-Jacobian."""
    return jnp.log(lam) - lam * jnp.exp(log_s) + log_s


def _std_normal(z):
    return jnp.sum(-0.5 * z * z) - 0.5 * z.size * np.log(2 * np.pi)


def log_prior_u(u, layout: Layout, hp: HyperParams):
    """Log prior density with respect to Lebesgue measure on ``u``."""
    q = unpack(u, layout)
    S0 = np.asarray(hp.Sigma0)
    S0_chol = np.linalg.cholesky(S0)
    mu0 = np.log(np.asarray(hp.theta_rec))
    lp = jnp.sum(_log_exponential_of_log(q["log_sigma0"], hp.lambda0))
    lp = lp + lkj_chol_logpdf(q["L"], hp.eta_lkj) + q["cpc_jac"]
    w = jax.scipy.linalg.solve_triangular(S0_chol, q["log_theta_pop"] - mu0, lower=True)
    lp = lp - 0.5 * jnp.sum(w * w) - np.sum(np.log(np.diag(S0_chol))) - 0.5 * K * np.log(2 * np.pi)
    if layout.order:
        r = q["rho_pop"] / hp.sigma_rho0
        lp = lp + _std_normal(r) - layout.order * np.log(hp.sigma_rho0)
    # non-centred IDM effects: the Normal density times the affine Jacobian
    lp = lp + _std_normal(q["z_theta"])
    if layout.order:
        r = (q["rho_d"] - q["rho_pop"]) / hp.sigma_rho
        lp = lp + _std_normal(r) - r.size * np.log(hp.sigma_rho)
    lp = lp + _log_exponential_of_log(q["log_sigma_eta"], hp.lambda_eta)
    lp = lp + _log_exponential_of_log(q["log_sigma_v"], hp.lambda_v)
    lp = lp + _log_exponential_of_log(q["log_sigma_x"], hp.lambda_x)
    return lp


def log_lik_u(u, layout: Layout, hp: HyperParams, mode: str, data: StackedData, mask):
    q = unpack(u, layout)
    return batch_loglik(mode, data, mask, jnp.exp(q["log_theta_d"]), q["rho_d"],
                        jnp.exp(q["log_sigma_eta"]), jnp.exp(q["log_sigma_v"]),
                        jnp.exp(q["log_sigma_x"]))


def log_prior(state: HierarchyState, hp: HyperParams | None = None) -> float:
    hp = hp or HyperParams()
    return float(log_prior_u(jnp.asarray(unconstrain(state, hp)), state.layout, hp))


def log_posterior(state: HierarchyState, hp: HyperParams | None, data: Sequence[Trajectory],
                  mode: str = "joint") -> float:
    hp = hp or HyperParams()
    layout = state.layout
    if len(data) != layout.n_drivers:
        raise ValueError(f"{len(data)} trajectories for {layout.n_drivers} drivers")
    target = Posterior(data, layout.order, mode, hp, jit=False)
    return target.logp(unconstrain(state, hp))


def sample_prior(layout: Layout, hp: HyperParams, rng, n: int) -> np.ndarray:
    """Exact ancestral draws from the prior, returned in unconstrained coordinates."""
    sl = layout.slices
    D, p = layout.n_drivers, layout.order
    u = np.empty((n, layout.size))
    u[:, sl["log_theta_pop"]] = rng.multivariate_normal(np.log(hp.theta_rec), np.asarray(hp.Sigma0), n)
    u[:, sl["log_sigma0"]] = np.log(rng.exponential(1 / hp.lambda0, (n, K)))
    u[:, sl["cpc"]] = sample_lkj_cpc(rng, hp.eta_lkj, n)
    u[:, sl["rho_pop"]] = hp.sigma_rho0 * rng.standard_normal((n, p))
    u[:, sl["z_theta"]] = rng.standard_normal((n, D * K))
    rho_pop = u[:, sl["rho_pop"]]
    u[:, sl["rho_d"]] = (np.tile(rho_pop, (1, D))
                         + hp.sigma_rho * rng.standard_normal((n, D * p)))
    for name, lam in zip(NOISE_NAMES, (hp.lambda_eta, hp.lambda_v, hp.lambda_x)):
        u[:, sl["log_" + name]] = np.log(rng.exponential(1 / lam, (n, 1)))
    return u


class Posterior:
    """Differentiable log posterior over the unconstrained vector.

    Parameters
    ----------
    data : list of Trajectory, one per driver (driver index = list position)
    order : AR order p
    mode : one of ``accel``, ``speed``, ``position``, ``joint``
    hp : prior hyperparameters
    """

    def __init__(self, data: Sequence[Trajectory], order: int, mode: str = "joint",
                 hp: HyperParams | None = None, jit: bool = True):
        if mode not in MODES:
            raise ValueError(f"unknown likelihood mode {mode!r}")
        if not data:
            raise ValueError("no trajectories")
        self.hp = hp or HyperParams()
        self.mode = mode
        self.order = order
        self.trajectories = list(data)
        min_len = order + (1 if mode == "accel" else 2)
        short = [tr.driver_id for tr in data if len(tr) < min_len]
        if short:
            raise ValueError(f"trajectories too short for p={order}: {short}")
        self.layout = Layout(len(data), order)
        self.data = stack(data, need_accel=(mode == "accel"))
        self.mask = self.data.term_mask(mode, order)
        self.dim = self.layout.size

        def f(u):
            return (log_prior_u(u, self.layout, self.hp)
                    + log_lik_u(u, self.layout, self.hp, mode, self.data, self.mask))

        self._f = f
        wrap = jax.jit if jit else (lambda g: g)
        self._logp = wrap(f)
        self._vg = wrap(jax.value_and_grad(f))
        self._prior = wrap(lambda u: log_prior_u(u, self.layout, self.hp))
        self._flat = jax.jit(jax.vmap(self._flat_one))

    def logp(self, u) -> float:
        return float(self._logp(jnp.asarray(u, dtype=float)))

    def logp_and_grad(self, u):
        val, g = self._vg(jnp.asarray(u, dtype=float))
        return float(val), np.asarray(g)

    __call__ = logp_and_grad

    def log_prior(self, u) -> float:
        return float(self._prior(jnp.asarray(u, dtype=float)))

    def constrain(self, u) -> HierarchyState:
        return constrain(u, self.layout, self.hp)

    def unconstrain(self, state: HierarchyState) -> np.ndarray:
        return unconstrain(state, self.hp)

    def _flat_one(self, u):
        q = unpack(u, self.layout)
        L = q["L"]
        corr = L @ L.T
        low = jnp.stack([corr[i, j] for i in range(K) for j in range(i)])
        return jnp.concatenate([
            jnp.exp(q["log_theta_pop"]), jnp.exp(q["log_sigma0"]), low, q["rho_pop"],
            jnp.exp(q["log_theta_d"]).ravel(), q["rho_d"].ravel(),
            jnp.exp(jnp.stack([q["log_sigma_eta"], q["log_sigma_v"], q["log_sigma_x"]]))])

    def flat_constrained(self, samples) -> np.ndarray:
        """Map ``[..., dim]`` unconstrained draws to ``[..., len(names)]`` natural values."""
        samples = np.asarray(samples, dtype=float)
        lead = samples.shape[:-1]
        out = np.asarray(self._flat(jnp.asarray(samples.reshape(-1, self.dim))))
        return out.reshape(*lead, -1)

    def names(self) -> list[str]:
        return self.layout.names()

    def initial_point(self) -> np.ndarray:
        """Prior-location start: theta at the recommended values, zero effects."""
        u = np.zeros(self.dim)
        sl = self.layout.slices
        u[sl["log_theta_pop"]] = np.log(self.hp.theta_rec)
        u[sl["log_sigma0"]] = np.log(0.1)
        u[sl["log_sigma_eta"]] = np.log(0.1)
        u[sl["log_sigma_v"]] = np.log(0.01)
        u[sl["log_sigma_x"]] = np.log(0.01)
        return u

    def find_map(self, u0=None, maxiter: int = 2000) -> np.ndarray:
        """Posterior mode in unconstrained coordinates (L-BFGS)."""
        u0 = self.initial_point() if u0 is None else np.asarray(u0, dtype=float)

        def neg(u):
            v, g = self.logp_and_grad(u)
            if not np.isfinite(v):
                return 1e300, np.zeros_like(u)
            return -v, -g

        res = minimize(neg, u0, jac=True, method="L-BFGS-B", options={"maxiter": maxiter})
        return res.x
