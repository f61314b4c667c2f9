"""Hamiltonian Monte Carlo over an unconstrained log density.

Plain HMC (step count = integration time / step size) is the default; a
multinomial no-U-turn tree is available with ``algorithm="nuts"``. Step
size is tuned by dual averaging and a diagonal inverse mass matrix is
estimated from warmup draws in three doubling windows.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import norm, rankdata

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0

LogDensity = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class SamplerError(RuntimeError):
    """Sampling could not start or produced unusable output."""


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 3000
    draws: int = 1000
    target_accept: float = 0.8
    max_treedepth: int = 10
    seed: int = 0
    init_jitter: float = 0.1
    algorithm: str = "hmc"
    integration_time: float = 1.5
    max_divergence_rate: float = 0.25
    init_retries: int = 100
    curvature_init: bool = True
    metric: str = "diag"

    def __post_init__(self):
        if self.warmup < 100:
            raise ValueError("warmup must be at least 100")
        if self.chains < 1 or self.draws < 1:
            raise ValueError("need at least one chain and one draw")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.algorithm not in ("hmc", "nuts"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.metric not in ("diag", "dense"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.max_treedepth < 1 or self.integration_time <= 0:
            raise ValueError("max_treedepth and integration_time must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PosteriorDraws:
    """Post-warmup draws, ``[chains, draws, ...]``."""

    samples: np.ndarray
    names: list
    logp: np.ndarray
    accept_stat: np.ndarray
    divergent: np.ndarray
    n_leapfrog: np.ndarray
    unconstrained: np.ndarray | None = None
    step_size: np.ndarray | None = None
    inv_mass: np.ndarray | None = None
    config: SamplerConfig | None = None
    wall_time: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.samples.shape[0]

    @property
    def n_draws(self) -> int:
        return self.samples.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, :, list(self.names).index(name)]

    def flat(self) -> np.ndarray:
        """All chains concatenated, ``[chains * draws, n_params]``."""
        return self.samples.reshape(-1, self.samples.shape[-1])

    @property
    def divergence_rate(self) -> float:
        return float(np.mean(self.divergent))

    def with_samples(self, samples, names) -> PosteriorDraws:
        """Same run statistics, different reported coordinates."""
        return PosteriorDraws(np.asarray(samples), list(names), self.logp, self.accept_stat,
                              self.divergent, self.n_leapfrog, self.unconstrained,
                              self.step_size, self.inv_mass, self.config, self.wall_time,
                              dict(self.meta))


# ---------------------------------------------------------------- metrics

class DiagMetric:
    """Diagonal inverse mass matrix."""

    def __init__(self, inv_mass):
        self.inv_mass = np.asarray(inv_mass, dtype=float)
        self._sd = 1.0 / np.sqrt(self.inv_mass)

    def velocity(self, p):
        return self.inv_mass * p

    def kinetic(self, p) -> float:
        return 0.5 * float(np.dot(p, self.inv_mass * p))

    def sample_momentum(self, rng):
        return rng.standard_normal(self.inv_mass.size) * self._sd

    def diagonal(self):
        return self.inv_mass


class DenseMetric:
    """Full inverse mass matrix (an estimate of the posterior covariance)."""

    def __init__(self, cov):
        self.cov = np.asarray(cov, dtype=float)
        self._chol = np.linalg.cholesky(self.cov)

    def velocity(self, p):
        return self.cov @ p

    def kinetic(self, p) -> float:
        return 0.5 * float(np.dot(p, self.cov @ p))

    def sample_momentum(self, rng):
        # p ~ N(0, cov^-1): p = L^-T z with cov = L L^T
        z = rng.standard_normal(self.cov.shape[0])
        return solve_triangular(self._chol.T, z, lower=False)

    def diagonal(self):
        return np.diag(self.cov).copy()


def as_metric(m):
    if isinstance(m, (DiagMetric, DenseMetric)):
        return m
    m = np.asarray(m, dtype=float)
    return DenseMetric(m) if m.ndim == 2 else DiagMetric(m)


def _clip_spd(cov, lo=1e-12, hi=1e4):
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    return (V * np.clip(w, lo, hi)) @ V.T


# ---------------------------------------------------------------- integrator

def leapfrog(logp_grad: LogDensity, q, p, grad, step: float, metric, n_steps: int = 1):
    """``n_steps`` velocity-Verlet steps; returns (q, p, logp, grad)."""
    metric = as_metric(metric)
    lp = None
    for _ in range(n_steps):
        p = p + 0.5 * step * grad
        q = q + step * metric.velocity(p)
        lp, grad = logp_grad(q)
        p = p + 0.5 * step * grad
    return q, p, lp, grad


def hamiltonian(lp: float, p, metric) -> float:
    return -lp + as_metric(metric).kinetic(p)


class DualAveraging:
    def __init__(self, step: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step)

    def restart(self, step: float):
        self.mu = math.log(10.0 * step)
        self.h_bar = 0.0
        self.log_step_bar = 0.0
        self.n = 0

    def update(self, accept: float) -> float:
        self.n += 1
        w = 1.0 / (self.n + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept)
        log_step = self.mu - math.sqrt(self.n) / self.gamma * self.h_bar
        eta = self.n ** -self.kappa
        self.log_step_bar = eta * log_step + (1 - eta) * self.log_step_bar
        return math.exp(log_step)

    @property
    def final(self) -> float:
        return math.exp(self.log_step_bar)


def warmup_windows(n: int) -> list[tuple[int, int]]:
    """Three doubling slow windows between a fast start and end buffer."""
    if n >= 300:
        start, end = 75, 50
    else:
        start, end = int(0.15 * n), int(0.1 * n)
    slow = n - start - end
    unit = slow // 7
    bounds = [start, start + unit, start + 3 * unit, n - end]
    return [(bounds[i], bounds[i + 1]) for i in range(3)]


def _reasonable_step(logp_grad, q, lp, grad, inv_mass, rng, step=0.1):
    p = inv_mass.sample_momentum(rng)
    h0 = hamiltonian(lp, p, inv_mass)

    def log_ratio(eps):
        _, p1, lp1, _ = leapfrog(logp_grad, q, p, grad, eps, inv_mass)
        h1 = hamiltonian(lp1, p1, inv_mass) if np.isfinite(lp1) else np.inf
        return h0 - h1

    direction = 1.0 if log_ratio(step) > math.log(0.8) else -1.0
    for _ in range(100):
        r = log_ratio(step)
        if direction > 0 and not r > math.log(0.8):
            break
        if direction < 0 and r > math.log(0.8):
            break
        step = step * (2.0 ** direction)
    return float(step)


# ---------------------------------------------------------------- transitions

def _hmc_transition(logp_grad, q, lp, grad, step, inv_mass, n_steps, rng):
    p0 = inv_mass.sample_momentum(rng)
    h0 = hamiltonian(lp, p0, inv_mass)
    q1, p1, lp1, g1 = leapfrog(logp_grad, q, p0, grad, step, inv_mass, n_steps)
    h1 = hamiltonian(lp1, p1, inv_mass) if np.isfinite(lp1) else np.inf
    delta = h1 - h0
    divergent = not delta < DIVERGENCE_THRESHOLD
    accept = 0.0 if not np.isfinite(delta) else math.exp(min(0.0, -delta))
    if rng.uniform() < accept:
        return q1, lp1, g1, accept, divergent, n_steps
    return q, lp, grad, accept, divergent, n_steps


@dataclass
class _Tree:
    q_minus: np.ndarray
    p_minus: np.ndarray
    g_minus: np.ndarray
    q_plus: np.ndarray
    p_plus: np.ndarray
    g_plus: np.ndarray
    q_prop: np.ndarray
    lp_prop: float
    g_prop: np.ndarray
    log_weight: float
    rho: np.ndarray
    accept_sum: float
    n: int
    stop: bool
    divergent: bool


def _no_uturn(rho, p_minus, p_plus, inv_mass) -> bool:
    return (np.dot(inv_mass.velocity(p_minus), rho) > 0) and (np.dot(inv_mass.velocity(p_plus), rho) > 0)


def _build_tree(logp_grad, q, p, g, direction, depth, step, inv_mass, h0, rng) -> _Tree:
    if depth == 0:
        q1, p1, lp1, g1 = leapfrog(logp_grad, q, p, g, direction * step, inv_mass)
        h1 = hamiltonian(lp1, p1, inv_mass) if np.isfinite(lp1) else np.inf
        delta = h1 - h0
        divergent = not delta < DIVERGENCE_THRESHOLD
        accept = 0.0 if not np.isfinite(delta) else math.exp(min(0.0, -delta))
        logw = -delta if np.isfinite(delta) else -np.inf
        return _Tree(q1, p1, g1, q1, p1, g1, q1, lp1, g1, logw, p1.copy(), accept, 1,
                     divergent, divergent)
    inner = _build_tree(logp_grad, q, p, g, direction, depth - 1, step, inv_mass, h0, rng)
    if inner.stop:
        return inner
    if direction > 0:
        outer = _build_tree(logp_grad, inner.q_plus, inner.p_plus, inner.g_plus, direction,
                            depth - 1, step, inv_mass, h0, rng)
    else:
        outer = _build_tree(logp_grad, inner.q_minus, inner.p_minus, inner.g_minus, direction,
                            depth - 1, step, inv_mass, h0, rng)
    tree = _merge(inner, outer, direction, rng, biased=False)
    if not outer.stop:
        tree.stop = not _no_uturn(tree.rho, tree.p_minus, tree.p_plus, inv_mass)
    return tree


def _merge(old: _Tree, new: _Tree, direction, rng, biased: bool) -> _Tree:
    logw = float(np.logaddexp(old.log_weight, new.log_weight))
    if biased:
        take = math.log(rng.uniform()) < new.log_weight - old.log_weight
    else:
        take = math.log(rng.uniform()) < new.log_weight - logw
    if direction > 0:
        qm, pm, gm, qp, pp, gp = old.q_minus, old.p_minus, old.g_minus, new.q_plus, new.p_plus, new.g_plus
    else:
        qm, pm, gm, qp, pp, gp = new.q_minus, new.p_minus, new.g_minus, old.q_plus, old.p_plus, old.g_plus
    src = new if (take and not new.stop) else old
    return _Tree(qm, pm, gm, qp, pp, gp, src.q_prop, src.lp_prop, src.g_prop, logw,
                 old.rho + new.rho, old.accept_sum + new.accept_sum, old.n + new.n,
                 new.stop, old.divergent or new.divergent)


def _nuts_transition(logp_grad, q, lp, grad, step, inv_mass, max_depth, rng):
    p0 = inv_mass.sample_momentum(rng)
    h0 = hamiltonian(lp, p0, inv_mass)
    tree = _Tree(q, p0, grad, q, p0, grad, q, lp, grad, 0.0, p0.copy(), 0.0, 0, False, False)
    for depth in range(max_depth):
        direction = 1 if rng.uniform() < 0.5 else -1
        if direction > 0:
            sub = _build_tree(logp_grad, tree.q_plus, tree.p_plus, tree.g_plus, 1, depth,
                              step, inv_mass, h0, rng)
        else:
            sub = _build_tree(logp_grad, tree.q_minus, tree.p_minus, tree.g_minus, -1, depth,
                              step, inv_mass, h0, rng)
        n_before = tree.n
        tree = _merge(tree, sub, direction, rng, biased=True)
        tree.n = n_before + sub.n
        if sub.stop:
            break
        if not _no_uturn(tree.rho, tree.p_minus, tree.p_plus, inv_mass):
            break
    accept = tree.accept_sum / max(tree.n, 1)
    return tree.q_prop, tree.lp_prop, tree.g_prop, accept, tree.divergent, tree.n


# ---------------------------------------------------------------- driver

def _initial_point(logp_grad, dim, cfg, init, rng):
    center = np.zeros(dim) if init is None else np.asarray(init, dtype=float)
    for _ in range(cfg.init_retries):
        q = center + cfg.init_jitter * rng.uniform(-1, 1, dim) * (2.0 if init is None else 1.0)
        lp, g = logp_grad(q)
        if np.isfinite(lp) and np.all(np.isfinite(g)):
            return q, lp, np.asarray(g, dtype=float)
    raise SamplerError(f"no finite log density and gradient after {cfg.init_retries} inits")


def negative_hessian(logp_grad, q, grad, rel_step: float = 1e-4) -> np.ndarray:
    """Symmetrized forward-difference Hessian of ``-logp`` (one gradient per coordinate)."""
    n = q.size
    H = np.empty((n, n))
    for i in range(n):
        h = rel_step * max(1.0, abs(q[i]))
        e = np.zeros(n)
        e[i] = h
        _, g1 = logp_grad(q + e)
        H[i] = -(np.asarray(g1) - grad) / h
    return 0.5 * (H + H.T)


def curvature_metric(logp_grad, q, grad, dense: bool = False):
    """Metric from local curvature; non-positive or non-finite curvature falls back to 1."""
    H = negative_hessian(logp_grad, q, grad)
    if not np.all(np.isfinite(H)):
        H = np.where(np.isfinite(H), H, 0.0)
    if dense:
        w, V = np.linalg.eigh(H)
        inv_w = np.where(w > 0, 1.0 / np.where(w > 0, w, 1.0), 1.0)
        return DenseMetric((V * np.clip(inv_w, 1e-10, 1e4)) @ V.T)
    d = np.diag(H)
    out = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 1.0)
    return DiagMetric(np.clip(out, 1e-10, 1e4))


def _adapt_metric(x: np.ndarray, previous, dense: bool):
    n, dim = x.shape
    if not dense:
        var = x.var(axis=0, ddof=1)
        return DiagMetric((n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0)))
    S = np.cov(x, rowvar=False)
    prev = previous.cov if isinstance(previous, DenseMetric) else np.diag(previous.diagonal())
    w = n / (n + dim)
    return DenseMetric(_clip_spd(w * S + (1 - w) * prev))


def _run_chain(logp_grad, dim, cfg: SamplerConfig, rng, init):
    q, lp, g = _initial_point(logp_grad, dim, cfg, init, rng)
    dense = cfg.metric == "dense"
    if cfg.curvature_init:
        inv_mass = curvature_metric(logp_grad, q, g, dense)
    else:
        inv_mass = DenseMetric(np.eye(dim)) if dense else DiagMetric(np.ones(dim))
    step = _reasonable_step(logp_grad, q, lp, g, inv_mass, rng)
    da = DualAveraging(step, cfg.target_accept)
    windows = warmup_windows(cfg.warmup)
    window_draws: list[np.ndarray] = []
    max_steps = 2 ** cfg.max_treedepth

    def transition(step_now, jitter):
        if cfg.algorithm == "nuts":
            return _nuts_transition(logp_grad, q, lp, g, step_now, inv_mass,
                                    cfg.max_treedepth, rng)
        eps = step_now * (rng.uniform(0.9, 1.1) if jitter else 1.0)
        n_steps = int(min(max_steps, max(1, math.ceil(cfg.integration_time / eps))))
        return _hmc_transition(logp_grad, q, lp, g, eps, inv_mass, n_steps, rng)

    for it in range(cfg.warmup):
        q, lp, g, acc, _, _ = transition(step, jitter=False)
        step = da.update(acc)
        for w, (a, b) in enumerate(windows):
            if a <= it < b:
                window_draws.append(q.copy())
                if it == b - 1:
                    inv_mass = _adapt_metric(np.array(window_draws), inv_mass, dense)
                    window_draws = []
                    step = _reasonable_step(logp_grad, q, lp, g, inv_mass, rng, step)
                    da.restart(step)
    step = da.final

    out = dict(q=np.empty((cfg.draws, dim)), lp=np.empty(cfg.draws), acc=np.empty(cfg.draws),
               div=np.zeros(cfg.draws, dtype=bool), nlf=np.empty(cfg.draws, dtype=int))
    for i in range(cfg.draws):
        q, lp, g, acc, div, nlf = transition(step, jitter=True)
        out["q"][i], out["lp"][i], out["acc"][i], out["div"][i], out["nlf"][i] = q, lp, acc, div, nlf
    return out, step, inv_mass


def run_mcmc(logp_grad: LogDensity, dim: int, cfg: SamplerConfig, init=None,
             names: Sequence[str] | None = None) -> PosteriorDraws:
    """Sample ``cfg.chains`` independent chains from ``exp(logp)``.

    ``logp_grad(q)`` returns ``(log density, gradient)``. Chain c draws its
    randomness from substream c of ``SeedSequence(cfg.seed)``, so results do
    not depend on the order in which chains are executed. ``init`` (optional)
    is the point around which starting values are jittered.
    """
    t_start = time.perf_counter()
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    runs = []
    for c in range(cfg.chains):
        rng = np.random.default_rng(streams[c])
        runs.append(_run_chain(logp_grad, dim, cfg, rng, init))
        log.info("chain %d done: step %.3g, mean accept %.3f", c, runs[-1][1],
                 float(np.mean(runs[-1][0]["acc"])))
    q = np.stack([r[0]["q"] for r in runs])
    draws = PosteriorDraws(
        samples=q,
        names=list(names) if names is not None else [f"u[{i}]" for i in range(dim)],
        logp=np.stack([r[0]["lp"] for r in runs]),
        accept_stat=np.stack([r[0]["acc"] for r in runs]),
        divergent=np.stack([r[0]["div"] for r in runs]),
        n_leapfrog=np.stack([r[0]["nlf"] for r in runs]),
        unconstrained=q,
        step_size=np.array([r[1] for r in runs]),
        inv_mass=np.stack([r[2].diagonal() for r in runs]),
        config=cfg,
        wall_time=time.perf_counter() - t_start,
    )
    if draws.divergence_rate > cfg.max_divergence_rate:
        raise SamplerError(
            f"{100 * draws.divergence_rate:.1f}% of post-warmup transitions diverged; "
            "the posterior geometry is too curved for the adapted step size. "
            "Consider a non-centered parameterization or a higher target_accept.")
    return draws


# ---------------------------------------------------------------- diagnostics

def _split(x: np.ndarray) -> np.ndarray:
    """[chains, n] -> [2 * chains, n // 2], dropping the middle draw when n is odd."""
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, x.shape[1] - n:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return norm.ppf((r - 0.375) / (x.size + 0.25))


def _rhat_basic(x: np.ndarray) -> float:
    m, n = x.shape
    w = np.mean(x.var(axis=1, ddof=1))
    b = n * x.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _degenerate(x: np.ndarray) -> bool:
    return not np.all(np.isfinite(x)) or np.ptp(x) == 0


def split_rhat(x) -> float | None:
    """Rank-normalized split R-hat (max of bulk and folded); None if unavailable."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 4 or _degenerate(x):
        return None
    s = _split(x)
    if np.any(s.var(axis=1) == 0):
        return None
    bulk = _rhat_basic(_rank_normalize(s))
    folded = np.abs(s - np.median(s))
    tail = _rhat_basic(_rank_normalize(folded)) if np.ptp(folded) > 0 else bulk
    return max(bulk, tail)


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    n = x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    size = 2 ** int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    return np.fft.irfft(f * np.conj(f), size)[..., :n] / n


def _ess_basic(x: np.ndarray) -> float:
    m, n = x.shape
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = np.mean(acov[:, 0]) * n / (n - 1)
    var_plus = mean_var * (n - 1) / n + (chain_mean.var(ddof=1) if m > 1 else 0.0)
    rho = np.empty(n)
    rho[0] = 1.0
    rho[1:] = 1.0 - (mean_var - np.mean(acov[:, 1:], axis=0)) / var_plus
    # Geyer initial positive sequence, then monotone
    t = 0
    pair_sums = []
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s < 0:
            break
        pair_sums.append(s)
        t += 2
    if not pair_sums:
        return float(m * n)
    pair_sums = np.minimum.accumulate(np.array(pair_sums))
    tau = -1.0 + 2.0 * np.sum(pair_sums)
    tau = max(tau, 1.0 / math.log10(m * n))
    return float(m * n / tau)


def ess_bulk(x) -> float | None:
    """Rank-normalized bulk effective sample size; None when degenerate."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] < 4 or _degenerate(x):
        return None
    s = _split(x)
    if np.any(s.var(axis=1) == 0):
        return None
    return _ess_basic(_rank_normalize(s))


@dataclass(frozen=True)
class ParamDiagnostics:
    name: str
    rhat: float | None
    ess: float | None

    @property
    def degenerate(self) -> bool:
        return self.ess is None


def diagnostics(draws: PosteriorDraws) -> list[ParamDiagnostics]:
    out = []
    for i, name in enumerate(draws.names):
        x = draws.samples[:, :, i]
        ess = ess_bulk(x)
        rhat = split_rhat(x) if draws.n_chains >= 2 else None
        out.append(ParamDiagnostics(name, rhat, ess))
    return out


def max_rhat(diag: Sequence[ParamDiagnostics]) -> float | None:
    vals = [d.rhat for d in diag if d.rhat is not None]
    return max(vals) if vals else None


# ---------------------------------------------------------------- summaries & I/O

SUMMARY_COLUMNS = ("name", "mean", "std", "q2.5", "q50", "q97.5")


def posterior_summary(draws: PosteriorDraws | np.ndarray, names: Sequence[str] | None = None):
    """Rows of (name, mean, std, 2.5%, 50%, 97.5%) in the draws' coordinates.

    Accepts PosteriorDraws or a plain ``[n_draws, n_params]`` array. The
    standard deviation is the population (ddof=0) value.
    """
    if isinstance(draws, PosteriorDraws):
        x = draws.flat()
        names = list(names) if names is not None else draws.names
    else:
        x = np.atleast_2d(np.asarray(draws, dtype=float))
        names = list(names) if names is not None else [f"x[{i}]" for i in range(x.shape[1])]
    if x.shape[0] == 0:
        raise ValueError("no draws to summarize")
    q = np.quantile(x, [0.025, 0.5, 0.975], axis=0)
    return [dict(name=n, mean=float(x[:, i].mean()), std=float(x[:, i].std()),
                 **{"q2.5": float(q[0, i]), "q50": float(q[1, i]), "q97.5": float(q[2, i])})
            for i, n in enumerate(names)]


STAT_COLUMNS = ("lp__", "accept_stat__", "divergent__", "n_leapfrog__")


def write_draws_csv(path, draws: PosteriorDraws) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "draw", *STAT_COLUMNS, *draws.names])
        for c in range(draws.n_chains):
            for i in range(draws.n_draws):
                w.writerow([c, i, repr(float(draws.logp[c, i])), repr(float(draws.accept_stat[c, i])),
                            int(draws.divergent[c, i]), int(draws.n_leapfrog[c, i]),
                            *(repr(float(v)) for v in draws.samples[c, i])])


def read_draws_csv(path) -> PosteriorDraws:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:2] != ["chain", "draw"] or tuple(header[2:6]) != STAT_COLUMNS:
        raise ValueError(f"{path}: not a draws file")
    names = header[6:]
    arr = np.array([[float(v) for v in r] for r in body])
    chains = int(arr[:, 0].max()) + 1
    n = len(arr) // chains
    if chains * n != len(arr):
        raise ValueError(f"{path}: ragged chains")
    shape = (chains, n)
    return PosteriorDraws(
        samples=arr[:, 6:].reshape(chains, n, -1), names=names,
        logp=arr[:, 2].reshape(shape), accept_stat=arr[:, 3].reshape(shape),
        divergent=arr[:, 4].reshape(shape).astype(bool),
        n_leapfrog=arr[:, 5].reshape(shape).astype(int))
