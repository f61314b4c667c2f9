"""End-to-end hierarchical calibration: posterior, MAP start, HMC, summaries."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .idm import PARAM_NAMES
from .likelihood import DriverModel
from .prior import HierarchyState, HyperParams, Posterior
from .sampler import (PosteriorDraws, SamplerConfig, diagnostics, max_rhat,
                      posterior_summary, run_mcmc)
from .trajectory import Trajectory

log = logging.getLogger(__name__)


def model_label(order: int) -> str:
    return "Bayesian IDM (p=0)" if order == 0 else f"Dynamic IDM (p={order})"


@dataclass
class Calibration:
    posterior: Posterior
    draws: PosteriorDraws  # constrained coordinates, named
    map_point: np.ndarray

    @property
    def order(self) -> int:
        return self.posterior.order

    @property
    def label(self) -> str:
        return model_label(self.order)

    def states(self, chain: int | None = None):
        """Posterior draws as HierarchyState objects (all chains if ``chain`` is None)."""
        u = self.draws.unconstrained
        u = u.reshape(-1, u.shape[-1]) if chain is None else u[chain]
        return [self.posterior.constrain(x) for x in u]

    def posterior_mean(self, name: str) -> float:
        return float(self.draws.column(name).mean())

    def population_log_theta_mean(self) -> np.ndarray:
        """Posterior mean of ln(theta_pop), per IDM parameter."""
        return np.array([np.log(self.draws.column(f"{n}_pop")).mean() for n in PARAM_NAMES])

    def rho_pop_mean(self) -> np.ndarray:
        return np.array([self.posterior_mean(f"rho{k}_pop") for k in range(1, self.order + 1)])

    def driver_draws(self, n: int, rng) -> list[list[DriverModel]]:
        """``n`` posterior draws, each a list of per-driver models."""
        u = self.draws.unconstrained.reshape(-1, self.posterior.dim)
        idx = rng.integers(0, len(u), size=n)
        return [self.posterior.constrain(u[i]).driver_models() for i in idx]

    def table(self) -> list[dict]:
        return summary_table(self)


def calibrate(trajs: Sequence[Trajectory], order: int, mode: str = "joint",
              hp: HyperParams | None = None, cfg: SamplerConfig | None = None,
              use_map_init: bool = True) -> Calibration:
    post = Posterior(trajs, order, mode, hp)
    cfg = cfg or SamplerConfig()
    u_map = post.find_map() if use_map_init else post.initial_point()
    log.info("%s: start logp %.2f, dim %d", model_label(order), post.logp(u_map), post.dim)
    raw = run_mcmc(post.logp_and_grad, post.dim, cfg, init=u_map)
    draws = raw.with_samples(post.flat_constrained(raw.unconstrained), post.names())
    draws.meta.update(label=model_label(order), mode=mode, order=order,
                      drivers=[tr.driver_id for tr in trajs])
    return Calibration(post, draws, u_map)


def summary_table(cal: Calibration) -> list[dict]:
    """Population rows in display order: theta, sigma_eta, rho, then the rest."""
    rows = {r["name"]: r for r in posterior_summary(cal.draws)}
    diag = {d.name: d for d in diagnostics(cal.draws)}
    first = [f"{n}_pop" for n in PARAM_NAMES] + ["sigma_eta"]
    first += [f"rho{k}_pop" for k in range(1, cal.order + 1)]
    rest = [n for n in cal.draws.names if n not in first]
    out = []
    for name in first + rest:
        r = dict(model=cal.label, **rows[name])
        r["rhat"] = diag[name].rhat
        r["ess"] = diag[name].ess
        out.append(r)
    return out


def write_summary_csv(path, table: list[dict]) -> None:
    cols = ["model", "name", "mean", "std", "q2.5", "q50", "q97.5", "rhat", "ess"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in table:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                        for c in cols])


def converged(cal: Calibration, threshold: float = 1.05) -> bool:
    r = max_rhat(diagnostics(cal.draws))
    return r is not None and r < threshold


def state_at_mean(cal: Calibration) -> HierarchyState:
    """HierarchyState at the posterior mean of the unconstrained draws."""
    u = cal.draws.unconstrained.reshape(-1, cal.posterior.dim).mean(axis=0)
    return cal.posterior.constrain(u)


def _driver_model(draws: PosteriorDraws, row: np.ndarray, d: int, order: int) -> DriverModel:
    col = {n: i for i, n in enumerate(draws.names)}
    theta = [row[col[f"{n}[{d}]"]] for n in PARAM_NAMES]
    rho = [row[col[f"rho{k}[{d}]"]] for k in range(1, order + 1)]
    return DriverModel.from_arrays(theta, np.array(rho, dtype=float), row[col["sigma_eta"]])


def draws_layout(draws: PosteriorDraws) -> tuple[int, int]:
    """(n_drivers, order) implied by the column names of a draws table."""
    names = set(draws.names)
    n_drivers = 0
    while f"{PARAM_NAMES[0]}[{n_drivers}]" in names:
        n_drivers += 1
    order = 0
    while f"rho{order + 1}_pop" in names:
        order += 1
    if n_drivers == 0 or "sigma_eta" not in names:
        raise ValueError("draws do not contain driver-level parameters")
    return n_drivers, order


def driver_model_draws(draws: PosteriorDraws, n: int, rng) -> list[list[DriverModel]]:
    """``n`` random posterior draws, each a list of per-driver models."""
    n_drivers, order = draws_layout(draws)
    flat = draws.flat()
    idx = rng.integers(0, len(flat), size=n)
    return [[_driver_model(draws, flat[i], d, order) for d in range(n_drivers)] for i in idx]


def models_from_draws(draws: PosteriorDraws, n: int, rng, driver: int | None = None
                      ) -> list[DriverModel]:
    """``n`` driver models: random draws of one ``driver``, or of random drivers."""
    n_drivers, order = draws_layout(draws)
    if driver is not None and not 0 <= driver < n_drivers:
        raise ValueError(f"driver index {driver} outside 0..{n_drivers - 1}")
    flat = draws.flat()
    idx = rng.integers(0, len(flat), size=n)
    who = rng.integers(0, n_drivers, size=n) if driver is None else np.full(n, driver)
    return [_driver_model(draws, flat[i], int(d), order) for i, d in zip(idx, who)]
