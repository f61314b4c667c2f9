"""Scoring of probabilistic rollouts and residual analysis."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .ar import CovarianceFunction
from .idm import IdmParams, idm_term
from .likelihood import DriverModel
from .simulation import FollowerInit, SimEnsemble, simulate_follower
from .trajectory import Trajectory

SCORE_FIELDS = ("rmse_a", "rmse_v", "rmse_s", "crps_a", "crps_v", "crps_s")


def _members(ensemble, variable: str | None) -> np.ndarray:
    if isinstance(ensemble, SimEnsemble):
        if variable is None:
            raise ValueError("variable selector required for a SimEnsemble")
        return ensemble.state(variable)
    return np.atleast_2d(np.asarray(ensemble, dtype=float))


def rmse(truth, ensemble, variable: str | None = None) -> float:
    """RMSE of the ensemble mean against ``truth`` (``ensemble`` is [members, steps])."""
    x = _members(ensemble, variable)
    truth = np.asarray(truth, dtype=float)
    if x.shape[1] != truth.shape[-1]:
        raise ValueError(f"length mismatch: ensemble {x.shape[1]}, truth {truth.shape[-1]}")
    return float(np.sqrt(np.mean((x.mean(axis=0) - truth) ** 2)))


def crps(observation: float, forecast) -> float:
    """CRPS of an empirical forecast distribution at one observation."""
    f = np.asarray(forecast, dtype=float).ravel()
    if f.size == 0:
        raise ValueError("empty forecast ensemble")
    return float(crps_ensemble(np.array([observation]), f[:, None])[0])


def crps_ensemble(obs, members) -> np.ndarray:
    """Per-step CRPS for ``members`` [m, n] against ``obs`` [n].

    Uses mean|X - y| - 0.5 mean|X - X'| with the pairwise term from order
    statistics, O(m log m) per step.
    """
    x = np.asarray(members, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    m = x.shape[0]
    if m == 0:
        raise ValueError("empty forecast ensemble")
    term1 = np.mean(np.abs(x - obs[None, :]), axis=0)
    xs = np.sort(x, axis=0)
    w = (2.0 * np.arange(1, m + 1) - m - 1)[:, None]
    term2 = np.sum(w * xs, axis=0) / (m * m)  # = 0.5 mean|X - X'|
    return term1 - term2


def extract_residuals(traj: Trajectory, idm: IdmParams) -> np.ndarray:
    """Observed acceleration minus the IDM mean at every step."""
    if not traj.has_accel:
        raise ValueError(f"driver {traj.driver_id}: no acceleration data")
    mean = idm_term(traj.gap, traj.v_f, traj.dv, idm.v0, idm.s0, idm.T_hw, idm.alpha, idm.beta)
    return traj.a_f - np.asarray(mean)


def empirical_autocovariance(residuals, max_lag: int, dt: float = 1.0) -> CovarianceFunction:
    """Biased (1/N) sample autocovariance at lags 0..max_lag."""
    r = np.asarray(residuals, dtype=float)
    n = len(r)
    if n <= max_lag:
        raise ValueError(f"need more than {max_lag} residuals, got {n}")
    c = r - r.mean()
    gamma = np.array([np.dot(c[:n - k], c[k:]) / n for k in range(max_lag + 1)])
    return CovarianceFunction(gamma, dt * np.arange(max_lag + 1))


# ---------------------------------------------------------------- fraction scoring

@dataclass
class ScoreReport:
    """Per-fraction scores for one simulation horizon, natural units.

    Acceleration scores are NaN for fractions without acceleration data.
    ``display_scale`` only affects ``summary(display=True)``.
    """

    horizon: float
    fraction_length: float
    n_fractions: int
    rmse_a: np.ndarray
    rmse_v: np.ndarray
    rmse_s: np.ndarray
    crps_a: np.ndarray
    crps_v: np.ndarray
    crps_s: np.ndarray
    model: str = ""
    display_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in SCORE_FIELDS:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (self.n_fractions,):
                raise ValueError(f"{name} must have one value per fraction")
            if np.any(arr < 0):
                raise ValueError(f"{name} has negative entries")
            setattr(self, name, arr)

    def summary(self, display: bool = False) -> dict:
        k = self.display_scale if display else 1.0
        out = {}
        for name in SCORE_FIELDS:
            arr = getattr(self, name)
            out[name] = k * float(np.nanmean(arr)) if np.any(np.isfinite(arr)) else math.nan
            out[name + "_std"] = k * float(np.nanstd(arr)) if np.any(np.isfinite(arr)) else math.nan
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in SCORE_FIELDS:
            d[name] = [None if not np.isfinite(v) else float(v) for v in getattr(self, name)]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ScoreReport:
        d = dict(d)
        for name in SCORE_FIELDS:
            d[name] = np.array([math.nan if v is None else v for v in d[name]], dtype=float)
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> ScoreReport:
        return cls.from_dict(json.loads(text))


CSV_COLUMNS = ("model", "horizon", "fraction_length", "fraction") + SCORE_FIELDS


def write_reports_csv(path, reports: Sequence[ScoreReport]) -> None:
    """Long format, one row per (report, fraction)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in reports:
            for i in range(r.n_fractions):
                w.writerow([r.model, repr(r.horizon), repr(r.fraction_length), i,
                            *(repr(float(getattr(r, f)[i])) for f in SCORE_FIELDS)])


def read_reports_csv(path) -> list[ScoreReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["model"], row["horizon"], row["fraction_length"]), []).append(row)
    out = []
    for (model, horizon, flen), rs in groups.items():
        rs.sort(key=lambda r: int(r["fraction"]))
        cols = {f: np.array([float(r[f]) for r in rs]) for f in SCORE_FIELDS}
        out.append(ScoreReport(horizon=float(horizon), fraction_length=float(flen),
                               n_fractions=len(rs), model=model, **cols))
    return out


def write_summary_csv(path, reports: Sequence[ScoreReport], display: bool = False) -> None:
    """Plot-ready rows: model, horizon, metric means and stds."""
    keys = [k for f in SCORE_FIELDS for k in (f, f + "_std")]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "horizon", "n_fractions", *keys])
        for r in reports:
            s = r.summary(display)
            w.writerow([r.model, repr(r.horizon), r.n_fractions, *(repr(s[k]) for k in keys)])


def _error_history(traj: Trajectory, model: DriverModel, start: int) -> np.ndarray:
    """Residuals a - IDM at steps start-1, ..., start-p (newest first), zero-padded."""
    p = model.order
    hist = np.zeros(p)
    if p == 0 or not traj.has_accel:
        return hist
    idm = model.idm
    for k in range(1, p + 1):
        i = start - k
        if i < 0:
            break
        mean = idm_term(traj.gap[i], traj.v_f[i], traj.dv[i], idm.v0, idm.s0, idm.T_hw,
                        idm.alpha, idm.beta)
        hist[k - 1] = traj.a_f[i] - float(mean)
    return hist


def score_fraction(traj: Trajectory, start: int, n_steps: int, models: Sequence[DriverModel],
                   seed: int) -> tuple:
    """Simulate one fraction from the observed state at ``start`` and score it.

    ``models`` holds one DriverModel per rollout. Speed and gap are scored at
    the ``n_steps`` simulated states after the start; acceleration at the
    ``n_steps`` steps beginning at the start.
    """
    leader = traj.leader().window(start, start + n_steps + 1)
    hist = np.array([_error_history(traj, m, start) for m in models])
    init = FollowerInit(float(traj.x_f[start]), float(traj.v_f[start]),
                        eps_history=hist if hist.size else ())
    ens = simulate_follower(leader, init, list(models), len(models), seed)
    sl = slice(start + 1, start + n_steps + 1)
    v_true, s_true = traj.v_f[sl], traj.gap[sl]
    v_sim, s_sim = ens.v[:, 1:], ens.s[:, 1:]
    out = [math.nan, rmse(v_true, v_sim), rmse(s_true, s_sim), math.nan,
           float(np.mean(crps_ensemble(v_true, v_sim))), float(np.mean(crps_ensemble(s_true, s_sim)))]
    if traj.has_accel:
        a_true = traj.a_f[start:start + n_steps]
        a_sim = ens.a[:, :-1]
        out[0] = rmse(a_true, a_sim)
        out[3] = float(np.mean(crps_ensemble(a_true, a_sim)))
    return tuple(out)


def fraction_starts(traj: Trajectory, n_steps: int, stride_steps: int, first: int) -> list[int]:
    last = len(traj) - 1 - n_steps
    return list(range(first, last + 1, stride_steps))


def score_fractions(data: Sequence[Trajectory], model_draws, horizons=tuple(range(1, 11)),
                    stride: float = 1.0, seed: int = 0, model: str = "",
                    warm_start: int | None = None) -> list[ScoreReport]:
    """Score overlapping fractions of every trajectory, one report per horizon.

    ``model_draws`` is a list of posterior draws, each a list of per-driver
    DriverModels aligned with ``data``; rollout r of every fraction uses draw
    r. Fractions start every ``stride`` seconds, from step ``warm_start``
    (default: the largest AR order, so error histories come from data).
    """
    if not model_draws:
        raise ValueError("no posterior draws")
    n_drivers = len(model_draws[0])
    if n_drivers != len(data):
        raise ValueError(f"draws cover {n_drivers} drivers, data has {len(data)}")
    first = max(m.order for m in model_draws[0]) if warm_start is None else warm_start
    reports = []
    for h_index, horizon in enumerate(horizons):
        rows = []
        for d, traj in enumerate(data):
            n_steps = int(round(horizon / traj.dt))
            stride_steps = max(1, int(round(stride / traj.dt)))
            starts = fraction_starts(traj, n_steps, stride_steps, first)
            if not starts:
                raise ValueError(f"driver {traj.driver_id}: too short for a {horizon} s horizon")
            models = [draw[d] for draw in model_draws]
            for j, start in enumerate(starts):
                sub_seed = [seed, h_index, d, j]
                rows.append(score_fraction(traj, start, n_steps, models, sub_seed))
        arr = np.array(rows)
        reports.append(ScoreReport(horizon=float(horizon), fraction_length=float(horizon),
                                   n_fractions=len(rows), model=model,
                                   meta=dict(stride=stride, rollouts=len(model_draws),
                                             warm_start=first, seed=seed),
                                   **{f: arr[:, i] for i, f in enumerate(SCORE_FIELDS)}))
    return reports
