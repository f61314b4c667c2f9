"""Leader-follower trajectory records: CSV ingestion, resampling, slicing."""
from __future__ import annotations

import csv
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SPACING_TOL = 1e-6


class DataError(ValueError):
    """Trajectory data violates an invariant (gap, length, timing)."""


class SchemaError(DataError):
    """Input file lacks a required column."""


@dataclass(frozen=True)
class ColumnSchema:
    """Maps logical fields to CSV header names."""

    t: str = "t"
    driver_id: str = "driver_id"
    x_follower: str = "x_follower"
    v_follower: str = "v_follower"
    x_leader: str = "x_leader"
    v_leader: str = "v_leader"
    a_follower: str = "a_follower"
    lead_length: str = "lead_length"

    def required(self):
        return [self.t, self.driver_id, self.x_follower, self.v_follower,
                self.x_leader, self.v_leader, self.lead_length]


@dataclass(frozen=True)
class CfState:
    s: float
    v: float
    dv: float

    def __post_init__(self):
        if not (np.isfinite(self.s) and np.isfinite(self.v) and np.isfinite(self.dv)):
            raise ValueError("car-following state must be finite")
        if self.s <= 0:
            raise ValueError(f"gap must be positive, got {self.s}")


@dataclass(frozen=True)
class Leader:
    """Kinematics of a lead vehicle sampled at fixed dt."""

    dt: float
    x: np.ndarray
    v: np.ndarray
    length: float = 5.0
    t0: float = 0.0

    def __post_init__(self):
        x = _frozen(self.x)
        v = _frozen(self.v)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        if x.shape != v.shape or x.ndim != 1:
            raise ValueError("leader x and v must be 1-D with equal length")

    def __len__(self):
        return len(self.x)

    def window(self, start: int, stop: int) -> Leader:
        return replace(self, x=self.x[start:stop], v=self.v[start:stop],
                       t0=self.t0 + start * self.dt)


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed leader-follower record at fixed sampling step ``dt``.

    Gap is bumper to bumper, ``x_l - x_f - lead_length``.
    """

    driver_id: str
    dt: float
    t0: float
    x_f: np.ndarray
    v_f: np.ndarray
    x_l: np.ndarray
    v_l: np.ndarray
    a_f: Optional[np.ndarray] = None
    lead_length: float = 5.0
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        for name in ("x_f", "v_f", "x_l", "v_l", "a_f"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(val))
        if self.validate:
            self._check()

    def _check(self):
        n = len(self.x_f)
        arrays = [self.x_f, self.v_f, self.x_l, self.v_l]
        if self.a_f is not None:
            arrays.append(self.a_f)
        if any(a.ndim != 1 or len(a) != n for a in arrays):
            raise DataError(f"driver {self.driver_id}: sequences differ in length")
        if n < 2:
            raise DataError(f"driver {self.driver_id}: need at least 2 samples, got {n}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise DataError(f"driver {self.driver_id}: dt must be positive")
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise DataError(f"driver {self.driver_id}: non-finite values")
        bad = np.flatnonzero(self.gap <= 0)
        if bad.size:
            i = int(bad[0])
            raise DataError(
                f"driver {self.driver_id}: non-positive gap {self.gap[i]:.6g} m "
                f"at t={self.t0 + i * self.dt:.6g} s (row {i})")

    def __len__(self):
        return len(self.x_f)

    @property
    def gap(self) -> np.ndarray:
        return self.x_l - self.x_f - self.lead_length

    @property
    def dv(self) -> np.ndarray:
        return self.v_f - self.v_l

    @property
    def duration(self) -> float:
        return (len(self) - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def has_accel(self) -> bool:
        return self.a_f is not None

    def leader(self) -> Leader:
        return Leader(dt=self.dt, x=self.x_l, v=self.v_l, length=self.lead_length, t0=self.t0)

    def slice(self, start: int, stop: int) -> Trajectory:
        a = None if self.a_f is None else self.a_f[start:stop]
        return replace(self, t0=self.t0 + start * self.dt, x_f=self.x_f[start:stop],
                       v_f=self.v_f[start:stop], x_l=self.x_l[start:stop],
                       v_l=self.v_l[start:stop], a_f=a)

    def shifted(self, offset: float) -> Trajectory:
        """Same record with all positions translated by ``offset``."""
        return replace(self, x_f=self.x_f + offset, x_l=self.x_l + offset)


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def cf_state_at(traj: Trajectory, t_index: int) -> CfState:
    if not 0 <= t_index < len(traj):
        raise IndexError(f"t_index {t_index} out of range for T={len(traj)}")
    i = t_index
    s = traj.x_l[i] - traj.x_f[i] - traj.lead_length
    return CfState(s=float(s), v=float(traj.v_f[i]), dv=float(traj.v_f[i] - traj.v_l[i]))


def load_trajectories(path, format: ColumnSchema | None = None) -> list[Trajectory]:
    """Read one Trajectory per driver_id from a CSV file.

    Rows must be time-sorted within each driver. The sampling step is the
    median time difference (rounded to 1e-9 s); any spacing off by more
    than 1e-6 s is rejected.
    """
    schema = format or ColumnSchema()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in schema.required() if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        has_a = schema.a_follower in header
        groups: OrderedDict[str, list[dict]] = OrderedDict()
        for row in reader:
            groups.setdefault(row[schema.driver_id], []).append(row)

    out = []
    for driver_id, rows in groups.items():
        if len(rows) < 2:
            raise DataError(f"driver {driver_id}: need at least 2 rows, got {len(rows)}")
        try:
            cols = {k: np.array([float(r[getattr(schema, k)]) for r in rows])
                    for k in ("t", "x_follower", "v_follower", "x_leader", "v_leader",
                              "lead_length")}
            a = (np.array([float(r[schema.a_follower]) for r in rows])
                 if has_a and all(r[schema.a_follower] not in ("", None) for r in rows)
                 else None)
        except ValueError as exc:
            raise DataError(f"driver {driver_id}: unparsable value ({exc})") from None
        t = cols["t"]
        diffs = np.diff(t)
        dt = round(float(np.median(diffs)), 9)
        off = np.flatnonzero(np.abs(diffs - dt) > SPACING_TOL)
        if dt <= 0 or off.size:
            i = int(off[0]) + 1 if off.size else 1
            raise DataError(f"driver {driver_id}: non-uniform time step at t={t[i]:.6g} s")
        lengths = cols["lead_length"]
        if np.ptp(lengths) > 1e-9:
            raise DataError(f"driver {driver_id}: lead_length varies within the record")
        out.append(Trajectory(driver_id=driver_id, dt=dt, t0=float(t[0]),
                              x_f=cols["x_follower"], v_f=cols["v_follower"],
                              x_l=cols["x_leader"], v_l=cols["v_leader"], a_f=a,
                              lead_length=float(lengths[0])))
    return out


def write_trajectories(path, trajs: Sequence[Trajectory]) -> None:
    """Write trajectories in the schema ``load_trajectories`` reads."""
    with_a = all(tr.has_accel for tr in trajs)
    schema = ColumnSchema()
    header = [schema.t, schema.driver_id, schema.x_follower, schema.v_follower,
              schema.x_leader, schema.v_leader]
    if with_a:
        header.append(schema.a_follower)
    header.append(schema.lead_length)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for tr in trajs:
            for i, t in enumerate(tr.times):
                row = [repr(float(t)), tr.driver_id, repr(float(tr.x_f[i])),
                       repr(float(tr.v_f[i])), repr(float(tr.x_l[i])), repr(float(tr.v_l[i]))]
                if with_a:
                    row.append(repr(float(tr.a_f[i])))
                row.append(repr(float(tr.lead_length)))
                w.writerow(row)


def downsample(traj: Trajectory, target_hz: float) -> Trajectory:
    """Keep every k-th sample, k = source rate / target rate (must be integral)."""
    ratio = 1.0 / (traj.dt * target_hz)
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-6:
        raise ValueError(f"source rate {1 / traj.dt:g} Hz is not an integer multiple "
                         f"of {target_hz:g} Hz")
    if k == 1:
        return traj
    sl = slice(None, None, k)
    a = None if traj.a_f is None else traj.a_f[sl]
    return replace(traj, dt=round(traj.dt * k, 9), x_f=traj.x_f[sl], v_f=traj.v_f[sl],
                   x_l=traj.x_l[sl], v_l=traj.v_l[sl], a_f=a)


def filter_min_duration(trajs: Sequence[Trajectory], t_min: float) -> list[Trajectory]:
    return [tr for tr in trajs if tr.duration >= t_min - 1e-9]
