"""Command-line entry point: ``cfcal <command> [options]``.

Exit codes: 0 success, 2 completed with warnings, 64 usage error, 65 data error,
1 when the sampler gives up (too many divergences, no finite start).
Each command writes its outputs plus ``manifest.json`` into ``--out``;
``cfcal replay manifest.json`` re-runs a command from its manifest.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ar import ArCoefficients
from .idm import PARAM_NAMES, IdmParams
from .likelihood import MODES, DriverModel
from .sampler import SamplerError
from .trajectory import DataError, Leader, Trajectory, load_trajectories, write_trajectories

EXIT_OK, EXIT_FAIL, EXIT_WARN, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 64, 65
SEED_ENV = "CFCAL_SEED"
MANIFEST = "manifest.json"

log = logging.getLogger("cfcal")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seed: int
    versions: dict
    wall_time: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)  # file name -> sha256

    def to_dict(self) -> dict:
        return dict(command=self.command, argv=self.argv, config=self.config, seed=self.seed,
                    versions=self.versions, wall_time=self.wall_time,
                    diagnostics=self.diagnostics, outputs=self.outputs)

    @classmethod
    def from_dict(cls, d: dict) -> RunManifest:
        return cls(**d)

    def write(self, out_dir: Path) -> Path:
        """Atomic write: temp file in the same directory, then rename."""
        path = out_dir / MANIFEST
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        os.replace(tmp, path)
        return path

    @classmethod
    def read(cls, path) -> RunManifest:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def _versions() -> dict:
    import scipy

    out = dict(cfcal=__version__, numpy=np.__version__, scipy=scipy.__version__,
               python=platform.python_version())
    try:
        import jax

        out["jax"] = jax.__version__
    except ImportError:  # pragma: no cover
        pass
    return out


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- shared helpers

def _read_config(path) -> dict:
    from .prior import read_config

    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        return read_config(path)
    except ValueError as exc:  # TOML and JSON decode errors both subclass it
        raise UsageError(f"cannot parse {path}: {exc}") from None


def _floats(text: str, name: str) -> list[float]:
    if text is None or text.strip() == "":
        return []
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise UsageError(f"--{name}: expected comma-separated numbers, got {text!r}") from None


def _explicit_model(args) -> tuple[DriverModel, float]:
    """Model from --params/--rho/--sigma-eta and the noise scale (0 if sigma_eta is 0)."""
    theta = _floats(args.params, "params")
    if len(theta) != 5:
        raise UsageError("--params needs 5 values: v0,s0,T,alpha,beta")
    rho = _floats(args.rho, "rho")
    sigma = args.sigma_eta
    if sigma is None:
        raise UsageError("--sigma-eta is required with --params")
    if sigma < 0:
        raise UsageError("--sigma-eta must be non-negative")
    model = DriverModel(IdmParams.from_array(theta), ArCoefficients(np.array(rho), sigma or 1.0))
    return model, (1.0 if sigma > 0 else 0.0)


def _check_model_source(args):
    if args.posterior and args.params:
        raise UsageError("--posterior and --params are mutually exclusive")
    if not args.posterior and not args.params:
        raise UsageError("one of --posterior or --params is required")


def _leader(args) -> tuple[Leader, Trajectory | None]:
    from .synthetic import leader_profile

    if args.data:
        trajs = load_trajectories(args.data)
        traj = _pick(trajs, args.driver)
        return traj.leader(), traj
    kind = args.leader
    params = dict(speed=args.leader_speed, low=args.leader_low, high=args.leader_high,
                  period=args.leader_period)
    return leader_profile(kind, params, args.duration, args.dt), None


def _pick(trajs, driver):
    if driver is None:
        return trajs[0]
    for tr in trajs:
        if tr.driver_id == str(driver):
            return tr
    raise UsageError(f"driver {driver!r} not found in data")


def _add_leader_flags(p):
    p.add_argument("--data", help="trajectory CSV; the leader channel of --driver is used")
    p.add_argument("--driver", help="driver_id in --data (default: first)")
    p.add_argument("--leader", default="sawtooth", choices=("constant", "sawtooth"))
    p.add_argument("--leader-speed", type=float, default=20.0)
    p.add_argument("--leader-low", type=float, default=8.0)
    p.add_argument("--leader-high", type=float, default=25.0)
    p.add_argument("--leader-period", type=float, default=40.0)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--dt", type=float, default=0.2)


def _add_model_flags(p):
    p.add_argument("--posterior", help="draws CSV written by `cfcal calibrate`")
    p.add_argument("--params", help="explicit IDM values v0,s0,T,alpha,beta")
    p.add_argument("--rho", default="", help="AR coefficients, comma-separated (with --params)")
    p.add_argument("--sigma-eta", type=float, help="white-noise std (with --params); 0 disables noise")


def _common(p, rollouts: bool = True):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    if rollouts:
        p.add_argument("--rollouts", type=int, default=1000)
    p.add_argument("--plot", action="store_true", help="also emit SVG figures")


# ---------------------------------------------------------------- commands

def cmd_calibrate(args, out: Path, manifest: RunManifest) -> int:
    from .calibrate import calibrate, converged, summary_table, write_summary_csv
    from .prior import HyperParams
    from .sampler import SamplerConfig, diagnostics, max_rhat, write_draws_csv

    trajs = load_trajectories(args.data)
    if args.min_duration:
        from .trajectory import filter_min_duration

        trajs = filter_min_duration(trajs, args.min_duration)
        if not trajs:
            raise DataError(f"no trajectory lasts {args.min_duration} s")
    cfg_file = _read_config(args.config) if args.config else {}
    hp = HyperParams.from_dict(cfg_file.get("prior", {}))
    sampler_opts = dict(cfg_file.get("sampler", {}))
    sampler_opts.update(chains=args.chains, warmup=args.warmup, draws=args.draws,
                        seed=args.seed, algorithm=args.algorithm, metric=args.metric)
    try:
        cfg = SamplerConfig(**sampler_opts)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    manifest.config.update(prior=hp.to_dict(), sampler=cfg.to_dict())
    cal = calibrate(trajs, args.order, args.likelihood, hp, cfg)
    write_draws_csv(out / "draws.csv", cal.draws)
    table = summary_table(cal)
    write_summary_csv(out / "summary.csv", table)
    diag = diagnostics(cal.draws)
    with open(out / "diagnostics.csv", "w", encoding="utf-8") as fh:
        fh.write("name,rhat,ess\n")
        for d in diag:
            fh.write(f"{d.name},{'' if d.rhat is None else repr(d.rhat)},"
                     f"{'' if d.ess is None else repr(d.ess)}\n")
    rmax = max_rhat(diag)
    manifest.diagnostics = dict(label=cal.label, max_rhat=rmax,
                                divergence_rate=cal.draws.divergence_rate,
                                min_ess=min((d.ess for d in diag if d.ess is not None), default=None),
                                step_size=cal.draws.step_size.tolist())
    print(cal.label)
    for r in table[: 6 + args.order]:
        print(f"  {r['name']:<12} {r['mean']:>10.4f}  ({r['q2.5']:.4f}, {r['q97.5']:.4f})")
    if not converged(cal):
        log.warning("max R-hat %s >= 1.05; chains have not converged", rmax)
        return EXIT_WARN
    return EXIT_OK


def _posterior_models(path, rng, n: int, driver=None) -> list[DriverModel]:
    """``n`` driver models drawn from a draws CSV.

    With ``driver`` set, the draws of that driver index; otherwise a random
    (draw, driver) pair each time.
    """
    from .calibrate import models_from_draws
    from .sampler import read_draws_csv

    draws = read_draws_csv(path)
    return models_from_draws(draws, n, rng, driver)


def cmd_simulate(args, out: Path, manifest: RunManifest) -> int:
    from .simulation import (FollowerInit, ensemble_envelope, simulate_follower,
                             write_envelope_csv, write_rollouts_csv)
    from .idm import equilibrium_gap

    _check_model_source(args)
    leader, traj = _leader(args)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 1]))
    if args.params:
        model, noise = _explicit_model(args)
        models = model
        ref = model
    else:
        idx = None if args.posterior_driver is None else int(args.posterior_driver)
        models = _posterior_models(args.posterior, rng, args.rollouts, idx)
        noise, ref = 1.0, models[0]
    if traj is not None:
        init = FollowerInit(float(traj.x_f[0]), float(traj.v_f[0]))
    else:
        v = float(leader.v[0])
        init = FollowerInit(float(leader.x[0]) - leader.length - float(equilibrium_gap(v, ref.idm)), v)
    ens = simulate_follower(leader, init, models, args.rollouts, args.seed, noise_scale=noise)
    write_envelope_csv(out / "envelope.csv", ens)
    write_rollouts_csv(out / "rollouts.csv", ens, max_rollouts=args.max_rollout_rows)
    manifest.diagnostics = dict(collisions=len(ens.collisions),
                                speed_floor_events=ens.speed_floor_events)
    if args.plot:
        from .svg import envelope_svg

        env = ensemble_envelope(ens)
        truth = traj.v_f if traj is not None else None
        envelope_svg(out / "speed_envelope.svg", ens.times, *env["v"], truth=truth,
                     title="follower speed, 95% band")
    return EXIT_OK


def cmd_platoon(args, out: Path, manifest: RunManifest) -> int:
    from .simulation import (equilibrium_platoon_inits, simulate_platoon, speed_variance_ratios,
                             write_envelope_csv)

    _check_model_source(args)
    leader, _ = _leader(args)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 2]))
    if args.params:
        model, noise = _explicit_model(args)
        followers = [model] * args.followers
        ref = followers
    else:
        noise = 1.0
        followers = [_posterior_models(args.posterior, rng, args.rollouts)
                     for _ in range(args.followers)]
        ref = [f[0] for f in followers]
    inits = equilibrium_platoon_inits(leader, ref)
    ens = simulate_platoon(leader, followers, inits, args.rollouts, args.seed, noise_scale=noise)
    for k, e in enumerate(ens):
        write_envelope_csv(out / f"envelope_follower{k + 1}.csv", e)
    ratios = speed_variance_ratios(leader, ens) if np.var(leader.v) > 0 else None
    result = dict(speed_variance_ratio=None if ratios is None else ratios.tolist(),
                  collisions=[len(e.collisions) for e in ens])
    (out / "platoon.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    manifest.diagnostics = result
    if args.plot:
        from .svg import lines_svg

        lines_svg(out / "platoon_speed.svg", ens[0].times,
                  [leader.v] + [e.mean("v") for e in ens],
                  ["leader"] + [f"follower {k + 1}" for k in range(len(ens))],
                  "platoon mean speed", "time (s)", "speed (m/s)")
    return EXIT_OK


def cmd_ringroad(args, out: Path, manifest: RunManifest) -> int:
    from .simulation import RingConfig, simulate_ring, write_time_space_csv

    _check_model_source(args)
    try:
        cfg = RingConfig(radius=args.radius, n_vehicles=args.vehicles, v_init=args.v_init,
                         steps=args.steps, dt=args.dt, vehicle_length=args.vehicle_length)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 3]))
    if args.params:
        models, noise = _explicit_model(args)
    else:
        models, noise = _posterior_models(args.posterior, rng, cfg.n_vehicles), 1.0
    manifest.config["ring"] = dict(radius=cfg.radius, n_vehicles=cfg.n_vehicles,
                                   v_init=cfg.v_init, steps=cfg.steps, dt=cfg.dt,
                                   vehicle_length=cfg.vehicle_length,
                                   circumference=cfg.circumference)
    ring = simulate_ring(cfg, models, args.seed, noise_scale=noise)
    write_time_space_csv(out / "time_space.csv", ring, every=args.every,
                         frame_speed=args.frame_speed)
    std = ring.spatial_speed_std()
    tail = std[-min(5000, len(std)):]
    result = dict(collisions=len(ring.collisions), speed_floor_events=ring.speed_floor_events,
                  final_speed_std=float(std[-1]), tail_speed_std_min=float(tail.min()),
                  tail_speed_std_mean=float(tail.mean()), mean_speed=float(ring.v[-1].mean()))
    (out / "ring.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    manifest.diagnostics = result
    if args.plot:
        from .svg import time_space_svg

        sl = slice(None, None, args.every)
        time_space_svg(out / "time_space.svg", ring.times[sl], ring.wrapped()[sl], ring.v[sl],
                       title=f"ring road, {cfg.n_vehicles} vehicles",
                       circumference=cfg.circumference)
    return EXIT_OK


def cmd_evaluate(args, out: Path, manifest: RunManifest) -> int:
    from .calibrate import driver_model_draws
    from .evaluation import score_fractions, write_reports_csv, write_summary_csv
    from .sampler import read_draws_csv

    trajs = load_trajectories(args.data)
    draws = read_draws_csv(args.posterior)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 4]))
    model_draws = driver_model_draws(draws, args.rollouts, rng)
    if len(model_draws[0]) != len(trajs):
        raise DataError(f"posterior has {len(model_draws[0])} drivers, data has {len(trajs)}")
    horizons = [float(h) for h in _floats(args.horizons, "horizons")]
    label = draws.meta.get("label") or _label_from_names(draws.names)
    reports = score_fractions(trajs, model_draws, horizons, args.stride, args.seed, model=label)
    write_reports_csv(out / "fractions.csv", reports)
    write_summary_csv(out / "scores.csv", reports, display=False)
    (out / "scores.json").write_text(json.dumps([r.to_dict() for r in reports], sort_keys=True,
                                                default=_json_default) + "\n")
    manifest.diagnostics = {f"{r.horizon:g}s": r.summary() for r in reports}
    if args.plot:
        from .svg import lines_svg

        hz = [r.horizon for r in reports]
        lines_svg(out / "crps_by_horizon.svg", hz,
                  [[r.summary()[k] for r in reports] for k in ("crps_a", "crps_v", "crps_s")],
                  ["CRPS a", "CRPS v", "CRPS s"], f"{label}: CRPS by horizon",
                  "horizon (s)", "CRPS")
    return EXIT_OK


def _label_from_names(names) -> str:
    from .calibrate import model_label

    order = sum(1 for n in names if n.startswith("rho") and n.endswith("_pop"))
    return model_label(order)


def cmd_synth(args, out: Path, manifest: RunManifest) -> int:
    from .synthetic import generate, recovery_fixture

    gt = recovery_fixture(args.seed, n_drivers=args.drivers, order=args.order,
                          sigma_v=args.sigma_v, sigma_x=args.sigma_x)
    latent, observed = generate(gt, args.duration, args.dt)
    write_trajectories(out / "observed.csv", observed)
    write_trajectories(out / "latent.csv", latent)
    truth = dict(population=gt.population, sigma_v=gt.sigma_v, sigma_x=gt.sigma_x,
                 drivers=[dict(theta=m.idm.as_array().tolist(), rho=m.ar.rho.tolist(),
                               sigma_eta=m.ar.sigma_eta) for m in gt.drivers],
                 leaders=[[k, p] for k, p in gt.leaders])
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True,
                                               default=_json_default) + "\n")
    return EXIT_OK


COMMANDS = dict(calibrate=cmd_calibrate, simulate=cmd_simulate, platoon=cmd_platoon,
                ringroad=cmd_ringroad, evaluate=cmd_evaluate, synth=cmd_synth)


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="cfcal", description="IDM calibration with AR(p) process errors")
    root.add_argument("--version", action="version", version=f"cfcal {__version__}")
    root.add_argument("-v", "--verbose", action="store_true")
    sub = root.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("calibrate", help="hierarchical calibration by HMC")
    p.add_argument("--data", required=True)
    p.add_argument("--order", type=int, default=5)
    p.add_argument("--likelihood", choices=MODES, default="joint")
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=3000)
    p.add_argument("--algorithm", choices=("hmc", "nuts"), default="hmc")
    p.add_argument("--metric", choices=("diag", "dense"), default="diag")
    p.add_argument("--min-duration", type=float, default=0.0)
    p.add_argument("--config", help="TOML/JSON with [prior] and [sampler] tables")
    _common(p, rollouts=False)

    p = sub.add_parser("simulate", help="single-follower ensemble")
    _add_leader_flags(p)
    _add_model_flags(p)
    p.add_argument("--posterior-driver", help="driver index in the posterior (default: random)")
    p.add_argument("--max-rollout-rows", type=int, default=100,
                   help="rollouts written to rollouts.csv")
    _common(p)

    p = sub.add_parser("platoon", help="platoon ensemble")
    _add_leader_flags(p)
    _add_model_flags(p)
    p.add_argument("--followers", type=int, default=4)
    _common(p)

    p = sub.add_parser("ringroad", help="ring-road simulation")
    _add_model_flags(p)
    p.add_argument("--radius", type=float, default=128.0)
    p.add_argument("--vehicles", type=int, default=32)
    p.add_argument("--v-init", type=float, default=11.6)
    p.add_argument("--steps", type=int, default=15000)
    p.add_argument("--dt", type=float, default=0.2)
    p.add_argument("--vehicle-length", type=float, default=5.0)
    p.add_argument("--every", type=int, default=5, help="write every n-th step")
    p.add_argument("--frame-speed", type=float, default=0.0,
                   help="observer speed subtracted from positions (m/s)")
    _common(p, rollouts=False)

    p = sub.add_parser("evaluate", help="RMSE/CRPS over trajectory fractions")
    p.add_argument("--data", required=True)
    p.add_argument("--posterior", required=True)
    p.add_argument("--horizons", default="1,2,3,4,5,6,7,8,9,10")
    p.add_argument("--stride", type=float, default=1.0)
    _common(p)

    p = sub.add_parser("synth", help="synthetic recovery fixture")
    p.add_argument("--drivers", type=int, default=20)
    p.add_argument("--order", type=int, default=5)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--dt", type=float, default=0.2)
    p.add_argument("--sigma-v", type=float, default=1e-4)
    p.add_argument("--sigma-x", type=float, default=1e-5)
    _common(p, rollouts=False)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="output directory (default: the manifest's)")
    return root


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def _run(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    if args.command == "replay":
        m = RunManifest.read(args.manifest)
        new = list(m.argv)
        if args.out:
            new = _replace_out(new, args.out)
        return _run(new)

    args.seed = _resolve_seed(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # the manifest argv is fully explicit so replay does not depend on the environment
    argv_full = _explicit_argv(argv, args.seed)
    manifest = RunManifest(command=args.command, argv=argv_full,
                           config={k: v for k, v in vars(args).items() if k != "command"},
                           seed=args.seed, versions=_versions())
    t0 = time.perf_counter()
    code = COMMANDS[args.command](args, out, manifest)
    manifest.wall_time = time.perf_counter() - t0
    manifest.outputs = {p.name: _sha256(p) for p in sorted(out.iterdir())
                        if p.is_file() and p.name != MANIFEST and not p.name.startswith(".")}
    manifest.write(out)
    return code


def _replace_out(argv, out) -> list[str]:
    argv = list(argv)
    for i, a in enumerate(argv):
        if a == "--out":
            argv[i + 1] = out
            return argv
        if a.startswith("--out="):
            argv[i] = f"--out={out}"
            return argv
    raise UsageError("manifest argv has no --out")


def _explicit_argv(argv, seed) -> list[str]:
    argv = list(argv)
    if "--seed" not in argv and not any(a.startswith("--seed=") for a in argv):
        argv += ["--seed", str(seed)]
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return _run(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"cfcal: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SamplerError as exc:
        print(f"cfcal: sampler failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
