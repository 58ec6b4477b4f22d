"""Command-line entry point: ``torusdiff <command> [options]``.

Commands: ``simulate``, ``estimate``, ``sweep``, ``diagnose``, ``rate-fit``.
Every configuration key is also a flag (``--hidden-dim 64``); flags
override values loaded with ``--config``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import diagnostics, plotting
from .errors import ConfigError, TorusDiffError
from .harness import (
    CSV_COLUMNS,
    InstanceConfig,
    SweepConfig,
    config_to_dict,
    decreasing_prefix,
    emit_outputs,
    fit_rate,
    format_csv,
    instance_from_dict,
    master_trajectory,
    parse_config,
    read_sweep_csv,
    run_instance,
    sweep,
)
from .models import make_model
from .simulate import Trajectory, load_csv, save_csv, subsample

STAGE_EXIT = {"config": 2, "simulate": 3, "estimate": 4, "sweep": 5, "diagnose": 6, "rate-fit": 7}


class StageError(Exception):
    def __init__(self, stage, message):
        super().__init__(message)
        self.stage = stage


def _add_config_flags(parser):
    parser.add_argument("--config", help="JSON configuration file")
    for f in fields(InstanceConfig):
        flag = "--" + f.name.replace("_", "-")
        names = [flag] if flag == "--" + f.name else [flag, "--" + f.name]
        if f.type == "bool":
            parser.add_argument(*names, dest=f.name, default=None,
                                type=lambda v: v.lower() in ("1", "true", "yes"),
                                metavar="BOOL")
        elif f.name in ("x0", "model_params"):
            parser.add_argument(*names, dest=f.name, default=None, type=json.loads,
                                metavar="JSON")
        else:
            kind = {"int": int, "str": str}.get(f.type, float)
            parser.add_argument(*names, dest=f.name, default=None, type=kind,
                                metavar=f.name.upper())


def _overrides(args):
    return {f.name: getattr(args, f.name) for f in fields(InstanceConfig)
            if getattr(args, f.name, None) is not None}


def _load(args, need_instance=True, sweep_keys=None):
    """Merge ``--config`` with flag overrides and validate."""
    data = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise StageError("config", f"configuration file {args.config!r} not found")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise StageError("config", f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise StageError("config", f"{args.config}: configuration must be a JSON object")
    data.update(_overrides(args))
    if sweep_keys:
        opts = dict(data.get("sweep", {}))
        opts.update({k: v for k, v in sweep_keys.items() if v is not None})
        data["sweep"] = opts
    if "sweep" in data and not sweep_keys:
        data.pop("sweep")
    try:
        if "sweep" in data:
            return parse_config(data)
        if need_instance:
            return parse_config(data)
        return instance_from_dict(data, need_instance=False)
    except ConfigError as exc:
        raise StageError("config", f"{exc} (key: {exc.key})") from None


def _int_list(text):
    return [int(float(v)) for v in text.split(",") if v.strip()]


def cmd_simulate(args):
    cfg = _load(args, need_instance=False)
    traj = master_trajectory(cfg)
    out = Path(args.out or Path(cfg.output_dir) / "trajectory.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(out, traj, extra={"x0": list(traj.points[0]), "model_params": cfg.model_params})
    print(f"wrote {out} ({len(traj.points)} snapshots, tau0={traj.tau0:g})")


def _trajectory_cache(cfg, path):
    if not path:
        return {}
    traj = load_csv(path)
    if not isinstance(traj, Trajectory):
        raise StageError("config", f"{path} is not a master trajectory file")
    cfg_key = (cfg.model, json.dumps(cfg.model_params, sort_keys=True), cfg.x0,
               cfg.tau0, cfg.T0, cfg.master_seed)
    if abs(traj.tau0 - cfg.tau0) > 1e-12 * cfg.tau0:
        raise StageError("config", f"trajectory tau0={traj.tau0} differs from config tau0={cfg.tau0}")
    return {cfg_key: traj}


def cmd_estimate(args):
    cfg = _load(args)
    out = Path(cfg.output_dir)
    cache = _trajectory_cache(cfg, args.trajectory)
    kept = []
    row = run_instance(cfg, cache=cache, keep_estimator=kept)
    out.mkdir(parents=True, exist_ok=True)
    (out / "instance.csv").write_text(format_csv([row]))
    (out / "config.json").write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")
    if kept and hasattr(kept[0], "save"):
        kept[0].save(out / "estimator")
    print(",".join(CSV_COLUMNS))
    print(format_csv([row]).splitlines()[1])
    if row["status"] != "ok":
        raise StageError("estimate", f"{row['status']}: {row.get('error', '')}")


def cmd_sweep(args):
    sc = _load(args, sweep_keys={
        "scheme": args.scheme,
        "grid": _int_list(args.grid) if args.grid else None,
        "seeds": _int_list(args.seeds) if args.seeds else None,
    })
    if not isinstance(sc, SweepConfig):
        raise StageError("config", "sweep needs a sweep description")
    cache = _trajectory_cache(sc.base, args.trajectory)

    def progress(row):
        print(f"[{sc.scheme}] N={row['N']} seed={row['seed']} "
              f"diffusion_loss={row['diffusion_loss']:.4g} status={row['status']}",
              file=sys.stderr, flush=True)

    result = sweep(sc.scheme, sc.grid, sc.seeds, sc.base, sc.tau_fixed, sc.T_fixed,
                   cache=cache, progress=progress)
    result.config = config_to_dict(sc)
    out = Path(sc.base.output_dir)
    paths = emit_outputs(result, out)
    rate = result.rate()
    print(json.dumps({"outputs": {k: str(v) for k, v in paths.items()}, "diffusion_rate": rate}, indent=2))


def cmd_diagnose(args):
    cfg = _load(args)
    cache = _trajectory_cache(cfg, args.trajectory)
    traj = master_trajectory(cfg, cache)
    obs = subsample(traj, cfg.tau, cfg.T).drop_burn_in(args.burn_in)
    model = make_model(cfg.model, cfg.model_params)
    observable = lambda x: np.sin(2 * np.pi * x[..., 0])  # noqa: E731
    max_lag = min(args.max_lag, max(1, obs.N // 4 - 1))
    acf = diagnostics.autocorrelation(obs, observable, max_lag)
    l_values = [l for l in _int_list(args.block_sizes) if l <= obs.N // 2]
    profile = diagnostics.block_dependence_profile(obs, observable, l_values)
    hist = diagnostics.stationarity_test(obs, args.bins)
    qv = diagnostics.quadratic_variation_probe(obs, model)
    out = Path(cfg.output_dir)
    summary = diagnostics.write_reports(out, acf, profile, hist, qv)
    plotting.autocorrelation_plot(acf, out / "autocorrelation.svg")
    print(json.dumps(summary, indent=2))


def cmd_rate_fit(args):
    rows = [r for r in read_sweep_csv(args.csv) if r["status"] == "ok"]
    grid = sorted({r["N"] for r in rows})
    means = [float(np.mean([r[args.metric] for r in rows if r["N"] == n])) for n in grid]
    k = decreasing_prefix(means)
    if args.segment:
        lo, hi = (int(v) for v in args.segment.split(":"))
    else:
        lo, hi = 0, k
    slope, intercept = fit_rate(list(zip(grid, means)), (lo, hi))
    print(json.dumps({"metric": args.metric, "N": grid, "mean": means,
                      "segment": [lo, hi], "slope": slope, "intercept": intercept}, indent=2))


def build_parser():
    parser = argparse.ArgumentParser(prog="torusdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate and write the master trajectory")
    _add_config_flags(p)
    p.add_argument("--out", help="CSV path (default <output_dir>/trajectory.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run one instance of the two-stage estimator")
    _add_config_flags(p)
    p.add_argument("--trajectory", help="reuse a master trajectory CSV from 'simulate'")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="run a convergence sweep (scheme A or B)")
    _add_config_flags(p)
    p.add_argument("--scheme", choices=("A", "B"))
    p.add_argument("--grid", help="comma-separated N values")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--trajectory", help="reuse a master trajectory CSV from 'simulate'")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnose", help="mixing, stationarity and quadratic-variation reports")
    _add_config_flags(p)
    p.add_argument("--trajectory", help="reuse a master trajectory CSV from 'simulate'")
    p.add_argument("--max-lag", type=int, default=500)
    p.add_argument("--block-sizes", default="1,2,5,10,20,50,100,200")
    p.add_argument("--bins", type=int, default=8)
    p.add_argument("--burn-in", type=float, default=0.05)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("rate-fit", help="fit a log-log slope to a sweep.csv")
    p.add_argument("csv")
    p.add_argument("--metric", default="diffusion_loss",
                   choices=("drift_loss", "diffusion_loss", "f_recovery_error"))
    p.add_argument("--segment", help="start:stop slice of the N grid (default: decreasing prefix)")
    p.set_defaults(func=cmd_rate_fit)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except StageError as exc:
        print(f"torusdiff {args.command}: [{exc.stage}] {exc}", file=sys.stderr)
        return STAGE_EXIT.get(exc.stage, 1)
    except (TorusDiffError, OSError, ValueError) as exc:
        print(f"torusdiff {args.command}: [{args.command}] {exc}", file=sys.stderr)
        return STAGE_EXIT.get(args.command, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
