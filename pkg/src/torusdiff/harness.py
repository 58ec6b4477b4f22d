"""Experiment configuration, single instances, convergence sweeps and reports.

Two sweep schemes are supported. Scheme ``A`` fixes the observation step
``tau`` and grows the horizon ``T = N tau``; scheme ``B`` fixes ``T`` and
refines ``tau = T / N``. Every instance sub-samples one shared master
trajectory and is scored on one shared set of test points.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import plotting
from .errors import ConfigError, InvalidInputError, TorusDiffError
from .estimation import derive_seeds, packed_size, run_algorithm1, torus_arch
from .models import make_model
from .nn import TrainConfig
from .simulate import simulate, step_count, subsample
from .torus import wrap

__all__ = [
    "InstanceConfig",
    "SweepConfig",
    "SweepResult",
    "CSV_COLUMNS",
    "parse_config",
    "config_to_dict",
    "make_test_points",
    "master_trajectory",
    "run_instance",
    "sweep",
    "fit_rate",
    "decreasing_prefix",
    "emit_outputs",
    "read_sweep_csv",
]

CSV_COLUMNS = (
    "scheme", "N", "tau", "T", "seed",
    "drift_loss", "diffusion_loss", "f_recovery_error", "wall_time_s", "status",
)
METRICS = ("drift_loss", "diffusion_loss", "f_recovery_error")
_REL_TOL = 1e-9
BURN_IN = 0.05


@dataclass(frozen=True)
class InstanceConfig:
    """One experiment instance. ``tau`` and ``T`` may be left unset in a sweep base."""

    model: str = "example"
    model_params: dict = field(default_factory=dict)
    x0: tuple | None = None
    tau0: float = 1e-4
    T0: float = 200.0
    master_seed: int = 0
    tau: float | None = None
    T: float | None = None
    sizing: str = "theory"
    hidden_dim: int = 128
    num_residual_blocks: int = 2
    smoothness: float = 2.0
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_adam: float = 1e-8
    epochs: int = 200
    batch_size: int = 512
    lambda_periodic: float = 1.0
    boundary_pairs: int = 1000
    pairs_per_step: int = 64
    lr_schedule: str = "cosine"
    max_steps: int = 8000
    seed: int = 0
    test_points: int = 50_000
    output_dir: str = "runs"
    record_wall_time: bool = False

    def train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon_adam=self.epsilon_adam,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lambda_periodic=self.lambda_periodic,
            boundary_pairs=self.boundary_pairs,
            pairs_per_step=self.pairs_per_step,
            lr_schedule=self.lr_schedule,
            max_steps=self.max_steps,
            seed=self.seed,
        )


@dataclass(frozen=True)
class SweepConfig:
    base: InstanceConfig
    scheme: str
    grid: tuple
    seeds: tuple = (0, 1, 2)
    tau_fixed: float | None = None
    T_fixed: float | None = None

    def instances(self):
        """(N, tau, T) for every grid point."""
        out = []
        for N in self.grid:
            if self.scheme == "A":
                out.append((N, self.tau_fixed, N * self.tau_fixed))
            else:
                out.append((N, self.T_fixed / N, self.T_fixed))
        return out


_INSTANCE_FIELDS = {f.name: f for f in fields(InstanceConfig)}
_SWEEP_KEYS = {"scheme", "grid", "seeds", "tau", "T"}


def _is_multiple(value, unit):
    ratio = value / unit
    return round(ratio) >= 1 and abs(ratio - round(ratio)) <= _REL_TOL * ratio


def _coerce(key, value):
    kind = _INSTANCE_FIELDS[key].type
    try:
        if key == "x0":
            return None if value is None else tuple(float(v) for v in value)
        if key == "model_params":
            if not isinstance(value, dict):
                raise TypeError
            return dict(value)
        if value is None and kind.endswith("| None"):
            return None
        if kind == "bool":
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind == "str":
            if not isinstance(value, str):
                raise TypeError
            return value
        if isinstance(value, (bool, str)):
            raise TypeError
        if kind == "int":
            if float(value) != int(value):
                raise TypeError
            return int(value)
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {key!r}: {value!r}", key=key) from None


def validate_instance(cfg, need_instance=True):
    """Raise ConfigError naming the offending key."""
    if cfg.model not in ("example", "constant"):
        raise ConfigError(f"unknown model {cfg.model!r}", key="model")
    try:
        model = make_model(cfg.model, cfg.model_params)
    except InvalidInputError as exc:
        raise ConfigError(str(exc), key="model_params") from None
    if cfg.x0 is not None and len(cfg.x0) != model.d:
        raise ConfigError(f"x0 must have {model.d} components", key="x0")
    if not 0 < cfg.tau0 <= 1:
        raise ConfigError("tau0 must lie in (0, 1]", key="tau0")
    if not cfg.T0 >= cfg.tau0:
        raise ConfigError("T0 must be at least tau0", key="T0")
    if cfg.sizing not in ("theory", "explicit"):
        raise ConfigError("sizing must be 'theory' or 'explicit'", key="sizing")
    if cfg.hidden_dim < 1:
        raise ConfigError("hidden_dim must be positive", key="hidden_dim")
    if cfg.num_residual_blocks < 0:
        raise ConfigError("num_residual_blocks must be nonnegative", key="num_residual_blocks")
    if cfg.test_points < 1:
        raise ConfigError("test_points must be positive", key="test_points")
    try:
        cfg.train_config()
    except InvalidInputError as exc:
        raise ConfigError(str(exc), key="train") from None
    if need_instance:
        if cfg.tau is None:
            raise ConfigError("tau is required", key="tau")
        if cfg.T is None:
            raise ConfigError("T is required", key="T")
        check_instance(cfg, cfg.tau, cfg.T)
    return cfg


def check_instance(cfg, tau, T):
    if not tau > 0 or not _is_multiple(tau, cfg.tau0):
        raise ConfigError(f"tau={tau!r} is not a positive multiple of tau0={cfg.tau0!r}", key="tau")
    if T > cfg.T0 * (1 + _REL_TOL):
        raise ConfigError(f"T={T!r} exceeds the master horizon T0={cfg.T0!r}", key="T")
    if T < tau * (1 - _REL_TOL):
        raise ConfigError("T must be at least tau", key="T")


def instance_from_dict(data, need_instance=True):
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    for key in data:
        if key not in _INSTANCE_FIELDS:
            raise ConfigError(f"unknown configuration key {key!r}", key=key)
    values = {k: _coerce(k, v) for k, v in data.items()}
    return validate_instance(InstanceConfig(**values), need_instance)


def sweep_from_dict(data):
    data = dict(data)
    opts = data.pop("sweep")
    if not isinstance(opts, dict):
        raise ConfigError("'sweep' must be an object", key="sweep")
    for key in opts:
        if key not in _SWEEP_KEYS:
            raise ConfigError(f"unknown sweep key {key!r}", key=f"sweep.{key}")
    base = instance_from_dict(data, need_instance=False)
    scheme = opts.get("scheme", "A")
    if scheme not in ("A", "B"):
        raise ConfigError("scheme must be 'A' or 'B'", key="sweep.scheme")
    try:
        grid = tuple(int(n) for n in opts.get("grid", (1000, 3000, 10000, 30000, 100000)))
        seeds = tuple(int(s) for s in opts.get("seeds", (0, 1, 2)))
    except (TypeError, ValueError):
        raise ConfigError("grid and seeds must be lists of integers", key="sweep.grid") from None
    tau_fixed = float(opts.get("tau", base.tau if base.tau is not None else 1e-3))
    T_fixed = float(opts.get("T", base.T if base.T is not None else 50.0))
    return validate_sweep(SweepConfig(base, scheme, grid, seeds,
                                      tau_fixed if scheme == "A" else None,
                                      T_fixed if scheme == "B" else None))


def validate_sweep(sc):
    """Reject unsatisfiable sweeps before anything runs."""
    if not sc.grid:
        raise ConfigError("grid must not be empty", key="sweep.grid")
    if list(sc.grid) != sorted(sc.grid) or len(set(sc.grid)) != len(sc.grid) or sc.grid[0] < 1:
        raise ConfigError("grid must be strictly ascending positive integers", key="sweep.grid")
    if not sc.seeds:
        raise ConfigError("seeds must not be empty", key="sweep.seeds")
    for N, tau, T in sc.instances():
        try:
            check_instance(sc.base, tau, T)
        except ConfigError as exc:
            raise ConfigError(f"grid point N={N}: {exc}", key=f"sweep.{exc.key}") from None
    return sc


def parse_config(path_or_dict):
    """Load an InstanceConfig, or a SweepConfig when a ``sweep`` section is present."""
    if isinstance(path_or_dict, dict):
        data = path_or_dict
    else:
        path = Path(path_or_dict)
        if not path.exists():
            raise ConfigError(f"configuration file {str(path)!r} not found", key="config")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})", key="config") from None
    if isinstance(data, dict) and "sweep" in data:
        return sweep_from_dict(data)
    return instance_from_dict(data)


def config_to_dict(cfg):
    """JSON-ready dict that :func:`parse_config` maps back to an equal config."""
    if isinstance(cfg, SweepConfig):
        out = config_to_dict(cfg.base)
        opts = {"scheme": cfg.scheme, "grid": list(cfg.grid), "seeds": list(cfg.seeds)}
        if cfg.scheme == "A":
            opts["tau"] = cfg.tau_fixed
        else:
            opts["T"] = cfg.T_fixed
        out["sweep"] = opts
        return out
    out = asdict(cfg)
    if out["x0"] is not None:
        out["x0"] = list(out["x0"])
    return out


# -- running ---------------------------------------------------------------

def _x0(cfg, model):
    return np.zeros(model.d) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)


def master_trajectory(cfg, cache=None):
    """Simulate (or fetch from ``cache``) the shared master trajectory."""
    key = (cfg.model, json.dumps(cfg.model_params, sort_keys=True), cfg.x0,
           cfg.tau0, cfg.T0, cfg.master_seed)
    if cache is not None and key in cache:
        return cache[key]
    model = make_model(cfg.model, cfg.model_params)
    traj = simulate(model, _x0(cfg, model), cfg.tau0, cfg.T0, cfg.master_seed)
    if cache is not None:
        cache[key] = traj
    return traj


def make_test_points(cfg, model=None):
    """Shared test points drawn from the stationary law of the wrapped process.

    Both built-in models have the uniform law on the torus as stationary
    distribution, so points are sampled uniformly. Other models draw
    points at random from an independent trajectory after burn-in.
    """
    model = model or make_model(cfg.model, cfg.model_params)
    uniform_seed, traj_seed, pick_seed = derive_seeds([cfg.master_seed, 0x7E57], 3)
    if cfg.model in ("example", "constant"):
        return np.random.default_rng(uniform_seed).random((cfg.test_points, model.d))
    traj = simulate(model, _x0(cfg, model), cfg.tau0, cfg.T0, traj_seed)
    pts = wrap(traj.points[int(BURN_IN * len(traj.points)):])
    pick = np.random.default_rng(pick_seed).choice(len(pts), cfg.test_points, replace=False)
    return pts[pick]


def _archs(cfg, model):
    if cfg.sizing == "explicit":
        d = model.d
        return (torus_arch(d, d, cfg.hidden_dim, cfg.num_residual_blocks),
                torus_arch(d, packed_size(d), cfg.hidden_dim, cfg.num_residual_blocks))
    return None, None


def default_fit(obs, cfg, model):
    drift_arch, diffusion_arch = _archs(cfg, model)
    return run_algorithm1(obs, drift_arch, diffusion_arch, cfg.train_config(),
                          seed=cfg.seed, smoothness=cfg.smoothness)


def _stage_of(exc, default):
    sub = getattr(exc, "stage", None)
    return f"{default}:{sub}" if sub and sub != default else default


def _metrics(estimator, model, points):
    from .estimation import evaluate_population_loss

    drift = evaluate_population_loss(estimator.drift, model, points, "drift")
    diffusion = evaluate_population_loss(estimator.diffusion, model, points, "diffusion")
    d_hat = np.asarray(estimator.diffusion(points))[:, 0, 0]
    d_true = model.diffusion(points)[:, 0, 0]
    f_err = float(np.mean((np.sqrt(2.0 * np.clip(d_hat, 0.0, None)) - np.sqrt(2.0 * d_true)) ** 2))
    return drift, diffusion, f_err


def run_instance(cfg, scheme="single", cache=None, test_points=None, fit=None,
                 keep_estimator=None):
    """Simulate or reuse the master path, sub-sample, fit both stages, score.

    Returns one result row (a dict keyed by :data:`CSV_COLUMNS`). Failures
    do not raise; the row carries ``status = "failed:<stage>"`` and NaN
    metrics. ``fit(obs, cfg, model)`` replaces training (e.g. with the
    true fields).
    """
    fit = fit or default_fit
    start = time.perf_counter()
    row = {"scheme": scheme, "N": None, "tau": cfg.tau, "T": cfg.T, "seed": cfg.seed,
           "drift_loss": math.nan, "diffusion_loss": math.nan,
           "f_recovery_error": math.nan, "wall_time_s": 0.0, "status": "ok"}
    stage = "config"
    try:
        validate_instance(cfg)
        model = make_model(cfg.model, cfg.model_params)
        row["N"] = step_count(cfg.T, cfg.tau)
        stage = "simulate"
        traj = master_trajectory(cfg, cache)
        stage = "subsample"
        obs = subsample(traj, cfg.tau, cfg.T)
        row["N"] = obs.N
        stage = "train"
        estimator = fit(obs, cfg, model)
        if keep_estimator is not None:
            keep_estimator.append(estimator)
        stage = "evaluate"
        points = make_test_points(cfg, model) if test_points is None else test_points
        row["drift_loss"], row["diffusion_loss"], row["f_recovery_error"] = _metrics(
            estimator, model, points)
    except (TorusDiffError, FloatingPointError, ValueError) as exc:
        row["status"] = f"failed:{_stage_of(exc, stage)}"
        row["error"] = str(exc)
    elapsed = time.perf_counter() - start
    row["elapsed_s"] = elapsed
    if cfg.record_wall_time:
        row["wall_time_s"] = elapsed
    return row


@dataclass
class SweepResult:
    rows: list
    scheme: str = "A"
    config: dict | None = None

    def aggregate(self, metric="diffusion_loss"):
        """Per-N mean and 95% Student-t interval over seeds (successful rows only)."""
        grid = sorted({r["N"] for r in self.rows if r["N"] is not None})
        N, mean, lo, hi, count = [], [], [], [], []
        for n in grid:
            vals = np.array([r[metric] for r in self.rows
                             if r["N"] == n and r["status"] == "ok"], dtype=float)
            if vals.size == 0:
                continue
            m = float(vals.mean())
            if vals.size > 1:
                half = float(stats.t.ppf(0.975, vals.size - 1) * vals.std(ddof=1) / math.sqrt(vals.size))
            else:
                half = 0.0
            N.append(n)
            mean.append(m)
            lo.append(m - half)
            hi.append(m + half)
            count.append(int(vals.size))
        return {"N": N, "mean": mean, "ci_low": lo, "ci_high": hi, "count": count}

    def rate(self, metric="diffusion_loss"):
        """Slope fitted on the longest strictly decreasing prefix of the mean curve."""
        agg = self.aggregate(metric)
        k = decreasing_prefix(agg["mean"])
        if k < 2 or min(agg["mean"][:k]) <= 0:
            return {"slope": None, "intercept": None, "segment": [0, k]}
        slope, intercept = fit_rate(list(zip(agg["N"], agg["mean"])), (0, k))
        return {"slope": slope, "intercept": intercept, "segment": [0, k]}


def sweep(scheme, grid, seeds, base, tau_fixed=None, T_fixed=None, cache=None, fit=None,
          progress=None):
    """Run every grid point for every seed and collect the rows.

    Scheme ``A`` uses ``tau = tau_fixed`` and ``T = N tau``; scheme ``B``
    uses ``T = T_fixed`` and ``tau = T / N``. The whole grid is validated
    before the first instance runs.
    """
    if scheme == "A" and tau_fixed is None:
        tau_fixed = base.tau if base.tau is not None else 1e-3
    if scheme == "B" and T_fixed is None:
        T_fixed = base.T if base.T is not None else 50.0
    if scheme not in ("A", "B"):
        raise ConfigError("scheme must be 'A' or 'B'", key="scheme")
    sc = validate_sweep(SweepConfig(base, scheme, tuple(int(n) for n in grid),
                                    tuple(int(s) for s in seeds),
                                    tau_fixed if scheme == "A" else None,
                                    T_fixed if scheme == "B" else None))
    cache = {} if cache is None else cache
    model = make_model(base.model, base.model_params)
    points = make_test_points(base, model)
    rows = []
    for N, tau, T in sc.instances():
        for seed in sc.seeds:
            cfg = replace(base, tau=tau, T=T, seed=seed)
            row = run_instance(cfg, scheme, cache, points, fit)
            rows.append(row)
            if progress is not None:
                progress(row)
    rows.sort(key=lambda r: (r["N"], r["seed"]))
    return SweepResult(rows, scheme, config_to_dict(sc))


def fit_rate(points, segment=None):
    """Least-squares line through ``(log N, log error)``; returns ``(slope, intercept)``.

    ``segment`` is a ``(start, stop)`` slice of ``points``.
    """
    pts = list(points)
    if segment is not None:
        pts = pts[segment[0] : segment[1]]
    if len(pts) < 2:
        raise InvalidInputError("fit_rate needs at least two points")
    N = np.array([p[0] for p in pts], dtype=float)
    err = np.array([p[1] for p in pts], dtype=float)
    if np.any(N <= 0) or np.any(~(err > 0)):
        raise InvalidInputError("fit_rate needs positive N and positive errors")
    slope, intercept = np.polyfit(np.log(N), np.log(err), 1)
    return float(slope), float(intercept)


def decreasing_prefix(values):
    """Length of the longest prefix over which ``values`` strictly decreases."""
    if len(values) == 0:
        return 0
    k = 1
    while k < len(values) and values[k] < values[k - 1]:
        k += 1
    return k


# -- output ----------------------------------------------------------------

def _fmt(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def format_csv(rows):
    lines = [",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(r[c] if r[c] is not None else math.nan) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def read_sweep_csv(path):
    """Parse a ``sweep.csv`` back into row dicts with native types."""
    lines = Path(path).read_text().splitlines()
    header = tuple(lines[0].split(","))
    if header != CSV_COLUMNS:
        raise InvalidInputError(f"unexpected sweep.csv header {lines[0]!r}")
    rows = []
    for line in lines[1:]:
        cells = dict(zip(header, line.split(",")))
        row = {"scheme": cells["scheme"], "status": cells["status"]}
        for key in ("N", "seed"):
            row[key] = int(cells[key])
        for key in ("tau", "T", "drift_loss", "diffusion_loss", "f_recovery_error", "wall_time_s"):
            row[key] = float(cells[key])
        rows.append(row)
    return rows


def emit_outputs(result, directory):
    """Write ``sweep.csv``, ``summary.json`` and ``rate_plot.svg`` into ``directory``."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / "sweep.csv"
        csv_path.write_text(format_csv(result.rows), newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write outputs to {str(directory)!r}: {exc}") from exc

    aggregates = {m: result.aggregate(m) for m in METRICS}
    rates = {}
    for m in METRICS:
        try:
            rates[m] = result.rate(m)
        except InvalidInputError:
            rates[m] = {"slope": None, "intercept": None, "segment": [0, 0]}
    summary = {
        "scheme": result.scheme,
        "config": result.config,
        "aggregates": aggregates,
        "rate_fit": rates,
        "failed_rows": [
            {k: r.get(k) for k in ("N", "seed", "status", "error")}
            for r in result.rows if r["status"] != "ok"
        ],
        "timings_s": [
            {"N": r["N"], "seed": r["seed"], "elapsed_s": r.get("elapsed_s")} for r in result.rows
        ],
    }
    (directory / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")

    plot_data = {m: (a["N"], a["mean"], a["ci_low"], a["ci_high"])
                 for m, a in aggregates.items() if a["N"]}
    title = f"scheme {result.scheme}"
    plotting.rate_plot(plot_data, directory / "rate_plot.svg", title=title)
    return {"csv": csv_path, "summary": directory / "summary.json",
            "plot": directory / "rate_plot.svg"}
