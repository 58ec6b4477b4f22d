"""Euler-Maruyama simulation in unwrapped coordinates and sub-sampling.

Gaussian draws come from ``numpy.random.default_rng(seed)`` (PCG64 bit
generator, ziggurat normals). Draws are taken in chunks of
``CHUNK_STEPS`` rows of ``r`` standard normals; row ``k`` drives step
``k``, so the output does not depend on the chunk size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InsufficientDataError,
    IntegrationDivergedError,
    InvalidInputError,
    InvalidStrideError,
)

__all__ = [
    "Trajectory",
    "ObservationSet",
    "em_step",
    "simulate",
    "subsample",
    "step_count",
    "save_csv",
    "load_csv",
]

CHUNK_STEPS = 1 << 15
_REL_TOL = 1e-9


def step_count(T, tau):
    """``floor(T / tau)`` that tolerates representation error in the ratio."""
    ratio = T / tau
    nearest = round(ratio)
    if abs(ratio - nearest) <= _REL_TOL * max(1.0, abs(ratio)):
        return int(nearest)
    return int(math.floor(ratio))


@dataclass(frozen=True)
class Trajectory:
    tau0: float
    points: np.ndarray
    seed: int | None = None
    model_name: str = "custom"

    @property
    def d(self):
        return self.points.shape[1]

    @property
    def T0(self):
        return (len(self.points) - 1) * self.tau0


@dataclass(frozen=True)
class ObservationSet:
    """Snapshots ``x_0, x_tau, ..., x_{N tau}`` in raw coordinates."""

    tau: float
    positions: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2:
            raise InvalidInputError("positions must have shape (N+1, d)")
        if not self.tau > 0:
            raise InvalidInputError("tau must be positive")
        object.__setattr__(self, "positions", pos)

    @property
    def N(self):
        return len(self.positions) - 1

    @property
    def d(self):
        return self.positions.shape[1]

    @property
    def T(self):
        return self.N * self.tau

    @property
    def increments(self):
        return np.diff(self.positions, axis=0)

    def drop_burn_in(self, fraction):
        """Discard the leading ``fraction`` of snapshots."""
        if not 0 <= fraction < 1:
            raise InvalidInputError("burn-in fraction must lie in [0, 1)")
        start = int(math.floor(fraction * self.N))
        return ObservationSet(self.tau, self.positions[start:], dict(self.meta))


def em_step(model, x, tau, noise):
    """One Euler-Maruyama step ``x + b(x) tau + Sigma(x) sqrt(tau) noise``."""
    if not tau > 0:
        raise InvalidInputError("tau must be positive")
    x = np.asarray(x, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if noise.shape[-1] != model.r:
        raise InvalidInputError(f"noise must have {model.r} components")
    dw = math.sqrt(tau) * noise
    out = x + model.drift(x) * tau + np.einsum("...ij,...j->...i", model.sigma(x), dw)
    if not np.all(np.isfinite(out)):
        raise IntegrationDivergedError("Euler-Maruyama step produced a non-finite state")
    return out


def simulate(model, x0, tau0, T0, seed):
    """Integrate the model from ``x0`` for ``floor(T0 / tau0)`` steps of size ``tau0``.

    Identical arguments reproduce the output bit for bit.
    """
    if not 0 < tau0 <= 1:
        raise InvalidInputError("tau0 must lie in (0, 1]")
    if not T0 >= tau0 * (1 - _REL_TOL):
        raise InvalidInputError("T0 must be at least tau0")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (model.d,) or not np.all(np.isfinite(x)):
        raise InvalidInputError(f"x0 must be a finite vector of length {model.d}")

    n_steps = step_count(T0, tau0)
    rng = np.random.default_rng(seed)
    sqrt_tau = math.sqrt(tau0)
    drift, sigma = model.drift, model.sigma
    points = np.empty((n_steps + 1, model.d))
    points[0] = x

    for start in range(0, n_steps, CHUNK_STEPS):
        stop = min(start + CHUNK_STEPS, n_steps)
        dw = sqrt_tau * rng.standard_normal((stop - start, model.r))
        for k in range(stop - start):
            x = x + drift(x) * tau0 + sigma(x) @ dw[k]
            points[start + k + 1] = x
        block = points[start + 1 : stop + 1]
        if not np.all(np.isfinite(block)):
            bad = start + int(np.argmax(~np.all(np.isfinite(block), axis=1)))
            raise IntegrationDivergedError(
                f"state became non-finite at step {bad}", step=bad
            )
    return Trajectory(tau0=float(tau0), points=points, seed=seed, model_name=model.name)


def subsample(traj, tau, T):
    """Keep every ``tau / tau0``-th point of ``traj`` up to time ``T``."""
    ratio = tau / traj.tau0
    stride = round(ratio)
    if stride < 1 or abs(ratio - stride) > _REL_TOL * ratio:
        raise InvalidStrideError(
            f"tau={tau!r} is not an integer multiple of tau0={traj.tau0!r}"
        )
    if T < tau * (1 - _REL_TOL):
        raise InvalidInputError("T must be at least tau")
    N = step_count(T, tau)
    available = len(traj.points) - 1
    if N * stride > available:
        raise InsufficientDataError(
            f"T={T!r} exceeds the trajectory horizon {traj.T0!r}"
        )
    positions = traj.points[: N * stride + 1 : stride]
    meta = {"model": traj.model_name, "seed": traj.seed, "tau0": traj.tau0, "stride": stride}
    return ObservationSet(tau=stride * traj.tau0, positions=positions, meta=meta)


def _meta_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save_csv(path, data, *, seed=None, model_name=None, extra=None):
    """Write a Trajectory or ObservationSet as ``t,x1,...,xd`` plus a JSON sidecar."""
    path = Path(path)
    if isinstance(data, Trajectory):
        step, pts = data.tau0, data.points
        meta = {"kind": "trajectory", "tau0": data.tau0, "tau": data.tau0,
                "seed": data.seed, "model": data.model_name}
    else:
        step, pts = data.tau, data.positions
        meta = {"kind": "observations", "tau": data.tau, **data.meta}
    if seed is not None:
        meta["seed"] = seed
    if model_name is not None:
        meta["model"] = model_name
    meta["T"] = (len(pts) - 1) * step
    meta["d"] = pts.shape[1]
    if extra:
        meta.update(extra)
    d = pts.shape[1]
    t = np.arange(len(pts)) * step
    header = ",".join(["t"] + [f"x{i + 1}" for i in range(d)])
    np.savetxt(path, np.column_stack([t, pts]), fmt="%.17g", delimiter=",",
               header=header, comments="")
    _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_csv(path):
    """Load a file written by :func:`save_csv`; returns a Trajectory or ObservationSet."""
    path = Path(path)
    meta = json.loads(_meta_path(path).read_text())
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    pts = arr[:, 1:]
    if meta.get("kind") == "trajectory":
        return Trajectory(tau0=float(meta["tau0"]), points=pts, seed=meta.get("seed"),
                          model_name=meta.get("model", "custom"))
    extra = {k: v for k, v in meta.items() if k not in ("kind", "tau", "T", "d")}
    return ObservationSet(tau=float(meta["tau"]), positions=pts, meta=extra)
