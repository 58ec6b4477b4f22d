"""Empirical ergodicity and mixing checks on an observed trajectory.

Mixing coefficients themselves are not estimable from a single path
without density estimation; the decay of autocorrelations of fixed
observables is used as a surrogate.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, UndefinedCorrelationError
from .torus import wrap

__all__ = [
    "AutocorrelationReport",
    "BlockSplit",
    "StationarityReport",
    "QuadraticVariationProbe",
    "autocorrelation",
    "block_split",
    "block_dependence_profile",
    "stationarity_test",
    "quadratic_variation_probe",
    "write_reports",
]

FIT_THRESHOLD = 0.02


@dataclass(frozen=True)
class AutocorrelationReport:
    lags: np.ndarray
    values: np.ndarray
    tau: float
    fitted_rate: float
    fit_quality: float
    fit_lags: int


def _series(obs, observable):
    return np.asarray(observable(wrap(obs.positions)), dtype=float).reshape(-1)


def _normalised_acf(g, max_lag):
    c = g - g.mean()
    denom = float(np.dot(c, c))
    if denom == 0.0 or not math.isfinite(denom):
        raise UndefinedCorrelationError("observable is constant along the trajectory")
    n = len(c)
    size = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(c, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1]
    values = acov / denom
    values[0] = 1.0
    return values


def autocorrelation(obs, observable, max_lag):
    """Normalised autocorrelation of ``observable(wrap(x_k))`` at lags ``0..max_lag``.

    An exponential ``exp(-rate * lag * tau)`` is fitted by least squares to
    ``log|value|`` over the leading run of lags with ``|value| > 0.02``;
    ``fit_quality`` is the coefficient of determination of that fit.
    """
    g = _series(obs, observable)
    if max_lag < 1 or max_lag >= obs.N / 4:
        raise InvalidInputError("max_lag must satisfy 1 <= max_lag < N/4")
    values = _normalised_acf(g, max_lag)
    lags = np.arange(max_lag + 1)

    below = np.flatnonzero(np.abs(values) <= FIT_THRESHOLD)
    stop = int(below[0]) if below.size else max_lag + 1
    rate, r2 = 0.0, 0.0
    if stop >= 3:
        t = lags[:stop] * obs.tau
        y = np.log(np.abs(values[:stop]))
        slope, intercept = np.polyfit(t, y, 1)
        resid = y - (slope * t + intercept)
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0
        rate = max(0.0, -float(slope))
    return AutocorrelationReport(lags, values, obs.tau, rate, r2, stop)


@dataclass(frozen=True)
class BlockSplit:
    l: int
    n: int
    blocks: np.ndarray  # shape (l, n); row a holds indices k*l + a
    dropped: int


def _split(N, l):
    if l < 1 or l > N:
        raise InvalidInputError(f"block count l={l} must lie in [1, N={N}]")
    n = N // l
    idx = np.arange(n * l).reshape(n, l).T
    return BlockSplit(l=l, n=n, blocks=idx, dropped=N - n * l)


def block_split(obs, l):
    """Interleaved sub-sequences ``(a, a+l, a+2l, ...)`` of the indices ``0..N-1``.

    A tail of ``N mod l`` indices is dropped and reported in ``dropped``.
    """
    return _split(obs.N, l)


def _lag1(x):
    c = x - x.mean()
    denom = float(np.dot(c, c))
    if denom == 0.0:
        raise UndefinedCorrelationError("observable is constant within a block")
    return float(np.dot(c[:-1], c[1:])) / denom


def block_dependence_profile(obs, observable, l_values):
    """Mean lag-1 autocorrelation inside the blocks of :func:`block_split`, per ``l``."""
    g = _series(obs, observable)[:-1]
    profile = {}
    for l in l_values:
        split = _split(obs.N, int(l))
        if split.n < 2:
            raise InvalidInputError(f"blocks for l={l} hold fewer than two samples")
        profile[int(l)] = float(np.mean([_lag1(g[row]) for row in split.blocks]))
    return profile


@dataclass(frozen=True)
class StationarityReport:
    counts: np.ndarray
    expected: float
    max_relative_deviation: float
    chi_square: float
    dof: int


def stationarity_test(obs, bins_per_axis):
    """Histogram the wrapped positions on a uniform grid and compare with a flat law."""
    if bins_per_axis < 2:
        raise InvalidInputError("bins_per_axis must be at least 2")
    pos = obs.positions if hasattr(obs, "positions") else np.asarray(obs, dtype=float)
    x = wrap(pos)
    d = x.shape[1]
    cells = np.minimum((x * bins_per_axis).astype(np.int64), bins_per_axis - 1)
    flat = np.ravel_multi_index(cells.T, (bins_per_axis,) * d)
    counts = np.bincount(flat, minlength=bins_per_axis**d).reshape((bins_per_axis,) * d)
    expected = len(x) / bins_per_axis**d
    dev = float(np.max(np.abs(counts / expected - 1.0)))
    chi2 = float(np.sum((counts - expected) ** 2) / expected)
    return StationarityReport(counts, expected, dev, chi2, bins_per_axis**d - 1)


@dataclass(frozen=True)
class QuadraticVariationProbe:
    discrepancy: float
    standard_error: float
    mean_target: np.ndarray
    mean_diffusion: np.ndarray


def quadratic_variation_probe(obs, model):
    """Frobenius gap between the mean of ``dx dx^T / (2 tau)`` and the mean of ``D``.

    ``standard_error`` combines the per-entry standard errors of the mean
    target, treating increments as independent.
    """
    if obs.N < 100:
        raise InvalidInputError("quadratic_variation_probe needs N >= 100")
    dx = obs.increments
    targets = dx[:, :, None] * dx[:, None, :] / (2.0 * obs.tau)
    mean_target = targets.mean(axis=0)
    mean_d = model.diffusion(wrap(obs.positions[:-1])).mean(axis=0)
    gap = mean_target - mean_d
    se = np.sqrt(np.sum(targets.var(axis=0, ddof=1) / obs.N))
    return QuadraticVariationProbe(float(np.linalg.norm(gap)), float(se), mean_target, mean_d)


def write_reports(directory, acf=None, profile=None, stationarity=None, qv=None):
    """CSV tables (``lag,value`` and ``bin,count``) plus ``diagnostics.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    summary = {}
    if acf is not None:
        rows = "".join(f"{k},{v:.17g}\n" for k, v in zip(acf.lags, acf.values))
        (directory / "autocorrelation.csv").write_text("lag,value\n" + rows)
        summary["autocorrelation"] = {
            "tau": acf.tau,
            "fitted_rate": acf.fitted_rate,
            "fit_quality": acf.fit_quality,
            "fit_lags": acf.fit_lags,
        }
    if profile is not None:
        summary["block_dependence_profile"] = {str(k): v for k, v in profile.items()}
    if stationarity is not None:
        counts = stationarity.counts.ravel()
        rows = "".join(f"{i},{c}\n" for i, c in enumerate(counts))
        (directory / "histogram.csv").write_text("bin,count\n" + rows)
        summary["stationarity"] = {
            "expected": stationarity.expected,
            "max_relative_deviation": stationarity.max_relative_deviation,
            "chi_square": stationarity.chi_square,
            "dof": stationarity.dof,
        }
    if qv is not None:
        summary["quadratic_variation"] = {
            "discrepancy": qv.discrepancy,
            "standard_error": qv.standard_error,
        }
    (directory / "diagnostics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
