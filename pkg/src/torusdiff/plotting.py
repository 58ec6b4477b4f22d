"""Static figures for sweep and diagnostics reports.

Figures are written straight to files with the non-interactive Agg
backend. Every plotted series carries an SVG ``gid`` so report files can
be checked structurally.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRIC_LABELS = {
    "drift_loss": r"drift  $E|\hat b - b|^2$",
    "diffusion_loss": r"diffusion  $E|\hat D - D|_F^2$",
    "f_recovery_error": r"$f$ recovery  $E(\sqrt{2\hat D_{11}} - f)^2$",
}

STYLE = {
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "lines.linewidth": 1.4,
    "lines.markersize": 5,
    "figure.dpi": 100,
    "svg.hashsalt": "torusdiff",
    "svg.fonttype": "none",
}


def _save(fig, path):
    fig.savefig(path, bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    return path


def rate_plot(aggregates, path, reference_slope=-1.0, title=None):
    """Log-log error against N with CI whiskers and an ``N^-1`` reference line.

    ``aggregates`` maps a metric name to ``(N, mean, ci_low, ci_high)``
    arrays.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.2, 4.0))
        anchor = None
        for metric, (N, mean, lo, hi) in aggregates.items():
            N = np.asarray(N, dtype=float)
            mean = np.asarray(mean, dtype=float)
            ok = mean > 0
            if not ok.any():
                continue
            err = np.vstack([mean - np.asarray(lo), np.asarray(hi) - mean])
            err = np.clip(err, 0.0, None)
            (line,) = ax.plot(N[ok], mean[ok], marker="o",
                              label=METRIC_LABELS.get(metric, metric))
            line.set_gid(f"metric-{metric}")
            bars = ax.errorbar(N[ok], mean[ok], yerr=err[:, ok], fmt="none",
                               ecolor=line.get_color(), capsize=3, lw=1)
            for artist in bars.lines[2]:
                artist.set_gid(f"ci-{metric}")
            if metric == "diffusion_loss" or anchor is None:
                anchor = (N[ok][0], mean[ok][0])
        if anchor is not None:
            span = np.array([min(a[0][0] for a in aggregates.values()),
                             max(a[0][-1] for a in aggregates.values())], dtype=float)
            ref = anchor[1] * (span / anchor[0]) ** reference_slope
            (line,) = ax.plot(span, ref, color="red", ls="--", lw=1,
                              label=rf"reference $N^{{{reference_slope:g}}}$")
            line.set_gid("reference-line")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("N (number of increments)")
        ax.set_ylabel("test error")
        if title:
            ax.set_title(title)
        ax.grid(True, which="major", alpha=0.3)
        if anchor is not None:
            ax.legend(loc="best")
        return _save(fig, path)


def autocorrelation_plot(report, path):
    """Autocorrelation against model time with the fitted exponential."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.2, 3.6))
        t = report.lags * report.tau
        (line,) = ax.plot(t, report.values, label="empirical")
        line.set_gid("acf")
        if report.fitted_rate > 0:
            (fit,) = ax.plot(t, np.exp(-report.fitted_rate * t), ls="--",
                             label=f"exp(-{report.fitted_rate:.3g} t)")
            fit.set_gid("acf-fit")
        ax.axhline(0.0, color="0.6", lw=0.8)
        ax.set_xlabel("lag (model time)")
        ax.set_ylabel("autocorrelation")
        ax.legend(loc="best")
        return _save(fig, path)
