"""Static SVG figures for benchmark and scaling runs (matplotlib, optional)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .simenv import METHODS, BenchmarkResult, ScalingResult

# no creation date in the file, so identical data renders identical SVG
_SVG_META = {"Date": None}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "featsel"
    return plt


def available() -> bool:
    try:
        _pyplot()
    except ImportError:
        return False
    return True


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    return path


def benchmark_figures(result: BenchmarkResult, out_dir) -> list[Path]:
    """Measure trace, estimation-error trace and CPU-ratio CDF."""
    plt = _pyplot()
    out_dir = Path(out_dir)
    horizons = np.array([r.horizon for r in result.records])
    paths = []

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(horizons, [r.rho_theta for r in result.records], "k:", label="all candidates")
    for m in METHODS:
        ax.plot(horizons, result.series("rho", m), label=m)
    ax.set_xlabel("horizon")
    ax.set_ylabel(result.config.measure)
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    paths.append(_save(fig, out_dir / "measure_trace.svg"))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 3.5))
    for m in METHODS:
        ax.plot(horizons, result.series("theta", m), label=m)
    ax.set_xlabel("horizon")
    ax.set_ylabel("theta")
    ax.legend()
    fig.tight_layout()
    paths.append(_save(fig, out_dir / "theta_trace.svg"))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for m in ("leverage", "uniform"):
        k, p = result.kappa_cdf(m)
        ax.step(k, p, where="post", label=m)
    ax.set_xscale("log")
    ax.set_xlabel("kappa (time / greedy time)")
    ax.set_ylabel("CDF")
    ax.legend()
    fig.tight_layout()
    paths.append(_save(fig, out_dir / "kappa_cdf.svg"))
    plt.close(fig)
    return paths


def scaling_figure(result: ScalingResult, path) -> Path:
    plt = _pyplot()
    ns = [r.N for r in result.rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for m in ("leverage", "greedy"):
        label = m if m not in result.slopes else f"{m} (slope {result.slopes[m]:.2f})"
        ax.loglog(ns, [getattr(r, m) for r in result.rows], "o-", label=label)
    ax.set_xlabel("N")
    ax.set_ylabel("median selection time [s]")
    ax.legend()
    fig.tight_layout()
    out = _save(fig, Path(path))
    plt.close(fig)
    return out
