"""Report artifacts: CSV tables, JSON manifests, and figures.

CSV outputs are deterministic for a fixed config and seed; manifests
carry the config hash, the seed, and runtimes.  Figures are rendered
with the Agg backend so report generation works headless.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "config_hash",
    "write_csv",
    "write_manifest",
    "plot_decay_fits",
    "plot_bound_margins",
    "plot_stokes_parts",
    "plot_rg_step",
    "plot_symbol",
]


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(x):
    if isinstance(x, complex):
        return f"{x.real:.17g}{x.imag:+.17g}j"
    if isinstance(x, float):
        return f"{x:.17g}"
    return x


def write_csv(path: str, header, rows) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])
    return path


def write_manifest(path: str, command: str, config: dict, seed: int,
                   budget: int | None, files, extras: dict | None = None,
                   runtime: float | None = None) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "config": config,
        "seed": seed,
        "budget": budget,
        "files": list(files),
    }
    if extras:
        manifest["extras"] = extras
    if runtime is not None:
        manifest["runtime_seconds"] = round(runtime, 3)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def plot_decay_fits(path: str, fits) -> str:
    """log-error decay curves with their fitted laws, one per kind."""
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    for fit in fits:
        v = np.asarray(fit.grid)
        y = np.asarray(fit.log_errors)
        ax.semilogx(v, y, "o-", label=f"{fit.kind} "
                    f"(p={fit.fitted_exponent:.2f}, r2={fit.r_squared:.3f})")
        dense = np.geomspace(v.min(), v.max(), 100)
        ax.semilogx(dense, -fit.fitted_prefactor
                    * dense ** (-fit.fitted_exponent) + fit.intercept,
                    "--", alpha=0.5)
    ax.set_xlabel("initial coupling v0")
    ax.set_ylabel("log discarded / kept")
    ax.invert_xaxis()
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_bound_margins(path: str, re_an, lower, upper) -> str:
    """Scatter of Re A_n between its lower and upper envelopes, ordered
    by the lower bound."""
    order = np.argsort(lower)
    idx = np.arange(len(order))
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    ax.fill_between(idx, np.asarray(lower)[order], np.asarray(upper)[order],
                    alpha=0.25, label="sandwich")
    ax.plot(idx, np.asarray(re_an)[order], "k.", ms=3, label="Re A_n")
    ax.set_xlabel("sample (sorted by lower bound)")
    ax.set_ylabel("value")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_rg_step(path: str, report: dict, tolerance: float) -> str:
    fig, ax = plt.subplots(figsize=(5.6, 4.2))
    full = report["full"].value
    approx = report["approx"].value
    ax.bar(["full", "approx"], [abs(full), abs(approx)])
    ax.set_ylabel("|integral|")
    ax.set_title(f"rel diff {report['relative_difference']:.2e} "
                 f"(tol {tolerance:.2e})")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_symbol(path: str, momenta, symbol) -> str:
    """Re/Im of the kinetic symbol against the parabolic momentum scale
    k0^2 + |k|^2."""
    momenta = np.asarray(momenta)
    symbol = np.asarray(symbol)
    scale = (momenta**2).sum(axis=1)
    fig, ax = plt.subplots(figsize=(5.6, 4.2))
    ax.plot(scale, symbol.real, "o", ms=4, label="Re")
    ax.plot(scale, symbol.imag, "s", ms=4, label="Im")
    ax.set_xlabel("k0^2 + |k|^2")
    ax.set_ylabel("symbol")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_stokes_parts(path: str, report: dict) -> str:
    names = ["top", "sbot", "annulus", "wall"]
    mags = [abs(report[k].value) for k in names]
    logs = [report[k].log_abs for k in names]
    finite = [l for l in logs if np.isfinite(l)]
    floor = (min(finite) if finite else 0.0) - 20.0
    logs = [l if np.isfinite(l) else floor for l in logs]
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    ax.bar(names, logs)
    for i, m in enumerate(mags):
        ax.text(i, logs[i], f"{m:.2e}", ha="center", va="bottom",
                fontsize=8)
    ax.set_ylabel("log |integral|")
    ax.set_title(f"residual {report['residual']:.2e} "
                 f"(sign {report['sign']:+d})")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
