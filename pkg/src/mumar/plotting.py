"""Report figures written straight to files (non-interactive backend)."""
from __future__ import annotations

from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .registration import RegistrationReport  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_error_trace(report: RegistrationReport, path) -> None:
    """Per-window initial and final plane-alignment error (rotation and translation)."""
    fig, (ax_r, ax_t) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    if report.windows:
        start = [w.window[0] for w in report.windows]
        r0 = [w.errors[0][0] for w in report.windows]
        r1 = [w.errors[-1][0] for w in report.windows]
        t0 = [w.errors[0][1] for w in report.windows]
        t1 = [w.errors[-1][1] for w in report.windows]
        ax_r.plot(start, r0, color="0.6", lw=1, label="initial")
        ax_r.plot(start, r1, color="C0", lw=1.5, label="converged")
        ax_t.plot(start, t0, color="0.6", lw=1)
        ax_t.plot(start, t1, color="C1", lw=1.5)
        ax_r.legend(frameon=False, fontsize=8)
    ax_r.set_ylabel("rotation error")
    ax_t.set_ylabel("translation error")
    ax_t.set_xlabel("window start view")
    for ax in (ax_r, ax_t):
        ax.set_yscale("symlog", linthresh=1e-6)
        ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    _save(fig, path)


def plot_benchmark(report: List[dict], path, stat: str = "mean") -> None:
    """Grouped bars of one distance statistic per object and noise level."""
    groups = sorted({(r["object"], r["sigma"]) for r in report})
    methods = sorted({r["method"] for r in report})
    lookup = {(r["method"], r["object"], r["sigma"]): r[stat] for r in report}
    x = np.arange(len(groups))
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(groups)), 3.5))
    for k, m in enumerate(methods):
        vals = [lookup.get((m, o, s), np.nan) for o, s in groups]
        ax.bar(x + (k - (len(methods) - 1) / 2) * width, vals, width, label=m)
    ax.set_xticks(x)
    ax.set_xticklabels([f"{o}\nσ={s:g}" for o, s in groups], fontsize=8)
    ax.set_ylabel(f"{stat} distance")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    _save(fig, path)


def plot_distance_histogram(distances: Sequence[float], path, bins: int = 60,
                            label: str = "") -> None:
    d = np.asarray(distances, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(d, bins=bins, color="C0", alpha=0.85)
    ax.axvline(d.mean(), color="k", lw=1, ls="--", label=f"mean {d.mean():.3g}")
    ax.set_xlabel("distance to reference")
    ax.set_ylabel("points")
    if label:
        ax.set_title(label, fontsize=9)
    ax.legend(frameon=False, fontsize=8)
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    _save(fig, path)


def distance_colours(distances: Sequence[float], vmax: float = None) -> np.ndarray:
    """Map distances to 8-bit RGB with a perceptual colormap (0 -> vmax)."""
    d = np.asarray(distances, dtype=float)
    top = vmax if vmax is not None else (d.max() if len(d) and d.max() > 0 else 1.0)
    rgba = matplotlib.colormaps["viridis"](np.clip(d / top, 0.0, 1.0))
    return np.round(rgba[:, :3] * 255).astype(np.uint8)
