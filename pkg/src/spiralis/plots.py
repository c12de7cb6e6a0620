"""Static SVG figures: the curve with junction dots and time plots of the solution."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .serialize import atomic_write  # noqa: E402

TIME_SERIES = ("u", "kappa", "lambda4", "mu1", "mu2")


def _save(fig, path: Path) -> None:
    with atomic_write(path, "wb") as fh:
        fig.savefig(fh, format="svg")
    plt.close(fig)


def plot_curve(path, x, y, junctions: Sequence[int], title: Optional[str] = None) -> int:
    """Draw the planar curve and mark its junctions; returns the number of dots."""
    x, y = np.asarray(x), np.asarray(y)
    if len(x) == 0:
        raise ValueError("empty trajectory")
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(x, y, color="tab:blue", lw=1.5)
    ax.plot(x[[0, -1]], y[[0, -1]], "s", color="black", ms=5, gid="endpoints")
    j = np.asarray(list(junctions), dtype=int)
    if len(j):
        ax.plot(x[j], y[j], "o", color="tab:red", ms=5, gid="junctions")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    _save(fig, Path(path))
    return len(j)


def plot_series(path, t, series: Dict[str, np.ndarray], junctions: Sequence[int] = ()) -> None:
    """One stacked panel per series against arc length, junctions as vertical lines."""
    t = np.asarray(t)
    if len(t) == 0:
        raise ValueError("empty trajectory")
    fig, axes = plt.subplots(len(series), 1, figsize=(6, 1.8 * len(series)), sharex=True)
    axes = np.atleast_1d(axes)
    for ax, (name, vals) in zip(axes, series.items()):
        v = np.asarray(vals)
        if name == "u":
            ax.step(t, v, where="post", lw=1.2)
        else:
            ax.plot(t, v, lw=1.2)
        for j in junctions:
            ax.axvline(t[j], color="0.7", lw=0.6, ls=":")
        ax.set_ylabel(name)
    axes[-1].set_xlabel("t")
    fig.tight_layout()
    _save(fig, Path(path))


def plot_solution(out_dir, loaded) -> Dict[str, Path]:
    """Render ``curve.svg`` and ``series.svg`` from a loaded solution."""
    out = Path(out_dir)
    if loaded.table.shape[0] == 0:
        raise ValueError("empty trajectory")
    junctions = loaded.data.get("junctions", [])
    title = f"b = {loaded.data['b']:.12g}"
    if loaded.data.get("structure"):
        title += f"   [{loaded.data['structure']}]"
    plot_curve(out / "curve.svg", loaded.column("x"), loaded.column("y"), junctions, title)
    plot_series(out / "series.svg", loaded.column("t"),
                {name: loaded.column(name) for name in TIME_SERIES}, junctions)
    return {"curve": out / "curve.svg", "series": out / "series.svg"}
