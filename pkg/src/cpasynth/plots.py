"""Plot data and SVG rendering for the mesh/attraction-set and time-series figures."""
from __future__ import annotations

import csv
import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402

plt.rcParams["svg.hashsalt"] = "cpasynth"


def _svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def mesh_svg(cert, states) -> str:
    T = cert.T
    fig, ax = plt.subplots(figsize=(5, 5))
    edges = set()
    for ids in T.simplices.tolist():
        for a in range(3):
            for b in range(a + 1, 3):
                edges.add((min(ids[a], ids[b]), max(ids[a], ids[b])))
    segs = [T.vertices[[a, b]] for a, b in sorted(edges)]
    ax.add_collection(LineCollection(segs, colors="0.7", linewidths=0.4))
    hull = states.vertices
    order = _angular_order(hull)
    poly = hull[order + [order[0]]]
    ax.plot(poly[:, 0], poly[:, 1], color="k", lw=1.0, label="state set")
    for k, curve in enumerate(cert.region.polyline()):
        ax.plot(curve[:, 0], curve[:, 1], color="tab:red", lw=1.5,
                label="attraction set boundary" if k == 0 else None)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=7)
    return _svg(fig)


def _angular_order(points) -> list:
    import numpy as np

    c = points.mean(axis=0)
    ang = np.arctan2(points[:, 1] - c[1], points[:, 0] - c[0])
    return [int(i) for i in np.argsort(ang)]


def timeseries_csv(series: dict) -> str:
    """Long-format table: controller, t, state and input columns."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = None
    for name in sorted(series):
        rows = series[name]
        if not rows:
            continue
        cols = [c for c in rows[0] if c == "t" or c.startswith("x") or c.startswith("u")]
        if header is None:
            header = ["controller"] + cols
            w.writerow(header)
        for r in rows:
            w.writerow([name] + [r[c] for c in cols])
    return buf.getvalue()


def timeseries_svg(series: dict) -> str:
    names = sorted(series)
    first = series[names[0]]
    xcols = [c for c in first[0] if c.startswith("x")]
    ucols = [c for c in first[0] if c.startswith("u")]
    fig, axes = plt.subplots(len(xcols) + len(ucols), 1, figsize=(6, 2 * (len(xcols) + len(ucols))),
                             sharex=True)
    styles = {"cpa": "-", "qp": "--"}
    for ax, col in zip(axes, xcols + ucols):
        for name in names:
            rows = series[name]
            t = [float(r["t"]) for r in rows]
            v = [float(r[col]) for r in rows]
            ax.plot(t, v, styles.get(name, "-"), label=name.upper())
        ax.set_ylabel(col)
        ax.grid(True, lw=0.3)
    axes[0].legend(fontsize=7)
    axes[-1].set_xlabel("t [s]")
    return _svg(fig)
