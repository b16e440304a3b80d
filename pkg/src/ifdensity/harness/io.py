"""CSV writers and readers. Floats are written with ``repr`` so files are
byte-identical for identical inputs."""

import csv
import os

import numpy as np


def _fmt(v):
    return repr(float(v))


def write_series_csv(path, series, value_name="value", stride=1):
    t = series.t[::stride]
    v = series.values[::stride]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", value_name])
        for a, b in zip(t, v):
            w.writerow([_fmt(a), _fmt(b)])


def write_ladder_csv(path, ladder, stride=1):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "n", "value"])
        for n, rung in enumerate(ladder.rungs, 1):
            for a, b in zip(rung.t[::stride], rung.values[::stride]):
                w.writerow([_fmt(a), n, _fmt(b)])


def write_field_csv(path, field, times, n=None):
    """Long format ``t,x,value`` (with an ``n`` column for stack members)."""
    x = field.grid.x
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "value"] if n is None else ["t", "n", "x", "value"])
        for t in times:
            row = field.snapshot(t)
            for xi, vi in zip(x, row):
                w.writerow([_fmt(t), _fmt(xi), _fmt(vi)] if n is None else [_fmt(t), n, _fmt(xi), _fmt(vi)])


def write_histogram_csv(path, t, edges, density):
    """MC density estimate at time ``t`` in the field schema (bin centres as x)."""
    centres = 0.5 * (edges[1:] + edges[:-1])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "value"])
        for xi, vi in zip(centres, density):
            w.writerow([_fmt(t), _fmt(xi), _fmt(vi)])


def write_metrics_csv(path, metrics):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["criterion", "name", "value", "threshold", "relation", "pass"])
        for m in metrics:
            w.writerow([m.criterion if m.criterion is not None else "", m.name, _fmt(m.value),
                        _fmt(m.threshold), m.relation, int(m.passed)])


def read_density_file(path, grid):
    """Initial density from a two-column CSV ``x,value``, interpolated onto the
    grid nodes (zero outside the tabulated range)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    xs, fs = data[:, 0], data[:, 1]
    order = np.argsort(xs)
    return np.interp(grid.x, xs[order], fs[order], left=0.0, right=0.0)


PLOT_SCRIPT = '''"""Render density snapshots and firing-rate overlays from the run CSVs.

Usage: python plot.py [run_dir]
"""
import csv
import os
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

run = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))


def rows(name):
    path = os.path.join(run, name)
    if not os.path.exists(path):
        return []
    with open(path) as fh:
        return list(csv.DictReader(fh))


fig, ax = plt.subplots(1, 2, figsize=(11, 4))
for pipe in ("fpe", "series", "mc"):
    by_t = defaultdict(lambda: ([], []))
    for r in rows(f"density_{pipe}.csv"):
        xs, vs = by_t[r["t"]]
        xs.append(float(r["x"]))
        vs.append(float(r["value"]))
    for t, (xs, vs) in sorted(by_t.items(), key=lambda kv: float(kv[0])):
        style = "." if pipe == "mc" else "-"
        ax[0].plot(xs, vs, style, ms=2, label=f"{pipe} t={float(t):g}")
    r = rows(f"firing_{pipe}.csv")
    if r:
        ax[1].plot([float(a["t"]) for a in r], [float(a["N"]) for a in r], label=pipe)
ax[0].set_xlabel("x")
ax[0].set_ylabel("density")
ax[0].set_xlim(-3, 1)
ax[0].legend(fontsize=7)
ax[1].set_xlabel("t")
ax[1].set_ylabel("N(t)")
ax[1].legend()
fig.tight_layout()
fig.savefig(os.path.join(run, "overview.png"), dpi=120)
'''


def write_plot_script(out_dir):
    path = os.path.join(out_dir, "plot.py")
    with open(path, "w") as fh:
        fh.write(PLOT_SCRIPT)
    return path
