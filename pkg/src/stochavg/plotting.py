"""Plot data for trajectory CSV files: gnuplot two-column text and a small SVG line chart.

The SVG is written by hand so that its bytes depend only on the data.
"""

import csv

import numpy as np

__all__ = ["read_trajectory_column", "write_plot_data", "write_svg"]


def read_trajectory_column(path, column="x_0"):
    """Return (k, values) from a ``k,t,x_0,...`` style CSV file."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    header = rows[0]
    if column not in header:
        raise ValueError(f"column {column!r} not in {header}")
    ci, ki = header.index(column), header.index("k")
    k = np.array([int(r[ki]) for r in rows[1:]])
    vals = np.array([float(r[ci]) for r in rows[1:]])
    order = np.argsort(k, kind="stable")
    return k[order], vals[order]


def write_plot_data(path, k, values):
    """Two whitespace-separated columns, k strictly increasing."""
    k = np.asarray(k)
    if np.any(np.diff(k) <= 0):
        raise ValueError("k must be strictly increasing")
    with open(path, "w") as fh:
        fh.write("# k value\n")
        for ki, vi in zip(k, values):
            fh.write(f"{int(ki)} {float(vi):.17g}\n")


def write_svg(path, k, values, reference=None, width=640, height=360, max_points=2000,
              title=""):
    """Polyline of values against k; optional dashed horizontal line at ``reference``."""
    k = np.asarray(k, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(k) > max_points:
        idx = np.unique(np.linspace(0, len(k) - 1, max_points).round().astype(int))
        k, v = k[idx], v[idx]
    pad = 40
    lo = min(v.min(), reference) if reference is not None else v.min()
    hi = max(v.max(), reference) if reference is not None else v.max()
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    kspan = (k[-1] - k[0]) or 1.0

    def sx(x):
        return pad + (x - k[0]) / kspan * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - lo) / (hi - lo) * (height - 2 * pad)

    pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(k, v))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad}" y="{pad - 10}" font-size="12">{title}</text>',
        f'<text x="{pad - 4}" y="{pad}" font-size="10" text-anchor="end">{hi:.3g}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{lo:.3g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 14}" font-size="10" '
        f'text-anchor="end">k = {int(k[-1])}</text>',
    ]
    if reference is not None:
        yr = sy(reference)
        parts.append(f'<line class="reference" x1="{pad}" y1="{yr:.2f}" x2="{width - pad}" '
                     f'y2="{yr:.2f}" stroke="red" stroke-dasharray="6,4"/>')
    parts.append(f'<polyline class="trajectory" fill="none" stroke="steelblue" '
                 f'stroke-width="1" points="{pts}"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
