"""Elemental map outputs: delimited text grid plus a rendered heatmap.

The text grid is the machine-readable artifact (stable, diffable); the
PNG sits next to it for humans.  Row iy=0 is the scan origin row, so the
image is rendered with the origin at the lower-left to match the stage's
coordinate frame.
"""
from __future__ import annotations

from pathlib import Path

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure


def write_map_grid(element_map, path: str | Path) -> Path:
    """Write normalized map values as comma-delimited rows with a header."""
    path = Path(path)
    ny, nx = element_map.values.shape
    lines = [
        f"# element {element_map.element}",
        f"# shape {ny} {nx}",
        f"# raw_min {element_map.raw_min!r} raw_max {element_map.raw_max!r}",
    ]
    for row in element_map.values:
        lines.append(",".join(f"{v:.6f}" for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_map_grid(path: str | Path):
    """Parse a map grid file back to (element, values-as-lists)."""
    import numpy as np

    path = Path(path)
    element = None
    rows = []
    for line in path.read_text(encoding="ascii").splitlines():
        if line.startswith("# element "):
            element = line.split(" ", 2)[2]
        elif line.startswith("#"):
            continue
        elif line:
            rows.append([float(v) for v in line.split(",")])
    if element is None or not rows:
        raise ValueError(f"{path}: not a map grid file")
    return element, np.array(rows, dtype=float)


def render_heatmap(element_map, path: str | Path, dpi: int = 150) -> Path:
    """Render the map to a PNG with min-max bounds in the title."""
    path = Path(path)
    fig = Figure(figsize=(5.0, 6.0))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    shown = ax.imshow(element_map.values, origin="lower", cmap="viridis",
                      vmin=0.0, vmax=1.0, interpolation="nearest")
    fig.colorbar(shown, ax=ax, label="normalized intensity")
    note = " (uniform)" if element_map.degenerate else ""
    ax.set_title(f"{element_map.element}  raw {element_map.raw_min:.4g}"
                 f"..{element_map.raw_max:.4g}{note}")
    ax.set_xlabel("ix")
    ax.set_ylabel("iy")
    fig.savefig(path, dpi=dpi)
    return path
