"""Human- and machine-readable scan reports."""
from labscan.report.output import read_map_grid, render_heatmap, write_map_grid

__all__ = ["read_map_grid", "render_heatmap", "write_map_grid"]
