"""Synthetic ground-truth composition map ("phantom").

The phantom stands in for a physical sample: a rectangular grid of cells in
the world XY plane, each cell holding element mass fractions.  File format
(whitespace separated, ``#`` comments):

    origin <x_mm> <y_mm>         lower-left corner of cell (0, 0)
    cell <size_mm>
    size <nx> <ny>
    default <El> <frac> [<El> <frac> ...]
    region <x0> <y0> <x1> <y1> <El> <frac> [...]

Regions overwrite the default composition for every cell whose center falls
inside the given world-frame rectangle; later regions win.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

_EPS = 1e-9


class PhantomError(ValueError):
    pass


@dataclass
class Phantom:
    origin: tuple[float, float]
    cell_size: float
    nx: int
    ny: int
    compositions: list[dict[str, float]]
    cell_comp: np.ndarray  # (ny, nx) indices into compositions

    def __post_init__(self):
        if self.cell_size <= 0:
            raise PhantomError("cell size must be positive")
        if self.nx < 1 or self.ny < 1:
            raise PhantomError("grid must contain at least one cell")
        for comp in self.compositions:
            total = 0.0
            for element, frac in comp.items():
                if not 0.0 <= frac <= 1.0:
                    raise PhantomError(f"{element} fraction {frac} outside [0, 1]")
                total += frac
            if total > 1.0 + _EPS:
                raise PhantomError(f"cell fractions sum to {total} > 1")

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) of the covered world rectangle, mm."""
        x0, y0 = self.origin
        return (x0, y0, x0 + self.nx * self.cell_size, y0 + self.ny * self.cell_size)

    def cell_index(self, x_mm: float, y_mm: float) -> tuple[int, int] | None:
        ix = int(np.floor((x_mm - self.origin[0]) / self.cell_size + _EPS))
        iy = int(np.floor((y_mm - self.origin[1]) / self.cell_size + _EPS))
        if 0 <= ix < self.nx and 0 <= iy < self.ny:
            return ix, iy
        return None

    def contains(self, x_mm: float, y_mm: float) -> bool:
        return self.cell_index(x_mm, y_mm) is not None

    def composition_at(self, x_mm: float, y_mm: float) -> dict[str, float] | None:
        """Element fractions of the cell under a world point, None outside."""
        idx = self.cell_index(x_mm, y_mm)
        if idx is None:
            return None
        ix, iy = idx
        return self.compositions[self.cell_comp[iy, ix]]

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.cell_size,
            self.origin[1] + (iy + 0.5) * self.cell_size,
        )

    def cells_with(self, element: str, min_fraction: float = 0.0) -> np.ndarray:
        """Boolean (ny, nx) mask of cells containing the element."""
        has = np.array(
            [comp.get(element, 0.0) > min_fraction for comp in self.compositions]
        )
        return has[self.cell_comp]

    @classmethod
    def parse(cls, text: str) -> "Phantom":
        origin = None
        cell_size = None
        size = None
        default = None
        regions: list[tuple[float, float, float, float, dict[str, float]]] = []

        def parse_composition(parts: list[str], lineno: int) -> dict[str, float]:
            if not parts or len(parts) % 2 != 0:
                raise PhantomError(
                    f"line {lineno}: expected element/fraction pairs"
                )
            comp = {}
            for element, frac in zip(parts[::2], parts[1::2]):
                try:
                    comp[element] = float(frac)
                except ValueError as exc:
                    raise PhantomError(f"line {lineno}: bad fraction: {exc}") from exc
            return comp

        for lineno, raw in enumerate(text.splitlines(), start=1):
            stripped = raw.split("#", 1)[0].strip()
            if not stripped:
                continue
            parts = stripped.split()
            key, args = parts[0], parts[1:]
            try:
                if key == "origin":
                    origin = (float(args[0]), float(args[1]))
                elif key == "cell":
                    cell_size = float(args[0])
                elif key == "size":
                    size = (int(args[0]), int(args[1]))
                elif key == "default":
                    default = parse_composition(args, lineno)
                elif key == "region":
                    rect = tuple(float(v) for v in args[:4])
                    regions.append((*rect, parse_composition(args[4:], lineno)))
                else:
                    raise PhantomError(f"line {lineno}: unknown key {key!r}")
            except (IndexError, ValueError) as exc:
                if isinstance(exc, PhantomError):
                    raise
                raise PhantomError(f"line {lineno}: malformed {key!r} entry") from exc
        if origin is None or cell_size is None or size is None or default is None:
            raise PhantomError("phantom file needs origin, cell, size and default")

        nx, ny = size
        compositions = [default]
        cell_comp = np.zeros((ny, nx), dtype=int)
        for x0, y0, x1, y1, comp in regions:
            comp_id = len(compositions)
            compositions.append(comp)
            for iy in range(ny):
                for ix in range(nx):
                    cx = origin[0] + (ix + 0.5) * cell_size
                    cy = origin[1] + (iy + 0.5) * cell_size
                    if x0 - _EPS <= cx <= x1 + _EPS and y0 - _EPS <= cy <= y1 + _EPS:
                        cell_comp[iy, ix] = comp_id
        return cls(origin, cell_size, nx, ny, compositions, cell_comp)

    @classmethod
    def load(cls, path: str | Path) -> "Phantom":
        return cls.parse(Path(path).read_text(encoding="utf-8"))
