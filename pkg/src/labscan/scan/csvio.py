"""Spectrum CSV export/import.

Two columns, ``wavelength_nm,intensity``, one row per channel.  Values
are written with ``repr`` so a parse-back reproduces the float exactly;
fixed-point formatting would silently lose the low bits.  The wavelength
column is identical across an entire scan, so its strings are rendered
once and cached.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

CSV_HEADER = "wavelength_nm,intensity"

# keyed by array identity: the instrument axis is one shared array, so
# its strings render once per process; the held reference pins the id
_wl_cache: dict[int, tuple[np.ndarray, list[str]]] = {}


def _wavelength_strings(wl: np.ndarray) -> list[str]:
    entry = _wl_cache.get(id(wl))
    if entry is not None and entry[0] is wl:
        return entry[1]
    if len(_wl_cache) > 8:
        _wl_cache.clear()
    strings = [repr(v) for v in wl.tolist()]
    _wl_cache[id(wl)] = (wl, strings)
    return strings


def export_csv(spectrum, path: str | Path) -> Path:
    """Write one spectrum to ``path``; returns the path."""
    path = Path(path)
    wl = np.asarray(spectrum.wavelength_nm, dtype=float)
    vals = np.asarray(spectrum.intensity, dtype=float).tolist()
    if len(vals) != len(wl):
        raise ValueError(f"axis mismatch: {len(wl)} wavelengths, "
                         f"{len(vals)} intensities")
    lines = [CSV_HEADER]
    lines.extend(f"{w},{v!r}" for w, v in zip(_wavelength_strings(wl), vals))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_spectrum_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a spectrum CSV back as (wavelength_nm, intensity) arrays."""
    path = Path(path)
    with path.open("r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: expected header {CSV_HEADER!r}, "
                             f"got {header!r}")
        data = np.loadtxt(fh, delimiter=",", dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns")
    return data[:, 0], data[:, 1]
