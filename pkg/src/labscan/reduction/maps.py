"""Elemental maps over the scan grid.

Each grid cell's raw value is the area of the element's largest assigned
peak at that point; the map is the min-max normalization of those raw values
into [0, 1].
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class ElementMap:
    element: str
    values: np.ndarray      # (ny, nx), all in [0, 1]
    raw_min: float
    raw_max: float
    degenerate: bool        # constant raw values (or element absent)


def record_element_area(record: Mapping, element: str) -> float:
    """Raw map value for one measurement record (0 when absent)."""
    entry = record.get("elements", {}).get(element)
    if entry is None:
        return 0.0
    return float(entry["area"])


def normalize_map(raw: np.ndarray) -> tuple[np.ndarray, float, float, bool]:
    raw = np.asarray(raw, dtype=float)
    lo = float(raw.min()) if raw.size else 0.0
    hi = float(raw.max()) if raw.size else 0.0
    if hi <= lo:
        return np.zeros_like(raw), lo, hi, True
    return (raw - lo) / (hi - lo), lo, hi, False


def build_element_map(
    records: Sequence[Mapping],
    element: str,
    shape: tuple[int, int] | None = None,
) -> ElementMap:
    """Build the normalized map of one element from measurement records.

    ``shape`` is (ny, nx); inferred from the largest grid indices present
    when omitted.  Grid cells with no record keep raw value 0.
    """
    if shape is None:
        if not records:
            raise ValueError("cannot infer grid shape from zero records")
        ny = max(int(r["iy"]) for r in records) + 1
        nx = max(int(r["ix"]) for r in records) + 1
    else:
        ny, nx = shape
    raw = np.zeros((ny, nx))
    seen = 0
    for record in records:
        value = record_element_area(record, element)
        raw[int(record["iy"]), int(record["ix"])] = value
        if value > 0.0:
            seen += 1
    if seen == 0:
        log.warning("element %s absent from all %d records: all-zero map",
                    element, len(records))
    values, lo, hi, degenerate = normalize_map(raw)
    return ElementMap(element=element, values=values, raw_min=lo, raw_max=hi,
                      degenerate=degenerate)
