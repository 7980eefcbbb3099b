"""One-call reduction: raw spectrum in, per-element summary out.

Chains the individual stages (background estimate, peak search, profile
fitting, residual refit, line indexing) in their canonical order and
condenses the result into a JSON-ready dict, which is what the scan
engine persists per measurement point.
"""
from __future__ import annotations

import numpy as np

from labscan.reduction.background import estimate_background
from labscan.reduction.fitting import fit_peaks, refit_residuals
from labscan.reduction.indexing import index_elements
from labscan.reduction.peaks import find_peaks
from labscan.reduction.profiles import peak_area


def reduce_spectrum(wavelength_nm, intensity, db, *,
                    min_prominence_sigma: float = 5.0,
                    tol_nm: float = 0.1,
                    accept_threshold: float = 30.0) -> dict:
    """Reduce one spectrum against a line database.

    Returns ``{"elements": {el: {"area", "lines", "best_line_nm"}},
    "n_peaks": int}`` where ``area`` is the area of the element's
    strongest assigned line and ``lines`` counts its assigned lines.
    """
    x = np.asarray(wavelength_nm, dtype=float)
    y = np.asarray(intensity, dtype=float) - estimate_background(intensity)
    candidates = find_peaks(x, y, min_prominence_sigma)
    peaks = fit_peaks(x, y, candidates)
    peaks = refit_residuals(x, y, peaks, min_prominence_sigma)
    assignments = index_elements(peaks, db, tol_nm=tol_nm,
                                 accept_threshold=accept_threshold)
    elements: dict[str, dict] = {}
    for a in assignments:
        if not a.assigned:
            continue
        area = peak_area(a.peak.amplitude, a.peak.width_g_nm,
                         a.peak.width_l_nm)
        entry = elements.setdefault(
            a.element, {"area": 0.0, "lines": 0, "best_line_nm": 0.0})
        entry["lines"] += 1
        if area > entry["area"]:
            entry["area"] = area
            entry["best_line_nm"] = float(a.db_wavelength_nm)
    return {
        "elements": {el: elements[el] for el in sorted(elements)},
        "n_peaks": len(peaks),
    }
