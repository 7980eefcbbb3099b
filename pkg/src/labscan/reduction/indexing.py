"""Element indexing: assign fitted peaks to emission lines.

Iterative greedy refinement.  Every element is scored by how much peak area
its database lines explain (weighted by relative line intensity); the best
element above the acceptance threshold claims its matched peaks, which leave
the pool, and scoring repeats on the remainder.  Peaks nothing claims are
marked UNASSIGNED.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from labscan.devices.linedb import EmissionLine, LineDb
from labscan.reduction.profiles import FittedPeak

log = logging.getLogger(__name__)

UNASSIGNED = "UNASSIGNED"

# Minimum explained score (peak area x relative intensity, in spectrum area
# units) before an element counts as present.  The default is tuned well
# above the area of a threshold-grazing noise peak under the simulator's
# noise model, and well below any real line at 0.1 mass fraction.
DEFAULT_ACCEPT_THRESHOLD = 30.0
DEFAULT_TOL_NM = 0.1


@dataclass
class ElementAssignment:
    peak: FittedPeak
    element: str = UNASSIGNED
    species: Optional[str] = None
    db_wavelength_nm: Optional[float] = None
    residual_nm: Optional[float] = None

    @property
    def assigned(self) -> bool:
        return self.element != UNASSIGNED


def _match_element(
    lines: Sequence[EmissionLine],
    pool: list[FittedPeak],
    tol_nm: float,
) -> list[tuple[FittedPeak, EmissionLine]]:
    """Pair db lines (strongest first) with their nearest unclaimed peak."""
    taken: set[int] = set()
    pairs = []
    for line in lines:
        best_i = None
        best_d = tol_nm
        for i, peak in enumerate(pool):
            if i in taken:
                continue
            d = abs(peak.center_nm - line.wavelength_nm)
            if d <= best_d:
                best_d = d
                best_i = i
        if best_i is not None:
            taken.add(best_i)
            pairs.append((pool[best_i], line))
    return pairs


def index_elements(
    peaks: Sequence[FittedPeak],
    db: LineDb,
    tol_nm: float = DEFAULT_TOL_NM,
    accept_threshold: float = DEFAULT_ACCEPT_THRESHOLD,
) -> list[ElementAssignment]:
    if tol_nm <= 0.0:
        raise ValueError("tol_nm must be positive")
    if len(db) == 0:
        raise ValueError("line database is empty")
    pool = list(peaks)
    assignments: list[ElementAssignment] = []
    remaining = set(db.elements)
    while pool and remaining:
        best_element = None
        best_pairs: list[tuple[FittedPeak, EmissionLine]] = []
        best_score = accept_threshold
        for element in sorted(remaining):
            pairs = _match_element(db.lines_for(element), pool, tol_nm)
            score = sum(peak.area * line.rel_intensity for peak, line in pairs)
            if score > best_score:
                best_score = score
                best_element = element
                best_pairs = pairs
        if best_element is None:
            break
        log.debug("indexed %s (score %.1f, %d lines)", best_element,
                  best_score, len(best_pairs))
        for peak, line in best_pairs:
            assignments.append(
                ElementAssignment(
                    peak=peak,
                    element=line.element,
                    species=line.species,
                    db_wavelength_nm=line.wavelength_nm,
                    residual_nm=peak.center_nm - line.wavelength_nm,
                )
            )
            pool.remove(peak)
        remaining.discard(best_element)
    for peak in pool:
        assignments.append(ElementAssignment(peak=peak))
    assignments.sort(key=lambda a: a.peak.center_nm)
    return assignments
