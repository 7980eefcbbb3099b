"""Spectral data reduction: background, peak search, line fitting, indexing,
elemental maps and clustering."""
from labscan.reduction.profiles import (
    FittedPeak,
    peak_area,
    pseudo_voigt,
    pseudo_voigt_eta,
    pseudo_voigt_fwhm,
    sum_of_peaks,
)
from labscan.reduction.background import estimate_background
from labscan.reduction.peaks import PeakCandidate, find_peaks, noise_sigma
from labscan.reduction.fitting import fit_peak, fit_peaks, refit_residuals
from labscan.reduction.indexing import (
    UNASSIGNED,
    ElementAssignment,
    index_elements,
)
from labscan.reduction.maps import (
    ElementMap,
    build_element_map,
    normalize_map,
    record_element_area,
)
from labscan.reduction.clustering import KMeansResult, classify_minerals, kmeans
from labscan.reduction.pipeline import reduce_spectrum

__all__ = [
    "FittedPeak",
    "peak_area",
    "pseudo_voigt",
    "pseudo_voigt_eta",
    "pseudo_voigt_fwhm",
    "sum_of_peaks",
    "estimate_background",
    "PeakCandidate",
    "find_peaks",
    "noise_sigma",
    "fit_peak",
    "fit_peaks",
    "refit_residuals",
    "UNASSIGNED",
    "ElementAssignment",
    "index_elements",
    "ElementMap",
    "build_element_map",
    "normalize_map",
    "record_element_area",
    "KMeansResult",
    "classify_minerals",
    "kmeans",
    "reduce_spectrum",
]
