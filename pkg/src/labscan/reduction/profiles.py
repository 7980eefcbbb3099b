"""Pseudo-Voigt line profile (Thompson-Cox-Hastings parametrization).

The profile is a linear mix of a Lorentzian and a Gaussian that share one
total FWHM.  Both the mixing fraction and the total width are polynomial
functions of the component Gaussian/Lorentzian FWHMs, which keeps the profile
and its area cheap to evaluate while staying within ~1% of a true Voigt.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_LN2 = math.log(2.0)


def pseudo_voigt_fwhm(w_g: float, w_l: float) -> float:
    """Total FWHM from the Gaussian and Lorentzian component FWHMs."""
    return (
        w_g**5
        + 2.69269 * w_g**4 * w_l
        + 2.42843 * w_g**3 * w_l**2
        + 4.47163 * w_g**2 * w_l**3
        + 0.07842 * w_g * w_l**4
        + w_l**5
    ) ** 0.2


def pseudo_voigt_eta(w_g: float, w_l: float) -> float:
    """Lorentzian mixing fraction; 0 for pure Gaussian, 1 for pure Lorentzian."""
    f = pseudo_voigt_fwhm(w_g, w_l)
    if f <= 0.0:
        return 0.0
    r = w_l / f
    return 1.36603 * r - 0.47719 * r**2 + 0.11116 * r**3


def pseudo_voigt(x, x0: float, amp: float, w_g: float, w_l: float):
    """Evaluate the profile; ``amp`` is the peak height at ``x0``."""
    x = np.asarray(x, dtype=float)
    if w_g <= 0.0 and w_l <= 0.0:
        raise ValueError("at least one component width must be positive")
    f = pseudo_voigt_fwhm(w_g, w_l)
    eta = pseudo_voigt_eta(w_g, w_l)
    u = (x - x0) / (0.5 * f)
    u2 = u * u
    lorentz = 1.0 / (1.0 + u2)
    gauss = np.exp(-_LN2 * u2)
    return amp * (eta * lorentz + (1.0 - eta) * gauss)


def peak_area(amp: float, w_g: float, w_l: float) -> float:
    """Analytic integral of the profile over the whole axis."""
    f = pseudo_voigt_fwhm(w_g, w_l)
    eta = pseudo_voigt_eta(w_g, w_l)
    return amp * 0.5 * f * (eta * math.pi + (1.0 - eta) * math.sqrt(math.pi / _LN2))


@dataclass
class FittedPeak:
    """One fitted line.  Widths are component FWHMs in nm."""

    center_nm: float
    amplitude: float
    width_g_nm: float
    width_l_nm: float
    rms: float = 0.0
    source: str = "PRIMARY_PASS"

    @property
    def fwhm_nm(self) -> float:
        return pseudo_voigt_fwhm(self.width_g_nm, self.width_l_nm)

    @property
    def area(self) -> float:
        return peak_area(self.amplitude, self.width_g_nm, self.width_l_nm)

    def evaluate(self, x) -> np.ndarray:
        return pseudo_voigt(x, self.center_nm, self.amplitude,
                            self.width_g_nm, self.width_l_nm)


def sum_of_peaks(x, peaks: Sequence[FittedPeak]) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    for pk in peaks:
        total += pk.evaluate(x)
    return total
