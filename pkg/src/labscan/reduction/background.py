"""Continuum background estimation for emission spectra.

A smoothed morphological opening: light pre-smoothing, then a rolling minimum
followed by a rolling maximum of the same width (which together erase features
narrower than the window while following the broad continuum), then a final
smoothing pass to remove the staircase the order filters leave behind.  The
window must be wide relative to the broadest emission line so lines are not
absorbed into the background.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d, uniform_filter1d

PRE_SMOOTH = 9
OPEN_WIDTH = 101
POST_SMOOTH = 101


def estimate_background(
    intensity: np.ndarray,
    open_width: int = OPEN_WIDTH,
    pre_smooth: int = PRE_SMOOTH,
    post_smooth: int = POST_SMOOTH,
) -> np.ndarray:
    """Return the estimated continuum, same shape as ``intensity``."""
    y = np.asarray(intensity, dtype=float)
    if y.ndim != 1:
        raise ValueError("expected a 1-D spectrum")
    if open_width < 3:
        raise ValueError("background window must span at least 3 channels")
    if open_width > y.size:
        raise ValueError(
            f"background window {open_width} exceeds spectrum length {y.size}"
        )
    smooth = uniform_filter1d(y, size=pre_smooth, mode="nearest")
    eroded = minimum_filter1d(smooth, size=open_width, mode="nearest")
    opened = maximum_filter1d(eroded, size=open_width, mode="nearest")
    return uniform_filter1d(opened, size=post_smooth, mode="nearest")
