"""Windowed pseudo-Voigt fitting, residual re-search, joint refinement.

Peaks are fitted one at a time in narrow windows around each candidate, in a
log parametrization (center, log amp, log widths) that keeps amplitudes and
widths positive without constraint handling.  ``refit_residuals`` then
subtracts the fitted model, searches the residual for lines the first pass
missed (shoulders of blends, weak companions), and finally re-fits clusters
of mutually overlapping peaks jointly on the original data, since windowed
single-peak fits are biased by a neighbor's tail.
"""
from __future__ import annotations

import logging
import math
from typing import Sequence

import numpy as np

from labscan.optim import least_squares_lm
from labscan.reduction.peaks import PeakCandidate, find_peaks, noise_sigma
from labscan.reduction.profiles import FittedPeak, sum_of_peaks

log = logging.getLogger(__name__)

_LN2 = math.log(2.0)

# Window half-width as a multiple of the estimated FWHM, and its floor in
# channels.  4x keeps the Lorentzian tail visible without swallowing
# neighboring lines.
WINDOW_FWHM_FACTOR = 4.0
WINDOW_MIN_CHANNELS = 20

# Peaks whose centers sit closer than this many channels after a fit are the
# same line found twice.
DEDUPE_CHANNELS = 2.0

# Fits narrower than this are spike artifacts: a sub-channel profile can
# thread between samples with an arbitrary amplitude.
MIN_FWHM_CHANNELS = 2.0

# Centers closer than this multiple of the larger FWHM are refined jointly.
CLUSTER_GAP_FWHM = 2.5

# Clamp bounds for the log-scale fit parameters.  Evaluation clips to these
# so wild optimizer steps stay finite.  The lower side saturates benignly (a
# vanishing Lorentzian share just means the profile is pure Gaussian), but a
# solution parked past the upper side never describes a real line and would
# overflow the inverse transform, so those fits are rejected outright.
LOG_AMP_LIMIT = 300.0
LOG_WIDTH_LO = -30.0
LOG_WIDTH_HI = 8.0


def _fwhm_arr(w_g, w_l):
    return (
        w_g**5
        + 2.69269 * w_g**4 * w_l
        + 2.42843 * w_g**3 * w_l**2
        + 4.47163 * w_g**2 * w_l**3
        + 0.07842 * w_g * w_l**4
        + w_l**5
    ) ** 0.2


def _eval_peakset(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate a batch of k-peak models.

    ``theta`` has shape (..., k, 4) holding [center, log amp, log wG, log wL]
    per peak; returns shape (..., n) for x of shape (n,).  Log parameters are
    clamped before exponentiation so wild trial steps from the optimizer
    stay finite and get rejected on cost rather than overflowing.
    """
    x0 = theta[..., 0]
    amp = np.exp(np.clip(theta[..., 1], -LOG_AMP_LIMIT, LOG_AMP_LIMIT))
    w_g = np.exp(np.clip(theta[..., 2], LOG_WIDTH_LO, LOG_WIDTH_HI))
    w_l = np.exp(np.clip(theta[..., 3], LOG_WIDTH_LO, LOG_WIDTH_HI))
    f = _fwhm_arr(w_g, w_l)
    r = w_l / f
    eta = 1.36603 * r - 0.47719 * r**2 + 0.11116 * r**3
    u = (x - x0[..., None]) / (0.5 * f)[..., None]
    u2 = u * u
    shape = eta[..., None] / (1.0 + u2) + (1.0 - eta[..., None]) * np.exp(-_LN2 * u2)
    return np.sum(amp[..., None] * shape, axis=-2)


def _logs_in_range(log_amp: float, log_wg: float, log_wl: float) -> bool:
    return (log_amp <= LOG_AMP_LIMIT
            and log_wg <= LOG_WIDTH_HI
            and log_wl <= LOG_WIDTH_HI)


def _make_objective(x: np.ndarray, y: np.ndarray, k: int):
    """Residual and batched central-difference Jacobian for a k-peak model."""

    def residuals(theta: np.ndarray) -> np.ndarray:
        return _eval_peakset(theta.reshape(k, 4), x) - y

    def jacobian(theta: np.ndarray) -> np.ndarray:
        n_par = theta.size
        steps = 1e-6 * np.maximum(np.abs(theta), 1e-3)
        batch = np.broadcast_to(theta, (2 * n_par, n_par)).copy()
        batch[np.arange(n_par), np.arange(n_par)] += steps
        batch[n_par + np.arange(n_par), np.arange(n_par)] -= steps
        vals = _eval_peakset(batch.reshape(2 * n_par, k, 4), x)
        return ((vals[:n_par] - vals[n_par:]) / (2.0 * steps)[:, None]).T

    return residuals, jacobian


def _half_height_width(x: np.ndarray, y: np.ndarray, idx: int) -> float:
    """FWHM estimate from the half-height crossings around a local maximum."""
    half = y[idx] / 2.0
    dx = float(np.median(np.diff(x))) if x.size > 1 else 1.0
    left = idx
    while left > 0 and y[left] > half:
        left -= 1
    right = idx
    while right < y.size - 1 and y[right] > half:
        right += 1
    width = x[right] - x[left]
    return float(max(width, 2.0 * dx))


def _window(x: np.ndarray, center: float, halfwidth: float) -> slice:
    lo = int(np.searchsorted(x, center - halfwidth))
    hi = int(np.searchsorted(x, center + halfwidth))
    return slice(lo, min(hi + 1, x.size))


def fit_peak(
    wavelength_nm: np.ndarray,
    intensity: np.ndarray,
    candidate: PeakCandidate,
    max_iter: int = 60,
    source: str = "PRIMARY_PASS",
) -> FittedPeak | None:
    """Fit one pseudo-Voigt in a window around a candidate.

    Returns None when the candidate is unfittable (non-positive height, too
    close to the array edge, or the fit wanders out of the window).
    """
    x = np.asarray(wavelength_nm, dtype=float)
    y = np.asarray(intensity, dtype=float)
    if candidate.height <= 0.0:
        log.debug("dropping candidate at %.3f nm: non-positive height",
                  candidate.wavelength_nm)
        return None
    dx = float(np.median(np.diff(x)))
    w_est = _half_height_width(x, y, candidate.index)
    halfwidth = max(WINDOW_FWHM_FACTOR * w_est, WINDOW_MIN_CHANNELS * dx)
    win = _window(x, candidate.wavelength_nm, halfwidth)
    xw, yw = x[win], y[win]
    if xw.size < 9:
        log.debug("dropping candidate at %.3f nm: window too small",
                  candidate.wavelength_nm)
        return None
    # wG0/wL0 chosen so the combined FWHM of the guess matches w_est.
    theta0 = np.array([
        candidate.wavelength_nm,
        math.log(candidate.height),
        math.log(0.85 * w_est),
        math.log(0.25 * w_est),
    ])
    residuals, jacobian = _make_objective(xw, yw, 1)
    res = least_squares_lm(residuals, theta0, jacobian_fn=jacobian,
                           max_iter=max_iter)
    center, log_amp, log_wg, log_wl = res.x
    if not np.all(np.isfinite(res.x)) or not _logs_in_range(log_amp, log_wg,
                                                           log_wl):
        log.debug("dropping candidate at %.3f nm: fit diverged",
                  candidate.wavelength_nm)
        return None
    if not (xw[0] <= center <= xw[-1]):
        log.debug("dropping candidate at %.3f nm: center left the window",
                  candidate.wavelength_nm)
        return None
    peak = FittedPeak(
        center_nm=float(center),
        amplitude=float(math.exp(log_amp)),
        width_g_nm=float(math.exp(log_wg)),
        width_l_nm=float(math.exp(log_wl)),
        rms=float(math.sqrt(2.0 * res.cost / xw.size)),
        source=source,
    )
    if (peak.fwhm_nm < MIN_FWHM_CHANNELS * dx
            or peak.fwhm_nm > (xw[-1] - xw[0])):
        log.debug("dropping candidate at %.3f nm: implausible width %.4f nm",
                  candidate.wavelength_nm, peak.fwhm_nm)
        return None
    return peak


def fit_peaks(
    wavelength_nm: np.ndarray,
    intensity: np.ndarray,
    candidates: Sequence[PeakCandidate],
    max_iter: int = 60,
    source: str = "PRIMARY_PASS",
) -> list[FittedPeak]:
    """Fit every candidate, drop failures and duplicate convergences."""
    x = np.asarray(wavelength_nm, dtype=float)
    y = np.asarray(intensity, dtype=float)
    dx = float(np.median(np.diff(x))) if x.size > 1 else 1.0
    fitted: list[FittedPeak] = []
    for cand in candidates:
        peak = fit_peak(x, y, cand, max_iter=max_iter, source=source)
        if peak is None:
            continue
        dupe = next(
            (p for p in fitted
             if abs(p.center_nm - peak.center_nm) < DEDUPE_CHANNELS * dx),
            None,
        )
        if dupe is not None:
            if peak.area > dupe.area:
                fitted[fitted.index(dupe)] = peak
            continue
        fitted.append(peak)
    fitted.sort(key=lambda p: p.center_nm)
    return fitted


def _clusters(peaks: list[FittedPeak]) -> list[list[FittedPeak]]:
    """Group peaks whose profiles overlap enough to bias separate fits."""
    if not peaks:
        return []
    ordered = sorted(peaks, key=lambda p: p.center_nm)
    groups = [[ordered[0]]]
    for peak in ordered[1:]:
        prev = groups[-1][-1]
        gap = peak.center_nm - prev.center_nm
        if gap <= CLUSTER_GAP_FWHM * max(prev.fwhm_nm, peak.fwhm_nm):
            groups[-1].append(peak)
        else:
            groups.append([peak])
    return groups


def _joint_fit(
    x: np.ndarray,
    target: np.ndarray,
    theta0: np.ndarray,
    centers_span: tuple[float, float],
    sources: list[str],
    max_iter: int = 60,
) -> list[FittedPeak] | None:
    """Joint k-peak LM fit of ``target`` over a window around the centers.

    Returns the refitted peaks, or None when the fit is invalid; the caller
    decides acceptance on the full-spectrum error.
    """
    k = len(sources)
    widths = np.exp(theta0.reshape(k, 4)[:, 2:])
    max_f = float(np.max(_fwhm_arr(widths[:, 0], widths[:, 1])))
    lo = centers_span[0] - WINDOW_FWHM_FACTOR * max_f
    hi = centers_span[1] + WINDOW_FWHM_FACTOR * max_f
    win = _window(x, 0.5 * (lo + hi), 0.5 * (hi - lo))
    xw = x[win]
    if xw.size < 5 * k:
        return None
    residuals, jacobian = _make_objective(xw, target[win], k)
    res = least_squares_lm(residuals, theta0, jacobian_fn=jacobian,
                           max_iter=max_iter)
    if not np.all(np.isfinite(res.x)):
        return None
    refined = []
    rms = math.sqrt(2.0 * res.cost / xw.size)
    dx = float(np.median(np.diff(xw)))
    for i, src in enumerate(sources):
        center, log_amp, log_wg, log_wl = res.x[4 * i:4 * i + 4]
        if not (xw[0] <= center <= xw[-1]):
            return None
        if not _logs_in_range(log_amp, log_wg, log_wl):
            return None
        peak = FittedPeak(
            center_nm=float(center),
            amplitude=float(math.exp(log_amp)),
            width_g_nm=float(math.exp(log_wg)),
            width_l_nm=float(math.exp(log_wl)),
            rms=rms,
            source=src,
        )
        if peak.fwhm_nm < MIN_FWHM_CHANNELS * dx:
            return None
        refined.append(peak)
    return refined


def _theta_from_peaks(peaks: list[FittedPeak]) -> np.ndarray:
    return np.array([
        [p.center_nm, math.log(max(p.amplitude, 1e-12)),
         math.log(max(p.width_g_nm, 1e-6)), math.log(max(p.width_l_nm, 1e-6))]
        for p in peaks
    ]).ravel()


def refit_residuals(
    wavelength_nm: np.ndarray,
    intensity: np.ndarray,
    peaks: Sequence[FittedPeak],
    min_prominence_sigma: float = 5.0,
    sigma: float | None = None,
    max_passes: int = 2,
    joint: bool = True,
    max_iter: int = 60,
) -> list[FittedPeak]:
    """Recover lines hidden under already-fitted neighbors.

    Each pass subtracts the current model and re-runs detection on the
    residual.  A candidate standing clear of every fitted peak is fitted
    additively; a candidate inside an existing peak's span means that peak
    is really a blend, so the whole neighborhood is re-fit jointly as one
    more component with fresh width/amplitude guesses, replacing the old
    decomposition.  Overlapping clusters are also re-fit jointly between
    passes, since single-peak fits lean on each other's tails.  Every change
    is accepted only if it lowers the full-spectrum squared error, so the
    returned set never fits worse than the incoming one.
    """
    x = np.asarray(wavelength_nm, dtype=float)
    y = np.asarray(intensity, dtype=float)
    dx = float(np.median(np.diff(x))) if x.size > 1 else 1.0
    all_peaks = list(peaks)
    model = sum_of_peaks(x, all_peaks)
    sse = float(np.sum((y - model) ** 2))
    if sigma is None:
        sigma = noise_sigma(y - model)
    floor = 0.5 * min_prominence_sigma * sigma

    sse_input = sse

    def try_replace(old: list[FittedPeak], new: list[FittedPeak] | None,
                    require_decrease: bool = True) -> bool:
        """Swap ``old`` for ``new`` when the global error allows it.

        Pruning passes may raise the error above the current (overfitted)
        model, but never above the incoming fit's error.
        """
        nonlocal all_peaks, model, sse
        if new is None:
            return False
        new_model = model - sum_of_peaks(x, old) + sum_of_peaks(x, new)
        new_sse = float(np.sum((y - new_model) ** 2))
        if require_decrease:
            if new_sse >= sse:
                return False
        elif new_sse > sse_input:
            return False
        old_ids = {id(p) for p in old}
        all_peaks = [p for p in all_peaks if id(p) not in old_ids] + new
        model = new_model
        sse = new_sse
        return True

    def _cluster_window(group: list[FittedPeak]) -> slice:
        max_f = max(p.fwhm_nm for p in group)
        lo = min(p.center_nm for p in group) - WINDOW_FWHM_FACTOR * max_f
        hi = max(p.center_nm for p in group) + WINDOW_FWHM_FACTOR * max_f
        return _window(x, 0.5 * (lo + hi), 0.5 * (hi - lo))

    def _window_bic(target: np.ndarray, win: slice,
                    group: list[FittedPeak]) -> float:
        n_w = x[win].size
        sse_w = float(np.sum((target[win] - sum_of_peaks(x[win], group)) ** 2))
        return n_w * math.log(max(sse_w, 1e-300) / n_w) + 4 * len(group) * math.log(n_w)

    def prune_cluster(group: list[FittedPeak]) -> None:
        """Drop components the data does not support.

        Extra pseudo-Voigts always buy a little squared error, so raw SSE
        cannot decide between k and k-1 components; an information
        criterion on the cluster window can.
        """
        current = group
        while len(current) >= 2:
            base = model - sum_of_peaks(x, current)
            target = y - base
            win = _cluster_window(current)
            bic_full = _window_bic(target, win, current)
            best_subset = None
            best_bic = bic_full
            for i in range(len(current)):
                subset = current[:i] + current[i + 1:]
                span = (min(p.center_nm for p in subset),
                        max(p.center_nm for p in subset))
                refined = _joint_fit(x, target, _theta_from_peaks(subset),
                                     span, [p.source for p in subset],
                                     max_iter=max_iter)
                if refined is None:
                    continue
                bic = _window_bic(target, win, refined)
                if bic < best_bic:
                    best_bic = bic
                    best_subset = refined
            if best_subset is None:
                break
            if not try_replace(current, best_subset, require_decrease=False):
                break
            current = best_subset

    def joint_pass():
        if not joint or len(all_peaks) < 2:
            return
        for group in _clusters(all_peaks):
            if len(group) < 2:
                continue
            base = model - sum_of_peaks(x, group)
            span = (min(p.center_nm for p in group),
                    max(p.center_nm for p in group))
            refined = _joint_fit(x, y - base, _theta_from_peaks(group), span,
                                 [p.source for p in group], max_iter=max_iter)
            if try_replace(group, refined):
                prune_cluster(refined)
            else:
                prune_cluster(group)

    def split_blend(cand: PeakCandidate, overlapping: list[FittedPeak],
                    pass_cands: list[PeakCandidate]) -> bool:
        """Re-decompose a blend around a residual candidate.

        The true component layout is ambiguous from a single residual lobe,
        so several plausible center sets are fitted and the best valid
        decomposition competes against the old one: the old centers plus
        the candidate; every residual lobe inside the blend's span; and,
        for a lone blended peak, the candidate plus its mirror image
        across the blend center.  Trials differ in component count, so
        raw squared error would always crown the largest; they are scored
        by an information criterion on a window shared by all of them.
        """
        base = model - sum_of_peaks(x, overlapping)
        target = y - base
        old_centers = [p.center_nm for p in overlapping]
        max_f = max(p.fwhm_nm for p in overlapping)
        span_r = CLUSTER_GAP_FWHM * max(max_f, dx)
        lobes = [c.wavelength_nm for c in pass_cands
                 if any(abs(c.wavelength_nm - oc) <= span_r
                        for oc in old_centers)]
        trials = [old_centers + [cand.wavelength_nm]]
        if len(lobes) >= 2:
            trials.append(lobes)
        if len(overlapping) == 1:
            trials.append([cand.wavelength_nm,
                           2.0 * old_centers[0] - cand.wavelength_nm])
        all_centers = [c for centers in trials for c in centers]
        lo = min(all_centers) - WINDOW_FWHM_FACTOR * max_f
        hi = max(all_centers) + WINDOW_FWHM_FACTOR * max_f
        win = _window(x, 0.5 * (lo + hi), 0.5 * (hi - lo))
        w0 = max(max_f / (len(old_centers) + 1), 2 * dx)
        best: list[FittedPeak] | None = None
        best_bic = math.inf
        for centers in trials:
            centers = sorted(centers)
            if any(c2 - c1 < DEDUPE_CHANNELS * dx
                   for c1, c2 in zip(centers, centers[1:])):
                continue
            rows = []
            for c in centers:
                h = float(np.interp(c, x, target))
                rows.append([c, math.log(max(h, floor)),
                             math.log(0.85 * w0), math.log(0.25 * w0)])
            refined = _joint_fit(x, target, np.array(rows).ravel(),
                                 (centers[0], centers[-1]),
                                 ["RESIDUAL_PASS"] * len(centers),
                                 max_iter=max_iter)
            if refined is None or any(p.amplitude < floor for p in refined):
                continue
            bic = _window_bic(target, win, refined)
            if bic < best_bic:
                best_bic = bic
                best = refined
        if best is None:
            return False
        # Provenance: each old source sticks to the refined component
        # nearest its former center; genuinely new components keep the
        # residual-pass tag.
        unclaimed = list(range(len(best)))
        for p in overlapping:
            if not unclaimed:
                break
            nearest = min(unclaimed,
                          key=lambda i: abs(best[i].center_nm - p.center_nm))
            best[nearest].source = p.source
            unclaimed.remove(nearest)
        return try_replace(overlapping, best)

    # Clean up mutually-biased neighbor fits first: a sharp joint model
    # leaves only genuinely missing lines in the residual.
    joint_pass()
    for _ in range(max_passes):
        resid = y - model
        cands = find_peaks(x, resid, min_prominence_sigma, sigma=sigma)
        changed = False
        for cand in cands:
            if any(abs(p.center_nm - cand.wavelength_nm) < DEDUPE_CHANNELS * dx
                   for p in all_peaks):
                continue
            # Earlier candidates may have changed the model; a lobe that
            # was an artifact of the old fit has no support in the
            # refreshed residual and must not be fitted.
            if resid[cand.index] < min_prominence_sigma * sigma:
                continue
            overlapping = [
                p for p in all_peaks
                if abs(p.center_nm - cand.wavelength_nm)
                <= CLUSTER_GAP_FWHM * max(p.fwhm_nm, dx)
            ]
            if overlapping:
                if split_blend(cand, overlapping, cands):
                    changed = True
                    resid = y - model
                continue
            peak = fit_peak(x, resid, cand, max_iter=max_iter,
                            source="RESIDUAL_PASS")
            if peak is None:
                continue
            if peak.amplitude < floor:
                log.debug("residual pass: %.3f nm below amplitude floor",
                          peak.center_nm)
                continue
            new_model = model + peak.evaluate(x)
            new_sse = float(np.sum((y - new_model) ** 2))
            if new_sse < sse:
                all_peaks.append(peak)
                model = new_model
                resid = y - model
                sse = new_sse
                changed = True
        if not changed:
            break
        joint_pass()
    all_peaks.sort(key=lambda p: p.center_nm)
    return all_peaks
