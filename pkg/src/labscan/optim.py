"""Damped least-squares (Levenberg-style) minimizer.

Shared by the peak fitter and the camera pose refiner.  The damping factor
starts at 1e-3, multiplies by 10 on a rejected step and divides by 10 on an
accepted one; iteration stops at max_iter or when the step norm drops below
step_tol.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass
class LMResult:
    x: np.ndarray
    cost: float          # 0.5 * sum(residuals**2)
    iterations: int
    converged: bool


def numeric_jacobian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                     rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector residual function."""
    x = np.asarray(x, dtype=float)
    r0 = np.asarray(fn(x), dtype=float)
    jac = np.empty((r0.size, x.size))
    for i in range(x.size):
        h = rel_step * max(abs(x[i]), 1e-3)
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        jac[:, i] = (np.asarray(fn(xp)) - np.asarray(fn(xm))) / (2.0 * h)
    return jac


def least_squares_lm(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    jacobian_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    max_iter: int = 100,
    lam0: float = 1e-3,
    step_tol: float = 1e-12,
) -> LMResult:
    x = np.array(x0, dtype=float)
    jac_of = jacobian_fn or (lambda p: numeric_jacobian(residual_fn, p))
    r = np.asarray(residual_fn(x), dtype=float)
    cost = 0.5 * float(r @ r)
    lam = lam0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jac = jac_of(x)
        g = jac.T @ r
        h = jac.T @ jac
        diag = np.clip(np.diag(h), 1e-12, None)
        stepped = False
        for _ in range(20):  # inner damping search
            try:
                dx = np.linalg.solve(h + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if not np.all(np.isfinite(dx)):
                lam *= 10.0
                continue
            r_new = np.asarray(residual_fn(x + dx), dtype=float)
            cost_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                x = x + dx
                r = r_new
                cost = cost_new
                lam = max(lam / 10.0, 1e-14)
                stepped = True
                break
            lam *= 10.0
        if not stepped:
            # No downhill step at any damping level: numerically stationary.
            converged = True
            break
        if float(np.linalg.norm(dx)) < step_tol:
            converged = True
            break
    return LMResult(x=x, cost=cost, iterations=it, converged=converged)
