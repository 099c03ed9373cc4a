"""Least-squares fits and tail profiles used by the ensemble layer."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

__all__ = ["FitResult", "TailProfile", "linear_fit", "scaling_fit", "decay_fit", "tail_profile"]


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    stderr: float
    intercept_stderr: float
    r2: float
    n: int

    def to_dict(self):
        return asdict(self)


def linear_fit(x, y) -> FitResult:
    """Ordinary least squares y = slope * x + intercept with standard errors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    n = x.size
    if n < 2:
        raise ValueError("need at least two points")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise ValueError("x values are all equal")
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if n > 2:
        s2 = ss_res / (n - 2)
        se = float(np.sqrt(s2 / sxx))
        se_int = float(np.sqrt(s2 * (1.0 / n + xm**2 / sxx)))
    else:
        se = se_int = 0.0
    return FitResult(float(slope), float(intercept), se, se_int, float(r2), n)


def scaling_fit(points) -> FitResult:
    """Power-law exponent from a straight line through (ln x, ln y)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ValueError("scaling_fit needs at least three (x, y) pairs")
    if np.any(pts <= 0):
        raise ValueError("scaling_fit needs strictly positive x and y")
    return linear_fit(np.log(pts[:, 0]), np.log(pts[:, 1]))


def decay_fit(xs, ys) -> FitResult:
    """Exponential-decay fit ln y = intercept + slope * x; the decay rate is -slope."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 3:
        raise ValueError("decay_fit needs at least three points")
    if np.any(ys <= 0):
        raise ValueError("decay_fit needs strictly positive y")
    return linear_fit(xs, np.log(ys))


@dataclass(frozen=True)
class TailProfile:
    a: np.ndarray
    exceedance: np.ndarray
    c_hat: float
    fit: FitResult | None
    c_lip: float
    n: int

    def to_dict(self):
        return {
            "a": self.a.tolist(),
            "exceedance": self.exceedance.tolist(),
            "c_hat": self.c_hat,
            "fit": None if self.fit is None else self.fit.to_dict(),
            "c_lip": self.c_lip,
            "n": self.n,
        }


def tail_profile(samples, c_lip: float, a_grid, min_count: int = 10) -> TailProfile:
    """Empirical P[|X - mean| >= a * c_lip] on ``a_grid`` and a sub-Gaussian fit.

    ``c_hat`` is the slope of -ln p against a^2 (with intercept), using the
    grid points where p exceeds ``min_count / n``.
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 1000:
        raise ValueError("tail_profile needs at least 10^3 samples")
    if not c_lip > 0:
        raise ValueError("Lipschitz constant must be positive")
    dev = np.abs(x - x.mean())
    if not np.any(dev > 0):
        raise ValueError("samples are degenerate (all equal)")
    a = np.sort(np.asarray(a_grid, dtype=float))
    dev_sorted = np.sort(dev)
    # count of deviations >= a*c_lip
    counts = n - np.searchsorted(dev_sorted, a * c_lip, side="left")
    p = counts / n
    use = p > min_count / n
    fit = None
    c_hat = float("nan")
    if use.sum() >= 3:
        fit = linear_fit(a[use] ** 2, -np.log(p[use]))
        c_hat = fit.slope
    return TailProfile(a, p, c_hat, fit, float(c_lip), n)
