"""Log-log least-squares rate fits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


class FitError(ValueError):
    pass


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    points_used: int
    rank_deficient: bool = False
    dropped: tuple = ()

    def as_dict(self) -> dict:
        out = asdict(self)
        out["dropped"] = list(self.dropped)
        return out

    def predict(self, eps: float) -> float:
        return math.exp(self.intercept) * eps**self.slope


def fit_rate(points: Sequence[tuple[float, float]]) -> RateFit:
    """Least squares of ``log error = intercept + slope * log eps``.

    ``residual`` is the root-mean-square deviation in log space.
    """
    if len(points) < 3:
        raise FitError("a rate fit needs at least three points")
    eps = np.array([p[0] for p in points], dtype=float)
    err = np.array([p[1] for p in points], dtype=float)
    if np.any(eps <= 0) or np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise FitError("rate fits need positive finite values")
    x, y = np.log(eps), np.log(err)
    design = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    rms = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    return RateFit(float(coef[1]), float(coef[0]), rms, len(points))


def fit_rate_with_floor(points: Sequence[tuple[float, float]], floor: float = 0.0) -> RateFit:
    """Fit after dropping the smallest eps while its error sits below ``10 * floor``.

    All-zero data (an eps-independent exact state) yields a flagged,
    rank-deficient fit with zero slope instead of an error.
    """
    pts = sorted(points, key=lambda p: -p[0])
    if len(pts) < 3:
        raise FitError("a rate fit needs at least three points")
    if all(p[1] == 0 for p in pts):
        return RateFit(0.0, -math.inf, 0.0, len(pts), rank_deficient=True)
    dropped = []
    while len(pts) > 3 and pts[-1][1] < 10 * floor:
        dropped.append(pts.pop()[0])
    fit = fit_rate(pts)
    fit.dropped = tuple(dropped)
    return fit
