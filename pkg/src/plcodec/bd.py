"""Bjontegaard rate and quality deltas between two RD curves.

Curves are interpolated with an Akima piecewise cubic over log2(bpp) and
integrated across the overlapping range, so a constant rate ratio or a
constant dB offset comes out exact. Positive bd_rate means the test curve
spends more bits at equal quality; positive bd_psnr means it reconstructs
better at equal rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import Akima1DInterpolator

from .codec import RDPoint
from .errors import CurveError

MIN_BD_POINTS = 4


@dataclass(frozen=True)
class RDCurve:
    """RD samples of one codec configuration, ascending in rate."""

    points: tuple[RDPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise CurveError("curve needs at least one point")
        for p in self.points:
            if not (p.bpp > 0 and math.isfinite(p.bpp)):
                raise CurveError(f"bpp must be finite and positive, got {p.bpp}")
            if not math.isfinite(p.psnr):
                raise CurveError("psnr must be finite; drop lossless points")
        rates = [p.bpp for p in self.points]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise CurveError(f"bpp must be strictly increasing, got {rates}")

    @property
    def log_rates(self) -> np.ndarray:
        return np.log2([p.bpp for p in self.points])

    @property
    def psnrs(self) -> np.ndarray:
        return np.array([p.psnr for p in self.points], dtype=np.float64)


def _check_bd_pair(reference: RDCurve, test: RDCurve) -> None:
    for name, c in (("reference", reference), ("test", test)):
        if len(c.points) < MIN_BD_POINTS:
            raise CurveError(
                f"{name} curve has {len(c.points)} points; "
                f"BD metrics need at least {MIN_BD_POINTS}"
            )
        p = c.psnrs
        if any(b <= a for a, b in zip(p, p[1:])):
            raise CurveError(f"{name} curve psnr must be strictly increasing")


def _overlap(a: np.ndarray, b: np.ndarray, axis: str) -> tuple[float, float]:
    lo = max(a.min(), b.min())
    hi = min(a.max(), b.max())
    if not lo < hi:
        raise CurveError(f"curves do not overlap in {axis}")
    return float(lo), float(hi)


def _mean_gap(x_ref, y_ref, x_test, y_test, axis: str) -> float:
    lo, hi = _overlap(x_ref, x_test, axis)
    ref = Akima1DInterpolator(x_ref, y_ref)
    tst = Akima1DInterpolator(x_test, y_test)
    return float(tst.integrate(lo, hi) - ref.integrate(lo, hi)) / (hi - lo)


def bd_rate(reference: RDCurve, test: RDCurve) -> float:
    """Average rate change of test over reference, percent, at equal quality."""
    _check_bd_pair(reference, test)
    gap = _mean_gap(
        reference.psnrs, reference.log_rates, test.psnrs, test.log_rates, "psnr"
    )
    return (2.0**gap - 1.0) * 100.0


def bd_psnr(reference: RDCurve, test: RDCurve) -> float:
    """Average quality change of test over reference, dB, at equal rate."""
    _check_bd_pair(reference, test)
    return _mean_gap(
        reference.log_rates, reference.psnrs, test.log_rates, test.psnrs, "rate"
    )


def bd_metrics(reference: RDCurve, test: RDCurve) -> tuple[float, float]:
    return bd_rate(reference, test), bd_psnr(reference, test)
