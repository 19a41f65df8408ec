"""Conversion between the Gaussian ECH parameterization and gyrotron aim angles.

Each gyrotron deposits a fixed-width, fixed-power Gaussian at a radius set by
its aim angle through a strictly monotone affine calibration. A requested
profile is matched by superposing however many gyrotrons are available, so the
conversion works for any gyrotron count; amplitude mismatch shows up in the
fit residual because per-gyrotron power is constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import NoGyrotrons
from .profiles import EchParams, gaussian_profile, radial_grid

_SCAN_POINTS = 241  # per-gyrotron center scan resolution before refinement


@dataclass(frozen=True)
class GyrotronSet:
    """Available gyrotrons, assumed identical apart from aim angle."""

    count: int = 4
    power_kw: float = 500.0
    deposition_width: float = 0.06   # normalized radius
    angle_min_deg: float = -25.0
    angle_max_deg: float = 25.0
    cal_offset: float = 0.5          # deposition center at angle 0
    cal_slope: float = 0.016         # center change per degree; nonzero
    amp_per_kw: float = 0.002        # profile amplitude per kW of power

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("gyrotron count must be nonnegative")
        if self.deposition_width <= 0.0:
            raise ValueError("deposition width must be positive")
        if self.cal_slope == 0.0:
            raise ValueError("calibration must be strictly monotone")
        if self.angle_min_deg >= self.angle_max_deg:
            raise ValueError("angle range must be nonempty")

    @property
    def amplitude(self) -> float:
        return self.power_kw * self.amp_per_kw

    def angle_to_center(self, angle_deg):
        return self.cal_offset + self.cal_slope * np.asarray(angle_deg, dtype=float)

    def center_to_angle(self, center):
        return (np.asarray(center, dtype=float) - self.cal_offset) / self.cal_slope

    def center_range(self) -> tuple[float, float]:
        """Reachable deposition-center interval."""
        a = self.angle_to_center(self.angle_min_deg)
        b = self.angle_to_center(self.angle_max_deg)
        return (min(a, b), max(a, b))


@dataclass(frozen=True)
class AngleFit:
    """Result of matching a target profile with gyrotron depositions."""

    angles_deg: np.ndarray
    centers: np.ndarray
    residual: float          # rms mismatch over the radial grid
    clamped: bool            # target center was outside the reachable range


def angles_to_profile(angles_deg, gset: GyrotronSet, rho: np.ndarray | None = None) -> np.ndarray:
    """Forward model: superpose one fixed Gaussian per supplied angle.

    Angles outside the calibrated range are clamped. An empty angle vector
    yields the zero profile.
    """
    if rho is None:
        rho = radial_grid()
    angles = np.atleast_1d(np.asarray(angles_deg, dtype=float))
    profile = np.zeros_like(rho, dtype=float)
    if angles.size == 0:
        return profile
    clipped = np.clip(angles, gset.angle_min_deg, gset.angle_max_deg)
    centers = gset.angle_to_center(clipped)
    for c in centers:
        profile += gset.amplitude * np.exp(-((rho - c) ** 2) / (2.0 * gset.deposition_width**2))
    return profile


def _superpose(centers: np.ndarray, gset: GyrotronSet, rho: np.ndarray) -> np.ndarray:
    diff = rho[None, :] - centers[:, None]
    return gset.amplitude * np.exp(-(diff**2) / (2.0 * gset.deposition_width**2)).sum(axis=0)


def profile_to_angles(a_q: EchParams, gset: GyrotronSet, rho: np.ndarray | None = None) -> AngleFit:
    """Fit per-gyrotron deposition centers to a target Gaussian profile.

    Coordinate descent: each gyrotron's center is grid-scanned over the
    reachable interval holding the others fixed, then polished with a bounded
    1-d minimizer; three sweeps are enough for these smooth objectives.
    """
    if gset.count == 0:
        raise NoGyrotrons("no gyrotrons available for angle conversion")
    if a_q.w <= 0.0:
        raise ValueError("target amplitude must be positive for angle fitting")
    if rho is None:
        rho = radial_grid()

    lo, hi = gset.center_range()
    clamped = not (lo <= a_q.mu <= hi)
    target = gaussian_profile(a_q, rho)
    scan = np.linspace(lo, hi, _SCAN_POINTS)

    centers = np.full(gset.count, float(np.clip(a_q.mu, lo, hi)))
    for _ in range(3):
        for i in range(gset.count):
            others = _superpose(np.delete(centers, i), gset, rho) if gset.count > 1 else 0.0
            wanted = target - others

            def sq_err(c):
                dep = gset.amplitude * np.exp(-((rho - c) ** 2) / (2.0 * gset.deposition_width**2))
                return float(np.sum((dep - wanted) ** 2))

            errs = [sq_err(c) for c in scan]
            j = int(np.argmin(errs))
            bracket_lo = scan[max(j - 1, 0)]
            bracket_hi = scan[min(j + 1, len(scan) - 1)]
            if bracket_lo == bracket_hi:
                centers[i] = scan[j]
            else:
                res = minimize_scalar(
                    sq_err, bounds=(bracket_lo, bracket_hi), method="bounded",
                    options={"xatol": 1e-12},
                )
                centers[i] = res.x if res.fun <= errs[j] else scan[j]

    fitted = _superpose(centers, gset, rho)
    residual = float(np.sqrt(np.mean((fitted - target) ** 2)))
    angles = np.clip(gset.center_to_angle(centers), gset.angle_min_deg, gset.angle_max_deg)
    return AngleFit(angles_deg=angles, centers=centers, residual=residual, clamped=clamped)
