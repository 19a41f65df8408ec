"""ECH profile parameterization shared across the plant, pipeline, and actuation.

A heating profile over normalized radius rho in [0, 1] is summarized by a
single Gaussian curve: center, width, and amplitude. This triple is the
actuator coordinate used by every downstream model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_MIN = 0.02  # narrowest representable deposition width
DEFAULT_RADIAL_POINTS = 33


@dataclass(frozen=True)
class EchParams:
    """Gaussian summary of a heating profile: w * exp(-(rho-mu)^2 / (2*sigma^2))."""

    mu: float      # center, normalized radius in [0, 1]
    sigma: float   # width, > 0
    w: float       # amplitude, >= 0

    def __post_init__(self):
        if not (0.0 <= self.mu <= 1.0):
            raise ValueError(f"center must lie in [0, 1], got {self.mu}")
        if self.sigma <= 0.0:
            raise ValueError(f"width must be positive, got {self.sigma}")
        if self.w < 0.0:
            raise ValueError(f"amplitude must be nonnegative, got {self.w}")

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.sigma, self.w], dtype=float)

    @staticmethod
    def from_array(a) -> "EchParams":
        mu, sigma, w = (float(v) for v in a)
        return EchParams(mu, sigma, w)


def radial_grid(n_points: int = DEFAULT_RADIAL_POINTS) -> np.ndarray:
    """Normalized-radius sample points, rho = 0 (core) to 1 (edge)."""
    return np.linspace(0.0, 1.0, n_points)


def gaussian_profile(params: EchParams, rho: np.ndarray) -> np.ndarray:
    """Evaluate the Gaussian curve on a radial grid."""
    rho = np.asarray(rho, dtype=float)
    return params.w * np.exp(-((rho - params.mu) ** 2) / (2.0 * params.sigma**2))


AMPLITUDE_FLOOR = 1e-6


def fit_ech_gaussian(profile, rho, amplitude_floor: float = AMPLITUDE_FLOOR) -> tuple[EchParams, float]:
    """Least-squares Gaussian fit of a nonnegative radial profile.

    Returns the fitted parameters and the rms residual. The center is clamped
    to [0, 1] and the width floored at SIGMA_MIN. Raises DegenerateProfile
    (carrying zero-amplitude fallback parameters) when the profile peak is
    below the amplitude floor.
    """
    from scipy.optimize import curve_fit

    from .errors import DegenerateProfile

    profile = np.asarray(profile, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if profile.shape != rho.shape:
        from .errors import SchemaError

        raise SchemaError(f"profile length {profile.shape} != grid length {rho.shape}")
    if np.any(profile < -1e-9):
        raise ValueError("profile must be nonnegative")

    peak = float(profile.max(initial=0.0))
    if peak < amplitude_floor:
        fallback = EchParams(mu=0.5, sigma=SIGMA_MIN, w=0.0)
        raise DegenerateProfile("profile peak below amplitude floor", params=fallback)

    # moment-based initial guess
    mu0 = float(rho[int(np.argmax(profile))])
    above_half = rho[profile >= 0.5 * peak]
    fwhm = float(above_half.max() - above_half.min()) if above_half.size > 1 else 0.1
    sigma0 = max(fwhm / 2.3548, SIGMA_MIN)

    def curve(r, mu, sigma, w):
        return w * np.exp(-((r - mu) ** 2) / (2.0 * sigma**2))

    try:
        popt, _ = curve_fit(
            curve, rho, profile,
            p0=[mu0, sigma0, peak],
            bounds=([0.0, SIGMA_MIN, 0.0], [1.0, 2.0, np.inf]),
            maxfev=20000,
        )
    except RuntimeError:
        popt = [min(max(mu0, 0.0), 1.0), sigma0, peak]
    params = EchParams(mu=float(popt[0]), sigma=float(popt[1]), w=float(popt[2]))
    residual = float(np.sqrt(np.mean((curve(rho, *popt) - profile) ** 2)))
    return params, residual
