import numpy as np
import pytest

from echtune.actuation import AngleFit, GyrotronSet, angles_to_profile, profile_to_angles
from echtune.errors import NoGyrotrons
from echtune.profiles import EchParams, fit_ech_gaussian, gaussian_profile, radial_grid

RHO = radial_grid()


def test_single_gyrotron_exact_match():
    gset = GyrotronSet(count=1)
    target = EchParams(mu=0.5, sigma=gset.deposition_width, w=gset.amplitude)
    fit = profile_to_angles(target, gset, RHO)
    assert fit.residual <= 1e-10
    assert fit.angles_deg[0] == pytest.approx((0.5 - gset.cal_offset) / gset.cal_slope, abs=1e-6)
    assert not fit.clamped


def test_zero_gyrotrons_raises():
    gset = GyrotronSet(count=0)
    with pytest.raises(NoGyrotrons):
        profile_to_angles(EchParams(0.5, 0.06, 1.0), gset, RHO)


def test_empty_angles_give_zero_profile():
    gset = GyrotronSet(count=2)
    assert np.all(angles_to_profile([], gset, RHO) == 0.0)


def test_superposition_linearity():
    gset = GyrotronSet(count=4)
    a = [-5.0, 3.0]
    b = [10.0]
    combined = angles_to_profile(a + b, gset, RHO)
    np.testing.assert_allclose(combined, angles_to_profile(a, gset, RHO) + angles_to_profile(b, gset, RHO), rtol=1e-12)


def _brute_force_two_gyrotron_residual(target: EchParams, gset: GyrotronSet, n_grid: int = 81) -> float:
    # independent oracle: exhaustive joint scan over both deposition centers
    lo, hi = gset.center_range()
    centers = np.linspace(lo, hi, n_grid)
    t = gaussian_profile(target, RHO)
    best = np.inf
    for c1 in centers:
        p1 = gset.amplitude * np.exp(-((RHO - c1) ** 2) / (2 * gset.deposition_width**2))
        for c2 in centers:
            p2 = gset.amplitude * np.exp(-((RHO - c2) ** 2) / (2 * gset.deposition_width**2))
            r = np.sqrt(np.mean((p1 + p2 - t) ** 2))
            best = min(best, r)
    return best


def test_two_gyrotrons_wide_target_matches_grid_oracle():
    gset = GyrotronSet(count=2)
    target = EchParams(mu=0.5, sigma=0.12, w=1.6)
    fit = profile_to_angles(target, gset, RHO)
    oracle = _brute_force_two_gyrotron_residual(target, gset)
    assert fit.residual <= oracle + 1e-6


@pytest.mark.parametrize("target", [
    EchParams(0.35, 0.08, 1.2),
    EchParams(0.5, 0.10, 2.0),
    EchParams(0.6, 0.06, 0.9),
])
def test_round_trip_recovers_parameters(target):
    gset = GyrotronSet(count=3)
    fit = profile_to_angles(target, gset, RHO)
    realized = angles_to_profile(fit.angles_deg, gset, RHO)
    recovered, _ = fit_ech_gaussian(np.clip(realized, 0, None), RHO)
    assert recovered.mu == pytest.approx(target.mu, abs=0.1 * max(target.mu, 0.1))
    assert recovered.w == pytest.approx(target.w, rel=0.35)


def test_unreachable_center_is_flagged_and_clamped():
    gset = GyrotronSet(count=1, angle_min_deg=-5, angle_max_deg=5)  # centers 0.42..0.58
    fit = profile_to_angles(EchParams(mu=0.9, sigma=0.06, w=1.0), gset, RHO)
    assert fit.clamped
    lo, hi = gset.center_range()
    assert lo <= fit.centers[0] <= hi


def test_calibration_invertible_on_range():
    gset = GyrotronSet()
    angles = np.linspace(gset.angle_min_deg, gset.angle_max_deg, 7)
    np.testing.assert_allclose(gset.center_to_angle(gset.angle_to_center(angles)), angles, rtol=1e-12)


def test_any_count_succeeds():
    target = EchParams(0.5, 0.09, 1.5)
    for count in (1, 2, 3, 5, 8):
        fit = profile_to_angles(target, GyrotronSet(count=count), RHO)
        assert isinstance(fit, AngleFit)
        assert np.isfinite(fit.residual)
