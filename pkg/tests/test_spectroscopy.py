import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from gemsim import spectroscopy as S
from gemsim.core import GemError


def im_chi_oracle(d, omega, delta1, gamma, gamma0):
    # denominator expanded by hand: |a + i b|^2 with a, b real
    a = omega**2 + gamma * gamma0 - 4 * delta1 * d
    b = 2 * gamma * d + 2 * delta1 * gamma0
    return (8 * d * d * gamma + 2 * gamma0 * (omega**2 + gamma0 * gamma)) / (a * a + b * b)


def re_chi_oracle(d, omega, delta1, gamma, gamma0):
    a = omega**2 + gamma * gamma0 - 4 * delta1 * d
    b = 2 * gamma * d + 2 * delta1 * gamma0
    return (4 * d * (omega**2 - 4 * d * delta1) - 4 * delta1 * gamma0**2) / (a * a + b * b)


def test_no_absorption_at_two_photon_resonance():
    p = S.RamanLineParams(omega=20.0, delta1=2000.0, gamma0=0.0)
    assert S.susceptibility(0.0, p).imag == 0.0


def test_susceptibility_matches_transcription(rng):
    for _ in range(100):
        om, D, g, g0 = rng.uniform(0.1, 30), rng.uniform(-3000, 3000), rng.uniform(0.5, 10), rng.uniform(0, 0.1)
        d = rng.uniform(-2, 2)
        chi = S.susceptibility(d, S.RamanLineParams(omega=om, delta1=D, gamma=g, gamma0=g0))
        assert chi.imag == pytest.approx(im_chi_oracle(d, om, D, g, g0), rel=1e-12, abs=1e-300)
        assert chi.real == pytest.approx(re_chi_oracle(d, om, D, g, g0), rel=1e-12, abs=1e-15)


def test_two_level_limit():
    # no coupling: chi = 2 / (gamma (...)), peak Im chi = 2/gamma on resonance with gamma0 = gamma
    p = S.RamanLineParams(omega=0.0, delta1=0.0, gamma=2.0, gamma0=0.0)
    assert S.susceptibility(0.37, p).imag == pytest.approx(im_chi_oracle(0.37, 0.0, 0.0, 2.0, 0.0))


@settings(max_examples=100, deadline=None)
@given(
    om=st.floats(0.1, 30), D=st.floats(-3000, 3000), g0=st.floats(1e-4, 0.1), d=st.floats(-5, 5),
)
def test_pole_form_equals_direct(om, D, g0, d):
    p = S.RamanLineParams(omega=om, delta1=D, gamma=5.746, gamma0=g0)
    direct = S.susceptibility(d, p)
    pole = complex(S._chi_pole(D, d, p))
    G = p.gamma - 2j * D
    split = 2j / G + (om**2 / G**2) / (d - S.raman_pole(p))
    assert abs(pole - direct) <= 1e-9 * abs(direct) + 1e-15
    assert abs(split - direct) <= 1e-9 * abs(direct) + 1e-15


def test_raman_pole_gives_light_shift_and_width():
    p = S.RamanLineParams(omega=20.0, delta1=2000.0, gamma=5.746, gamma0=0.005)
    dp = S.raman_pole(p)
    assert dp.real == pytest.approx(20.0**2 / (4 * 2000.0), rel=1e-4)
    d = np.linspace(dp.real - 0.2, dp.real + 0.2, 40001)
    assert S.fwhm(d, S.susceptibility(d, p).imag) == pytest.approx(-2 * dp.imag, rel=1e-3)


def test_faddeeva_average_matches_quadrature():
    p = S.RamanLineParams.in_gamma_units(1.0, 100.0, temperature=350.0)
    s = p.sigma_v
    for d in (S.raman_pole(p).real, 0.003, -0.004):
        prof = S.doppler_averaged_absorption(np.array([d]), p)
        assert prof.meta["method"] == "exact"
        f = lambda v: S.doppler_shifted_im_chi(v, 0.0, d, p) * math.exp(-0.5 * (v / s) ** 2) / (s * math.sqrt(2 * math.pi))
        ref, _ = integrate.quad(f, -10 * s, 10 * s, points=[0.0], limit=400, epsabs=0, epsrel=1e-11)
        assert prof.values[0] == pytest.approx(ref, rel=1e-7)


def test_transverse_average_matches_monte_carlo():
    p = S.RamanLineParams.in_gamma_units(1.0, 100.0, temperature=350.0, theta=0.01)
    d = np.linspace(-0.2, 0.2, 5) + S.raman_pole(p).real
    prof = S.doppler_averaged_absorption(d, p)
    assert prof.converged
    mean, se = S.monte_carlo_absorption(d, p, n=400_000, seed=7)
    assert np.all(np.abs(prof.values - mean) <= 3 * se)


def test_hermite_flags_non_convergence():
    p = S.RamanLineParams.in_gamma_units(1.0, 100.0, temperature=350.0, theta=0.3)
    d = np.linspace(-0.2, 0.2, 5)
    with pytest.warns(UserWarning, match="not converged"):
        prof = S.doppler_averaged_absorption(d, p, method="hermite", order=64)
    assert not prof.converged
    with pytest.raises(GemError):
        S.doppler_averaged_absorption(d, p, method="hermite", order=16)


def test_doppler_width_near_500_mhz():
    assert S.doppler_width_mhz(343.0) == pytest.approx(500.0, rel=0.2)


def test_far_detuned_theta_zero_line_keeps_bare_width():
    # at 10 GHz detuning the one-photon Doppler spread barely moves the light shift
    p = S.RamanLineParams(omega=20.0, delta1=10000.0, gamma=5.746, gamma0=0.005)
    line = S.raman_line(p)
    assert line.fwhm == pytest.approx(-2 * S.raman_pole(p).imag, rel=0.02)
    assert line.peak[0] == pytest.approx(S.raman_pole(p).real, abs=0.1 * line.fwhm)


def test_width_grows_linearly_with_angle():
    p = S.RamanLineParams.in_gamma_units(1.0, 100.0, temperature=350.0)
    th = np.linspace(0.004, 0.02, 5)
    w = S.raman_fwhm_vs_theta(th, p)
    slope, icpt = np.polyfit(th, w, 1)
    resid = w - (slope * th + icpt)
    r2 = 1 - np.sum(resid**2) / np.sum((w - w.mean()) ** 2)
    assert r2 >= 0.99
    peaks = S.raman_peak_vs_theta(th, p)
    assert np.all(np.diff(peaks) < 0)


def test_power_broadening_ordering():
    p = S.RamanLineParams.in_gamma_units(1.0, 100.0, temperature=350.0)
    om = [0.5, 1.0, 2.0, 3.0]
    near = S.raman_fwhm_vs_omega(om, 100.0, p)
    far = S.raman_fwhm_vs_omega(om, 300.0, p)
    assert np.all(np.diff(near) > 0)
    assert np.all(near > far)


def test_broadened_transmission_matches_quadrature():
    p = S.RamanLineParams(omega=20.0, delta1=2000.0, gamma=5.746, gamma0=0.005, etaL=0.2)
    d = np.array([-0.1, -0.05, 0.0, 0.07, 0.15, 0.3])
    od = 40.0
    prof = S.broadened_transmission(p, od, d)
    for di, T in zip(d, prof.values):
        f = lambda x: S.susceptibility(di - x, p).imag
        pts = [x for x in (di - S.raman_pole(p).real,) if 0 < x < p.etaL]
        avg, _ = integrate.quad(f, 0.0, p.etaL, points=pts or None, limit=400, epsabs=0, epsrel=1e-12)
        assert T == pytest.approx(math.exp(-od * avg / p.etaL), rel=1e-8)


def test_zero_gradient_transmission_is_plain_line():
    p = S.RamanLineParams(omega=20.0, delta1=2000.0, gamma0=0.005)
    d = np.linspace(-0.2, 0.1, 7)
    prof = S.broadened_transmission(p, 3.0, d)
    np.testing.assert_allclose(prof.values, np.exp(-3.0 * S.susceptibility(d, p).imag), rtol=1e-14)
    with pytest.raises(GemError):
        S.broadened_transmission(p.with_(etaL=-1.0), 3.0, d)


def test_line_center_od():
    p = S.RamanLineParams(omega=20.0, delta1=2000.0, gamma0=0.005, etaL=0.2)
    od = S.line_center_od(p, 10.0)
    c = S.raman_pole(p).real + 0.1
    assert od == pytest.approx(-math.log(S.broadened_transmission(p, 10.0, np.array([c])).values[0]))


def test_vapor_cell_constants():
    assert S.collisional_broadening(1.0, "Kr") == pytest.approx(17.1)
    assert S.collisional_broadening(1.0, "Ne") == pytest.approx(9.84)
    assert S.collisional_broadening(2.0, coefficient=5.0) == 10.0
    with pytest.raises(GemError):
        S.collisional_broadening(1.0, "Xe")
    with pytest.raises(GemError):
        S.collisional_broadening(-1.0)


def test_diffusion_law():
    cell = S.VaporCellParams(pressure=5.0)
    t = np.array([0.0, 1e-4, 4e-4])
    r = S.diffusion_radius(t, cell)
    assert r[0] == 0.0
    assert r[2] / r[1] == pytest.approx(2.0)
    assert r[1] == pytest.approx(2 * math.sqrt(2 * cell.diffusion_coefficient * 1e-4))
    # lower pressure diffuses faster
    assert S.diffusion_radius(1e-4, S.VaporCellParams(pressure=1.0)) > r[1]
    with pytest.raises(GemError):
        S.VaporCellParams(pressure=0.0).diffusion_coefficient


def test_scattering_rate_limits():
    assert S.scattering_rate(0.0, 100.0, 1.0) == pytest.approx(1.0)
    assert S.scattering_rate(5.0, math.inf, 1.0) == pytest.approx(1.0)
    assert S.scattering_rate(3.0, 4.0, 0.0) == pytest.approx(0.0)
    assert S.scattering_rate(1.0, 0.0, 1.0) == pytest.approx(math.sqrt(2))


def test_fwhm_helper():
    x = np.linspace(-10, 10, 20001)
    y = 1 / (1 + x**2)
    assert S.fwhm(x, y, baseline=0.0) == pytest.approx(2.0, rel=1e-6)
    g = np.exp(-(x**2) / 2)
    assert S.fwhm(x, g) == pytest.approx(2 * math.sqrt(2 * math.log(2)), rel=1e-6)
    assert math.isnan(S.fwhm(x, x))
    assert math.isnan(S.fwhm([0, 1], [1, 2]))


def test_parameter_validation():
    with pytest.raises(GemError):
        S.RamanLineParams(omega=1.0, delta1=1.0, theta=4.0)
    with pytest.raises(GemError):
        S.RamanLineParams(omega=1.0, delta1=1.0, temperature=0.0)
    with pytest.raises(GemError):
        S.LineProfile(np.array([1.0, 0.0]), np.array([0.0, 0.0]))
    with pytest.raises(GemError):
        S.doppler_shifted_im_chi(0.0, 0.0, 0.0, S.RamanLineParams(1.0, 1.0), convention="other")


def test_conventions_agree_without_motion():
    p = S.RamanLineParams(omega=20.0, delta1=2000.0, gamma0=0.005, theta=0.1)
    a = S.doppler_shifted_im_chi(0.0, 0.0, 0.01, p, "shifts")
    b = S.doppler_shifted_im_chi(0.0, 0.0, 0.01, p, "printed")
    assert a == pytest.approx(b) == pytest.approx(S.susceptibility(0.01, p).imag)
