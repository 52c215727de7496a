import numpy as np
import pytest

from gemsim import fwm as F
from gemsim.core import GemError

BASE = F.FwmParams(gamma0=0.002, delta1=200.0, omega=3.0, etaL=0.08, seed_ratio=0.01, od_resonant=280.0)


def test_matrix_literal():
    p = F.FwmParams(gamma=1.0, gamma0=0.01, delta1=50.0, omega=2.0, od_resonant=10.0, delta_hf=5.0,
                    g_prime=0.7, omega_prime=1.5)
    d = 0.3
    G0 = 0.01 + 0.3j
    G = 1.0 + 50.3j
    a0 = 10.0 / (1.0 * (4.0 + G * G0))
    cross = -0.7 * 2.0 * 1.5 / 55.0
    expect = 1j * a0 * np.array([[1j * G0, cross], [cross, -1j * G * 0.7 * 1.5**2 / 55.0**2]])
    np.testing.assert_allclose(F.fwm_matrix(d, p), expect, rtol=1e-14)
    gen = F.generator(d, p)
    np.testing.assert_allclose(gen[0], expect[0], rtol=1e-14)
    np.testing.assert_allclose(gen[1], -expect[1], rtol=1e-14)


def test_local_detuning_is_centred_and_compensated():
    p = BASE
    assert p.local_detuning(0.0, 0.5) == pytest.approx(9.0 / 200.0)
    assert p.local_detuning(0.0, 1.0) - p.local_detuning(0.0, 0.0) == pytest.approx(0.08)
    assert p.with_(stark_compensation=False).local_detuning(0.01, 0.5) == pytest.approx(0.01)


def test_uncoupled_stokes_reduces_to_raman_absorption():
    # no Stokes coupling: the probe sees plain Raman absorption exp(int i a0 a11 dz)
    p = BASE.with_(omega_prime=0.0)
    d = np.array([-0.05, 0.0, 0.003, 0.05])
    res = F.propagate_fwm(F.TwoModeState(1.0, 0.0), p, d)
    ref = F.raman_absorption_reference(d, p, n=200001)
    np.testing.assert_allclose(res.transfer[:, 0, 0], ref, rtol=1e-8)
    assert np.all(res.transfer[:, 0, 1] == 0)


def test_rk4_matches_fine_step_oracle():
    d = np.array([-0.05, 0.0, 0.003, 0.05])
    res = F.propagate_fwm(F.TwoModeState(1.0, 0.0), BASE, d, rtol=1e-9)
    assert res.converged
    fine, _ = F._transfer(d, BASE, 1 << 15)
    err = F.transfer_error(res.transfer, fine, res.amplification)
    assert err.max() <= 1e-8


def test_fourth_order_convergence():
    d = np.array([-0.05, 0.003, 0.05])
    amp = F.amplification(d, BASE)
    fine, _ = F._transfer(d, BASE, 1 << 15)
    errs = [F.transfer_error(F._transfer(d, BASE, n)[0], fine, amp).max() for n in (512, 1024, 2048)]
    for a, b in zip(errs, errs[1:]):
        assert a / b == pytest.approx(16.0, rel=0.15)


def test_state_vector_and_profile():
    res = F.propagate_fwm(F.TwoModeState(1.0, 0.01j), BASE, 0.02, profile=True)
    P = res.transfer
    np.testing.assert_allclose([res.final.E, res.final.Es_conj], P @ np.array([1.0, 0.01j]), rtol=1e-14)
    assert res.profile.shape == (res.nz + 1, 2)
    assert res.z[0] == 0.0 and res.z[-1] == 1.0
    np.testing.assert_allclose(res.profile[-1], [res.final.E, res.final.Es_conj], rtol=1e-12)


def test_zero_length_cell_is_identity():
    res = F.propagate_fwm(F.TwoModeState(0.7, 0.1), BASE.with_(L=0.0), np.array([0.0, 0.1]))
    np.testing.assert_array_equal(res.transfer, np.broadcast_to(np.eye(2), (2, 2, 2)))
    assert res.final.E == 0.7


def test_parameter_errors():
    with pytest.raises(GemError):
        F.propagate_fwm(F.TwoModeState(1.0, 0.0), BASE, 0.0, nz=256)
    with pytest.raises(GemError):
        F.FwmParams(delta1=200.0, delta_hf=10.0, delta1_prime=200.0)
    F.FwmParams(delta1=200.0, delta_hf=10.0, delta1_prime=210.0)
    with pytest.raises(GemError):
        F.FwmParams(delta1=-5.0, delta_hf=5.0)
    with pytest.raises(GemError):
        F.FwmParams(od_resonant=-1.0)
    with pytest.raises(GemError):
        F.transmission_spectrum([0.1, 0.0], BASE)


def test_unconverged_refinement_is_flagged():
    with pytest.warns(UserWarning, match="refinement"):
        res = F.propagate_fwm(F.TwoModeState(1.0, 0.0), BASE.with_(od_resonant=1550.0), 0.04, rtol=1e-15, max_nz=1024)
    assert not res.converged


def test_band_energy():
    x = np.linspace(-0.1, 0.1, 201)
    assert F.band_energy(x, np.ones_like(x), 0.0, 0.02) == pytest.approx(1.0)
    assert F.band_energy(x, 2 * np.ones_like(x), 0.04, 0.0123) == pytest.approx(4.0)
    # linear |field|^2 integrates exactly
    assert F.band_energy(x, np.sqrt(1 + x), 0.05, 0.02) == pytest.approx(1.05)
    assert F.band_energy(x, np.ones_like(x), 0.0, 0.0) == 0.0
    with pytest.raises(GemError):
        F.band_energy(x, np.ones_like(x), 0.09, 0.02)
    with pytest.raises(GemError):
        F.band_energy(x, np.ones_like(x), 0.0, -0.01)


def test_spectrum_absorbs_at_centre_and_amplifies_off_centre():
    p = BASE.with_(od_resonant=1550.0, omega=5.2)
    axis = np.linspace(-0.1, 0.1, 41)
    sp = F.transmission_spectrum(axis, p)
    assert sp.converged
    assert sp.at(0.0)[0] < 1.0
    assert sp.probe.max() > 1.0 and sp.gain.any()
    assert sp.stokes.max() > 1.0


def test_stokes_seed_phase_choice():
    axis = np.array([0.03])
    sp = F.transmission_spectrum(axis, BASE, n_phases=16)
    res = F.propagate_fwm(F.TwoModeState(1.0, 0.0), BASE, axis)
    P = res.transfer[0]
    phases = 2 * np.pi * np.arange(16) / 16
    probe = np.abs(P[0, 0] + 0.01 * np.exp(1j * phases) * P[0, 1])
    assert sp.probe[0] == pytest.approx(probe.max(), rel=1e-12)


def test_od_scan_trends():
    res = F.od_scan([100, 300, 600, 900, 1200], BASE, omega0s=(0.0, 0.04), delta_w=0.02)
    s0 = [r["xi_stokes_0"] for r in res["rows"]]
    s4 = [r["xi_stokes_0.04"] for r in res["rows"]]
    assert all(r["converged"] for r in res["rows"])
    assert np.all(np.diff(s0) < 0)
    assert np.all(np.diff(s4) > 0)
