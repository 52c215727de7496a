import math
import warnings

import numpy as np
import pytest

from conftest import two_level_cfg
from gemsim.core import ConfigError, EnsembleParams, GradientProfile, PulseSpec, StabilityError, load_config
from gemsim.protocols import echo_peak_time
from gemsim.solver import FieldState, pulse_bandwidth, run_backward_retrieval, run_simulation, slave_field, step_spin


def test_slave_field_constant_profile_is_exact():
    nz = 256
    z = (np.arange(nz) + 0.5) / nz
    sigma = np.full(nz, 0.3 - 0.2j)
    E = slave_field(sigma, EnsembleParams(N_eff=5.0), None, 1.0 + 0j)
    assert np.max(np.abs(E - (1.0 + 5j * (0.3 - 0.2j) * z))) < 1e-12


def test_slave_field_linear_profile_second_order():
    # only the half cell next to z = 0 is approximated (rectangle): error b dz^2 / 8
    nz = 256
    dz = 1 / nz
    z = (np.arange(nz) + 0.5) * dz
    E = slave_field(0.3 + 2.0j * z, EnsembleParams(N_eff=5.0), None, 1.0 + 0j)
    expect = 1.0 + 1j * 5.0 * (0.3 * z + 1j * z**2)
    assert np.max(np.abs(E - expect)) == pytest.approx(5.0 * 2.0 * dz**2 / 8, rel=1e-6)


def test_slave_field_backward_enters_at_far_end():
    nz = 128
    z = (np.arange(nz) + 0.5) / nz
    E = slave_field(np.ones(nz, dtype=complex), EnsembleParams(N_eff=2.0), None, 0j, direction="backward")
    assert np.max(np.abs(E - 2j * (1 - z))) < 1e-12


def test_slave_field_uses_raman_coupling():
    p = EnsembleParams(level_scheme="three_level_adiabatic", N_eff=50.0, delta1=200.0)
    E = slave_field(np.ones(128, dtype=complex), p, 4.0, 0j)
    assert E[-1] == pytest.approx(1j * 50.0 * 4.0 / 200.0 * (1 - 0.5 / 128), rel=1e-12)


def test_free_precession_is_exact():
    # no atom-light coupling: sigma(t) = sigma0 exp(-(gamma0 + i eta z) t)
    p = EnsembleParams(N_eff=0.0, gamma0=0.05)
    nz = 256
    z = (np.arange(nz) + 0.5) / nz
    s0 = np.exp(-((z - 0.5) ** 2) / 0.02).astype(complex)
    st = FieldState(np.zeros(nz, complex), np.zeros(nz, complex), s0.copy())
    g = GradientProfile(((0.0, 10.0, 7.0),))
    dt = 0.01
    for _ in range(100):
        st = step_spin(st, p, (g, None), dt)
    expect = s0 * np.exp(-(0.05 + 7j * z) * 1.0)
    assert np.max(np.abs(st.sigma12 - expect)) < 1e-12
    assert st.t == pytest.approx(1.0)


def test_spin_norm_conserved_without_coupling():
    p = EnsembleParams(N_eff=0.0, gamma0=0.0)
    nz = 512
    rng = np.random.default_rng(3)
    s0 = rng.normal(size=nz) + 1j * rng.normal(size=nz)
    st = FieldState(np.zeros(nz, complex), np.zeros(nz, complex), s0)
    g = GradientProfile(((0.0, 100.0, 16.0),))
    n0 = np.sum(np.abs(s0) ** 2)
    for _ in range(1000):
        st = step_spin(st, p, (g, None), 0.005)
    assert abs(np.sum(np.abs(st.sigma12) ** 2) / n0 - 1) < 1e-10


def test_step_spin_rejects_unstable_dt():
    p = EnsembleParams(N_eff=16.0)
    st = FieldState.empty(256)
    with pytest.raises(StabilityError) as exc:
        step_spin(st, p, (GradientProfile(((0, 1, 16.0),)), None), 0.1)
    assert exc.value.suggested_dt == pytest.approx(0.1 / 16)


def test_energy_balance_two_level():
    # (N/g) d/dt int |sigma|^2 = |E_in|^2 - |E_out|^2 when gamma0 = 0
    cfg = two_level_cfg(beta=0.8, tau=20.0, T_total=7.0)
    rec = run_simulation(cfg, record_history=False)
    stored = cfg.ensemble.N_eff / cfg.ensemble.g * np.sum(np.abs(rec.final_state.sigma12) ** 2) * cfg.grid.dz
    assert rec.input_energy - rec.output_energy == pytest.approx(stored, rel=2e-3)


@pytest.mark.parametrize("beta", [0.05, 0.1, 0.2])
def test_transmission_through_gradient_band(beta):
    # a pulse well inside the band is transmitted with intensity fraction exp(-2 pi beta)
    cfg = two_level_cfg(beta=beta, tau=20.0, T_total=7.0, width=0.6)
    rec = run_simulation(cfg, record_history=False)
    assert rec.output_energy / rec.input_energy == pytest.approx(math.exp(-2 * math.pi * beta), rel=0.02)


def test_echo_at_mirror_time():
    cfg = two_level_cfg(beta=0.5)
    rec = run_simulation(cfg, record_history=False)
    assert abs(echo_peak_time(rec, 6.0) - 9.0) <= 2 * cfg.grid.dt


def test_history_shapes_and_stride():
    cfg = two_level_cfg(beta=0.5, output={"history": True})
    rec = run_simulation(cfg)
    assert rec.E_zt.shape == (rec.hist_times.size, cfg.grid.Nz)
    assert rec.sigma_zt.shape == rec.E_zt.shape
    steps = rec.metadata["steps"]
    assert rec.hist_times.size == 1 + steps // cfg.grid.stride
    off = run_simulation(cfg, record_history=False)
    assert off.hist_times.size == 0 and off.E_zt.shape == (0, cfg.grid.Nz)
    np.testing.assert_array_equal(off.E_out_fw, rec.E_out_fw)


def test_energy_between_ports():
    rec = run_simulation(two_level_cfg(beta=0.5), record_history=False)
    total = rec.energy_between(rec.times[0], rec.times[-1])
    assert total == pytest.approx(rec.output_energy)
    assert rec.energy_between(0, 1e-9) == 0.0
    assert rec.energy_between(0, 20, port="backward") == 0.0


def test_pulse_bandwidth_gaussian_closed_form():
    w = 0.5
    # |E(omega)|^2 ~ exp(-omega^2 w^2): central 99% width = 2 * 2.5758 / (sqrt(2) w)
    assert pulse_bandwidth(PulseSpec("gaussian", (3.0,), (w,))) == pytest.approx(2 * 2.5758293 / (math.sqrt(2) * w), rel=1e-2)


def test_bandwidth_warning_for_wide_pulse():
    cfg = two_level_cfg(beta=0.2, width=0.1, T_total=8.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        run_simulation(cfg, record_history=False)
    assert any("bandwidth" in str(w.message) for w in caught)


def test_backward_retrieval_requires_three_level():
    cfg = two_level_cfg()
    with pytest.raises(ConfigError):
        run_backward_retrieval(cfg)
    cfg3 = load_config({"ensemble": {"level_scheme": "three_level_adiabatic"}})
    with pytest.raises(ConfigError):
        run_backward_retrieval(cfg3)


def test_full_three_level_matches_adiabatic():
    # strong coupling keeps the off-resonant one-photon loss (OD ~ 2 beta eta gamma / Omega^2) small
    base = {
        "ensemble": {"beta": 0.6, "delta1": 400.0, "omega_ref": 20.0},
        "gradient": {"etaL": 8.0},
        "pulse": {"centers": [3.0], "widths": [0.7]},
        "grid": {"T_total": 13.0, "Nz": 256},
        "protocol": {"tau": 6.0},
        "output": {"history": False},
    }
    res = {}
    for scheme in ("three_level_adiabatic", "three_level_full"):
        raw = {**base, "ensemble": {**base["ensemble"], "level_scheme": scheme}}
        rec = run_simulation(load_config(raw))
        res[scheme] = (rec.energy_between(6.0, 13.0) / rec.input_energy, echo_peak_time(rec, 6.0))
    a, f = res["three_level_adiabatic"], res["three_level_full"]
    assert f[0] == pytest.approx(a[0], rel=0.01)
    assert f[1] == pytest.approx(a[1], abs=0.01)


def test_coupling_off_stops_absorption():
    raw = {
        "ensemble": {"level_scheme": "three_level_adiabatic", "beta": 1.0},
        "coupling": {"segments": []},
        "grid": {"T_total": 7.0},
        "protocol": {"tau": 20.0},
        "output": {"history": False},
    }
    rec = run_simulation(load_config(raw))
    assert rec.output_energy == pytest.approx(rec.input_energy, rel=1e-9)


def test_user_dt_above_bound_is_refused():
    cfg = two_level_cfg(grid={"dt": 0.05, "T_total": 2.0})
    with pytest.raises(StabilityError) as exc:
        run_simulation(cfg, record_history=False)
    assert exc.value.suggested_dt == pytest.approx(0.1 / 16)


def test_default_dt_adapts_to_steep_segments():
    raw = {
        "ensemble": {"beta": 0.5},
        "gradient": {"segments": [[0, 6, 16.0], [6, 6.5, -160.0], [6.5, 8, 16.0]]},
        "output": {"history": False},
    }
    rec = run_simulation(load_config(raw))
    steep = (rec.times > 6.0) & (rec.times <= 6.5)
    assert np.max(np.diff(rec.times)[steep[1:]]) <= 0.1 / 160 * (1 + 1e-9)
