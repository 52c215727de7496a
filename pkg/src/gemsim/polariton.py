"""k-space polariton diagnostics.

psi(k) = k E(k) + N' sigma(k) is built from a unitary DFT of the cell-centred
profiles. The slaved field jumps from E_in to E_out across the periodic
boundary, so its raw DFT carries a 1/k boundary term; it is removed before
the k weighting. The weighting uses the wavenumber the trapezoid rule
actually differentiates with, k_eff = (2/dz) tan(k dz/2), so that the
discrete identity k_eff E(k) = N' sigma(k) holds to round-off.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from scipy.optimize import minimize_scalar

from .core import EnsembleParams, GemError, effective_coupling
from .solver import FieldState, SimulationRecord


@dataclass
class PolaritonField:
    k_grid: np.ndarray
    psi: np.ndarray
    psi_anti: np.ndarray
    t: float = 0.0
    E_k: np.ndarray | None = None
    sigma_k: np.ndarray | None = None

    def anti_ratio(self) -> float:
        den = np.linalg.norm(self.psi)
        return float(np.linalg.norm(self.psi_anti) / den) if den > 0 else 0.0


@dataclass
class CentroidTrack:
    times: np.ndarray
    kbar: np.ndarray
    span: float
    fits: list = field(default_factory=list)


def k_grid(Nz: int, L: float = 1.0) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(Nz, d=L / Nz)


def _coupling_density(params: EnsembleParams, omega: float | None) -> float:
    # with the coupling off the photonic part vanishes; weight the atomic
    # part with the reference coupling so psi stays informative
    if params.three_level and not omega:
        omega = params.omega_ref
    return effective_coupling(params, omega)[1]


def transform_profiles(
    E: np.ndarray, sigma: np.ndarray, n_eff: float, L: float = 1.0, t: float = 0.0
) -> PolaritonField:
    E = np.asarray(E, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    nz = E.size
    dz = L / nz
    k = k_grid(nz, L)
    c = 1j * n_eff
    E_in = E[0] - c * sigma[0] * dz / 2
    E_out = E[-1] + c * sigma[-1] * dz / 2
    Ek = np.fft.fft(E, norm="ortho")
    sk = np.fft.fft(sigma, norm="ortho")
    w = np.exp(-1j * k * dz)
    half = k * dz / 2
    regular = (np.abs(k) > 0) & (np.abs(np.abs(half) - np.pi / 2) > 1e-12)
    kE = n_eff * sk  # limit value at k = 0 and at the Nyquist bin
    Ecorr = Ek[regular] - (E_in - E_out) / (1 - w[regular]) / np.sqrt(nz)
    kE[regular] = (2 / dz) * np.tan(half[regular]) * Ecorr
    psi = kE + n_eff * sk
    anti = kE - n_eff * sk
    return PolaritonField(k, psi, anti, t, Ek, sk)


def polariton_transform(
    state: FieldState, params: EnsembleParams, omega: float | None, L: float = 1.0
) -> PolaritonField:
    """Symmetric and antisymmetric k-space modes of a forward-field state."""
    n = _coupling_density(params, omega)
    return transform_profiles(state.E_fw, state.sigma12, n, L, state.t)


def polariton_history(record: SimulationRecord, params: EnsembleParams, L: float = 1.0):
    """(k, times, psi[t, k], anti_ratio[t]) over the stored history.

    While a three-level coupling is off the light decouples from the spins,
    so the antisymmetric mode is undefined; its ratio is reported as nan.
    """
    nt = record.hist_times.size
    if nt == 0:
        raise GemError("record has no stored history")
    nz = record.E_zt.shape[1]
    psi = np.empty((nt, nz), dtype=complex)
    ratio = np.empty(nt)
    for i in range(nt):
        n = _coupling_density(params, record.hist_omega[i])
        pf = transform_profiles(record.E_zt[i], record.sigma_zt[i], n, L, record.hist_times[i])
        psi[i] = pf.psi
        off = params.three_level and not record.hist_omega[i]
        ratio[i] = np.nan if off else pf.anti_ratio()
    return k_grid(nz, L), record.hist_times.copy(), psi, ratio


def centroid(k: np.ndarray, psi: np.ndarray, floor: float = 1e-6) -> float:
    """Power-weighted mean k over bins holding at least ``floor`` of the peak.

    The k = 0 bin is excluded; returns nan when nothing is excited.
    """
    p = np.abs(psi) ** 2
    p = np.where(k == 0, 0.0, p)
    peak = p.max()
    if not peak > 0:
        return float("nan")
    m = p >= floor * peak
    return float(np.sum(k[m] * p[m]) / np.sum(p[m]))


def centroid_track(
    record: SimulationRecord,
    params: EnsembleParams,
    L: float = 1.0,
    flux_floor: float = 1e-6,
    energy_floor: float = 1e-3,
) -> CentroidTrack:
    """Centroid k(t) and a linear drift fit per gradient segment.

    The fit only uses samples where no light enters or leaves the medium
    (boundary power below ``flux_floor`` of the input peak), so it measures
    pure transport of the stored excitation.
    """
    k, times, psi, _ = polariton_history(record, params, L)
    norm = np.sum(np.abs(psi) ** 2, axis=1)
    kbar = np.array(
        [centroid(k, p) if n >= energy_floor * max(norm.max(), 1e-300) else np.nan
         for p, n in zip(psi, norm)]
    )
    span = float(k.max() - k.min())

    p_in = np.abs(record.E_in) ** 2
    p_out = np.abs(record.E_out) ** 2
    ref = max(p_in.max(), 1e-300)
    quiet_t = (p_in < flux_floor * ref) & (p_out < flux_floor * ref)
    quiet = np.interp(times, record.times, quiet_t.astype(float)) > 0.999

    fits = []
    eta_h = record.hist_eta
    # contiguous runs of identical eta in the stored history
    edges = [0] + [i for i in range(1, len(times)) if eta_h[i] != eta_h[i - 1]] + [len(times)]
    for a, b in zip(edges, edges[1:]):
        sel = np.arange(a, b)
        # drop the first sample of a run (it straddles the switch)
        sel = sel[1:] if sel.size > 1 else sel
        m = quiet[sel] & np.isfinite(kbar[sel])
        idx = sel[m]
        eta = float(eta_h[a])
        fit = {"t_start": float(times[a]), "t_end": float(times[b - 1]), "eta": eta, "n": int(idx.size)}
        if idx.size >= 3:
            slope, icpt = np.polyfit(times[idx], kbar[idx], 1)
            fit["rate"] = float(slope)
            fit["expected"] = -eta
            fit["rel_err"] = float(abs(slope + eta) / abs(eta)) if eta != 0 else float("nan")
            fit["max_step_drift"] = float(np.max(np.abs(np.diff(kbar[idx])))) if idx.size > 1 else 0.0
        fits.append(fit)
    return CentroidTrack(times, kbar, span, fits)


def group_velocity(k, params: EnsembleParams, omega: float | None = None):
    """v_g = g'N'/k^2 (Raman substitution for three-level schemes)."""
    k = np.asarray(k, dtype=float)
    if np.any(k == 0):
        raise GemError("group velocity is singular at k = 0 (phase-matched emission point)")
    g, n = effective_coupling(params, omega)
    v = g * n / k**2
    return float(v) if v.ndim == 0 else v


def temporal_profile_from_k(
    pf: PolaritonField,
    eta_write: float,
    reference=None,
    mixed: bool = False,
):
    """Read the stored pulse shape off a polariton snapshot.

    A component absorbed at time t_c sits at k = -eta (t - t_c), so the
    k axis maps to input time t_c = t + k/eta. Returns (times, amplitude,
    correlation) where amplitude is |psi| scaled to unit peak and the
    correlation is the lag-maximized normalized overlap with ``reference(times)`` (None if
    no reference is given).
    """
    if mixed:
        warnings.warn("snapshot taken during emission: profile mixes stored and emitted light")
    order = np.argsort(pf.k_grid)
    k = pf.k_grid[order]
    amp = np.abs(pf.psi[order])
    times = pf.t + k / eta_write
    if eta_write < 0:
        times, amp = times[::-1], amp[::-1]
    peak = amp.max()
    if peak > 0:
        amp = amp / peak
    corr = None
    if reference is not None:
        # the stored profile lags the input by the absorption time, so the
        # shift is optimized continuously (the k grid samples time coarsely)
        def score(shift):
            ref = np.abs(np.asarray(reference(times + shift)))
            den = np.sqrt(np.sum(ref**2) * np.sum(amp**2))
            return float(np.sum(ref * amp) / den) if den > 0 else 0.0

        dt = abs(times[1] - times[0])
        grid = np.arange(-8, 8.01, 0.25) * dt
        s0 = grid[int(np.argmax([score(x) for x in grid]))]
        res = minimize_scalar(lambda x: -score(x), bounds=(s0 - 0.25 * dt, s0 + 0.25 * dt), method="bounded")
        corr = max(score(s0), -res.fun)
    return times, amp, corr
