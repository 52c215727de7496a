"""Four-wave mixing in a gradient-broadened Raman medium.

The probe E and the conjugated Stokes field Es* obey a linear 2x2 system
along z with a two-photon detuning that varies linearly across the cell.
Because the system is linear, the 2x2 transfer matrix is propagated once
per detuning, and any input pair (including every Stokes seed phase) is
obtained from it by a matrix-vector product.

Sign convention: ``fwm_matrix`` returns the coefficient block
i a0 [[a11, a12], [a21, a22]] as written. The conjugated Stokes amplitude
evolves with the complex conjugate of the Stokes-channel coupling, so its
row of the propagation generator carries the opposite leading sign:

    dE/dz   =  i a0 (a11 E + a12 Es*)
    dEs*/dz = -i a0 (a21 E + a22 Es*)

This is the choice under which probe absorption at line centre coexists
with Stokes/probe gain off resonance and growth with optical depth.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .core import GemError


class ConvergenceError(GemError):
    """Step refinement ended before reaching the requested tolerance."""


@dataclass(frozen=True)
class FwmParams:
    gamma: float = 1.0
    gamma0: float = 0.002
    delta1: float = 200.0
    omega: float = 3.0
    omega_prime: float | None = None  # defaults to omega
    g: float = 1.0
    g_prime: float = 1.0
    delta_hf: float = 0.0
    delta1_prime: float | None = None  # defaults to delta1 + delta_hf
    od_resonant: float = 470.0
    etaL: float = 0.08
    seed_ratio: float = 0.01
    stark_compensation: bool = True
    cross_enhancement: float = 1.0
    L: float = 1.0

    def __post_init__(self):
        if self.od_resonant < 0:
            raise GemError(f"od_resonant must be non-negative, got {self.od_resonant}")
        if self.seed_ratio < 0:
            raise GemError(f"seed_ratio must be non-negative, got {self.seed_ratio}")
        if self.delta1_prime is not None and not math.isclose(
            self.delta1_prime, self.delta1 + self.delta_hf, rel_tol=1e-12, abs_tol=1e-12
        ):
            raise GemError(
                f"delta1_prime={self.delta1_prime} inconsistent with delta1 + delta_hf = {self.delta1 + self.delta_hf}"
            )
        if self.Dp == 0:
            raise GemError("Stokes-channel detuning delta1 + delta_hf must be non-zero")

    def with_(self, **kw) -> "FwmParams":
        return replace(self, **kw)

    @property
    def Op(self) -> float:
        return self.omega if self.omega_prime is None else self.omega_prime

    @property
    def Dp(self) -> float:
        return self.delta1 + self.delta_hf

    @property
    def N_over_c(self) -> float:
        """Density factor N/c recovered from the resonant optical depth."""
        return self.od_resonant * self.gamma / (self.g**2 * self.L)

    @property
    def stark_offset(self) -> float:
        return self.omega**2 / self.delta1 if self.stark_compensation else 0.0

    def local_detuning(self, delta_scan, z):
        """delta(z) = scan + eta (z - L/2) + compensation offset."""
        eta = self.etaL / self.L
        return np.asarray(delta_scan, dtype=float) + eta * (np.asarray(z) - self.L / 2) + self.stark_offset


@dataclass
class TwoModeState:
    E: np.ndarray
    Es_conj: np.ndarray
    z: float = 0.0

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=complex)
        self.Es_conj = np.asarray(self.Es_conj, dtype=complex)

    @property
    def vector(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(self.E, self.Es_conj), axis=-1)

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.E)) and np.all(np.isfinite(self.Es_conj)))


@dataclass
class FwmPropagation:
    final: TwoModeState
    transfer: np.ndarray  # (..., 2, 2)
    z: np.ndarray | None = None
    profile: np.ndarray | None = None  # (nz+1, ..., 2); z is the matching (nz+1, ...) mesh
    nz: int = 0
    rel_change: float = 0.0
    converged: bool = True
    amplification: np.ndarray | None = None
    conditioning: np.ndarray | None = None


@dataclass
class FwmSpectrum:
    detunings: np.ndarray
    probe: np.ndarray
    stokes: np.ndarray
    seed_phase: np.ndarray
    gain: np.ndarray = field(init=False)
    nz: int = 0
    converged: bool = True
    conditioning: np.ndarray | None = None

    def __post_init__(self):
        self.gain = self.probe > 1.0

    def at(self, delta: float) -> tuple[float, float]:
        i = int(np.argmin(np.abs(self.detunings - delta)))
        return float(self.probe[i]), float(self.stokes[i])


def _coefficients(delta2, p: FwmParams):
    d = np.asarray(delta2, dtype=float)
    G0 = p.gamma0 + 1j * d
    G = p.gamma + 1j * (p.delta1 + d)
    den = p.omega**2 + G * G0
    if np.any(den == 0):
        raise GemError(
            f"fwm denominator Omega^2 + Gamma Gamma0 vanishes (omega={p.omega}, gamma={p.gamma}, "
            f"gamma0={p.gamma0}, delta1={p.delta1})"
        )
    a0 = p.N_over_c / (p.gamma * den)
    cross = -p.cross_enhancement * p.g_prime * p.omega * p.Op / p.Dp
    a11 = 1j * p.g * G0
    a22 = -1j * G * p.g_prime * p.Op**2 / p.Dp**2
    return a0, a11, cross, a22


def fwm_matrix(delta2, p: FwmParams) -> np.ndarray:
    """Coefficient block i a0 [[a11, a12], [a21, a22]] at two-photon detuning delta2."""
    a0, a11, a12, a22 = _coefficients(delta2, p)
    shape = np.shape(a0)
    M = np.empty(shape + (2, 2), dtype=complex)
    M[..., 0, 0] = 1j * a0 * a11
    M[..., 0, 1] = 1j * a0 * a12
    M[..., 1, 0] = 1j * a0 * a12
    M[..., 1, 1] = 1j * a0 * a22
    return M


def generator(delta2, p: FwmParams) -> np.ndarray:
    """d/dz [E, Es*] = generator @ [E, Es*] at local detuning delta2."""
    M = fwm_matrix(delta2, p)
    M[..., 1, :] *= -1
    return M


def _elements(delta_local, p: FwmParams):
    """The four generator entries as separate arrays (faster than 2x2 stacks)."""
    a0, a11, a12, a22 = _coefficients(delta_local, p)
    c = 1j * a0
    return c * a11, c * a12, -c * a12, -c * a22


def _mul(A, X):
    return (
        A[0] * X[0] + A[1] * X[2],
        A[0] * X[1] + A[1] * X[3],
        A[2] * X[0] + A[3] * X[2],
        A[2] * X[1] + A[3] * X[3],
    )


def z_mesh(delta_scan, p: FwmParams, nz: int, samples: int = 8193) -> np.ndarray:
    """Graded z nodes, shape (nz+1, n_delta), one column per detuning.

    Nodes equidistribute ||A(z)|| + <||A||>, so RK4 steps cluster where the
    local gain or absorption rate is large (near the Raman resonance) and
    the product h ||A|| is roughly uniform. Meshes for nz and 2 nz are nested.
    """
    d = np.atleast_1d(np.asarray(delta_scan, dtype=float))
    zs = np.linspace(0.0, p.L, samples)
    A = _elements(p.local_detuning(d[None, :], zs[:, None]), p)
    lam = np.sqrt(sum(np.abs(a) ** 2 for a in A))
    rho = lam + lam.mean(axis=0)
    cum = np.concatenate([np.zeros((1, d.size)), np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(zs)[:, None], axis=0)])
    cum /= cum[-1]
    s = np.linspace(0.0, 1.0, nz + 1)
    Z = np.empty((nz + 1, d.size))
    for i in range(d.size):
        Z[:, i] = np.interp(s, cum[:, i], zs)
    Z[0], Z[-1] = 0.0, p.L
    return Z


def _transfer(delta_scan, p: FwmParams, nz: int, keep_profile: bool = False, graded: bool = True):
    """RK4 transfer matrices and the per-node norms |P(0->z)|; optionally the z-profile."""
    d = np.atleast_1d(np.asarray(delta_scan, dtype=float))
    Z = z_mesh(d, p, nz) if graded else np.repeat(np.linspace(0.0, p.L, nz + 1)[:, None], d.size, axis=1)
    one, zero = np.ones(d.size, dtype=complex), np.zeros(d.size, dtype=complex)
    P = (one, zero, zero.copy(), one.copy())
    norms = [np.sqrt(2.0) * np.ones(d.size)]
    prof = [P] if keep_profile else None
    A0 = _elements(p.local_detuning(d, Z[0]), p)
    for j in range(nz):
        h = Z[j + 1] - Z[j]
        Ah = _elements(p.local_detuning(d, 0.5 * (Z[j] + Z[j + 1])), p)
        A1 = _elements(p.local_detuning(d, Z[j + 1]), p)
        k1 = _mul(A0, P)
        k2 = _mul(Ah, tuple(x + 0.5 * h * k for x, k in zip(P, k1)))
        k3 = _mul(Ah, tuple(x + 0.5 * h * k for x, k in zip(P, k2)))
        k4 = _mul(A1, tuple(x + h * k for x, k in zip(P, k3)))
        P = tuple(x + (h / 6) * (a + 2 * b + 2 * c + e) for x, a, b, c, e in zip(P, k1, k2, k3, k4))
        norms.append(np.sqrt(sum(np.abs(x) ** 2 for x in P)))
        A0 = A1
        if keep_profile:
            prof.append(P)
    out = np.stack(P, axis=-1).reshape(d.shape + (2, 2))
    if keep_profile:
        prof = np.moveaxis(np.array(prof), 1, -1).reshape((nz + 1,) + d.shape + (2, 2))
        return out, np.array(norms), Z, prof
    return out, np.array(norms)


def amplification(delta_scan, p: FwmParams, nz: int = 1024) -> np.ndarray:
    """max_z |P(z->L)| |P(0->z)| per detuning.

    This is the factor by which a relative perturbation made inside the
    cell can reach the output, so |P(L)| times it is the scale on which
    integration (and round-off) error must be judged. P(z->L) comes from
    one backward pass of the adjoint equation Q' = -Q A.
    """
    d = np.atleast_1d(np.asarray(delta_scan, dtype=float))
    _, fwd = _transfer(d, p, nz)
    Z = z_mesh(d, p, nz)
    one, zero = np.ones(d.size, dtype=complex), np.zeros(d.size, dtype=complex)
    Q = (one, zero, zero.copy(), one.copy())
    amp = fwd[-1] * np.sqrt(2.0)
    A1 = _elements(p.local_detuning(d, Z[-1]), p)
    neg = lambda X, A: tuple(-x for x in _mul(X, A))
    for j in range(nz, 0, -1):
        h = Z[j] - Z[j - 1]
        Ah = _elements(p.local_detuning(d, 0.5 * (Z[j] + Z[j - 1])), p)
        A0 = _elements(p.local_detuning(d, Z[j - 1]), p)
        k1 = neg(Q, A1)
        k2 = neg(tuple(x - 0.5 * h * k for x, k in zip(Q, k1)), Ah)
        k3 = neg(tuple(x - 0.5 * h * k for x, k in zip(Q, k2)), Ah)
        k4 = neg(tuple(x - h * k for x, k in zip(Q, k3)), A0)
        Q = tuple(x - (h / 6) * (a + 2 * b + 2 * c + e) for x, a, b, c, e in zip(Q, k1, k2, k3, k4))
        amp = np.maximum(amp, np.sqrt(sum(np.abs(x) ** 2 for x in Q)) * fwd[j - 1])
        A1 = A0
    return amp / 2.0  # Frobenius norms of the two identity factors


def transfer_error(P, P_ref, amp) -> np.ndarray:
    """Per-detuning difference of two transfer matrices on the forward-error scale.

    A perturbation of relative size e made at depth z reaches the output
    as e |P(z->L)| |P(0->z)|, so ``amp`` from ``amplification`` is the
    natural scale. Line-centre outputs can sit many orders of magnitude
    below it (gain followed by absorption), and pointwise relative
    differences there measure only round-off.
    """
    scale = np.maximum(np.asarray(amp), np.linalg.norm(P_ref, axis=(-2, -1)))
    return np.linalg.norm(P - P_ref, axis=(-2, -1)) / np.maximum(scale, 1e-300)


def propagate_fwm(
    state0: TwoModeState,
    p: FwmParams,
    delta_scan=0.0,
    nz: int = 1024,
    rtol: float = 1e-9,
    max_nz: int = 1 << 16,
    profile: bool = False,
) -> FwmPropagation:
    """Integrate the probe/Stokes pair across the cell by RK4 on a graded mesh.

    The step count starts at ``nz`` and doubles until the error estimate of
    the finer solution, |P_N - P_2N| / 15 for a fourth-order method (see
    ``transfer_error``; worst detuning), is below ``rtol``, or ``max_nz`` is
    reached, in which case the result is flagged.
    Arrays of detunings are propagated together. ``conditioning`` on the
    result is amplification / |P(L)| per detuning; roughly log10 of it
    digits of the output are lost to round-off.
    """
    scalar = np.ndim(delta_scan) == 0
    d = np.atleast_1d(np.asarray(delta_scan, dtype=float))
    if p.L == 0:
        P = np.broadcast_to(np.eye(2, dtype=complex), d.shape + (2, 2)).copy()
        fin = TwoModeState(state0.E, state0.Es_conj, 0.0)
        return FwmPropagation(fin, P[0] if scalar else P, nz=0)
    if nz < 512:
        raise GemError("the z grid must have at least 512 points across the gradient")
    with np.errstate(over="raise", invalid="raise"):
        try:
            amp = amplification(d, p)
            P, _ = _transfer(d, p, nz)
            while True:
                P2, _ = _transfer(d, p, 2 * nz)
                change = float(np.max(transfer_error(P, P2, amp))) / 15
                nz, P = 2 * nz, P2
                if change <= rtol or nz >= max_nz:
                    break
        except FloatingPointError as exc:
            raise GemError(f"FWM propagation diverged (gain blow-up): {exc}") from exc
    converged = change <= rtol
    if not converged:
        warnings.warn(f"FWM step refinement stopped at nz={nz} with estimated error {change:.2e}")
    v0 = np.broadcast_to(state0.vector, d.shape + (2,))
    out = np.einsum("...ij,...j->...i", P, v0)
    res = FwmPropagation(TwoModeState(out[..., 0], out[..., 1], p.L), P, nz=nz, rel_change=change, converged=converged)
    res.amplification = amp
    res.conditioning = amp / np.maximum(np.linalg.norm(P, axis=(-2, -1)), 1e-300)
    if profile:
        _, _, Z, prof = _transfer(d, p, nz, keep_profile=True)
        res.z = Z
        res.profile = np.einsum("n...ij,...j->n...i", prof, v0)
    if not res.final.finite:
        raise GemError("FWM propagation produced non-finite amplitudes (gain blow-up)")
    if scalar:
        res.final = TwoModeState(out[0, 0], out[0, 1], p.L)
        res.transfer = P[0]
        res.amplification, res.conditioning = amp[0], res.conditioning[0]
        if res.profile is not None:
            res.profile, res.z = res.profile[:, 0], res.z[:, 0]
    return res


def raman_absorption_reference(delta_scan, p: FwmParams, n: int = 20001) -> np.ndarray:
    """Probe output with the Stokes channel removed: exp(int i a0 a11 dz)."""
    d = np.atleast_1d(np.asarray(delta_scan, dtype=float))
    z = np.linspace(0.0, p.L, n)
    a0, a11, _, _ = _coefficients(p.local_detuning(d[:, None], z[None, :]), p)
    expo = np.trapezoid(1j * a0 * a11, z, axis=1)
    return np.exp(expo)


def transmission_spectrum(delta_axis, p: FwmParams, n_phases: int = 8, **kw) -> FwmSpectrum:
    """Probe and Stokes output amplitudes normalised to the input probe.

    The Stokes seed r e^{i phi} is scanned over ``n_phases`` phases and the
    phase maximising the probe output is kept per detuning.
    """
    d = np.asarray(delta_axis, dtype=float)
    if d.size > 1 and np.any(np.diff(d) <= 0):
        raise GemError("detuning axis must be strictly increasing")
    res = propagate_fwm(TwoModeState(1.0, 0.0), p, d, **kw)
    P = res.transfer
    phases = 2 * np.pi * np.arange(n_phases) / n_phases
    seed = p.seed_ratio * np.exp(1j * phases)
    Ep = P[:, 0, 0][:, None] + seed[None, :] * P[:, 0, 1][:, None]
    Es = P[:, 1, 0][:, None] + seed[None, :] * P[:, 1, 1][:, None]
    best = np.argmax(np.abs(Ep), axis=1)
    idx = np.arange(d.size)
    return FwmSpectrum(
        d, np.abs(Ep[idx, best]), np.abs(Es[idx, best]), phases[best],
        nz=res.nz, converged=res.converged, conditioning=res.conditioning,
    )


def band_energy(detunings, field, omega0: float, delta_w: float) -> float:
    """Energy of ``field`` (amplitude normalised to the input probe) within omega0 +- delta_w.

    Trapezoidal integral of |field|^2 over the window divided by the input
    probe energy in the same width (2 delta_w).
    """
    x = np.asarray(detunings, dtype=float)
    f = np.abs(np.asarray(field, dtype=complex)) ** 2
    if delta_w < 0:
        raise GemError("window half-width must be non-negative")
    if delta_w == 0:
        return 0.0
    lo, hi = omega0 - delta_w, omega0 + delta_w
    tol = 1e-12 * max(1.0, abs(x[-1] - x[0]))
    if lo < x[0] - tol or hi > x[-1] + tol:
        raise GemError(f"window [{lo}, {hi}] exceeds the scanned axis [{x[0]}, {x[-1]}]")
    inner = (x > lo) & (x < hi)
    xs = np.concatenate([[lo], x[inner], [hi]])
    fs = np.concatenate([[np.interp(lo, x, f)], f[inner], [np.interp(hi, x, f)]])
    return float(np.trapezoid(fs, xs) / (2 * delta_w))


def od_scan(ods, p: FwmParams, delta_axis=None, omega0s=(0.0, 0.04), delta_w: float = 0.02, **kw) -> dict:
    """Band energies of the Stokes and probe outputs versus optical depth."""
    if delta_axis is None:
        lo = min(omega0s) - delta_w
        hi = max(omega0s) + delta_w
        delta_axis = np.linspace(lo, hi, int(round((hi - lo) / 0.001)) + 1)
    rows = []
    for od in ods:
        sp = transmission_spectrum(delta_axis, p.with_(od_resonant=float(od)), **kw)
        row = {"od": float(od), "nz": sp.nz, "converged": sp.converged}
        for w0 in omega0s:
            row[f"xi_stokes_{w0:g}"] = band_energy(sp.detunings, sp.stokes, w0, delta_w)
            row[f"xi_probe_{w0:g}"] = band_energy(sp.detunings, sp.probe, w0, delta_w)
        rows.append(row)
    return {"omega0": list(omega0s), "delta_w": delta_w, "rows": rows}
