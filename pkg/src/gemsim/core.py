"""Shared types, configuration loading and grid helpers.

Everything in the dynamics layer is dimensionless: rates are in units of the
excited-state linewidth gamma and lengths in units of the medium length L,
so times are in units of 1/gamma.
"""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Sequence

import jsonschema
import numpy as np

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
LEVEL_SCHEMES = ("two_level", "three_level_adiabatic", "three_level_full")
PULSE_SHAPES = ("gaussian", "double_gaussian", "ramp", "train")
DIRECTIONS = ("forward", "backward")

# Fraction of the inverse fastest rate used as the largest admissible step.
STABILITY_FACTOR = 0.1


class GemError(Exception):
    """Base class for all package errors."""


class ConfigError(GemError):
    """Invalid configuration. ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class StabilityError(GemError):
    """Time step too large for the integrator."""

    def __init__(self, dt: float, suggested_dt: float, detail: str = ""):
        self.dt = dt
        self.suggested_dt = suggested_dt
        msg = f"dt={dt:.6g} exceeds stability bound; use dt <= {suggested_dt:.6g}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass(frozen=True)
class UnitSystem:
    mode: str = "dimensionless"

    def __post_init__(self):
        if self.mode not in ("dimensionless", "physical"):
            raise ConfigError("units", f"unknown unit mode {self.mode!r}")

    def require_dimensionless(self, who: str) -> None:
        if self.mode != "dimensionless":
            raise ConfigError("units", f"{who} runs in dimensionless units only")


@dataclass(frozen=True)
class EnsembleParams:
    """Atomic constants. ``N_eff`` is the linear coupling density gN/c."""

    level_scheme: str = "two_level"
    gamma: float = 1.0
    gamma0: float = 0.0
    delta1: float = 200.0
    g: float = 1.0
    N_eff: float = 16.0
    omega_ref: float = 3.0
    stark_compensation: bool = True
    min_detuning_ratio: float = 20.0

    def __post_init__(self):
        if self.level_scheme not in LEVEL_SCHEMES:
            raise ConfigError("ensemble.level_scheme", f"unknown scheme {self.level_scheme!r}")
        if not self.gamma > 0:
            raise ConfigError("ensemble.gamma", "must be > 0")
        if self.gamma0 < 0:
            raise ConfigError("ensemble.gamma0", "must be >= 0")
        if self.g < 0 or self.N_eff < 0 or self.omega_ref < 0:
            raise ConfigError("ensemble", "g, N_eff and omega_ref must be >= 0")
        if self.level_scheme == "three_level_adiabatic":
            bound = self.min_detuning_ratio * self.gamma
            if abs(self.delta1) < bound:
                raise ConfigError(
                    "ensemble.delta1",
                    f"adiabatic scheme needs |delta1| >= {bound:g} (got {self.delta1:g})",
                )
        if self.level_scheme != "two_level" and self.delta1 == 0:
            raise ConfigError("ensemble.delta1", "three-level schemes need delta1 != 0")

    @property
    def three_level(self) -> bool:
        return self.level_scheme != "two_level"


def effective_coupling(params: EnsembleParams, omega: float | None = None) -> tuple[float, float]:
    """Return (g', N') seen by the spin equation.

    Two-level: (g, N). Three-level: the Raman substitution g -> g*Omega/Delta,
    N -> N*Omega/Delta. ``omega`` defaults to ``params.omega_ref``.
    """
    if not params.three_level:
        return params.g, params.N_eff
    om = params.omega_ref if omega is None else omega
    r = om / params.delta1
    return params.g * r, params.N_eff * r


def derived_beta(params: EnsembleParams, eta: float, omega: float | None = None) -> float:
    """Effective optical depth per unit gradient, beta = g'N'/|eta|."""
    if eta == 0:
        raise GemError("beta is undefined for eta = 0 (infinite effective optical depth)")
    g, n = effective_coupling(params, omega)
    return g * n / abs(eta)


def optical_depth(params: EnsembleParams, L: float = 1.0) -> float:
    """Resonant optical depth g^2 N L / (gamma c) = g N_eff L / gamma."""
    return params.g * params.N_eff * L / params.gamma


def stark_shift(params: EnsembleParams, omega: float) -> float:
    """ac-Stark shift Omega^2/Delta of the Raman line (zero for two-level)."""
    if not params.three_level:
        return 0.0
    return omega * omega / params.delta1


@dataclass(frozen=True)
class GradientProfile:
    """Piecewise-constant slope eta(t); detuning delta(z, t) = eta(t) z."""

    eta_segments: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        segs = tuple(tuple(float(x) for x in s) for s in self.eta_segments)
        object.__setattr__(self, "eta_segments", segs)
        if not segs:
            raise ConfigError("gradient.segments", "at least one segment is required")
        _check_tiling(segs, "gradient.segments")

    @property
    def t_start(self) -> float:
        return self.eta_segments[0][0]

    @property
    def t_end(self) -> float:
        return self.eta_segments[-1][1]

    def eta_at(self, t: float) -> float:
        for a, b, eta in self.eta_segments:
            if a <= t < b:
                return eta
        return self.eta_segments[-1][2] if t >= self.t_end else self.eta_segments[0][2]

    def switch_times(self) -> list[float]:
        return [s[0] for s in self.eta_segments[1:]]

    def flip_times(self) -> list[float]:
        """Boundaries where the slope changes sign."""
        out = []
        for prev, cur in zip(self.eta_segments, self.eta_segments[1:]):
            if np.sign(prev[2]) != np.sign(cur[2]):
                out.append(cur[0])
        return out

    def max_abs_eta(self) -> float:
        return max(abs(s[2]) for s in self.eta_segments)

    def phase_integral(self, t0: float, t1: float) -> float:
        """Exact integral of eta(t) over [t0, t1]."""
        if t1 < t0:
            return -self.phase_integral(t1, t0)
        total = 0.0
        for a, b, eta in self.eta_segments:
            lo, hi = max(a, t0), min(b, t1)
            if hi > lo:
                total += eta * (hi - lo)
        # extend the outermost segments beyond the tiled interval
        if t1 > self.t_end:
            total += self.eta_segments[-1][2] * (t1 - max(t0, self.t_end))
        if t0 < self.t_start:
            total += self.eta_segments[0][2] * (min(t1, self.t_start) - t0)
        return total


@dataclass(frozen=True)
class CouplingProfile:
    """Piecewise-constant coupling Rabi frequency with a propagation direction.

    Times not covered by any segment have the coupling off.
    """

    omega_segments: tuple[tuple[float, float, float, str], ...] = ()

    def __post_init__(self):
        segs = []
        for s in self.omega_segments:
            a, b, om = float(s[0]), float(s[1]), float(s[2])
            d = s[3] if len(s) > 3 else "forward"
            if d not in DIRECTIONS:
                raise ConfigError("coupling.segments", f"unknown direction {d!r}")
            if om < 0:
                raise ConfigError("coupling.segments", f"negative Omega in [{a:g}, {b:g}]")
            if b <= a:
                raise ConfigError("coupling.segments", f"empty segment [{a:g}, {b:g}]")
            segs.append((a, b, om, d))
        segs.sort(key=lambda s: s[0])
        for p, c in zip(segs, segs[1:]):
            if c[0] < p[1] - 1e-12:
                raise ConfigError(
                    "coupling.segments", f"segments overlap on [{c[0]:g}, {min(p[1], c[1]):g}]"
                )
        object.__setattr__(self, "omega_segments", tuple(segs))

    def at(self, t: float) -> tuple[float, str]:
        for a, b, om, d in self.omega_segments:
            if a <= t < b:
                return om, d
        return 0.0, "forward"

    def switch_times(self) -> list[float]:
        out = []
        for a, b, _, _ in self.omega_segments:
            out += [a, b]
        return out

    def max_omega(self) -> float:
        return max((s[2] for s in self.omega_segments), default=0.0)

    def has_backward(self) -> bool:
        return any(s[3] == "backward" and s[2] > 0 for s in self.omega_segments)


def _check_tiling(segs, name):
    for a, b, *_ in segs:
        if not b > a:
            raise ConfigError(name, f"empty or reversed segment [{a:g}, {b:g}]")
    for p, c in zip(segs, segs[1:]):
        if c[0] < p[1] - 1e-12:
            raise ConfigError(name, f"segments overlap on [{c[0]:g}, {min(p[1], c[1]):g}]")
        if c[0] > p[1] + 1e-12:
            raise ConfigError(name, f"gap between segments on [{p[1]:g}, {c[0]:g}]")


@dataclass(frozen=True)
class PulseSpec:
    """Input envelope E(0, t) = carrier(t) * sum of shaped components."""

    shape: str = "gaussian"
    centers: tuple[float, ...] = (3.0,)
    widths: tuple[float, ...] = (0.5,)
    amplitudes: tuple[complex, ...] = (1.0 + 0j,)
    carrier: float = 0.0
    energy: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.shape not in PULSE_SHAPES:
            raise ConfigError("pulse.shape", f"unknown shape {self.shape!r}")
        n = len(self.centers)
        widths = tuple(float(w) for w in self.widths)
        amps = tuple(complex(a) for a in self.amplitudes)
        if n == 0:
            raise ConfigError("pulse.centers", "at least one center is required")
        if len(widths) == 1 and n > 1:
            widths = widths * n
        if len(amps) == 1 and n > 1:
            amps = amps * n
        if len(widths) != n or len(amps) != n:
            raise ConfigError("pulse", "centers, widths and amplitudes must have equal length")
        if any(w <= 0 for w in widths):
            raise ConfigError("pulse.widths", "all widths must be > 0")
        if self.shape == "double_gaussian" and n != 2:
            raise ConfigError("pulse.centers", "double_gaussian needs exactly two centers")
        cs = tuple(float(c) for c in self.centers)
        if self.shape in ("train", "double_gaussian"):
            if any(b <= a for a, b in zip(cs, cs[1:])):
                raise ConfigError("pulse.centers", "train centers must be strictly increasing")
        object.__setattr__(self, "centers", cs)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "amplitudes", amps)
        lo, hi = self.support()
        t = np.linspace(lo, hi, 20001)
        e = np.trapezoid(np.abs(self.envelope(t)) ** 2, t)
        if not math.isfinite(e):
            raise ConfigError("pulse", "input energy is not finite")
        object.__setattr__(self, "energy", float(e))

    def support(self, nsig: float = 8.0) -> tuple[float, float]:
        lo = min(c - nsig * w for c, w in zip(self.centers, self.widths))
        hi = max(c + nsig * w for c, w in zip(self.centers, self.widths))
        return lo, hi

    def envelope(self, t) -> np.ndarray:
        """Slowly varying amplitude without the carrier."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for c, w, a in zip(self.centers, self.widths, self.amplitudes):
            if self.shape == "ramp":
                out += a * _ramp(t, c, w)
            else:
                out += a * np.exp(-((t - c) ** 2) / (2 * w * w))
        return out

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.envelope(t) * np.exp(-1j * self.carrier * t)

    def with_components(self, idx: Sequence[int]) -> "PulseSpec":
        """Sub-pulse made of the listed components (same shape rules)."""
        shape = self.shape if self.shape != "double_gaussian" or len(idx) == 2 else "gaussian"
        if shape == "train" and len(idx) == 1:
            shape = "gaussian"
        return PulseSpec(
            shape,
            tuple(self.centers[i] for i in idx),
            tuple(self.widths[i] for i in idx),
            tuple(self.amplitudes[i] for i in idx),
            self.carrier,
        )


def _ramp(t, c, w):
    # linear rise over [c - w, c + w] with a short Gaussian roll-off on both ends
    edge = 0.15 * w
    x = np.clip((t - (c - w)) / (2 * w), 0.0, 1.0)
    y = x.copy()
    y = np.where(t < c - w, 0.0, y)
    after = t > c + w
    y = np.where(after, np.exp(-((t - c - w) ** 2) / (2 * edge * edge)), y)
    return y


@dataclass(frozen=True)
class SimulationGrid:
    Nz: int = 512
    dt: float = 0.002
    T_total: float = 13.0
    L: float = 1.0
    stride: int = 4

    def __post_init__(self):
        if self.Nz < 128:
            raise ConfigError("grid.Nz", "must be >= 128")
        if not self.dt > 0 or not self.T_total > 0 or not self.L > 0:
            raise ConfigError("grid", "dt, T_total and L must be > 0")
        if self.stride < 1:
            raise ConfigError("grid.stride", "must be >= 1")

    @property
    def dz(self) -> float:
        return self.L / self.Nz

    @property
    def Nt(self) -> int:
        return int(math.ceil(self.T_total / self.dt - 1e-9))

    @property
    def z(self) -> np.ndarray:
        """Cell-centred nodes, z_j = (j + 1/2) dz."""
        return (np.arange(self.Nz) + 0.5) * self.dz

    @property
    def k(self) -> np.ndarray:
        """Angular spatial frequencies of the z-grid (spacing 2 pi / L)."""
        return 2 * np.pi * np.fft.fftfreq(self.Nz, d=self.dz)


def max_normalized_correlation(a, b) -> float:
    """Peak of the normalized cross-correlation of two equally sampled signals.

    Both inputs are compared as magnitudes; the lag is free, so a pure delay
    does not reduce the score.
    """
    a = np.abs(np.asarray(a, dtype=complex))
    b = np.abs(np.asarray(b, dtype=complex))
    den = math.sqrt(float(np.sum(a * a)) * float(np.sum(b * b)))
    if den == 0:
        return 0.0
    return float(np.max(np.correlate(a, b, mode="full")) / den)


def stability_dt(
    params: EnsembleParams, eta_abs: float, omega: float, L: float = 1.0
) -> float:
    """Largest admissible step for the integrator given the current schedule values."""
    rates = [abs(eta_abs) * L, params.gamma0]
    if params.level_scheme == "three_level_full":
        # the field-coupling term is a non-normal (Volterra) operator; the
        # integrating-factor RK4 loses stability near dt ~ 40/(g N L); the
        # optical coherence also needs |Delta| dt <= 1 for the Raman transfer
        rates += [params.g * params.N_eff * L / 40.0, omega, params.gamma, abs(params.delta1) / 10.0]
    else:
        g, n = effective_coupling(params, omega)
        rates.append(g * n * L)
        if params.three_level:
            # detuning offsets from an uncompensated Stark shift
            rates.append(abs(stark_shift(params, omega)))
    fastest = max(rates)
    return math.inf if fastest == 0 else STABILITY_FACTOR / fastest


@dataclass
class SimConfig:
    """Validated configuration. Iterates as the five core parts."""

    ensemble: EnsembleParams
    gradient: GradientProfile
    coupling: CouplingProfile
    pulse: PulseSpec
    grid: SimulationGrid
    units: UnitSystem = field(default_factory=UnitSystem)
    protocol: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    spectroscopy: dict = field(default_factory=dict)
    fwm: dict = field(default_factory=dict)
    provenance: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)
    auto_dt: bool = False  # dt defaulted: faster segments may take shorter steps

    def __iter__(self) -> Iterator:
        return iter((self.ensemble, self.gradient, self.coupling, self.pulse, self.grid))

    def replace(self, **kw) -> "SimConfig":
        c = copy.copy(self)
        for k, v in kw.items():
            setattr(c, k, v)
        return c


def load_schema() -> dict:
    text = resources.files("gemsim").joinpath("config.schema.json").read_text()
    return json.loads(text)


def _as_complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(float(v[0]), float(v[1]))
    return complex(v)


def _complex_json(c: complex):
    return [c.real, c.imag]


def validate_raw(raw: dict) -> None:
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(path, exc.message) from None


def config_from_dict(raw: dict) -> SimConfig:
    """Validate a raw dict, apply defaults and build typed parts."""
    raw = copy.deepcopy(raw)
    validate_raw(raw)
    prov: list[str] = []

    def default(section: dict, key: str, value, where: str):
        if key not in section:
            section[key] = value
            prov.append(f"{where}.{key} = {value!r} (default)")
        return section[key]

    units = UnitSystem(raw.get("units", "dimensionless"))
    if "units" not in raw:
        prov.append("units = 'dimensionless' (default)")

    ens = dict(raw.get("ensemble", {}))
    grid_raw = dict(raw.get("grid", {}))
    grad = dict(raw.get("gradient", {}))
    coup = dict(raw.get("coupling", {}))
    pulse = dict(raw.get("pulse", {}))

    scheme = default(ens, "level_scheme", "two_level", "ensemble")
    default(ens, "gamma", 1.0, "ensemble")
    default(ens, "gamma0", 0.0, "ensemble")
    default(ens, "g", 1.0, "ensemble")
    if scheme != "two_level":
        default(ens, "delta1", 200.0, "ensemble")
        default(ens, "omega_ref", 3.0, "ensemble")
    default(grid_raw, "Nz", 512, "grid")
    default(grid_raw, "L", 1.0, "grid")
    default(grid_raw, "stride", 4, "grid")
    L = float(grid_raw["L"])

    # gradient: explicit segments, or a symmetric single flip built from eta / etaL
    if "segments" in grad:
        segs = [tuple(s) for s in grad["segments"]]
        T_total = default(grid_raw, "T_total", segs[-1][1] - segs[0][0], "grid")
    else:
        if "eta" in grad:
            eta = float(grad["eta"])
        elif "etaL" in grad:
            eta = float(grad["etaL"]) / L
        else:
            eta = 16.0 / L
            prov.append("gradient.etaL = 16.0 (default)")
        T_total = default(grid_raw, "T_total", 13.0, "grid")
        tau = float(raw.get("protocol", {}).get("tau", 6.0))
        if tau < T_total:
            segs = [(0.0, tau, eta), (tau, T_total, -eta)]
        else:
            segs = [(0.0, T_total, eta)]
        prov.append(f"gradient.segments = {segs!r} (default single flip)")
    if "eta" in grad or "etaL" in grad:
        grad.pop("eta", None)
        grad.pop("etaL", None)
    gradient = GradientProfile(tuple(segs))
    eta_write = gradient.eta_segments[0][2]

    if "segments" in coup:
        csegs = [tuple(s) for s in coup["segments"]]
    elif scheme != "two_level":
        csegs = [(gradient.t_start, gradient.t_end, ens["omega_ref"], "forward")]
        prov.append(f"coupling.segments = {csegs!r} (default: on throughout)")
    else:
        csegs = []
    if scheme == "two_level" and any(len(s) > 3 and s[3] == "backward" and s[2] > 0 for s in csegs):
        raise ConfigError(
            "coupling.segments",
            "backward retrieval needs a three-level scheme; two-level echoes always co-propagate",
        )
    coupling = CouplingProfile(tuple(csegs))

    # density: N_eff directly, or via beta = g'N'/|eta_write|
    if "N_eff" not in ens:
        beta = ens.pop("beta", None)
        if beta is None:
            beta = 1.0
            prov.append("ensemble.beta = 1.0 (default)")
        r = 1.0
        if scheme != "two_level":
            r = (ens["omega_ref"] / ens["delta1"]) ** 2
        g = ens["g"]
        if g == 0 or r == 0:
            raise ConfigError("ensemble.beta", "beta needs g > 0 and omega_ref > 0")
        ens["N_eff"] = float(beta) * abs(eta_write) / (g * r)
        prov.append(f"ensemble.N_eff = {ens['N_eff']!r} (from beta={float(beta)!r})")
    else:
        ens.pop("beta", None)
    ensemble = EnsembleParams(**ens)

    default(pulse, "shape", "gaussian", "pulse")
    default(pulse, "centers", [3.0], "pulse")
    default(pulse, "widths", [0.5], "pulse")
    default(pulse, "amplitudes", [1.0], "pulse")
    default(pulse, "carrier", eta_write * L / 2, "pulse")
    pulse_spec = PulseSpec(
        pulse["shape"],
        tuple(pulse["centers"]),
        tuple(pulse["widths"]),
        tuple(_as_complex(a) for a in pulse["amplitudes"]),
        float(pulse["carrier"]),
    )

    auto_dt = "dt" not in grid_raw
    if auto_dt:
        om = coupling.max_omega() or ensemble.omega_ref
        bound = stability_dt(ensemble, abs(eta_write), om, L)
        # round down to 3 significant digits so the value serializes cleanly
        dt = float(f"{min(0.005, bound):.3g}")
        grid_raw["dt"] = dt if dt <= bound else bound
        prov.append(f"grid.dt = {dt!r} (default from stability bound)")
    grid = SimulationGrid(
        Nz=int(grid_raw["Nz"]),
        dt=float(grid_raw["dt"]),
        T_total=float(grid_raw["T_total"]),
        L=L,
        stride=int(grid_raw["stride"]),
    )

    output = dict(raw.get("output", {}))
    default(output, "history", True, "output")
    for line in prov:
        log.info("config default: %s", line)

    cfg = SimConfig(
        ensemble=ensemble,
        gradient=gradient,
        coupling=coupling,
        pulse=pulse_spec,
        grid=grid,
        units=units,
        protocol=dict(raw.get("protocol", {})),
        output=output,
        spectroscopy=dict(raw.get("spectroscopy", {})),
        fwm=dict(raw.get("fwm", {})),
        provenance=prov,
        raw=raw,
        auto_dt=auto_dt,
    )
    return cfg


def config_to_dict(cfg: SimConfig) -> dict:
    """Fully resolved, JSON-serializable form; loading it back is lossless."""
    e, gr, c, p, g = cfg
    return {
        "schema_version": SCHEMA_VERSION,
        "units": cfg.units.mode,
        "ensemble": {
            "level_scheme": e.level_scheme,
            "gamma": e.gamma,
            "gamma0": e.gamma0,
            "delta1": e.delta1,
            "g": e.g,
            "N_eff": e.N_eff,
            "omega_ref": e.omega_ref,
            "stark_compensation": e.stark_compensation,
            "min_detuning_ratio": e.min_detuning_ratio,
        },
        "gradient": {"segments": [list(s) for s in gr.eta_segments]},
        "coupling": {"segments": [list(s) for s in c.omega_segments]},
        "pulse": {
            "shape": p.shape,
            "centers": list(p.centers),
            "widths": list(p.widths),
            "amplitudes": [_complex_json(a) for a in p.amplitudes],
            "carrier": p.carrier,
        },
        "grid": {"Nz": g.Nz, "dt": g.dt, "T_total": g.T_total, "L": g.L, "stride": g.stride},
        "protocol": copy.deepcopy(cfg.protocol),
        "output": copy.deepcopy(cfg.output),
        "spectroscopy": copy.deepcopy(cfg.spectroscopy),
        "fwm": copy.deepcopy(cfg.fwm),
    }


def dumps_config(cfg: SimConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)


def load_config(path: str | Path | dict, overrides: Sequence[str] = ()) -> SimConfig:
    """Load and validate a JSON config file (or an already parsed dict)."""
    if isinstance(path, dict):
        raw = copy.deepcopy(path)
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError("config", f"file not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be an object")
    if overrides:
        raw = apply_overrides(raw, overrides)
    return config_from_dict(raw)


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    """Apply flat ``section.key=value`` overrides; values parse as JSON when possible."""
    raw = copy.deepcopy(raw)
    props = load_schema()["properties"]
    for item in overrides:
        if "=" not in item:
            raise ConfigError("override", f"expected key=value, got {item!r}")
        key, val = item.split("=", 1)
        parts = key.strip().split(".")
        if parts[0] not in props:
            raise ConfigError(key, "unknown top-level key")
        sub = props[parts[0]]
        if len(parts) > 1 and sub.get("additionalProperties") is False:
            if parts[1] not in sub.get("properties", {}):
                raise ConfigError(key, "unknown key")
        try:
            value: Any = json.loads(val)
        except json.JSONDecodeError:
            value = val
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "cannot override inside a non-object")
        node[parts[-1]] = value
    return raw
