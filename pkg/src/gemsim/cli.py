"""Command-line front end.

    gemsim simulate     --preset intensity_pulse --out runs/intensity_pulse
    gemsim protocol     --config my.json --set protocol.kind=filo
    gemsim spectroscopy --preset doppler_trends
    gemsim fwm          --preset fwm_gain
    gemsim sweep        --param beta --values 0.1,0.3,0.5

Exit codes: 0 success, 1 configuration error or bad usage, 2 numerical
failure. Errors are also written to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

from . import __version__
from . import fwm as fwm_mod
from . import io
from . import protocols as proto
from . import spectroscopy as spec
from .core import ConfigError, GemError, SimConfig, StabilityError, apply_overrides, config_from_dict, load_config
from .solver import pulse_bandwidth, run_simulation

log = logging.getLogger("gemsim")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
DEFAULT_OUT = "gemsim_out"
PARAM_ALIASES = {
    "beta": "ensemble.beta",
    "N_eff": "ensemble.N_eff",
    "gamma0": "ensemble.gamma0",
    "Nz": "grid.Nz",
    "dt": "grid.dt",
    "tau": "protocol.tau",
    "leakage": "protocol.leakage",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- config plumbing

def resolve_raw(config: str | None, preset: str | None) -> dict:
    if config and preset:
        raise ConfigError("config", "give either --config or --preset, not both")
    if preset:
        return io.load_preset(preset)
    if config:
        p = Path(config)
        if not p.exists():
            raise ConfigError("config", f"file not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be an object")
        return raw
    return {}


def output_root(arg: str | None, cfg: SimConfig) -> Path:
    """--out wins, then $GEM_SIM_OUT, then output.directory, then ./gemsim_out."""
    if arg:
        return Path(arg)
    env = os.environ.get("GEM_SIM_OUT")
    if env:
        return Path(env)
    return Path(cfg.output.get("directory", DEFAULT_OUT))


def _build(cls, section: dict, defaults: dict, where: str, prov: list, **fixed):
    """Dataclass from a config section, logging every default that was applied."""
    known = {f.name for f in dc_fields(cls)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}", "unknown parameter")
    kw = dict(section)
    for k, v in defaults.items():
        if k not in kw:
            kw[k] = v
            prov.append(f"{where}.{k} = {v!r} (default)")
    kw.update(fixed)
    try:
        return cls(**kw)
    except (GemError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(where, str(exc)) from None


def _axis(section: dict, key: str, default):
    ax = section.get(key)
    if ax is None:
        return default
    if isinstance(ax, list):
        a = np.asarray(ax, dtype=float)
    else:
        try:
            a = np.linspace(float(ax["start"]), float(ax["stop"]), int(ax["num"]))
        except (KeyError, TypeError, ValueError):
            raise ConfigError(key, "axis needs start, stop and num (or an explicit list)") from None
    if a.size < 2 or np.any(np.diff(a) <= 0):
        raise ConfigError(key, "axis must be strictly increasing with at least two points")
    return a


# ---------------------------------------------------------------- dynamics

def _first_flip(cfg: SimConfig) -> float:
    flips = cfg.gradient.flip_times()
    return flips[0] if flips else cfg.gradient.t_start


def _bandwidth_meta(cfg: SimConfig) -> dict:
    bw = pulse_bandwidth(cfg.pulse)
    span = abs(cfg.gradient.eta_segments[0][2]) * cfg.grid.L
    return {"pulse_bandwidth_99": bw, "gradient_bandwidth": span, "bandwidth_margin": span / bw if bw > 0 else math.inf,
            "pulse_widths": list(cfg.pulse.widths)}


def _emit_record(rec, cfg: SimConfig, out: Path) -> list[Path]:
    files = io.emit_plot_data(rec, "record", out)
    if rec.hist_times.size:
        files += io.emit_plot_data(rec, "field_zt", out)
        files += io.emit_plot_data(rec, "spin_zt", out)
        if cfg.output.get("polariton", False):
            files += io.emit_plot_data(rec, "polariton", out, params=cfg.ensemble, L=cfg.grid.L)
            files += io.emit_plot_data(rec, "centroid", out, params=cfg.ensemble, L=cfg.grid.L)
    return files


def run_simulate(cfg: SimConfig, out: Path) -> tuple[list[Path], dict]:
    """Run the configured schedule as given and score the echoes after the first flip."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rec = run_simulation(cfg)
    t_read = _first_flip(cfg)
    plan = proto.ProtocolPlan("custom", cfg.gradient, cfg.coupling, (), read_start=t_read)
    rep = proto.analyze_echoes(rec, plan, cfg.pulse)
    e_in = rec.input_energy
    summary = {
        "input_energy": e_in,
        "output_energy": rec.output_energy,
        "read_start": t_read,
        "efficiency": rec.energy_between(t_read, rec.times[-1]) / e_in if e_in > 0 else 0.0,
        "echo_peak_time": proto.echo_peak_time(rec, t_read) if rec.times[-1] > t_read else None,
        "echoes": rep.to_dict(),
        "steps": rec.metadata.get("steps"),
        "bandwidth": _bandwidth_meta(cfg),
        "warnings": [str(w.message) for w in caught],
    }
    return _emit_record(rec, cfg, out), summary


def build_plan(cfg: SimConfig) -> proto.ProtocolPlan:
    pr = cfg.protocol
    kind = pr.get("kind")
    if kind not in proto.KINDS:
        raise ConfigError("protocol.kind", f"expected one of {', '.join(proto.KINDS)}, got {kind!r}")
    centers, hws, _ = proto.items_from_pulse(cfg.pulse)
    eta0 = cfg.gradient.eta_segments[0][2]
    omega = pr.get("omega", cfg.ensemble.omega_ref if cfg.ensemble.three_level else None)
    margin = float(pr.get("margin", 0.5))
    t_write = max(c + h for c, h in zip(centers, hws))
    tau = float(pr.get("tau", t_write + margin))
    if kind == "filo":
        return proto.make_filo_plan(centers, hws, tau, eta0, pr.get("t_end"), omega, margin)
    if kind == "backward":
        return proto.make_backward_plan(centers, hws, tau, eta0, omega, pr.get("t_end"), margin)
    if kind == "fifo_three_level":
        return proto.make_fifo_plan_three_level(centers, hws, tau, eta0, omega, pr.get("tau2"), pr.get("t_end"), margin)
    if kind == "fifo_two_level_steep":
        beta = pr.get("beta")
        if beta is None:
            from .core import derived_beta

            beta = derived_beta(cfg.ensemble, eta0)
        if "s" in pr:
            s = float(pr["s"])
        elif "leakage" in pr:
            s = proto.steepness_for_leakage(beta, float(pr["leakage"]))
        else:
            raise ConfigError("protocol.s", "fifo_two_level_steep needs a steepness s or a target leakage")
        return proto.make_fifo_plan_two_level_steep(centers, hws, tau, eta0, s, pr.get("t_end"), margin, beta)
    if kind == "arbitrary":
        if "order" not in pr:
            raise ConfigError("protocol.order", "arbitrary recall needs an order (0-based item indices)")
        return proto.make_arbitrary_plan(centers, hws, pr["order"], eta0, omega, pr.get("tau"), margin)
    # multi_echo
    if len(centers) != 1:
        raise ConfigError("protocol.kind", "multi_echo stores a single item")
    return proto.make_multi_echo_plan(centers[0], hws[0], tau, eta0, int(pr.get("n_echoes", 3)), margin)


def run_protocol(cfg: SimConfig, out: Path) -> tuple[list[Path], dict]:
    """Build the switching plan, run it and score each recall window."""
    plan = build_plan(cfg)
    run_cfg = proto.apply_plan(cfg, plan)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rec = run_simulation(run_cfg)
    rep = proto.analyze_echoes(rec, plan, cfg.pulse)
    e_in = rec.input_energy
    summary = {
        "plan": plan.to_dict(),
        "plan_meta": plan.meta,
        "expected_order": plan.expected_order,
        "echoes": rep.to_dict(),
        "input_energy": e_in,
        "output_energy": rec.output_energy,
        "efficiency": rec.energy_between(plan.read_start, rec.times[-1]) / e_in if e_in > 0 else 0.0,
        "steps": rec.metadata.get("steps"),
        "bandwidth": _bandwidth_meta(cfg),
        "warnings": [str(w.message) for w in caught],
    }
    if plan.kind == "fifo_two_level_steep":
        a, b = plan.meta["steep_segment"]
        summary["leakage"] = rec.energy_between(a, b) / e_in if e_in > 0 else 0.0
    if plan.kind == "fifo_three_level":
        a, b = plan.meta["gate"]
        summary["gate_leakage"] = rec.energy_between(a, b) / e_in if e_in > 0 else 0.0
    files = _emit_record(rec, run_cfg, out)
    files += io.emit_plot_data(
        [[a, b, i[0]] for a, b, i in plan.recall_windows], "table", out, prefix="recall_windows",
        columns=["t_start", "t_end", "item"], comments=["planned recall windows; times in 1/gamma"])
    return files, summary


# ---------------------------------------------------------------- spectroscopy

SPEC_DEFAULTS = {
    "MHz": {"omega": 20.0, "delta1": 2000.0, "gamma": spec.RB87_D1_LINEWIDTH_MHZ, "gamma0": 0.005, "etaL": 0.2,
            "theta": 0.0, "temperature": 343.0},
    "gamma": {"omega": 1.0, "delta1": 100.0, "gamma0": 0.0, "etaL": 0.0, "theta": 0.0, "temperature": 343.0},
}
SPEC_OPERATIONS = ("susceptibility", "broadened_transmission", "doppler_absorption", "fwhm_vs_theta",
                   "peak_vs_theta", "fwhm_vs_omega", "doppler_width", "vapor_cell")


def spectroscopy_params(section: dict, prov: list) -> spec.RamanLineParams:
    units = section.get("units", "MHz")
    if units not in SPEC_DEFAULTS:
        raise ConfigError("spectroscopy.units", "expected 'MHz' or 'gamma'")
    if "units" not in section:
        prov.append("spectroscopy.units = 'MHz' (default)")
    fixed = {"gamma": 1.0, "unit_mhz": spec.RB87_D1_LINEWIDTH_MHZ} if units == "gamma" else {}
    raw = dict(section.get("params", {}))
    if units == "gamma" and ("gamma" in raw or "unit_mhz" in raw):
        raise ConfigError("spectroscopy.params", "gamma units fix gamma = 1; remove gamma/unit_mhz")
    return _build(spec.RamanLineParams, raw, SPEC_DEFAULTS[units], "spectroscopy.params", prov, **fixed)


def _od_scale(section: dict, p: spec.RamanLineParams, prov: list) -> float:
    if "od_scale" in section:
        return float(section["od_scale"])
    target = float(section.get("line_center_od", 3.0))
    if "line_center_od" not in section:
        prov.append("spectroscopy.line_center_od = 3.0 (default)")
    if p.etaL > 0:
        return target / spec.line_center_od(p, 1.0)
    return target / float(np.imag(spec.susceptibility(spec.raman_pole(p).real, p)))


def _linear_r2(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 3 or not np.all(np.isfinite(y)):
        return float("nan")
    fit = np.polyval(np.polyfit(x, y, 1), x)
    ss = np.sum((y - y.mean()) ** 2)
    return float(1 - np.sum((y - fit) ** 2) / ss) if ss > 0 else 1.0


def run_spectroscopy(cfg: SimConfig, out: Path) -> tuple[list[Path], dict]:
    sec = cfg.spectroscopy
    prov: list[str] = []
    p = spectroscopy_params(sec, prov)
    unit = "gamma" if sec.get("units", "MHz") == "gamma" else "MHz"
    ops = sec.get("operations")
    if ops is None:
        ops = ["susceptibility", "broadened_transmission"]
        prov.append(f"spectroscopy.operations = {ops!r} (default)")
    for op in ops:
        if op not in SPEC_OPERATIONS:
            raise ConfigError("spectroscopy.operations", f"unknown operation {op!r}; known: {', '.join(SPEC_OPERATIONS)}")
    files: list[Path] = []
    summary: dict = {"units": unit, "params": {f.name: getattr(p, f.name) for f in dc_fields(p)}}
    od = None
    thetas = np.asarray(sec.get("thetas", np.linspace(0.0, 0.02, 11)), float)

    for op in ops:
        if op == "susceptibility":
            od = od if od is not None else _od_scale(sec, p, prov)
            c = spec.raman_pole(p).real
            w = max(10 * spec.raman_fwhm_estimate(p), p.etaL)
            d = _axis(sec, "axis", np.linspace(c - w, c + w, 801))
            files += io.emit_plot_data((d, spec.susceptibility(d, p)), "susceptibility", out, od_scale=od, unit=unit)
            summary["susceptibility"] = {"od_scale": od, "pole": [spec.raman_pole(p).real, spec.raman_pole(p).imag]}
        elif op == "broadened_transmission":
            od = od if od is not None else _od_scale(sec, p, prov)
            axis = _axis(sec, "axis", None) if "axis" in sec else None
            prof = spec.broadened_transmission(p, od, axis)
            narrow = spec.broadened_transmission(p.with_(etaL=0.0), od, prof.detunings)
            files += io.emit_plot_data(np.column_stack([prof.detunings, narrow.values, prof.values]), "table", out,
                                       prefix="broadened_transmission", columns=["detuning", "T_unbroadened", "T_broadened"],
                                       comments=[f"detuning in {unit}; od_scale={io.fmt(od)}; etaL={io.fmt(p.etaL)}"])
            summary["broadened_transmission"] = {**prof.to_dict(), "unbroadened_fwhm": narrow.fwhm}
        elif op == "doppler_absorption":
            prof = spec.raman_line(p)
            files += io.emit_plot_data(prof, "line_profile", out, prefix="doppler_absorption", unit=unit)
            summary["doppler_absorption"] = {**prof.to_dict(), "unaveraged_fwhm": -2 * spec.raman_pole(p).imag}
        elif op == "fwhm_vs_theta":
            w = spec.raman_fwhm_vs_theta(thetas, p)
            files += io.emit_plot_data(np.column_stack([thetas, w]), "table", out, prefix="fwhm_vs_theta",
                                       columns=["theta", "fwhm"], comments=[f"theta in rad; fwhm in {unit}"])
            summary["fwhm_vs_theta"] = {"r2_linear": _linear_r2(thetas, w), "fwhm": w.tolist()}
        elif op == "peak_vs_theta":
            omegas = [float(o) for o in sec.get("peak_omegas", [p.omega])]
            cols = [spec.raman_peak_vs_theta(thetas, p.with_(omega=o)) for o in omegas]
            files += io.emit_plot_data(np.column_stack([thetas, *cols]), "table", out, prefix="peak_vs_theta",
                                       columns=["theta"] + [f"peak_omega={o:g}" for o in omegas],
                                       comments=[f"theta in rad; peak Doppler-averaged Im chi; omega in {unit}"])
            summary["peak_vs_theta"] = {f"{o:g}": c.tolist() for o, c in zip(omegas, cols)}
        elif op == "fwhm_vs_omega":
            omegas = np.asarray(sec.get("omegas", np.linspace(0.25, 3.0, 12) * (p.gamma if unit == "MHz" else 1.0)), float)
            d1s = [float(v) for v in sec.get("delta1_values", [p.delta1])]
            cols = [spec.raman_fwhm_vs_omega(omegas, d1, p) for d1 in d1s]
            files += io.emit_plot_data(np.column_stack([omegas, *cols]), "table", out, prefix="fwhm_vs_omega",
                                       columns=["omega"] + [f"fwhm_delta1={d:g}" for d in d1s],
                                       comments=[f"omega and fwhm in {unit}"])
            summary["fwhm_vs_omega"] = {f"{d:g}": c.tolist() for d, c in zip(d1s, cols)}
        elif op == "doppler_width":
            summary["doppler_width"] = {"temperature": p.temperature, "fwhm_mhz": spec.doppler_width_mhz(p.temperature)}
        elif op == "vapor_cell":
            cell = _build(spec.VaporCellParams, dict(sec.get("cell", {})), {}, "spectroscopy.cell", prov)
            times = np.asarray(sec.get("times", [1e-6, 1e-5, 1e-4, 1e-3]), float)
            g_col = spec.collisional_broadening(cell.pressure, cell.buffer, cell.broadening_coefficient)
            radii = spec.diffusion_radius(times, cell)
            files += io.emit_plot_data(np.column_stack([times, np.atleast_1d(radii)]), "table", out, prefix="diffusion",
                                       columns=["t", "radius"], comments=["t in s; rms transverse radius in cm"])
            summary["vapor_cell"] = {
                "collisional_broadening_mhz": g_col,
                "diffusion_coefficient_cm2_s": cell.diffusion_coefficient,
                "scattering_rate": spec.scattering_rate(p.omega, p.delta1, p.gamma),
            }
    return files, {**summary, "defaults_applied": prov}


# ---------------------------------------------------------------- four-wave mixing

FWM_DEFAULTS = {f.name: f.default for f in dc_fields(fwm_mod.FwmParams)}


def fwm_params(section: dict, prov: list, case: dict | None = None) -> fwm_mod.FwmParams:
    raw = dict(section.get("params", {}))
    raw.update(case or {})
    raw.pop("label", None)
    return _build(fwm_mod.FwmParams, raw, FWM_DEFAULTS, "fwm.params", prov)


def run_fwm(cfg: SimConfig, out: Path) -> tuple[list[Path], dict]:
    sec = cfg.fwm
    prov: list[str] = []
    ops = sec.get("operations")
    if ops is None:
        ops = ["spectrum"]
        prov.append("fwm.operations = ['spectrum'] (default)")
    kw = {"rtol": float(sec.get("rtol", 1e-9)), "max_nz": int(sec.get("max_nz", 1 << 16))}
    n_phases = int(sec.get("n_phases", 8))
    strict = not sec.get("allow_unconverged", False)

    def check(ok: bool, what: str):
        if strict and not ok:
            raise fwm_mod.ConvergenceError(
                f"{what}: step refinement did not reach rtol={kw['rtol']:g} within max_nz={kw['max_nz']}"
                " (raise fwm.max_nz or set fwm.allow_unconverged=true)")
    files: list[Path] = []
    summary: dict = {}
    for op in ops:
        if op == "spectrum":
            axis = _axis(sec, "axis", np.linspace(-0.1, 0.1, 201))
            cases = sec.get("cases") or [{}]
            results = []
            for i, case in enumerate(cases):
                if not isinstance(case, dict):
                    raise ConfigError(f"fwm.cases.{i}", "each case must be an object of parameter overrides")
                p = fwm_params(sec, prov if i == 0 else [], case)
                label = str(case.get("label", f"case{i}"))
                sp = fwm_mod.transmission_spectrum(axis, p, n_phases=n_phases, **kw)
                if not np.all(np.isfinite(sp.probe)) or not np.all(np.isfinite(sp.stokes)):
                    raise FloatingPointError(f"non-finite transmission in case {label}")
                check(sp.converged, f"case {label}")
                files += io.emit_plot_data(sp, "fwm_spectrum", out, prefix=label)
                j = int(np.argmax(sp.probe))
                results.append({
                    "label": label,
                    "od_resonant": p.od_resonant,
                    "omega": p.omega,
                    "seed_ratio": p.seed_ratio,
                    "delta_hf": p.delta_hf,
                    "probe_at_center": sp.at(0.0)[0],
                    "stokes_at_center": sp.at(0.0)[1],
                    "max_probe": float(sp.probe[j]),
                    "max_probe_detuning": float(sp.detunings[j]),
                    "gain_points": int(np.sum(sp.gain)),
                    "nz": sp.nz,
                    "converged": sp.converged,
                    "max_conditioning": float(np.max(sp.conditioning)) if sp.conditioning is not None else None,
                })
            summary["spectrum"] = results
        elif op == "od_scan":
            p = fwm_params(sec, prov)
            ods = [float(v) for v in sec.get("ods", [100, 300, 600, 900, 1200, 1550])]
            omega0s = tuple(float(v) for v in sec.get("omega0s", [0.0, 0.04]))
            delta_w = float(sec.get("delta_w", 0.02))
            axis = _axis(sec, "axis", None)
            res = fwm_mod.od_scan(ods, p, axis, omega0s, delta_w, n_phases=n_phases, **kw)
            for r in res["rows"]:
                check(r["converged"], f"od {r['od']:g}")
            keys = [k for k in res["rows"][0] if k.startswith("xi_")]
            rows = [[r["od"]] + [r[k] for k in keys] for r in res["rows"]]
            files += io.emit_plot_data(rows, "table", out, prefix="od_scan", columns=["od"] + keys,
                                       comments=[f"band energies normalised to the input probe; half-width {io.fmt(delta_w)} gamma"])
            summary["od_scan"] = res
        else:
            raise ConfigError("fwm.operations", f"unknown operation {op!r}; known: spectrum, od_scan")
    return files, {**summary, "defaults_applied": prov}


# ---------------------------------------------------------------- driver

RUNNERS = {
    "simulate": run_simulate,
    "protocol": run_protocol,
    "spectroscopy": run_spectroscopy,
    "fwm": run_fwm,
}


def execute(command: str, cfg: SimConfig, out: Path, *, config_path=None, preset=None, overrides=()) -> dict:
    """Run one command into ``out`` and write its manifest; returns the summary."""
    out.mkdir(parents=True, exist_ok=True)
    files, summary = RUNNERS[command](cfg, out)
    io.write_json(out / "summary.json", summary)
    names = [Path(f).name for f in files] + ["summary.json"]
    io.write_manifest(out, command=command, cfg=cfg, config_path=config_path, preset=preset,
                      overrides=overrides, files=names, summary=summary,
                      extra_provenance=summary.get("defaults_applied", []))
    return summary


def _sweep_one(job):
    raw, overrides, mode, out, config_path, preset = job
    cfg = config_from_dict(apply_overrides(raw, overrides))
    return execute(mode, cfg, Path(out), config_path=config_path, preset=preset, overrides=overrides)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def run_sweep(args, raw: dict, out: Path) -> dict:
    key = PARAM_ALIASES.get(args.param, args.param)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("values", "no sweep values given")
    mode = args.mode or ("protocol" if raw.get("protocol", {}).get("kind") else "simulate")
    if key == "ensemble.beta":
        # beta and N_eff are alternatives; the swept beta must win
        raw = json.loads(json.dumps(raw))
        raw.get("ensemble", {}).pop("N_eff", None)
    jobs = []
    for v in values:
        ov = list(args.set) + [f"{key}={v}"]
        config_from_dict(apply_overrides(raw, ov))  # fail fast on bad values
        jobs.append((raw, ov, mode, str(out / f"{args.param}={v}"), args.config, args.preset))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            summaries = list(ex.map(_sweep_one, jobs))
    else:
        summaries = [_sweep_one(j) for j in jobs]
    rows = []
    for v, s in zip(values, summaries):
        pv = _parse_value(v)
        ech = s.get("echoes", {})
        rows.append([
            float(pv) if isinstance(pv, (int, float)) else math.nan,
            s.get("efficiency", math.nan),
            s.get("echo_peak_time") or (ech.get("peak_times") or [math.nan])[0],
            s.get("input_energy", math.nan),
            s.get("output_energy", math.nan),
            len(ech.get("windows", [])),
        ])
    io.write_csv(out / "sweep.csv", ["value", "efficiency", "echo_peak_time", "input_energy", "output_energy", "n_echoes"],
                 rows, [f"sweep of {key} ({mode}); energies in input units, times in 1/gamma"])
    merged = {"param": key, "mode": mode, "values": [_parse_value(v) for v in values],
              "runs": [f"{args.param}={v}" for v in values], "summaries": summaries}
    io.write_json(out / "sweep.json", merged)
    return merged


def make_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gemsim", description="Gradient echo memory simulator")
    ap.add_argument("--version", action="version", version=f"gemsim {__version__}")
    ap.add_argument("--list-presets", action="store_true", help="print the bundled presets and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--preset", help="bundled preset name")
        p.add_argument("--out", help="output directory (else $GEM_SIM_OUT, else output.directory)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. ensemble.beta=0.5 (repeatable)")

    for name, text in [
        ("simulate", "run the configured gradient schedule"),
        ("protocol", "build and run a storage/recall protocol from the protocol section"),
        ("spectroscopy", "Raman line shapes and vapor-cell estimates"),
        ("fwm", "four-wave-mixing probe/Stokes transmission"),
    ]:
        common(sub.add_parser(name, help=text))
    sw = sub.add_parser("sweep", help="repeat a run over values of one parameter")
    common(sw)
    sw.add_argument("--param", required=True, help="config key (section.key) or alias such as beta")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--mode", choices=["simulate", "protocol"], help="pipeline per value (default from config)")
    sw.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return ap


def _fail(code: int, exc: BaseException, usage: str | None = None) -> int:
    err = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ConfigError):
        err["field"] = exc.field
        err["message"] = exc.message if hasattr(exc, "message") else str(exc)
    if usage:
        sys.stderr.write(usage)
    sys.stderr.write(json.dumps({"error": err}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_CONFIG, exc, parser.format_usage())
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.list_presets:
        print("\n".join(io.list_presets()))
        return EXIT_OK
    if not args.command:
        return _fail(EXIT_CONFIG, UsageError("no subcommand given"), parser.format_usage())
    try:
        raw = resolve_raw(args.config, args.preset)
        if args.command == "sweep":
            cfg = config_from_dict(apply_overrides(raw, args.set))
            out = output_root(args.out, cfg)
            res = run_sweep(args, raw, out)
            log.info("sweep of %s written to %s", res["param"], out)
        else:
            cfg = load_config(raw, args.set)
            out = output_root(args.out, cfg)
            execute(args.command, cfg, out, config_path=args.config, preset=args.preset, overrides=args.set)
        print(str(out))
        return EXIT_OK
    except (ConfigError, proto.PlanError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except (StabilityError, FloatingPointError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except GemError as exc:
        # remaining library errors come from the numerics (non-convergence, singular coefficients)
        return _fail(EXIT_NUMERIC, exc)


if __name__ == "__main__":
    sys.exit(main())
