"""File output: CSV tables, JSON reports, run manifests and presets.

CSV files use ',' separators, '.' decimals, LF line endings and 17
significant digits so every double round-trips exactly. Header lines start
with '#' and name the axes and units; the first non-comment line holds the
column names.
"""
from __future__ import annotations

import hashlib
import json
import math
import platform
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .core import ConfigError, GemError, SimConfig, config_to_dict


def fmt(x) -> str:
    """17-significant-digit text for a real number."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def write_csv(path, columns: Sequence[str], rows, comments: Iterable[str] = ()) -> Path:
    """Write a rectangular table. ``rows`` is any 2-D array-like of reals (may be empty)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(rows, dtype=float)
    if data.size == 0:
        data = np.zeros((0, len(columns)))
    if data.ndim != 2 or data.shape[1] != len(columns):
        raise GemError(f"table for {path.name} has shape {data.shape}, expected (*, {len(columns)})")
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(columns))
    lines.extend(",".join(fmt(v) for v in row) for row in data)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def write_matrix_csv(path, row_axis: str, col_axis: str, row_vals, col_vals, values, comments: Iterable[str] = ()) -> Path:
    """Matrix table: first column is the row axis, header row lists the column axis."""
    row_vals = np.asarray(row_vals, dtype=float)
    col_vals = np.asarray(col_vals, dtype=float)
    values = np.asarray(values, dtype=float).reshape(row_vals.size, col_vals.size)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {c}" for c in comments]
    lines.append(f"# rows: {row_axis}; columns: {col_axis}")
    lines.append(",".join([f"{row_axis}\\{col_axis}"] + [fmt(c) for c in col_vals]))
    for r, vals in zip(row_vals, values):
        lines.append(",".join([fmt(r)] + [fmt(v) for v in vals]))
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Column names and data of a table written by ``write_csv``."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if not ln.startswith("#")]
    cols = lines[0].split(",")
    if len(lines) == 1:
        return cols, np.zeros((0, len(cols)))
    return cols, np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def config_hash(cfg: SimConfig) -> str:
    """sha256 of the canonical resolved configuration."""
    text = json.dumps(_jsonable(config_to_dict(cfg)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def write_manifest(outdir, *, command: str, cfg: SimConfig, config_path: str | None, preset: str | None,
                   overrides: Sequence[str], files: Sequence[str], summary: dict,
                   extra_provenance: Sequence[str] = ()) -> Path:
    """Record what ran, with which resolved parameters, and where every default came from."""
    manifest = {
        "tool": "gemsim",
        "version": __version__,
        "command": command,
        "config_path": config_path,
        "preset": preset,
        "overrides": list(overrides),
        "output_directory": str(Path(outdir)),
        "config_hash": config_hash(cfg),
        "resolved_config": config_to_dict(cfg),
        "provenance": list(cfg.provenance) + list(extra_provenance),
        "files": sorted(files),
        "summary": summary,
        "environment": {"python": platform.python_version(), "numpy": np.__version__},
    }
    return write_json(Path(outdir) / "manifest.json", manifest)


# ---------------------------------------------------------------- presets

def list_presets() -> list[str]:
    root = resources.files("gemsim").joinpath("presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    root = resources.files("gemsim").joinpath("presets")
    f = root.joinpath(f"{name}.json")
    if not f.is_file():
        raise ConfigError("preset", f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return json.loads(f.read_text())


# ---------------------------------------------------------------- plot data

def _subsample(n: int, max_rows: int | None) -> np.ndarray:
    if max_rows is None or n <= max_rows:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, max_rows).round().astype(int))


def emit_plot_data(obj, kind: str, outdir, prefix: str = "", max_rows: int | None = 300, **kw) -> list[Path]:
    """Write plot-ready CSV tables for a record or profile.

    kinds:
      record        t, input/output fields (re, im), gradient, coupling
      field_zt      Re and Im E(z, t) matrices (rows t, columns z)
      spin_zt       Re and Im sigma12(z, t) matrices
      polariton     |psi(k, t)| matrix (rows t, columns k); needs ``params``
      centroid      t, k-centroid; needs ``params``
      line_profile  detuning and profile values of a LineProfile
      susceptibility  detuning, Re chi, Im chi, T; needs ``od_scale``
      fwm_spectrum  detuning, |T_probe|, |T_stokes|
      table         generic: ``columns`` plus rows in ``obj``
    """
    out = Path(outdir)
    name = prefix if kind == "table" and prefix else (prefix + "_" if prefix else "") + kind
    path = out / f"{name}.csv"
    if kind == "record":
        r = obj
        cols = ["t", "E_in_re", "E_in_im", "E_out_fw_re", "E_out_fw_im", "E_out_bw_re", "E_out_bw_im", "eta", "omega"]
        rows = np.column_stack([
            r.times, r.E_in.real, r.E_in.imag, r.E_out_fw.real, r.E_out_fw.imag,
            r.E_out_bw.real, r.E_out_bw.imag, r.eta_t, r.omega_t,
        ]) if r.times.size else np.zeros((0, len(cols)))
        return [write_csv(path, cols, rows, ["time in 1/gamma; fields in input units; eta and omega in gamma"])]
    if kind in ("field_zt", "spin_zt"):
        r = obj
        data = r.E_zt if kind == "field_zt" else r.sigma_zt
        if r.hist_times.size == 0:
            return [write_csv(path, ["t"], [], ["empty history"])]
        idx = _subsample(r.hist_times.size, max_rows)
        label = "E(z,t)" if kind == "field_zt" else "sigma12(z,t)"
        return [
            write_matrix_csv(out / f"{name}_{part}.csv", "t", "z", r.hist_times[idx], r.z, fn(data[idx]),
                             [f"{part} {label}; t in 1/gamma, z in L"])
            for part, fn in (("re", np.real), ("im", np.imag))
        ]
    if kind == "polariton":
        from .polariton import polariton_history

        r = obj
        if r.hist_times.size == 0:
            return [write_csv(path, ["t"], [], ["empty history"])]
        k, t, psi, _ = polariton_history(r, kw["params"], kw.get("L", 1.0))
        order = np.argsort(k)
        idx = _subsample(t.size, max_rows)
        return [write_matrix_csv(path, "t", "k", t[idx], k[order], np.abs(psi[idx][:, order]), ["|psi(k,t)|; k in 1/L"])]
    if kind == "centroid":
        from .polariton import centroid_track

        r = obj
        if r.hist_times.size == 0:
            return [write_csv(path, ["t", "kbar"], [], ["empty history"])]
        tr = centroid_track(r, kw["params"], kw.get("L", 1.0))
        return [write_csv(path, ["t", "kbar"], np.column_stack([tr.times, tr.kbar]), ["power-weighted k centroid; k in 1/L"])]
    if kind == "line_profile":
        prof = obj
        v = np.asarray(prof.values)
        unit = kw.get("unit", "frequency units")
        if np.iscomplexobj(v):
            return [write_csv(path, ["detuning", "re", "im"], np.column_stack([prof.detunings, v.real, v.imag]), [f"detuning in {unit}"])]
        return [write_csv(path, ["detuning", "value"], np.column_stack([prof.detunings, v]), [f"detuning in {unit}"])]
    if kind == "susceptibility":
        d, chi = obj
        chi = np.asarray(chi)
        T = np.exp(-kw["od_scale"] * chi.imag)
        return [write_csv(path, ["detuning", "re_chi", "im_chi", "T"], np.column_stack([d, chi.real, chi.imag, T]),
                          [f"detuning in {kw.get('unit', 'frequency units')}; T = exp(-od_scale Im chi), od_scale={fmt(kw['od_scale'])}"])]
    if kind == "fwm_spectrum":
        sp = obj
        return [write_csv(path, ["detuning", "T_probe", "T_stokes"], np.column_stack([sp.detunings, sp.probe, sp.stokes]),
                          ["two-photon detuning in gamma; amplitudes normalised to the input probe"])]
    if kind == "table":
        return [write_csv(path, kw["columns"], obj, kw.get("comments", ()))]
    raise GemError(f"unknown plot-data kind {kind!r}")
