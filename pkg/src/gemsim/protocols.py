"""Switching schedules for storage/recall protocols and echo analysis.

A pulse item absorbed at time t_j sits at k = 0 at that moment and then moves
as k_j(t) = -int_{t_j}^t eta. It is emitted when k_j returns to zero with the
coupling on, so every plan can be checked from the schedule alone.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .core import (
    CouplingProfile,
    GemError,
    GradientProfile,
    PulseSpec,
    max_normalized_correlation,
)
from .solver import SimulationRecord

KINDS = ("filo", "fifo_three_level", "fifo_two_level_steep", "arbitrary", "multi_echo", "backward")


class PlanError(GemError):
    """Schedule cannot realise the requested protocol."""


@dataclass(frozen=True)
class ProtocolPlan:
    kind: str
    gradient: GradientProfile
    coupling: CouplingProfile
    recall_windows: tuple[tuple[float, float, tuple[int, ...]], ...]
    centers: tuple[float, ...] = ()
    halfwidths: tuple[float, ...] = ()
    read_start: float = 0.0
    mirrored: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def t_end(self) -> float:
        return self.gradient.t_end

    @property
    def expected_order(self) -> list[int]:
        return [w[2][0] for w in sorted(self.recall_windows)]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "gradient": {"segments": [list(s) for s in self.gradient.eta_segments]},
            "coupling": {"segments": [list(s) for s in self.coupling.omega_segments]},
            "recall_windows": [[a, b, list(i)] for a, b, i in self.recall_windows],
            "read_start": self.read_start,
            "mirrored": self.mirrored,
        }


@dataclass
class EchoReport:
    windows: list
    energies: list
    efficiencies: list
    order: list
    mirror_fidelity: list
    peak_times: list
    input_energy: float

    def to_dict(self) -> dict:
        return {
            "windows": [list(w) for w in self.windows],
            "energies": list(self.energies),
            "efficiencies": list(self.efficiencies),
            "order": list(self.order),
            "mirror_fidelity": list(self.mirror_fidelity),
            "peak_times": list(self.peak_times),
            "input_energy": self.input_energy,
        }


# ---------------------------------------------------------------------------
# closed forms


def absorbed_fraction(beta: float) -> float:
    return 1.0 - math.exp(-2 * math.pi * beta)


def trapped_fraction(beta: float) -> float:
    return math.exp(-2 * math.pi * beta)


def predicted_echo_fraction(beta: float, n: int = 1) -> float:
    """Share of input energy released in the n-th echo of a two-level memory."""
    if beta <= 0 or n < 1:
        raise GemError("need beta > 0 and n >= 1")
    a = absorbed_fraction(beta)
    return a * a * math.exp(-2 * math.pi * beta * (n - 1))


def predicted_fifo_leakage(beta: float, s: float) -> float:
    """Input fraction leaked at the first crossing under a gradient s times steeper.

    Absorbed share (1 - e^{-2 pi beta}) times the share a crossing at the
    reduced optical depth beta/s re-emits (1 - e^{-2 pi beta / s}).
    """
    if s <= 0:
        raise GemError("steepness must be > 0")
    return absorbed_fraction(beta) * (1.0 - math.exp(-2 * math.pi * beta / s))


def steepness_for_leakage(beta: float, leakage: float) -> float:
    """Steepness factor giving the requested first-crossing leakage."""
    top = predicted_fifo_leakage(beta, 1.0)
    if not 0 < leakage < top:
        raise GemError(f"leakage must lie in (0, {top:.4g}) for beta={beta:g}")
    return brentq(lambda s: predicted_fifo_leakage(beta, s) - leakage, 1.0, 1e9, xtol=1e-12)


# ---------------------------------------------------------------------------
# crossing geometry


def crossing_times(gradient: GradientProfile, t_abs: float, t_max: float | None = None) -> list[float]:
    """Times after t_abs where k(t) = -int_{t_abs}^t eta returns to zero."""
    t_max = gradient.t_end if t_max is None else t_max
    out = []
    k = 0.0
    for a, b, eta in gradient.eta_segments:
        if b <= t_abs:
            continue
        lo = max(a, t_abs)
        hi = min(b, t_max)
        if hi <= lo:
            break
        k_hi = k - eta * (hi - lo)
        if eta != 0 and k != 0 and np.sign(k) != np.sign(k_hi):
            out.append(lo + k / eta)
        elif eta != 0 and k_hi == 0 and k != 0:
            out.append(hi)
        k = k_hi
    return out


def items_from_pulse(pulse: PulseSpec, nsig: float = 3.0) -> tuple[list[float], list[float], list[tuple[int, ...]]]:
    """Split an input into stored items: (centres, half extents, component indices).

    Trains store one item per component; every other shape is one item.
    """
    if pulse.shape == "train":
        return (
            list(pulse.centers),
            [nsig * w for w in pulse.widths],
            [(i,) for i in range(len(pulse.centers))],
        )
    lo = min(c - nsig * w for c, w in zip(pulse.centers, pulse.widths))
    hi = max(c + nsig * w for c, w in zip(pulse.centers, pulse.widths))
    if pulse.shape == "ramp":
        lo = min(c - w for c, w in zip(pulse.centers, pulse.widths))
        hi = max(c + w * 1.5 for c, w in zip(pulse.centers, pulse.widths))
    return [0.5 * (lo + hi)], [0.5 * (hi - lo)], [tuple(range(len(pulse.centers)))]


def _windows(centers, halfwidths, crossings, margin):
    return [
        (c - hw - margin, c + hw + margin)
        for c, hw in zip(crossings, halfwidths)
    ]


def _check_disjoint(wins, labels):
    order = sorted(range(len(wins)), key=lambda i: wins[i][0])
    for a, b in zip(order, order[1:]):
        if wins[b][0] < wins[a][1]:
            raise PlanError(
                f"recall windows of items {labels[a]} and {labels[b]} overlap "
                f"([{wins[a][0]:.4g}, {wins[a][1]:.4g}] vs [{wins[b][0]:.4g}, {wins[b][1]:.4g}])"
            )


# ---------------------------------------------------------------------------
# plan builders


def make_filo_plan(
    centers: Sequence[float],
    halfwidths: Sequence[float],
    tau_flip: float,
    eta0: float,
    t_end: float | None = None,
    omega: float | None = None,
    margin: float = 0.5,
) -> ProtocolPlan:
    """Single flip eta -> -eta at tau_flip; the last item in is the first out."""
    centers, halfwidths = list(centers), list(halfwidths)
    for c, hw in zip(centers, halfwidths):
        if c + hw > tau_flip:
            raise PlanError(f"item at t={c:g} still entering at the flip (tau={tau_flip:g})")
    cross = [2 * tau_flip - c for c in centers]
    wins = _windows(centers, halfwidths, cross, margin)
    t_end = t_end if t_end is not None else max(w[1] for w in wins)
    if t_end <= tau_flip:
        raise PlanError("t_end must follow the flip")
    grad = GradientProfile(((0.0, tau_flip, eta0), (tau_flip, t_end, -eta0)))
    coup = CouplingProfile(((0.0, t_end, omega, "forward"),) if omega else ())
    rw = tuple((a, b, (i,)) for i, (a, b) in enumerate(wins))
    return ProtocolPlan("filo", grad, coup, rw, tuple(centers), tuple(halfwidths), tau_flip, True,
                        {"crossings": cross})


def make_backward_plan(
    centers, halfwidths, tau_flip: float, eta0: float, omega: float,
    t_end: float | None = None, margin: float = 0.5,
) -> ProtocolPlan:
    """FILO storage with a forward write beam and a backward read beam."""
    base = make_filo_plan(centers, halfwidths, tau_flip, eta0, t_end, omega, margin)
    coup = CouplingProfile(((0.0, tau_flip, omega, "forward"), (tau_flip, base.t_end, omega, "backward")))
    return ProtocolPlan("backward", base.gradient, coup, base.recall_windows, base.centers,
                        base.halfwidths, tau_flip, True, dict(base.meta))


def make_fifo_plan_three_level(
    centers, halfwidths, tau1: float, eta0: float, omega: float,
    tau2: float | None = None, t_end: float | None = None, margin: float = 0.5,
) -> ProtocolPlan:
    """Two flips; the coupling is off while items pass k = 0 the first time."""
    centers, halfwidths = list(centers), list(halfwidths)
    for c, hw in zip(centers, halfwidths):
        if c + hw > tau1:
            raise PlanError(f"item at t={c:g} still entering at the first flip")
    first = [2 * tau1 - c for c in centers]
    span = (min(f - hw for f, hw in zip(first, halfwidths)), max(f + hw for f, hw in zip(first, halfwidths)))
    if tau2 is None:
        tau2 = span[1] + margin
    if min(2 * tau2 - 2 * tau1 + c for c in centers) <= tau2:
        raise PlanError(f"gate closes at {tau2:g} before the items reach k = 0")
    if span[0] < tau1 or span[1] > tau2:
        warnings.warn(
            f"coupling-off gate [{tau1:g}, {tau2:g}] does not cover the first crossing span "
            f"[{span[0]:.4g}, {span[1]:.4g}]"
        )
    cross = [2 * tau2 - 2 * tau1 + c for c in centers]
    wins = _windows(centers, halfwidths, cross, margin)
    t_end = t_end if t_end is not None else max(w[1] for w in wins)
    grad = GradientProfile(((0.0, tau1, eta0), (tau1, tau2, -eta0), (tau2, t_end, eta0)))
    coup = CouplingProfile(((0.0, tau1, omega, "forward"), (tau2, t_end, omega, "forward")))
    rw = tuple((a, b, (i,)) for i, (a, b) in enumerate(wins))
    return ProtocolPlan("fifo_three_level", grad, coup, rw, tuple(centers), tuple(halfwidths), tau1,
                        False, {"first_crossings": first, "gate": (tau1, tau2), "crossings": cross})


def make_fifo_plan_two_level_steep(
    centers, halfwidths, tau1: float, eta0: float, s: float,
    t_end: float | None = None, margin: float = 0.5, beta: float | None = None,
) -> ProtocolPlan:
    """Flip to a steeper slope -s*eta0, then return to +eta0 for the readout.

    The steep segment lasts long enough to carry every item through k = 0 to
    its mirror position; the weak optical depth beta/s during that crossing
    keeps the first-in-last-out leakage small. Returning to +eta0 sends the
    items back through k = 0 in their original order.
    """
    if s < 1:
        raise PlanError("steepness factor must be >= 1")
    centers, halfwidths = list(centers), list(halfwidths)
    for c, hw in zip(centers, halfwidths):
        if c + hw > tau1:
            raise PlanError(f"item at t={c:g} still entering at the flip")
    t_first = min(c - hw for c, hw in zip(centers, halfwidths))
    dur = 2.0 * (tau1 - t_first + margin) / s
    t2 = tau1 + dur
    leak_cross = [tau1 + (tau1 - c) / s for c in centers]
    cross = [c + (1 + s) * dur for c in centers]
    wins = _windows(centers, halfwidths, cross, margin)
    t_end = t_end if t_end is not None else max(w[1] for w in wins)
    grad = GradientProfile(((0.0, tau1, eta0), (tau1, t2, -s * eta0), (t2, t_end, eta0)))
    rw = tuple((a, b, (i,)) for i, (a, b) in enumerate(wins))
    meta = {"steep_segment": (tau1, t2), "leak_crossings": leak_cross, "crossings": cross, "s": s}
    if beta is not None:
        meta["predicted_leakage"] = predicted_fifo_leakage(beta, s)
    return ProtocolPlan("fifo_two_level_steep", grad, CouplingProfile(), rw, tuple(centers),
                        tuple(halfwidths), tau1, False, meta)


def make_arbitrary_plan(
    centers, halfwidths, order: Sequence[int], eta0: float, omega: float,
    tau1: float | None = None, margin: float = 0.5, max_sweeps: int | None = None,
) -> ProtocolPlan:
    """Recall stored items in any requested order (possibly a subset).

    The gradient is flipped back and forth; items cross k = 0 in descending
    absorption order on odd sweeps and ascending order on even sweeps. The
    coupling is opened only around the crossing of the next requested item,
    so the others stay stored. Assignment is greedy over sweeps.
    """
    centers, halfwidths = list(centers), list(halfwidths)
    n = len(centers)
    order = list(order)
    if len(set(order)) != len(order) or any(not 0 <= i < n for i in order):
        raise PlanError(f"order {order} is not a (partial) permutation of 0..{n - 1}")
    t_write = max(c + hw for c, hw in zip(centers, halfwidths)) + margin
    tau1 = t_write if tau1 is None else tau1
    if tau1 < t_write - margin:
        raise PlanError("first flip precedes the end of writing")
    max_sweeps = max_sweeps or 2 * n + 2

    segs = [(0.0, tau1, eta0)]
    flip = tau1
    sign = -1.0
    pending = list(order)
    windows: list[tuple[float, float, tuple[int, ...]]] = []
    all_wins: list[tuple[float, float, int]] = []
    sweeps = 0
    while pending:
        sweeps += 1
        if sweeps > max_sweeps:
            raise PlanError("could not schedule the requested order")
        probe = GradientProfile(tuple(segs) + ((flip, flip + 1e6, sign * eta0),))
        cr = {}
        for j, c in enumerate(centers):
            after = [t for t in crossing_times(probe, c) if t > flip]
            cr[j] = after[0]
        seq = sorted(range(n), key=lambda j: cr[j])
        for j in seq:
            a, b = cr[j] - halfwidths[j] - margin, cr[j] + halfwidths[j] + margin
            all_wins.append((a, b, j))
            if pending and j == pending[0]:
                windows.append((a, b, (j,)))
                pending.pop(0)
        end = max(cr[j] + halfwidths[j] + margin for j in range(n))
        segs.append((flip, end, sign * eta0))
        flip = end
        sign = -sign
    t_end = segs[-1][1]
    # an opened window must not also catch another item's crossing
    for a, b, (j,) in windows:
        for a2, b2, j2 in all_wins:
            if j2 != j and a2 < b and b2 > a:
                raise PlanError(f"infeasible order: items {j} and {j2} cross k=0 together")
    coup = [(0.0, tau1, omega, "forward")]
    for a, b, _ in sorted(windows):
        a = max(a, coup[-1][1])
        if b > a:
            coup.append((a, b, omega, "forward"))
    grad = GradientProfile(tuple(segs))
    return ProtocolPlan("arbitrary", grad, CouplingProfile(tuple(coup)), tuple(sorted(windows)),
                        tuple(centers), tuple(halfwidths), tau1, True,
                        {"requested": order, "sweeps": sweeps})


def make_multi_echo_plan(
    center: float, halfwidth: float, tau1: float, eta0: float, n_echoes: int,
    margin: float = 0.5,
) -> ProtocolPlan:
    """Two-level memory flipped repeatedly so the trapped remainder re-echoes."""
    if center + halfwidth > tau1:
        raise PlanError("pulse still entering at the first flip")
    h = halfwidth + margin
    segs = [(0.0, tau1, eta0)]
    cross = [2 * tau1 - center]
    flip = tau1
    sign = -1.0
    for i in range(n_echoes):
        end = cross[-1] + h
        segs.append((flip, end, sign * eta0))
        flip, sign = end, -sign
        cross.append(end + h)
    cross = cross[:n_echoes]
    wins = tuple((c - h, c + h, (0,)) for c in cross)
    return ProtocolPlan("multi_echo", GradientProfile(tuple(segs)), CouplingProfile(), wins,
                        (center,), (halfwidth,), tau1, True, {"crossings": cross})


# ---------------------------------------------------------------------------
# analysis


def echo_peak_time(record: SimulationRecord, t_after: float, t_before: float | None = None) -> float:
    """Time of the strongest output after t_after (parabolic refinement)."""
    t = record.times
    p = np.abs(record.E_out) ** 2
    m = t > t_after
    if t_before is not None:
        m &= t < t_before
    idx = np.flatnonzero(m)
    if idx.size == 0:
        raise GemError("no samples in the requested interval")
    i = idx[np.argmax(p[idx])]
    if 0 < i < t.size - 1:
        y0, y1, y2 = p[i - 1], p[i], p[i + 1]
        den = y0 - 2 * y1 + y2
        h0, h1 = t[i] - t[i - 1], t[i + 1] - t[i]
        if den < 0 and abs(h0 - h1) < 1e-9 * max(h0, h1):
            return float(t[i] + 0.5 * h0 * (y0 - y2) / den)
    return float(t[i])


def _detect(p, thr, hyst):
    """Index ranges where p stays above thr (hysteresis in samples)."""
    above = p > thr
    wins = []
    i, n = 0, p.size
    while i < n:
        if above[i] and np.all(above[i : i + hyst]) and i + hyst <= n:
            j = i
            while j < n:
                if not above[j] and not np.any(above[j : j + hyst]):
                    break
                j += 1
            wins.append((i, j - 1))
            i = j
        else:
            i += 1
    return wins


def _extend(p, a, b, lo, hi, frac=1e-3):
    peak = p[a : b + 1].max()
    while a > lo and p[a - 1] > frac * peak and p[a - 1] <= p[a] * 1.5:
        a -= 1
    while b < hi and p[b + 1] > frac * peak and p[b + 1] <= p[b] * 1.5:
        b += 1
    return a, b


def analyze_echoes(
    record: SimulationRecord,
    plan: ProtocolPlan,
    pulse: PulseSpec,
    threshold: float = 0.01,
    hysteresis: int = 3,
) -> EchoReport:
    """Detect echo windows after readout starts and score them."""
    t = record.times
    p = np.abs(record.E_out_fw) ** 2 + np.abs(record.E_out_bw) ** 2
    p_in_peak = float(np.max(np.abs(record.E_in) ** 2)) if record.E_in.size else 0.0
    e_in = record.input_energy
    empty = EchoReport([], [], [], [], [], [], e_in)
    if p_in_peak == 0:
        return empty
    start = np.searchsorted(t, plan.read_start, side="right")
    sub = p[start:]
    raw = _detect(sub, threshold * p_in_peak, hysteresis)
    if not raw:
        return empty
    raw = [(a + start, b + start) for a, b in raw]
    # extend into the tails, never past a neighbour
    ext = []
    for i, (a, b) in enumerate(raw):
        lo = raw[i - 1][1] + 1 if i > 0 else start
        hi = raw[i + 1][0] - 1 if i + 1 < len(raw) else t.size - 1
        ext.append(_extend(p, a, b, lo, hi))

    # map detections to planned recall windows (merging lobes of one item)
    planned = sorted(plan.recall_windows)
    groups: dict[int, list] = {}
    loose = []
    for a, b in ext:
        tp = t[a + int(np.argmax(p[a : b + 1]))]
        hit = None
        for gi, (wa, wb, _) in enumerate(planned):
            if wa <= tp <= wb:
                hit = gi
                break
        if hit is None:
            loose.append((a, b))
        else:
            groups.setdefault(hit, []).append((a, b))
    spans = [(min(x[0] for x in v), max(x[1] for x in v), planned[g][2]) for g, v in groups.items()]
    spans += [(a, b, None) for a, b in loose]
    spans.sort()

    items_c, items_hw, comps = items_from_pulse(pulse)
    windows, energies, effs, order, fid, peaks = [], [], [], [], [], []
    for a, b, ident in spans:
        e = float(np.trapezoid(p[a : b + 1], t[a : b + 1]))
        windows.append((float(t[a]), float(t[b])))
        energies.append(e)
        effs.append(e / e_in if e_in > 0 else 0.0)
        peaks.append(float(t[a + int(np.argmax(p[a : b + 1]))]))
        j = ident[0] if ident else None
        order.append(j)
        if j is None or j >= len(comps):
            fid.append(float("nan"))
            continue
        fid.append(_fidelity(record, a, b, pulse, comps[j], items_c[j], items_hw[j], plan.mirrored))
    return EchoReport(windows, energies, effs, order, fid, peaks, e_in)


def _fidelity(record, a, b, pulse, comp, c, hw, mirrored):
    t = record.times[a : b + 1]
    amp = np.abs(record.E_out_fw[a : b + 1] + record.E_out_bw[a : b + 1])
    if t.size < 4:
        return 0.0
    dt = float(np.median(np.diff(t)))
    tu = np.arange(t[0], t[-1], dt)
    echo = np.interp(tu, t, amp)
    sub = pulse.with_components(comp)
    span = max(hw, 0.5 * (t[-1] - t[0])) + 4 * dt
    tr = np.arange(c - span, c + span, dt)
    ref = np.abs(sub.envelope(tr))
    if mirrored:
        ref = ref[::-1]
    return max_normalized_correlation(echo, ref)


def apply_plan(cfg, plan: ProtocolPlan):
    """Copy of ``cfg`` running the plan's schedules over the plan's duration."""
    from dataclasses import replace as _replace

    grid = _replace(cfg.grid, T_total=plan.t_end - plan.gradient.t_start)
    coupling = plan.coupling if cfg.ensemble.three_level else CouplingProfile()
    return cfg.replace(gradient=plan.gradient, coupling=coupling, grid=grid)
