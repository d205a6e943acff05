"""Phase segmentation and summary statistics for force/displacement traces.

A trace from an insertion run shows three phases: deformation (rise),
cutting (plateau while the probe still moves) and relaxation (after the
probe stops). The boundaries are found from the slope of a centred moving
average, so every threshold is relative to the trace's own peak slope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d

from .simulator import SimResult


@dataclass(frozen=True)
class PhaseSegmentation:
    t_deform: tuple[float, float]
    t_cut: tuple[float, float]
    t_relax: tuple[float, float]
    # sample indices of the three boundaries t1, t2 (end of deform / cut)
    i_cut: int
    i_relax: int
    degenerate: bool = False
    method: dict = field(default_factory=dict)

    @property
    def cut_empty(self) -> bool:
        return self.i_relax <= self.i_cut


@dataclass(frozen=True)
class PhaseStats:
    peak: float
    plateau_mean: float | None
    relaxation_level: float | None
    oscillation_amp: float


@dataclass(frozen=True)
class RunSummary:
    """What one insertion run contributes to a comparison."""

    peak_force: float
    work: float
    displacement: PhaseStats | None = None


@dataclass(frozen=True)
class ReductionReport:
    peak_reduction_pct: float
    plateau_reduction_pct: float | None
    work_reduction_pct: float | None

    def lines(self) -> list[str]:
        def fmt(v):
            return "n/a" if v is None else f"{v:.2f}%"

        return [
            f"peak force reduction: {fmt(self.peak_reduction_pct)}",
            f"plateau displacement reduction: {fmt(self.plateau_reduction_pct)}",
            f"work reduction: {fmt(self.work_reduction_pct)}",
        ]


def _window(n_samples, dt, period):
    if period is not None and period > 0 and dt > 0:
        w = int(round(period / dt))
    else:
        w = int(round(0.05 * n_samples))
    w = max(w, 1)
    return w if w % 2 else w + 1


def smooth(trace, window: int) -> np.ndarray:
    """Centred moving average, edges padded with the end values."""
    return uniform_filter1d(np.asarray(trace, dtype=float), size=window, mode="nearest")


def segment_phases(
    trace,
    t,
    motion_stop: float | None = None,
    plateau_slope_frac: float = 0.1,
    period: float | None = None,
) -> PhaseSegmentation:
    """Split a trace into deformation, cutting and relaxation phases.

    The cutting phase starts where the smoothed slope first drops below
    ``plateau_slope_frac`` of its maximum and ends at ``motion_stop``. When
    the stop time is not given it is taken as the start of the final
    decline: the last sample before the steepest fall whose slope is still
    above ``-plateau_slope_frac`` times the peak slope.
    The smoothing window is ``period`` (one reciprocal cycle) when given,
    else 5% of the trace length.
    """
    y = np.asarray(trace, dtype=float)
    t = np.asarray(t, dtype=float)
    if y.ndim != 1 or y.shape != t.shape:
        raise ValueError("trace and t must be 1-D arrays of equal length")
    if y.size < 10:
        raise ValueError("trace needs at least 10 samples")
    if not 0 < plateau_slope_frac < 1:
        raise ValueError("plateau_slope_frac must lie in (0, 1)")
    n = y.size
    dt = float(np.median(np.diff(t)))
    w = _window(n, dt, period)
    # forward difference: slope[i] belongs to the interval [t_i, t_i+1]
    ys = smooth(y, w)
    slope = np.empty(n)
    slope[:-1] = np.diff(ys) / np.diff(t)
    slope[-1] = slope[-2]
    meta = {"window": w, "plateau_slope_frac": plateau_slope_frac}

    if motion_stop is not None:
        i2 = int(np.searchsorted(t, motion_stop - 1e-9 * max(1.0, abs(motion_stop))))
        i2 = min(i2, n - 1)
    else:
        i2 = n - 1
    i_peak = int(np.argmax(slope[: max(i2, 1)]))
    peak_slope = slope[i_peak]
    scale = np.max(np.abs(y))
    if not np.isfinite(peak_slope) or peak_slope <= 1e-12 * max(scale, 1e-300) or scale == 0:
        meta["reason"] = "no rise"
        return PhaseSegmentation(
            t_deform=(t[0], t[i2]), t_cut=(t[i2], t[i2]), t_relax=(t[i2], t[-1]),
            i_cut=i2, i_relax=i2, degenerate=True, method=meta,
        )
    thr = plateau_slope_frac * peak_slope

    if motion_stop is None:
        i_fall = i_peak + int(np.argmin(slope[i_peak:]))
        above = np.flatnonzero(slope[i_peak:i_fall] >= -thr)
        i2 = i_peak + int(above[-1]) + 1 if above.size else i_fall
        meta["motion_stop"] = "detected"

    below = np.flatnonzero(slope[i_peak:i2] < thr)
    i1 = i_peak + int(below[0]) if below.size else i2
    return PhaseSegmentation(
        t_deform=(t[0], t[i1]), t_cut=(t[i1], t[i2]), t_relax=(t[i2], t[-1]),
        i_cut=i1, i_relax=i2, degenerate=False, method=meta,
    )


def profile_stats(trace, seg: PhaseSegmentation, period_samples: int | None = None) -> PhaseStats:
    """Peak, plateau mean, relaxation level and reciprocal-wave amplitude.

    ``period_samples`` sets the detrending window and the chunk length for
    the oscillation estimate; defaults to the segmentation's own window.
    """
    y = np.asarray(trace, dtype=float)
    n = y.size
    peak = float(np.max(y))
    i1, i2 = seg.i_cut, seg.i_relax
    w = period_samples or seg.method.get("window") or _window(n, 0, None)
    w = max(int(w), 1)

    plateau = float(np.mean(y[i1:i2])) if i2 > i1 else None
    relax = None
    if i2 < n:
        tail = y[i2:]
        k = max(1, int(round(0.1 * tail.size)))
        relax = float(np.mean(tail[-k:]))

    osc = 0.0
    if i2 > i1:
        resid = (y - smooth(y, w if w % 2 else w + 1))[i1:i2]
        spans = [np.ptp(resid[s : s + w]) for s in range(0, resid.size - w + 1, w)]
        if not spans:
            spans = [np.ptp(resid)]
        osc = 0.5 * float(np.mean(spans))
    return PhaseStats(peak=peak, plateau_mean=plateau, relaxation_level=relax, oscillation_amp=osc)


def reduction_pct(ref: float, test: float) -> float:
    if ref == 0:
        raise ValueError("reference value is zero; reduction undefined")
    return 100.0 * (ref - test) / ref


def compare(ref: RunSummary, test: RunSummary) -> ReductionReport:
    """Percentage reductions of ``test`` relative to ``ref``."""
    peak = reduction_pct(ref.peak_force, test.peak_force)
    plateau = None
    if ref.displacement is not None and test.displacement is not None:
        a, b = ref.displacement.plateau_mean, test.displacement.plateau_mean
        if a is not None and b is not None:
            plateau = reduction_pct(a, b)
    work = reduction_pct(ref.work, test.work) if ref.work else None
    return ReductionReport(peak, plateau, work)


def summarize(r: SimResult, node=(5, 3), plateau_slope_frac: float = 0.1) -> RunSummary:
    """Peak force, work and node displacement statistics of one run."""
    trace = r.node_trace(*node)
    seg = segment_phases(trace, r.t, motion_stop=r.motion_stop,
                         plateau_slope_frac=plateau_slope_frac, period=r.cycle_period)
    stats = profile_stats(trace, seg)
    return RunSummary(peak_force=float(np.max(r.reaction_force)), work=float(r.work[-1]),
                      displacement=stats)
