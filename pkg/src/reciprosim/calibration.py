"""Fit free material parameters to measured force/work/displacement targets.

The search is a bounded Nelder-Mead simplex run in coordinates normalised
to each parameter's bounds; trial points are projected back onto the box.
It is deterministic: same start, targets and budget give the same history.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .analysis import summarize
from .simulator import (
    DirectSchedule,
    Materials,
    ReciprocalSchedule,
    SimConfig,
    SimulationError,
    simulate,
)

log = logging.getLogger(__name__)

PENALTY = 1e6

# where each tunable name lives inside Materials
_FIELDS = {
    "f_breakaway": "friction",
    "f_coulomb": "friction",
    "v_breakaway": "friction",
    "f_viscous": "friction",
    "extract_gain": "friction",
    "k_parallel": "kelvin",
    "k_series": "kelvin",
    "c_damper": "kelvin",
    "f_cut": "cutting",
}

DEFAULT_BOUNDS = {
    "f_breakaway": (5e-4, 0.05),
    "f_coulomb": (2e-4, 0.03),
    "f_cut": (0.0, 0.1),
    "k_parallel": (1e-3, 0.1),
    "k_series": (1e-3, 0.2),
    "c_damper": (1e-3, 2.0),
}

PROTOCOLS = {
    "direct_1mms": lambda hold: DirectSchedule(v_probe=1.0, depth=70.0, hold_time=hold),
    "recip_4mms": lambda hold: ReciprocalSchedule(v_segment=4.0, stroke=5.0, cycles=14, hold_time=hold),
    "recip_1mms": lambda hold: ReciprocalSchedule(v_segment=1.0, stroke=5.0, cycles=14, hold_time=hold),
}

# statistic names per protocol: peak force (N), work (mJ), plateau (mm)
STATS = ("peak", "work", "plateau")


@dataclass(frozen=True)
class CalibrationTargets:
    """Measured means; weights and tolerances keyed ``"<protocol>.<stat>"``."""

    direct_peak: float = 0.69
    direct_work: float = 25.23
    recip4_peak: float = 0.56
    recip4_work: float = 19.69
    recip1_peak: float = 0.37
    recip1_work: float = 12.92
    plateau_direct: float = 3.63
    plateau_recip4: float = 2.92
    plateau_recip1: float = 2.24
    weights: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.values().items():
            if not v > 0:
                raise ValueError(f"target {k} must be > 0")
        for k, w in self.weights.items():
            if k not in self.values():
                raise ValueError(f"unknown target {k!r}")
            if w < 0:
                raise ValueError(f"weight for {k} must be >= 0")

    def values(self) -> dict[str, float]:
        return {
            "direct_1mms.peak": self.direct_peak,
            "direct_1mms.work": self.direct_work,
            "direct_1mms.plateau": self.plateau_direct,
            "recip_4mms.peak": self.recip4_peak,
            "recip_4mms.work": self.recip4_work,
            "recip_4mms.plateau": self.plateau_recip4,
            "recip_1mms.peak": self.recip1_peak,
            "recip_1mms.work": self.recip1_work,
            "recip_1mms.plateau": self.plateau_recip1,
        }

    def weight(self, key: str) -> float:
        if key in self.weights:
            return self.weights[key]
        # single-trial measurements at Vs = 1 mm/s count half
        return 0.5 if key.startswith("recip_1mms") else 1.0

    def protocols(self) -> list[str]:
        seen = []
        for key in self.values():
            proto = key.split(".")[0]
            if self.weight(key) > 0 and proto not in seen:
                seen.append(proto)
        return seen


@dataclass(frozen=True)
class ParameterVector:
    names: tuple
    values: tuple
    bounds: tuple  # ((lo, hi), ...)

    def __post_init__(self):
        if not (len(self.names) == len(self.values) == len(self.bounds)):
            raise ValueError("names, values and bounds must have equal length")
        for n, v, (lo, hi) in zip(self.names, self.values, self.bounds):
            if n not in _FIELDS:
                raise ValueError(f"unknown parameter {n!r}")
            if not lo <= hi:
                raise ValueError(f"bounds for {n} are inverted")
            if not lo <= v <= hi:
                raise ValueError(f"{n}={v} outside bounds [{lo}, {hi}]")

    @classmethod
    def from_materials(cls, m: Materials, bounds: dict | None = None) -> "ParameterVector":
        bounds = dict(DEFAULT_BOUNDS if bounds is None else bounds)
        names = tuple(bounds)
        vals = tuple(float(getattr(getattr(m, _FIELDS[n]), n)) for n in names)
        clipped = tuple(min(max(v, bounds[n][0]), bounds[n][1]) for n, v in zip(names, vals))
        return cls(names, clipped, tuple(tuple(map(float, bounds[n])) for n in names))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))

    def with_values(self, values) -> "ParameterVector":
        return replace(self, values=tuple(float(v) for v in values))

    def apply(self, m: Materials) -> Materials:
        """Materials with the free parameters substituted (may raise ValueError)."""
        groups: dict[str, dict] = {"friction": {}, "kelvin": {}, "cutting": {}}
        for n, v in zip(self.names, self.values):
            groups[_FIELDS[n]][n] = v
        return replace(
            m,
            friction=replace(m.friction, **groups["friction"]),
            kelvin=replace(m.kelvin, **groups["kelvin"]),
            cutting=replace(m.cutting, **groups["cutting"]),
        )

    # normalised coordinates in [0, 1]
    def to_unit(self) -> np.ndarray:
        lo, hi = np.array(self.bounds).T
        span = np.where(hi > lo, hi - lo, 1.0)
        return (np.array(self.values) - lo) / span

    def from_unit(self, u) -> "ParameterVector":
        lo, hi = np.array(self.bounds).T
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        return self.with_values(np.clip(lo + u * (hi - lo), lo, hi))


@dataclass
class Evaluation:
    loss: float
    stats: dict
    error: str | None = None


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("RECIPROSIM_THREADS", "1")))
    except ValueError:
        return 1


def run_protocols(base: SimConfig, materials: Materials, protocols, hold_time: float | None = None) -> dict:
    """Simulate each protocol and collect peak force, work and plateau."""
    hold = base.schedule.hold_time if hold_time is None else hold_time

    def one(name):
        cfg = replace(base, schedule=PROTOCOLS[name](hold), materials=materials)
        s = summarize(simulate(cfg))
        return {"peak": s.peak_force, "work": s.work, "plateau": s.displacement.plateau_mean}

    n = _threads()
    if n > 1 and len(protocols) > 1:
        with ThreadPoolExecutor(max_workers=n) as ex:
            results = list(ex.map(one, protocols))
    else:
        results = [one(p) for p in protocols]
    return dict(zip(protocols, results))


def weighted_loss(stats: dict, targets: CalibrationTargets) -> float:
    """Sum of weight * relative squared error over all weighted targets."""
    total = 0.0
    for key, target in targets.values().items():
        w = targets.weight(key)
        if w == 0:
            continue
        proto, stat = key.split(".")
        value = stats[proto][stat]
        if value is None or not math.isfinite(value):
            return PENALTY
        total += w * ((value - target) / target) ** 2
    return total


def evaluate(p: ParameterVector, targets: CalibrationTargets, base: SimConfig) -> Evaluation:
    try:
        m = p.apply(base.materials)
        stats = run_protocols(base, m, targets.protocols())
    except (ValueError, SimulationError) as exc:
        log.debug("candidate %s failed: %s", p.as_dict(), exc)
        return Evaluation(PENALTY, {}, error=str(exc))
    return Evaluation(weighted_loss(stats, targets), stats)


def loss(p: ParameterVector, targets: CalibrationTargets, base: SimConfig) -> float:
    return evaluate(p, targets, base).loss


@dataclass
class FitResult:
    best: ParameterVector
    best_loss: float
    history: list  # best-so-far loss after each evaluation
    evaluations: int
    trace: list = field(default_factory=list)  # (values, loss) per evaluation


def fit(
    init: ParameterVector,
    targets: CalibrationTargets | None = None,
    budget: int = 500,
    *,
    base: SimConfig | None = None,
    objective: Callable[[ParameterVector], float] | None = None,
    step: float = 0.1,
    xtol: float = 1e-7,
    ftol: float = 1e-12,
) -> FitResult:
    """Bounded Nelder-Mead over the free parameters of ``init``.

    ``objective`` overrides the simulation loss (used for synthetic checks).
    An iteration is attempted only when the budget can pay for its
    reflection plus one follow-up evaluation, so ``budget = dim + 2`` never
    gets past the initial simplex.
    """
    dim = len(init.names)
    if budget < dim + 2:
        raise ValueError(f"budget must be >= dimension + 2 = {dim + 2}")
    if objective is None:
        if targets is None or base is None:
            raise ValueError("need targets and base config, or an objective")

        def objective(p):
            return loss(p, targets, base)

    history: list[float] = []
    trace: list = []
    best = [math.inf, init]

    def f(u):
        p = init.from_unit(u)
        val = float(objective(p))
        if not math.isfinite(val):
            val = PENALTY
        trace.append((p.values, val))
        if val < best[0]:
            best[0], best[1] = val, p
        history.append(best[0])
        return val

    x0 = init.to_unit()
    simplex = [x0.copy()]
    for k in range(dim):
        x = x0.copy()
        x[k] = x[k] + step if x[k] + step <= 1.0 else x[k] - step
        simplex.append(x)
    simplex = np.array(simplex)
    fvals = np.array([f(x) for x in simplex])

    alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5
    while True:
        left = budget - len(history)
        if left < 2:
            break
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        if (np.max(np.abs(simplex[1:] - simplex[0])) < xtol
                and fvals[-1] - fvals[0] < ftol):
            break
        centroid = simplex[:-1].mean(axis=0)
        xr = np.clip(centroid + alpha * (centroid - simplex[-1]), 0.0, 1.0)
        fr = f(xr)
        if fr < fvals[0]:
            xe = np.clip(centroid + gamma * (xr - centroid), 0.0, 1.0)
            fe = f(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = np.clip(centroid + rho * (xr - centroid), 0.0, 1.0)
        else:
            xc = np.clip(centroid + rho * (simplex[-1] - centroid), 0.0, 1.0)
        fc = f(xc)
        if fc < min(fr, fvals[-1]):
            simplex[-1], fvals[-1] = xc, fc
            continue
        if budget - len(history) < dim:
            break
        for k in range(1, dim + 1):
            simplex[k] = simplex[0] + sigma * (simplex[k] - simplex[0])
            fvals[k] = f(simplex[k])

    return FitResult(best=best[1], best_loss=best[0], history=history,
                     evaluations=len(history), trace=trace)


def calibrate(base: SimConfig, targets: CalibrationTargets, bounds: dict | None = None,
              budget: int = 500, dt: float | None = None) -> tuple[Materials, FitResult]:
    """Fit ``bounds``' parameters starting from ``base.materials``.

    ``dt`` optionally coarsens the time step used during the search.
    """
    search = base if dt is None else replace(base, dt=dt, dt_max=max(dt, base.dt_max))
    init = ParameterVector.from_materials(base.materials, bounds)
    res = fit(init, targets, budget, base=search)
    return res.best.apply(base.materials), res
