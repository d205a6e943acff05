"""Constitutive laws for probe/tissue interaction.

Units throughout: mm, N, s (so N*mm = mJ).

Everything in this module is a pure function of its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQRT_2E = math.sqrt(2.0 * math.e)


@dataclass(frozen=True)
class FrictionParams:
    """Stribeck + Coulomb + viscous friction, per unit contact scale.

    ``extract_gain`` multiplies the law for negative relative velocity
    (tissue pulled against a segment); 1.0 keeps the law symmetric.
    """

    f_breakaway: float = 0.00498
    f_coulomb: float = 0.0002
    v_breakaway: float = 0.1
    f_viscous: float = 0.04
    extract_gain: float = 1.0

    def __post_init__(self):
        vals = (self.f_breakaway, self.f_coulomb, self.v_breakaway, self.f_viscous, self.extract_gain)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("friction parameters must be finite")
        if not self.f_coulomb > 0:
            raise ValueError("f_coulomb must be > 0")
        if self.f_breakaway < self.f_coulomb:
            raise ValueError("f_breakaway must be >= f_coulomb")
        if not self.v_breakaway > 0:
            raise ValueError("v_breakaway must be > 0")
        if self.f_viscous < 0:
            raise ValueError("f_viscous must be >= 0")
        if self.extract_gain < 1.0:
            raise ValueError("extract_gain must be >= 1")

    @property
    def v_stribeck(self) -> float:
        return self.v_breakaway * math.sqrt(2.0)

    @property
    def v_coulomb(self) -> float:
        return self.v_breakaway / 10.0


@dataclass(frozen=True)
class KelvinParams:
    """Standard linear solid: spring ``k_parallel`` beside a Maxwell arm."""

    k_parallel: float = 0.0036
    k_series: float = 0.1276
    c_damper: float = 0.1703

    def __post_init__(self):
        for name in ("k_parallel", "k_series", "c_damper"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v!r}")

    @property
    def relaxation_time(self) -> float:
        return self.c_damper / self.k_series


@dataclass(frozen=True)
class KelvinState:
    x: float = 0.0
    f_maxwell: float = 0.0


@dataclass(frozen=True)
class CuttingParams:
    f_cut: float = 0.0409

    def __post_init__(self):
        if not (math.isfinite(self.f_cut) and self.f_cut >= 0):
            raise ValueError("f_cut must be finite and >= 0")


@dataclass(frozen=True)
class ForceBudget:
    """Force magnitudes entering the anchoring inequalities."""

    f_cut: float
    f_insert: float
    f_extract: float
    f_drive: float
    n_stationary: int = 3

    def __post_init__(self):
        for name in ("f_cut", "f_insert", "f_extract", "f_drive"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")
        if self.n_stationary < 1:
            raise ValueError("n_stationary must be >= 1")


@dataclass(frozen=True)
class FeasibilityReport:
    eq1_holds: bool
    eq2_holds: bool
    margin: float


def _check_finite(name, value):
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


def friction_force(p: FrictionParams, v_rel: float, scale: float = 1.0) -> float:
    """Friction transmitted at relative velocity ``v_rel`` (mm/s).

    Smooth breakaway curve: a Stribeck bump peaking near ``v_breakaway``,
    a tanh-regularised Coulomb level and a linear viscous term. The whole
    law is multiplied by ``scale``, the engaged fraction of contact.
    Negative velocities are amplified by ``p.extract_gain``.
    """
    _check_finite("v_rel", v_rel)
    if not (0.0 <= scale <= 1.0):
        raise ValueError(f"scale must lie in [0, 1], got {scale!r}")
    return scale * _friction_unit(
        v_rel, p.f_breakaway, p.f_coulomb, p.v_breakaway, p.f_viscous, p.extract_gain
    )


def _friction_unit(v, f_brk, f_c, v_brk, f_visc, gain):
    v_st = v_brk * math.sqrt(2.0)
    v_coul = v_brk / 10.0
    r = v / v_st
    f = SQRT_2E * (f_brk - f_c) * math.exp(-r * r) * r + f_c * math.tanh(v / v_coul) + f_visc * v
    return f * gain if v < 0.0 else f


def friction_curve(p: FrictionParams, v_rel, scale: float = 1.0) -> np.ndarray:
    """Vectorised :func:`friction_force` over an array of velocities."""
    v = np.asarray(v_rel, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("v_rel must be finite")
    if not (0.0 <= scale <= 1.0):
        raise ValueError(f"scale must lie in [0, 1], got {scale!r}")
    r = v / p.v_stribeck
    f = (
        SQRT_2E * (p.f_breakaway - p.f_coulomb) * np.exp(-r * r) * r
        + p.f_coulomb * np.tanh(v / p.v_coulomb)
        + p.f_viscous * v
    )
    f = np.where(v < 0, f * p.extract_gain, f)
    return scale * f


def kelvin_step(p: KelvinParams, s: KelvinState, x_new: float, dt: float) -> tuple[float, KelvinState]:
    """Advance the element to elongation ``x_new`` over ``dt``.

    The Maxwell arm is integrated with implicit Euler, which is
    unconditionally stable. Returns the total element force and new state.
    """
    _check_finite("x_new", x_new)
    if not (math.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be > 0, got {dt!r}")
    f_m = (s.f_maxwell + p.k_series * (x_new - s.x)) / (1.0 + p.k_series * dt / p.c_damper)
    return p.k_parallel * x_new + f_m, KelvinState(x=x_new, f_maxwell=f_m)


def kelvin_energy(p: KelvinParams, s: KelvinState) -> float:
    """Elastic energy stored in both springs (mJ)."""
    return 0.5 * p.k_parallel * s.x**2 + 0.5 * s.f_maxwell**2 / p.k_series


def cutting_force(p: CuttingParams, tip_pos: float, cut_depth: float, v_tip: float) -> float:
    """Tip resistance: ``f_cut`` at an advancing crack front, else zero."""
    for name, v in (("tip_pos", tip_pos), ("cut_depth", cut_depth), ("v_tip", v_tip)):
        _check_finite(name, v)
    if cut_depth < 0:
        raise ValueError("cut_depth must be >= 0")
    if tip_pos >= cut_depth and v_tip > 0:
        return p.f_cut
    return 0.0


def feasible_reciprocal(b: ForceBudget) -> FeasibilityReport:
    """Evaluate both anchoring inequalities on a force budget.

    The first requires ``f_extract < f_cut + f_insert < f_drive``; the
    second requires the stationary segments together to out-grip the
    driven one, ``f_cut + f_insert < f_drive < n_stationary * f_extract``.
    """
    resist = b.f_cut + b.f_insert
    grip = b.n_stationary * b.f_extract
    return FeasibilityReport(
        eq1_holds=b.f_extract < resist < b.f_drive,
        eq2_holds=resist < b.f_drive < grip,
        margin=grip - resist,
    )
