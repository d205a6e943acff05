"""Quasi-static time stepping of a four-segment probe in viscoelastic tissue.

The probe segments are kinematic velocity sources. Tissue is a grid of
massless material points (nodes), each tied to ground (the sample box and
its force sensor) by a standard linear solid and dragged by the segments
through the breakaway friction law. Every step, each engaged node's axial
velocity is the root of its force balance, found by bracketed bisection
with continuation from the previous step's velocity so that stick and slip
branches persist until they cease to exist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
from numba import njit

from .mechanics import CuttingParams, ForceBudget, FrictionParams, KelvinParams, friction_force

N_SEGMENTS = 4

DISENGAGED, STICK, SLIP = 0, 1, 2

# bisection tolerance on node velocity (mm/s) and initial continuation step
V_TOL = 1e-9
H0 = 1e-6
BRACKET_FACTOR = 10.0


class SimulationError(RuntimeError):
    def __init__(self, msg, t=None):
        super().__init__(msg if t is None else f"{msg} (t={t:.6f} s)")
        self.t = t


# --------------------------------------------------------------------------
# motion schedules


@dataclass(frozen=True)
class DirectSchedule:
    v_probe: float = 1.0
    depth: float = 70.0
    hold_time: float = 30.0

    def __post_init__(self):
        if not self.v_probe > 0:
            raise ValueError("v_probe must be > 0")
        if self.depth < 0 or self.hold_time < 0:
            raise ValueError("depth and hold_time must be >= 0")

    @property
    def insertion_time(self) -> float:
        return self.depth / self.v_probe

    @property
    def max_speed(self) -> float:
        return self.v_probe

    @property
    def mean_speed(self) -> float:
        return self.v_probe

    @property
    def cycle_period(self) -> float | None:
        return None

    def knots(self) -> np.ndarray:
        """Times where the commanded velocities jump."""
        return np.array([self.insertion_time]) if self.depth > 0 else np.empty(0)

    def positions(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        p = np.minimum(self.v_probe * t, self.depth)
        return np.repeat(p[..., None], N_SEGMENTS, axis=-1)


@dataclass(frozen=True)
class ReciprocalSchedule:
    """Segments advance one at a time by ``stroke``, cyclically, no pauses."""

    v_segment: float = 4.0
    stroke: float = 5.0
    cycles: int = 14
    segment_order: tuple = (0, 1, 2, 3)
    hold_time: float = 30.0

    def __post_init__(self):
        if not self.v_segment > 0 or not self.stroke > 0:
            raise ValueError("v_segment and stroke must be > 0")
        if self.cycles < 0 or self.hold_time < 0:
            raise ValueError("cycles and hold_time must be >= 0")
        if sorted(self.segment_order) != list(range(N_SEGMENTS)):
            raise ValueError(f"segment_order must be a permutation of 0..{N_SEGMENTS - 1}")
        object.__setattr__(self, "segment_order", tuple(int(i) for i in self.segment_order))

    @property
    def depth(self) -> float:
        return self.stroke * self.cycles

    @property
    def stroke_time(self) -> float:
        return self.stroke / self.v_segment

    @property
    def cycle_period(self) -> float:
        return N_SEGMENTS * self.stroke_time

    @property
    def insertion_time(self) -> float:
        return self.cycles * self.cycle_period

    @property
    def max_speed(self) -> float:
        return self.v_segment

    @property
    def mean_speed(self) -> float:
        return self.v_segment / N_SEGMENTS

    def knots(self) -> np.ndarray:
        """Stroke boundaries, where one segment hands over to the next."""
        return self.stroke_time * np.arange(1, N_SEGMENTS * self.cycles + 1)

    def positions(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        T = self.stroke_time
        tc = np.clip(t, 0.0, self.insertion_time)
        k = np.minimum(np.floor(tc / self.cycle_period), max(self.cycles - 1, 0))
        local = tc - k * self.cycle_period
        out = np.empty(t.shape + (N_SEGMENTS,))
        for q, seg in enumerate(self.segment_order):
            frac = np.clip((local - q * T) / T, 0.0, 1.0)
            out[..., seg] = (k + frac) * self.stroke
        if self.cycles == 0:
            out[...] = 0.0
        return out


MotionSchedule = Union[DirectSchedule, ReciprocalSchedule]


def schedule_position(s: MotionSchedule, t: float) -> np.ndarray:
    """Commanded positions (mm) of the four segments at time ``t``."""
    if not t >= 0:
        raise ValueError("t must be >= 0")
    return s.positions(float(t))


# --------------------------------------------------------------------------
# geometry and tissue


@dataclass(frozen=True)
class ProbeGeometry:
    n_segments: int = N_SEGMENTS
    diameter: float = 6.0
    length: float = 130.0
    clearance: float = 0.15

    def __post_init__(self):
        if self.n_segments != N_SEGMENTS:
            raise ValueError(f"only {N_SEGMENTS}-segment probes are supported")
        if not (self.diameter > 0 and self.length > 0 and self.clearance >= 0):
            raise ValueError("diameter and length must be > 0, clearance >= 0")

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter

    @property
    def contact_fraction(self) -> float:
        return 1.0 / self.n_segments


@dataclass(frozen=True)
class NodeGrid:
    """Tracked material points: axial stations x signed radial offsets.

    Offsets are measured from the probe surface; the sign tells which side
    of the probe a column sits on. Row/column labels are 1-based, so node
    ``[5, 3]`` is station 5, column 3.
    """

    first_station: float = 25.0
    spacing: float = 6.6
    n_stations: int = 5
    radial_offsets: tuple = (-8.5, -4.5, -0.5, 0.5, 4.5, 8.5)
    coupling_length: float = 5.0

    def __post_init__(self):
        if self.n_stations < 1 or not self.spacing > 0 or self.first_station < 0:
            raise ValueError("invalid station layout")
        if not self.coupling_length > 0:
            raise ValueError("coupling_length must be > 0")
        if len(self.radial_offsets) < 1 or any(o == 0 for o in self.radial_offsets):
            raise ValueError("radial offsets must be non-zero")
        object.__setattr__(self, "radial_offsets", tuple(float(o) for o in self.radial_offsets))

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_stations, len(self.radial_offsets)

    @property
    def n_nodes(self) -> int:
        return self.n_stations * len(self.radial_offsets)

    @property
    def stations(self) -> np.ndarray:
        return self.first_station + self.spacing * np.arange(self.n_stations)

    def node_index(self, row: int, col: int) -> int:
        n_r, n_c = self.shape
        if not (1 <= row <= n_r and 1 <= col <= n_c):
            raise IndexError(f"node [{row},{col}] outside {n_r}x{n_c} grid")
        return (row - 1) * n_c + (col - 1)

    def arrays(self):
        """Per-node (station, signed offset, coupling), row-major."""
        st, off = np.meshgrid(self.stations, np.asarray(self.radial_offsets), indexing="ij")
        st, off = st.ravel(), off.ravel()
        return st, off, np.exp(-np.abs(off) / self.coupling_length)


@dataclass(frozen=True)
class TissueNode:
    axial_station: float
    radial_offset: float
    coupling: float
    kelvin: KelvinParams


@dataclass(frozen=True)
class Materials:
    friction: FrictionParams = field(default_factory=FrictionParams)
    kelvin: KelvinParams = field(default_factory=KelvinParams)
    cutting: CuttingParams = field(default_factory=CuttingParams)
    # radial cavity source: displacement gain on probe radius, cone length
    radial_gain: float = 1.0
    tip_length: float = 3.0

    def __post_init__(self):
        if self.radial_gain < 0 or not self.tip_length > 0:
            raise ValueError("radial_gain must be >= 0 and tip_length > 0")


@dataclass(frozen=True)
class SimConfig:
    schedule: MotionSchedule = field(default_factory=DirectSchedule)
    materials: Materials = field(default_factory=Materials)
    geometry: ProbeGeometry = field(default_factory=ProbeGeometry)
    grid: NodeGrid = field(default_factory=NodeGrid)
    dt: float = 1e-3
    dt_max: float = 1e-3
    record_stride: int = 10

    def __post_init__(self):
        if not (self.dt > 0 and self.dt_max > 0):
            raise ValueError("dt and dt_max must be > 0")
        if self.dt > self.dt_max * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds dt_max={self.dt_max}")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")

    def nodes(self) -> list[TissueNode]:
        st, off, cp = self.grid.arrays()
        k = self.materials.kelvin
        return [TissueNode(float(a), float(o), float(c), k) for a, o, c in zip(st, off, cp)]


# --------------------------------------------------------------------------
# numeric kernel
#
# prm layout (float64):
P_FB, P_FC, P_VB, P_FV, P_GAIN, P_KP, P_KS, P_C, P_FCUT, P_RAD, P_TIP, P_RGAIN, P_BRACKET, P_VMAX = range(14)


def _pack_params(cfg: SimConfig) -> np.ndarray:
    m = cfg.materials
    f, k = m.friction, m.kelvin
    return np.array(
        [
            f.f_breakaway, f.f_coulomb, f.v_breakaway, f.f_viscous, f.extract_gain,
            k.k_parallel, k.k_series, k.c_damper,
            m.cutting.f_cut, cfg.geometry.radius, m.tip_length, m.radial_gain,
            BRACKET_FACTOR * cfg.schedule.max_speed, cfg.schedule.max_speed,
        ]
    )


@njit(cache=True)
def _fric(v, fb, fc, vb, fv, gain):
    v_st = vb * 1.4142135623730951
    r = v / v_st
    f = 2.331643981597124 * (fb - fc) * math.exp(-r * r) * r + fc * math.tanh(10.0 * v / vb) + fv * v
    if v < 0.0:
        return f * gain
    return f


@njit(cache=True)
def _balance(v, vg, sg, ng, load, ux, fm, dt, prm):
    """Net force on a node moving at ``v``: drag + cut load - kelvin."""
    fb, fc, vb, fv, gain = prm[P_FB], prm[P_FC], prm[P_VB], prm[P_FV], prm[P_GAIN]
    acc = load
    for g in range(ng):
        acc += sg[g] * _fric(vg[g] - v, fb, fc, vb, fv, gain)
    kp, ks, c = prm[P_KP], prm[P_KS], prm[P_C]
    dx = v * dt
    k_force = kp * (ux + dx) + (fm + ks * dx) / (1.0 + ks * dt / c)
    return acc - k_force


@njit(cache=True)
def _solve_node(v0, vg, sg, ng, load, ux, fm, dt, vcap, prm):
    """Root of the node balance nearest ``v0``, not above ``vcap``.

    Returns (v, ok, excess). When the balance is still positive at
    ``vcap`` (the node cannot outrun the probe) the node moves at ``vcap``
    and ``excess`` is the part of ``load`` it cannot carry.
    """
    B = prm[P_BRACKET]
    Bu = min(B, vcap)
    if v0 > Bu:
        v0 = Bu
    elif v0 < -B:
        v0 = -B
    g0 = _balance(v0, vg, sg, ng, load, ux, fm, dt, prm)
    if g0 == 0.0:
        return v0, True, 0.0
    pos0 = g0 > 0.0
    h = H0
    up_prev, dn_prev = v0, v0
    lo, hi = 0.0, 0.0
    found = False
    while not found:
        up = min(v0 + h, Bu)
        dn = max(v0 - h, -B)
        gu = _balance(up, vg, sg, ng, load, ux, fm, dt, prm)
        gd = _balance(dn, vg, sg, ng, load, ux, fm, dt, prm)
        fu = up > up_prev and ((gu > 0.0) != pos0 or gu == 0.0)
        fd = dn < dn_prev and ((gd > 0.0) != pos0 or gd == 0.0)
        if fu and fd:
            # the balance decreases with v on both stick and viscous branches
            if pos0:
                fd = False
            else:
                fu = False
        if fu:
            lo, hi = up_prev, up
            found = True
        elif fd:
            lo, hi = dn, dn_prev
            found = True
        elif up >= Bu and dn <= -B:
            gc = _balance(Bu, vg, sg, ng, load, ux, fm, dt, prm)
            if Bu == vcap and gc > 0.0 and gc <= load:
                return Bu, True, gc
            return v0, False, 0.0
        else:
            up_prev, dn_prev = up, dn
            h *= 2.0
    g_lo = _balance(lo, vg, sg, ng, load, ux, fm, dt, prm)
    pos_lo = g_lo > 0.0
    while hi - lo > V_TOL:
        mid = 0.5 * (lo + hi)
        gm = _balance(mid, vg, sg, ng, load, ux, fm, dt, prm)
        if gm == 0.0:
            return mid, True, 0.0
        if (gm > 0.0) == pos_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), True, 0.0


@njit(cache=True)
def _advance(p_old, p_new, dt, station, coupling, mult, prm, ux, fmx, vn,
             engaged, cut_front, contact, energy):
    """Axial update of every node group for one step, in place.

    Nodes with identical station and coupling share a group; ``mult`` is
    the group size. Returns (status, reaction force, failing group).
    energy accumulators: [input, friction, damper, cutting, sensor_work]
    """
    n_seg = p_new.shape[0]
    n_grp = station.shape[0]
    vseg = np.empty(n_seg)
    fcut_seg = np.zeros(n_seg)
    lead = -1e300
    for j in range(n_seg):
        vseg[j] = (p_new[j] - p_old[j]) / dt
        if vseg[j] > 0.0 and p_new[j] >= cut_front[j]:
            # constant tip force averaged over the part of the step spent cutting
            fresh = p_new[j] - max(p_old[j], cut_front[j])
            frac = fresh / (prm[P_VMAX] * dt) if fresh > 0.0 else 1.0
            fcut_seg[j] = prm[P_FCUT] * min(frac, 1.0)
        if p_new[j] > cut_front[j]:
            cut_front[j] = p_new[j]
        if p_new[j] > lead:
            lead = p_new[j]
    vcap = 0.0
    for j in range(n_seg):
        if vseg[j] > vcap:
            vcap = vseg[j]

    for i in range(n_grp):
        if not engaged[i] and lead >= station[i]:
            engaged[i] = True
    # each tip load spreads over the engaged nodes along that segment's shaft
    c_seg = np.zeros(n_seg)
    for j in range(n_seg):
        for i in range(n_grp):
            if engaged[i] and p_new[j] >= station[i]:
                c_seg[j] += mult[i] * coupling[i]

    fb, fc, vb, fv, gain = prm[P_FB], prm[P_FC], prm[P_VB], prm[P_FV], prm[P_GAIN]
    kp, ks, cd = prm[P_KP], prm[P_KS], prm[P_C]
    a = 1.0 + ks * dt / cd
    frac_seg = 1.0 / n_seg

    vg = np.empty(n_seg)
    sg = np.empty(n_seg)
    q_seg = np.zeros(n_seg)
    seg_force = np.zeros(n_seg)
    reaction = 0.0
    for j in range(n_seg):
        if c_seg[j] == 0.0 and fcut_seg[j] > 0.0:
            # no tracked tissue on this shaft yet: the tip load goes to the box
            reaction += fcut_seg[j]
            seg_force[j] += fcut_seg[j]
            energy[3] += fcut_seg[j] * vseg[j] * dt

    for i in range(n_grp):
        if not engaged[i]:
            for j in range(n_seg):
                contact[i, j] = DISENGAGED
            continue
        ng = 0
        s_unit = coupling[i] * frac_seg
        load = 0.0
        for j in range(n_seg):
            q_seg[j] = 0.0
            if p_new[j] < station[i]:
                continue
            if fcut_seg[j] > 0.0:
                q_seg[j] = fcut_seg[j] * coupling[i] / c_seg[j]
                load += q_seg[j]
            placed = False
            for g in range(ng):
                if vg[g] == vseg[j]:
                    sg[g] += s_unit
                    placed = True
                    break
            if not placed:
                vg[ng] = vseg[j]
                sg[ng] = s_unit
                ng += 1

        v, ok, excess = _solve_node(vn[i], vg, sg, ng, load, ux[i], fmx[i], dt, vcap, prm)
        if not ok:
            return 1, reaction, i
        # share of the tip load the node carries; the rest bears on the box
        held = 1.0 - excess / load if load > 0.0 else 1.0
        dx = v * dt
        fm_new = (fmx[i] + ks * dx) / a
        ux[i] += dx
        fmx[i] = fm_new
        vn[i] = v
        m = mult[i]
        reaction += m * (kp * ux[i] + fm_new + excess)
        energy[2] += m * dt * fm_new * fm_new / cd

        for j in range(n_seg):
            vr = vseg[j] - v
            q = q_seg[j]
            seg_force[j] += m * q
            energy[3] += m * q * (held * vr + (1.0 - held) * vseg[j]) * dt
            if p_new[j] < station[i]:
                contact[i, j] = DISENGAGED
                continue
            f = s_unit * _fric(vr, fb, fc, vb, fv, gain)
            seg_force[j] += m * f
            energy[1] += m * f * vr * dt
            contact[i, j] = STICK if abs(vr) <= vb else SLIP

    v_mean = 0.0
    for j in range(n_seg):
        energy[0] += seg_force[j] * vseg[j] * dt
        v_mean += vseg[j]
    v_mean /= n_seg
    energy[4] += reaction * v_mean * dt
    return 0, reaction, -1


@njit(cache=True)
def _advance_radial(p_new, dt, station, coupling, side, prm, uy, fmy):
    """Radial displacement driven by the cavity the probe opens.

    Each segment that has passed a station contributes a quarter of the
    cavity, ramping over the tip cone. The source acts through a spring of
    stiffness ``k_parallel`` on the node's Kelvin element; solved implicitly.
    """
    n_seg = p_new.shape[0]
    kp, ks, cd = prm[P_KP], prm[P_KS], prm[P_C]
    a = 1.0 + ks * dt / cd
    for i in range(station.shape[0]):
        cav = 0.0
        for j in range(n_seg):
            f = (p_new[j] - station[i]) / prm[P_TIP]
            if f > 1.0:
                f = 1.0
            if f > 0.0:
                cav += f / n_seg
        y_src = side[i] * prm[P_RGAIN] * prm[P_RAD] * coupling[i] * cav
        uy_new = (kp * y_src - (fmy[i] - ks * uy[i]) / a) / (2.0 * kp + ks / a)
        fmy[i] = (fmy[i] + ks * (uy_new - uy[i])) / a
        uy[i] = uy_new


@njit(cache=True, nogil=True)
def _run(positions, knot_frac, knot_pos, dt, g_station, g_coupling, g_mult, node_group,
         station, coupling, side, prm, stride, rec_seg, rec_ux, rec_uy, rec_r, rec_cut, rec_work, rec_contact, rec_input):
    n_steps = positions.shape[0] - 1
    n_grp = g_station.shape[0]
    n_nodes = station.shape[0]
    n_seg = positions.shape[1]
    ux = np.zeros(n_grp)
    fmx = np.zeros(n_grp)
    vn = np.zeros(n_grp)
    engaged = np.zeros(n_grp, dtype=np.bool_)
    uy = np.zeros(n_nodes)
    fmy = np.zeros(n_nodes)
    cut_front = positions[0].copy()
    contact = np.zeros((n_grp, n_seg), dtype=np.int8)
    window = np.zeros((n_grp, n_seg), dtype=np.int8)
    energy = np.zeros(5)
    for j in range(n_seg):
        rec_seg[0, j] = positions[0, j]
    rec_cut[0] = cut_front.max()
    r = 0
    for k in range(n_steps):
        # a velocity jump inside the step splits it in two
        f = knot_frac[k]
        n_sub = 2 if f > 0.0 else 1
        for sub in range(n_sub):
            if n_sub == 1:
                pa, pb, h = positions[k], positions[k + 1], dt
            elif sub == 0:
                pa, pb, h = positions[k], knot_pos[k], f * dt
            else:
                pa, pb, h = knot_pos[k], positions[k + 1], (1.0 - f) * dt
            status, reaction, bad = _advance(pa, pb, h, g_station, g_coupling, g_mult, prm,
                                             ux, fmx, vn, engaged, cut_front, contact, energy)
            if status != 0:
                return k + 1, bad, energy, ux, fmx
            for i in range(n_grp):
                for j in range(n_seg):
                    if contact[i, j] > window[i, j]:
                        window[i, j] = contact[i, j]
        _advance_radial(positions[k + 1], dt, station, coupling, side, prm, uy, fmy)
        if (k + 1) % stride == 0:
            r += 1
            for j in range(n_seg):
                rec_seg[r, j] = positions[k + 1, j]
            for i in range(n_nodes):
                g = node_group[i]
                rec_ux[r, i] = ux[g]
                rec_uy[r, i] = uy[i]
                for j in range(n_seg):
                    rec_contact[r, i, j] = window[g, j]
            window[:, :] = 0
            rec_r[r] = reaction
            rec_cut[r] = cut_front.max()
            rec_work[r] = energy[4]
            rec_input[r] = energy[0]
    return 0, -1, energy, ux, fmx


def _split_points(s, t0: float, n_steps: int, dt: float):
    """Per-step knot fraction (or -1) and the positions at each knot."""
    frac = np.full(n_steps, -1.0)
    pos = np.zeros((n_steps, N_SEGMENTS))
    knots = s.knots()
    if knots.size == 0 or n_steps == 0:
        return frac, pos
    u = (knots - t0) / dt
    k = np.floor(u).astype(np.int64)
    f = u - k
    ok = (k >= 0) & (k < n_steps) & (f > 1e-9) & (f < 1.0 - 1e-9)
    k, kt = k[ok], knots[ok]
    # keep the first knot of any step that holds several
    k, first = np.unique(k, return_index=True)
    frac[k] = f[ok][first]
    pos[k] = s.positions(kt[first])
    return frac, pos


def _node_groups(station, coupling):
    keys = list(zip(station.tolist(), coupling.tolist()))
    uniq = sorted(set(keys))
    index = {k: n for n, k in enumerate(uniq)}
    node_group = np.array([index[k] for k in keys], dtype=np.int64)
    g_station = np.array([k[0] for k in uniq])
    g_coupling = np.array([k[1] for k in uniq])
    g_mult = np.bincount(node_group, minlength=len(uniq)).astype(float)
    return g_station, g_coupling, g_mult, node_group


# --------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class SimResult:
    t: np.ndarray
    segment_pos: np.ndarray  # (samples, 4)
    node_u_x: np.ndarray  # (samples, nodes)
    node_u_y: np.ndarray
    reaction_force: np.ndarray
    cut_depth: np.ndarray
    work: np.ndarray  # reaction force x mean segment velocity, cumulative (mJ)
    contact_log: np.ndarray  # (samples, nodes, 4) worst state over each sample window
    input_work: np.ndarray  # mechanical work done by the segments, cumulative (mJ)
    energy: dict
    grid: NodeGrid
    motion_stop: float
    cycle_period: float | None = None

    def __post_init__(self):
        for a in (self.t, self.segment_pos, self.node_u_x, self.node_u_y, self.reaction_force,
                  self.cut_depth, self.work, self.contact_log, self.input_work):
            a.setflags(write=False)

    @property
    def dt_sample(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def node_trace(self, row: int, col: int, axis: str = "x") -> np.ndarray:
        i = self.grid.node_index(row, col)
        return (self.node_u_x if axis == "x" else self.node_u_y)[:, i]

    def energy_residual(self) -> float:
        """Relative mismatch between input work and stored + dissipated energy."""
        e = self.energy
        out = e["stored"] + e["friction"] + e["damper"] + e["cutting"]
        return abs(e["input"] - out) / max(abs(e["input"]), 1e-300)


@dataclass
class World:
    """Mutable state for stepping one configuration by hand.

    Node arrays are per node (no grouping). ``contact`` is ``(nodes, 4)``
    and holds the state of the most recent step.
    """

    cfg: SimConfig
    t: float
    positions: np.ndarray
    ux: np.ndarray
    uy: np.ndarray
    fmx: np.ndarray
    fmy: np.ndarray
    vn: np.ndarray
    engaged: np.ndarray
    cut_front: np.ndarray
    contact: np.ndarray
    energy: np.ndarray  # input, friction, damper, cutting, sensor_work
    reaction: float = 0.0

    @classmethod
    def at_rest(cls, cfg: SimConfig) -> "World":
        n = cfg.grid.n_nodes
        pos = np.asarray(cfg.schedule.positions(0.0), dtype=float)
        return cls(cfg=cfg, t=0.0, positions=pos, ux=np.zeros(n), uy=np.zeros(n),
                   fmx=np.zeros(n), fmy=np.zeros(n), vn=np.zeros(n),
                   engaged=np.zeros(n, dtype=np.bool_), cut_front=pos.copy(),
                   contact=np.zeros((n, N_SEGMENTS), dtype=np.int8), energy=np.zeros(5))

    def copy(self) -> "World":
        return replace(self, **{k: np.copy(v) for k, v in vars(self).items() if isinstance(v, np.ndarray)})

    @property
    def cut_depth(self) -> float:
        return float(self.cut_front.max())


def step(world: World, s: MotionSchedule, t: float, dt: float) -> World:
    """Advance ``world`` from ``t`` to ``t + dt`` under schedule ``s``.

    Returns a new World; the input is left untouched.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError("dt must be > 0")
    if dt > world.cfg.dt_max * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds dt_max={world.cfg.dt_max}")
    w = world.copy()
    cfg = replace(w.cfg, schedule=s)
    prm = _pack_params(cfg)
    station, offset, coupling = cfg.grid.arrays()
    p_new = np.asarray(s.positions(t + dt), dtype=float)
    p_old = np.asarray(s.positions(t), dtype=float)
    frac, kpos = _split_points(s, t, 1, dt)
    if frac[0] > 0:
        legs = [(p_old, kpos[0], frac[0] * dt), (kpos[0], p_new, (1.0 - frac[0]) * dt)]
    else:
        legs = [(p_old, p_new, dt)]
    ones = np.ones(station.size)
    contact = np.zeros_like(w.contact)
    for pa, pb, h in legs:
        status, reaction, bad = _advance(pa, pb, h, station, coupling, ones, prm, w.ux, w.fmx,
                                         w.vn, w.engaged, w.cut_front, w.contact, w.energy)
        if status != 0:
            raise SimulationError(f"no bracketing root for velocity of node {bad}", t=t + dt)
        contact = np.maximum(contact, w.contact)
    w.contact = contact
    _advance_radial(p_new, dt, station, coupling, np.sign(offset), prm, w.uy, w.fmy)
    w.positions = p_new
    w.t = t + dt
    w.reaction = float(reaction)
    w.cfg = cfg
    return w


def anchoring_budget(cfg: SimConfig) -> ForceBudget:
    """Force budget of the anchoring inequalities for a reciprocal config.

    Forces are summed over the first axial station, the smallest set of
    nodes that all four segments hold together, so that its cutting share
    is the largest. Insertion friction is the mover's drag at the stroke
    speed; extraction grip is a holder's friction at the stick limit.
    The drive is kinematic, so ``f_drive`` is placed midway between the
    resistance and the stationary grip.
    """
    st, _, cp = cfg.grid.arrays()
    c_first = float(np.sum(cp[st == st.min()]))
    f = cfg.materials.friction
    scale = cfg.geometry.contact_fraction
    f_insert = c_first * friction_force(f, cfg.schedule.max_speed, scale)
    f_extract = -c_first * friction_force(f, -f.v_breakaway, scale)
    f_cut = cfg.materials.cutting.f_cut
    n = cfg.geometry.n_segments - 1
    return ForceBudget(f_cut=f_cut, f_insert=f_insert, f_extract=f_extract,
                       f_drive=0.5 * (f_cut + f_insert + n * f_extract), n_stationary=n)


def work_transferred(r: SimResult) -> float:
    """Final cumulative work (mJ)."""
    if len(r.work) == 0:
        raise ValueError("empty result")
    return float(r.work[-1])


def _stored_energy(prm, ux, fmx, mult):
    return float(np.sum(mult * (0.5 * prm[P_KP] * ux**2 + 0.5 * fmx**2 / prm[P_KS])))


def simulate(cfg: SimConfig) -> SimResult:
    """Run the schedule from rest through insertion and the hold period."""
    s = cfg.schedule
    total = s.insertion_time + s.hold_time
    n_steps = int(math.ceil(total / cfg.dt - 1e-9))
    n_steps = max(n_steps + (-n_steps % cfg.record_stride), 0)
    t_steps = np.arange(n_steps + 1) * cfg.dt
    positions = np.ascontiguousarray(s.positions(t_steps))
    station, offset, coupling = cfg.grid.arrays()
    side = np.sign(offset)
    prm = _pack_params(cfg)

    n_rec = n_steps // cfg.record_stride + 1
    n_nodes = station.size
    rec_seg = np.zeros((n_rec, N_SEGMENTS))
    rec_ux = np.zeros((n_rec, n_nodes))
    rec_uy = np.zeros((n_rec, n_nodes))
    rec_r = np.zeros(n_rec)
    rec_cut = np.zeros(n_rec)
    rec_work = np.zeros(n_rec)
    rec_input = np.zeros(n_rec)
    rec_contact = np.zeros((n_rec, n_nodes, N_SEGMENTS), dtype=np.int8)

    g_station, g_coupling, g_mult, node_group = _node_groups(station, coupling)
    knot_frac, knot_pos = _split_points(s, 0.0, n_steps, cfg.dt)
    fail_step, bad, energy, ux, fmx = _run(
        positions, knot_frac, knot_pos, cfg.dt, g_station, g_coupling, g_mult, node_group, station, coupling, side,
        prm, cfg.record_stride,
        rec_seg, rec_ux, rec_uy, rec_r, rec_cut, rec_work, rec_contact, rec_input,
    )
    if fail_step:
        nodes = np.flatnonzero(node_group == bad).tolist()
        raise SimulationError(f"no bracketing root for velocity of nodes {nodes}", t=fail_step * cfg.dt)
    e = {
        "input": float(energy[0]),
        "friction": float(energy[1]),
        "damper": float(energy[2]),
        "cutting": float(energy[3]),
        "stored": _stored_energy(prm, ux, fmx, g_mult),
        "sensor_work": float(energy[4]),
    }
    return SimResult(
        t=t_steps[:: cfg.record_stride].copy(),
        segment_pos=rec_seg,
        node_u_x=rec_ux,
        node_u_y=rec_uy,
        reaction_force=rec_r,
        cut_depth=rec_cut,
        work=rec_work,
        contact_log=rec_contact,
        input_work=rec_input,
        energy=e,
        grid=cfg.grid,
        motion_stop=s.insertion_time,
        cycle_period=s.cycle_period,
    )
