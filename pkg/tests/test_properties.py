from __future__ import annotations

import json

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from reciprosim.analysis import RunSummary, compare, profile_stats, segment_phases
from reciprosim.config import parse_config
from reciprosim.mechanics import FrictionParams, KelvinParams, KelvinState, friction_curve, friction_force, kelvin_step
from reciprosim.piv import GriddedField

pos = st.floats(1e-4, 10.0, allow_nan=False)


@st.composite
def friction_params(draw):
    fc = draw(st.floats(1e-4, 1.0))
    fb = fc * draw(st.floats(1.0, 20.0))
    return FrictionParams(fb, fc, draw(pos), draw(st.floats(0.0, 1.0)), draw(st.floats(1.0, 3.0)))


@given(friction_params(), st.floats(-50, 50), st.floats(0, 1))
def test_friction_dissipative_and_scaled(p, v, s):
    f = friction_force(p, v, s)
    assert v * f >= 0
    assert np.isclose(f, s * friction_force(p, v), rtol=1e-12, atol=1e-300)


@given(friction_params(), st.floats(-50, 50))
def test_friction_odd_without_gain(p, v):
    p = FrictionParams(p.f_breakaway, p.f_coulomb, p.v_breakaway, p.f_viscous)
    assert np.isclose(friction_force(p, -v), -friction_force(p, v), rtol=1e-12, atol=1e-15)


@given(friction_params())
def test_stick_limit_value(p):
    # at |v| = v_breakaway the law delivers f_breakaway + viscous, to within tanh(10)
    f = friction_force(p, p.v_breakaway)
    assert np.isclose(f, p.f_breakaway + p.f_viscous * p.v_breakaway, rtol=1e-7)


@given(st.floats(1e-3, 10), st.floats(1e-3, 10), st.floats(1e-3, 10), st.floats(-5, 5), st.floats(1e-4, 0.1))
def test_kelvin_linear(kp, ks, c, a, dt):
    p = KelvinParams(kp, ks, c)
    xs = np.linspace(0, 1, 7) ** 2
    s1, s2 = KelvinState(), KelvinState()
    for x in xs:
        f1, s1 = kelvin_step(p, s1, x, dt)
        f2, s2 = kelvin_step(p, s2, a * x, dt)
    assert np.isclose(f2, a * f1, rtol=1e-9, atol=1e-12)


def random_profile(seed):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 100, 400)
    t1, t2 = rng.uniform(15, 40), rng.uniform(55, 80)
    top = rng.uniform(1, 4)
    y = np.interp(t, [0, t1, t2, 100], [0, top, top, top * rng.uniform(0.2, 0.8)])
    return t, y + 0.01 * rng.standard_normal(t.size), t2


@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_segmentation_scale_invariant(seed, k):
    t, y, stop = random_profile(seed)
    a = segment_phases(y, t, motion_stop=stop)
    b = segment_phases(k * y, t, motion_stop=stop)
    assert (a.i_cut, a.i_relax) == (b.i_cut, b.i_relax)


@given(st.integers(0, 10_000), st.floats(-5, 5))
def test_profile_stats_shift(seed, c):
    t, y, stop = random_profile(seed)
    seg = segment_phases(y, t, motion_stop=stop)
    a, b = profile_stats(y, seg), profile_stats(y + c, seg)
    assert np.isclose(b.peak, a.peak + c)
    assert np.isclose(b.plateau_mean, a.plateau_mean + c)
    assert np.isclose(b.relaxation_level, a.relaxation_level + c)
    assert np.isclose(b.oscillation_amp, a.oscillation_amp, atol=1e-9)


@given(st.floats(0.01, 10), st.floats(0.01, 10))
def test_compare_antisymmetric_sign(a, b):
    r1 = compare(RunSummary(a, 1.0), RunSummary(b, 1.0)).peak_reduction_pct
    r2 = compare(RunSummary(b, 1.0), RunSummary(a, 1.0)).peak_reduction_pct
    assert np.sign(r1) == -np.sign(r2) or (r1 == 0 and r2 == 0)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3),
       st.lists(st.tuples(st.floats(-1, 12), st.floats(-1, 9)), min_size=1, max_size=20))
def test_bilinear_exact_on_linear_fields(a, b, c, pts):
    x = np.array([0.0, 1.5, 4.0, 11.0])
    y = np.array([0.0, 2.0, 8.0])
    X, Y = np.meshgrid(x, y)
    u = np.stack([a * X + b * Y + c, b * X - a * Y], axis=-1)
    gf = GriddedField(x, y, u)
    q = np.clip(np.array(pts), [0, 0], [11, 8])
    exp = np.stack([a * q[:, 0] + b * q[:, 1] + c, b * q[:, 0] - a * q[:, 1]], axis=1)
    np.testing.assert_allclose(gf(q), exp, atol=1e-9)


@settings(suppress_health_check=[HealthCheck.too_slow], max_examples=50)
@given(st.floats(1e-5, 1e-3), st.integers(1, 50), st.integers(-2**31, 2**31),
       st.floats(1e-4, 0.1), st.sampled_from(["direct", "reciprocal"]), st.floats(0.5, 8))
def test_config_roundtrip(dt, stride, seed, fcut, kind, speed):
    sched = {"kind": kind, ("v_probe" if kind == "direct" else "v_segment"): speed}
    doc = {"dt": dt, "dt_max": 1e-3, "record_stride": stride, "seed": seed, "schedule": sched,
           "materials": {"cutting": {"f_cut": fcut}}}
    a = parse_config(json.dumps(doc))
    assert parse_config(a.to_json()) == a
    assert a.sim_config().schedule.max_speed == speed


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=30))
def test_friction_curve_matches_scalar(vs):
    p = FrictionParams(extract_gain=1.7)
    np.testing.assert_allclose(friction_curve(p, vs), [friction_force(p, v) for v in vs], rtol=1e-12, atol=1e-18)
