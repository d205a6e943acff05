from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest

from reciprosim.mechanics import (
    CuttingParams,
    ForceBudget,
    FrictionParams,
    KelvinParams,
    KelvinState,
    cutting_force,
    feasible_reciprocal,
    friction_curve,
    friction_force,
    kelvin_energy,
    kelvin_step,
)


def mp_friction(fb, fc, vb, fv, v):
    """Closed form evaluated at 50 digits."""
    mp.mp.dps = 50
    fb, fc, vb, fv, v = map(mp.mpf, (fb, fc, vb, fv, v))
    vst = vb * mp.sqrt(2)
    r = v / vst
    return mp.sqrt(2 * mp.e) * (fb - fc) * mp.exp(-r * r) * r + fc * mp.tanh(v / (vb / 10)) + fv * v


def sls_step_force(p: KelvinParams, x0, t):
    return x0 * (p.k_parallel + p.k_series * math.exp(-p.k_series * t / p.c_damper))


def hold_step(p, x0, dt, t_end):
    s = KelvinState()
    f, s = kelvin_step(p, s, x0, dt)
    for _ in range(int(round(t_end / dt)) - 1):
        f, s = kelvin_step(p, s, x0, dt)
    return f


class TestFriction:
    def test_zero_velocity_gives_zero(self):
        assert friction_force(FrictionParams(), 0.0) == 0.0

    def test_high_precision_example(self):
        p = FrictionParams(f_breakaway=2.0, f_coulomb=1.0, v_breakaway=0.01, f_viscous=0.0)
        v = 0.01 * math.sqrt(2)
        ref = float(mp_friction(2.0, 1.0, 0.01, 0.0, v))
        assert ref == pytest.approx(1.8578, abs=5e-5)
        assert friction_force(p, v) == pytest.approx(ref, rel=1e-12)

    @pytest.mark.parametrize("fb,fc,vb", [(2.0, 1.0, 0.01), (0.005, 0.0002, 0.1), (0.03, 0.01, 0.3)])
    def test_breakaway_peak(self, fb, fc, vb):
        p = FrictionParams(f_breakaway=fb, f_coulomb=fc, v_breakaway=vb, f_viscous=0.0)
        v = np.linspace(1e-6, 20 * vb, 200001)
        f = friction_curve(p, v)
        i = int(np.argmax(f))
        assert f[i] == pytest.approx(fb, rel=0.01)
        assert v[i] == pytest.approx(vb, rel=0.1)

    def test_value_at_breakaway_velocity(self):
        p = FrictionParams(f_breakaway=0.01, f_coulomb=0.002, v_breakaway=0.1, f_viscous=0.03)
        ref = float(mp_friction(0.01, 0.002, 0.1, 0.03, 0.1))
        assert friction_force(p, 0.1) == pytest.approx(ref, rel=1e-12)
        # the Stribeck bump reaches f_breakaway exactly at v_breakaway, up to tanh(10)
        assert ref == pytest.approx(0.01 + 0.03 * 0.1, rel=1e-8)

    def test_odd_when_symmetric(self):
        p = FrictionParams()
        v = np.linspace(-5, 5, 101)
        np.testing.assert_allclose(friction_curve(p, v), -friction_curve(p, -v), atol=1e-15)

    def test_extract_gain_scales_negative_side(self):
        p = FrictionParams(extract_gain=2.0)
        assert friction_force(p, -0.3) == pytest.approx(-2.0 * friction_force(p, 0.3))
        assert friction_force(p, 0.3) == friction_force(FrictionParams(), 0.3)

    def test_scale_is_linear(self):
        p = FrictionParams()
        assert friction_force(p, 1.5, 0.25) == pytest.approx(0.25 * friction_force(p, 1.5))

    def test_dissipative(self):
        v = np.linspace(-10, 10, 2001)
        assert np.all(v * friction_curve(FrictionParams(), v) >= 0)

    def test_scalar_and_vector_agree(self):
        p = FrictionParams(extract_gain=1.5)
        v = np.array([-2.0, -0.05, 0.0, 0.07, 3.0])
        np.testing.assert_allclose(friction_curve(p, v, 0.4), [friction_force(p, x, 0.4) for x in v])

    @pytest.mark.parametrize("kw", [
        {"f_coulomb": 0.0}, {"f_breakaway": 1e-4, "f_coulomb": 2e-4}, {"v_breakaway": 0.0},
        {"f_viscous": -1.0}, {"extract_gain": 0.5}, {"f_breakaway": float("nan")},
    ])
    def test_invalid_params(self, kw):
        with pytest.raises(ValueError):
            FrictionParams(**kw)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            friction_force(FrictionParams(), float("inf"))
        with pytest.raises(ValueError):
            friction_force(FrictionParams(), 1.0, 1.5)


class TestKelvin:
    def test_zero_input_stays_at_rest(self):
        f, s = kelvin_step(KelvinParams(), KelvinState(), 0.0, 1e-3)
        assert f == 0.0 and s == KelvinState()

    def test_instant_and_long_time_response(self):
        p = KelvinParams(k_parallel=0.3, k_series=0.7, c_damper=0.5)
        f0, _ = kelvin_step(p, KelvinState(), 2.0, 1e-9)
        assert f0 == pytest.approx((0.3 + 0.7) * 2.0, rel=1e-6)
        assert hold_step(p, 2.0, 0.01, 30.0) == pytest.approx(0.3 * 2.0, rel=1e-6)

    def test_unit_example(self):
        p = KelvinParams(1.0, 1.0, 1.0)
        f = hold_step(p, 1.0, 1e-3, 1.0)
        assert abs(f - (1 + math.exp(-1))) / (1 + math.exp(-1)) < 1e-3

    def test_first_order_convergence(self):
        p = KelvinParams(0.5, 2.0, 1.0)
        exact = sls_step_force(p, 1.0, 1.0)
        errs = [abs(hold_step(p, 1.0, dt, 1.0) - exact) for dt in (0.02, 0.01, 0.005, 0.0025)]
        orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
        assert all(0.9 < o < 1.1 for o in orders), orders

    def test_energy_never_created(self):
        # holding a stretch, stored energy can only fall
        p = KelvinParams()
        f, s = kelvin_step(p, KelvinState(), 1.0, 1e-3)
        e = [kelvin_energy(p, s)]
        for _ in range(200):
            f, s = kelvin_step(p, s, 1.0, 1e-3)
            e.append(kelvin_energy(p, s))
        assert np.all(np.diff(e) <= 0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            KelvinParams(k_parallel=0.0)
        with pytest.raises(ValueError):
            kelvin_step(KelvinParams(), KelvinState(), 1.0, 0.0)


class TestCutting:
    @pytest.mark.parametrize("tip,depth,v,expected", [
        (10, 10, 4, 0.1), (8, 10, 4, 0.0), (10, 10, -4, 0.0), (12, 10, 1, 0.1), (10, 10, 0, 0.0),
    ])
    def test_examples(self, tip, depth, v, expected):
        assert cutting_force(CuttingParams(0.1), tip, depth, v) == expected

    def test_invalid(self):
        with pytest.raises(ValueError):
            CuttingParams(-0.1)
        with pytest.raises(ValueError):
            cutting_force(CuttingParams(), 1.0, -1.0, 1.0)


class TestFeasibility:
    def test_feasible_example(self):
        r = feasible_reciprocal(ForceBudget(0.1, 0.1, 0.1, 0.25, 3))
        assert r.eq2_holds
        assert r.margin == pytest.approx(0.1)

    def test_infeasible_example(self):
        r = feasible_reciprocal(ForceBudget(0.2, 0.2, 0.1, 0.35, 3))
        assert not r.eq2_holds
        assert r.margin == pytest.approx(-0.1)

    def test_degenerate(self):
        r = feasible_reciprocal(ForceBudget(0.0, 0.0, 0.0, 0.0, 3))
        assert (r.eq1_holds, r.eq2_holds, r.margin) == (False, False, 0.0)

    def test_eq1(self):
        assert feasible_reciprocal(ForceBudget(0.1, 0.1, 0.1, 0.25)).eq1_holds
        assert not feasible_reciprocal(ForceBudget(0.05, 0.0, 0.1, 0.25)).eq1_holds

    def test_invalid(self):
        with pytest.raises(ValueError):
            ForceBudget(-1.0, 0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            ForceBudget(0.0, 0.0, 0.0, 0.0, n_stationary=0)
