from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from reciprosim.calibration import (
    DEFAULT_BOUNDS,
    PENALTY,
    CalibrationTargets,
    ParameterVector,
    evaluate,
    fit,
    weighted_loss,
)
from reciprosim.simulator import Materials, SimConfig


def exact_stats(t: CalibrationTargets) -> dict:
    out: dict = {}
    for key, v in t.values().items():
        proto, stat = key.split(".")
        out.setdefault(proto, {})[stat] = v
    return out


def quad_vector(start=(0.1, 0.9)):
    return ParameterVector(("f_breakaway", "f_coulomb"), start, ((0.0, 1.0), (0.0, 1.0)))


class TestLoss:
    def test_exact_hit_is_zero(self):
        t = CalibrationTargets()
        assert weighted_loss(exact_stats(t), t) == 0.0

    def test_one_stat_off_ten_percent(self):
        t = CalibrationTargets()
        s = exact_stats(t)
        s["direct_1mms"]["peak"] *= 1.1
        assert weighted_loss(s, t) == pytest.approx(0.01)

    def test_half_weight_on_slow_protocol(self):
        t = CalibrationTargets()
        s = exact_stats(t)
        s["recip_1mms"]["work"] *= 0.9
        assert weighted_loss(s, t) == pytest.approx(0.005)

    def test_zero_weight_ignored(self):
        t = CalibrationTargets(weights={"direct_1mms.peak": 0.0})
        s = exact_stats(t)
        s["direct_1mms"]["peak"] = float("nan")
        assert weighted_loss(s, t) == 0.0

    def test_nonfinite_penalised(self):
        t = CalibrationTargets()
        s = exact_stats(t)
        s["recip_4mms"]["plateau"] = None
        assert weighted_loss(s, t) == PENALTY

    def test_bad_targets(self):
        with pytest.raises(ValueError):
            CalibrationTargets(direct_peak=0.0)
        with pytest.raises(ValueError):
            CalibrationTargets(weights={"nope": 1.0})

    def test_protocols_follow_weights(self):
        w = {k: 0.0 for k in CalibrationTargets().values() if k.startswith("recip_1mms")}
        assert CalibrationTargets(weights=w).protocols() == ["direct_1mms", "recip_4mms"]

    def test_default_parameters_positive_finite(self):
        base = SimConfig(dt=0.01, dt_max=0.01, record_stride=1)
        p = ParameterVector.from_materials(Materials())
        ev = evaluate(p, CalibrationTargets(), base)
        assert ev.error is None
        assert 0 < ev.loss < 1.0 and math.isfinite(ev.loss)

    def test_invalid_candidate_penalised(self):
        base = SimConfig(dt=0.01, dt_max=0.01, record_stride=1)
        # breakaway below the Coulomb level is rejected by the friction law
        p = ParameterVector(("f_breakaway", "f_coulomb"), (1e-4, 0.01), ((0, 1), (0, 1)))
        ev = evaluate(p, CalibrationTargets(), base)
        assert ev.loss == PENALTY and ev.error


class TestParameterVector:
    def test_roundtrip_materials(self):
        p = ParameterVector.from_materials(Materials())
        assert p.names == tuple(DEFAULT_BOUNDS)
        m = p.apply(Materials())
        assert m == Materials()

    def test_unit_coordinates(self):
        p = quad_vector((0.25, 0.5))
        np.testing.assert_allclose(p.to_unit(), [0.25, 0.5])
        assert p.from_unit([2.0, -1.0]).values == (1.0, 0.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            ParameterVector(("nope",), (0.0,), ((0, 1),))
        with pytest.raises(ValueError):
            ParameterVector(("f_cut",), (2.0,), ((0, 1),))
        with pytest.raises(ValueError):
            ParameterVector(("f_cut",), (0.5,), ((1, 0),))


class TestFit:
    A = np.array([0.37, 0.62])

    def objective(self, p):
        return float(np.sum((np.array(p.values) - self.A) ** 2))

    def test_quadratic_converges(self):
        res = fit(quad_vector(), budget=200, objective=self.objective)
        assert res.evaluations <= 200
        np.testing.assert_allclose(res.best.values, self.A, atol=1e-4)

    def test_history_monotone(self):
        res = fit(quad_vector(), budget=60, objective=self.objective)
        assert np.all(np.diff(res.history) <= 0)
        assert len(res.history) == res.evaluations == len(res.trace)

    def test_minimal_budget_returns_initial_simplex_best(self):
        res = fit(quad_vector(), budget=4, objective=self.objective)
        assert res.evaluations == 3
        assert res.best_loss == min(v for _, v in res.trace)

    def test_budget_too_small(self):
        with pytest.raises(ValueError):
            fit(quad_vector(), budget=3, objective=self.objective)

    def test_deterministic(self):
        a = fit(quad_vector(), budget=80, objective=self.objective)
        b = fit(quad_vector(), budget=80, objective=self.objective)
        assert a.trace == b.trace

    def test_respects_bounds(self):
        p = ParameterVector(("f_cut",), (0.5,), ((0.0, 1.0),))
        res = fit(p, budget=50, objective=lambda q: (q.values[0] - 3.0) ** 2)
        assert res.best.values[0] == pytest.approx(1.0, abs=1e-6)

    def test_real_targets_improve(self):
        base = SimConfig(dt=0.01, dt_max=0.01, record_stride=1)
        m = Materials()
        p = ParameterVector.from_materials(m, {"f_cut": (0.0, 0.1), "k_series": (0.01, 0.2)})
        start = p.with_values([0.06, 0.09])
        base = replace(base, materials=start.apply(m))
        res = fit(start, CalibrationTargets(), budget=12, base=base)
        assert np.all(np.diff(res.history) <= 0)
        assert res.best_loss < res.history[0]
