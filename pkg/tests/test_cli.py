from __future__ import annotations

import csv
import json
import os

import pytest

from reciprosim import cli
from reciprosim.cli import atomic_write, preset_text, run
from reciprosim.config import ConfigError, parse_config
from reciprosim.simulator import DirectSchedule, ReciprocalSchedule

SHORT = {"dt": 0.001, "record_stride": 20,
         "schedule": {"kind": "reciprocal", "v_segment": 4.0, "cycles": 6, "hold_time": 3.0},
         "grid": {"first_station": 2.0, "spacing": 4.0}}


def write(tmp_path, doc, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return str(p)


class TestParseConfig:
    def test_empty_is_all_defaults(self):
        cfg = parse_config("{}")
        assert cfg.sim_config().schedule == DirectSchedule()
        assert "dt" in cfg.applied_defaults and "materials.friction.f_cut" not in cfg.applied_defaults

    def test_range_error_path(self):
        with pytest.raises(ConfigError) as e:
            parse_config('{"dt": -1}')
        assert e.value.path == "dt"

    def test_unknown_key_path(self):
        with pytest.raises(ConfigError) as e:
            parse_config('{"materials": {"kelvin": {"k_serie": 1}}}')
        assert e.value.path == "materials.kelvin.k_serie"

    def test_syntax_error_line(self):
        with pytest.raises(ConfigError) as e:
            parse_config('{\n  "dt": 0.001,\n  "seed": }')
        assert e.value.line == 3

    def test_schedule_kind_checked(self):
        with pytest.raises(ConfigError) as e:
            parse_config('{"schedule": {"kind": "spiral"}}')
        assert e.value.path == "schedule.kind"

    def test_kind_specific_keys(self):
        with pytest.raises(ConfigError) as e:
            parse_config('{"schedule": {"kind": "direct", "stroke": 5}}')
        assert e.value.path == "schedule.stroke"

    def test_cross_field(self):
        with pytest.raises(ConfigError) as e:
            parse_config('{"materials": {"friction": {"f_breakaway": 0.001, "f_coulomb": 0.002}}}')
        assert e.value.path == "materials"
        with pytest.raises(ConfigError):
            parse_config('{"analysis": {"node": [6, 1]}}')

    def test_roundtrip(self):
        for text in ("{}", preset_text("recip_4mms"), json.dumps(SHORT)):
            a = parse_config(text)
            b = parse_config(a.to_json())
            assert a == b and a.data == b.data

    def test_presets_encode_protocols(self):
        d = parse_config(preset_text("direct_1mms")).sim_config().schedule
        assert d == DirectSchedule(v_probe=1.0, depth=70.0, hold_time=30.0)
        for name, vs in (("recip_4mms", 4.0), ("recip_1mms", 1.0)):
            s = parse_config(preset_text(name)).sim_config().schedule
            assert isinstance(s, ReciprocalSchedule)
            assert (s.v_segment, s.stroke, s.cycles) == (vs, 5.0, 14)
            assert s.depth == 70.0


class TestRun:
    def test_simulate_writes_csv(self, tmp_path):
        out = tmp_path / "run.csv"
        assert run(["simulate", "--config", write(tmp_path, SHORT), "--out", str(out)]) == 0
        text = out.read_bytes()
        assert b"\r" not in text
        rows = list(csv.reader(text.decode().splitlines()))
        head = rows[0]
        assert head[:5] == ["t", "seg0", "seg1", "seg2", "seg3"]
        assert head[5:9] == ["node_0_ux", "node_0_uy", "node_1_ux", "node_1_uy"]
        assert head[-5:] == ["node_29_ux", "node_29_uy", "reaction_force", "cut_depth", "work"]
        assert len(head) == 5 + 60 + 3
        assert all(len(r) == len(head) for r in rows)
        prov = json.loads((tmp_path / "run.csv.provenance.json").read_text())
        assert "materials.friction.f_breakaway" in prov["applied_defaults"]
        assert prov["config"]["dt"] == 0.001

    def test_missing_dt(self, tmp_path, capsys):
        doc = {k: v for k, v in SHORT.items() if k != "dt"}
        out = tmp_path / "run.csv"
        assert run(["simulate", "--config", write(tmp_path, doc), "--out", str(out)]) == 2
        assert "dt" in capsys.readouterr().err
        assert not out.exists()

    def test_syntax_error_exit(self, tmp_path, capsys):
        assert run(["simulate", "--config", write(tmp_path, '{"dt": 0.001,\n}'), "--out", "x.csv"]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_unknown_key_exit(self, tmp_path, capsys):
        assert run(["simulate", "--config", write(tmp_path, {**SHORT, "dtt": 1}), "--out", "x.csv"]) == 2
        assert "dtt" in capsys.readouterr().err

    def test_unknown_preset(self, capsys):
        assert run(["simulate", "--preset", "fast", "--out", "x.csv"]) == 2

    def test_usage_error(self, capsys):
        assert run(["fly"]) == 2
        assert run(["simulate", "--preset", "direct_1mms"]) == 2

    def test_runtime_failure(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        assert run(["analyze", str(bad)]) == 1
        assert "runtime error" in capsys.readouterr().err

    def test_analyze_roundtrip(self, tmp_path, capsys):
        cfgp = write(tmp_path, SHORT)
        out = tmp_path / "run.csv"
        assert run(["simulate", "--config", cfgp, "--out", str(out)]) == 0
        capsys.readouterr()
        rep = tmp_path / "summary.json"
        assert run(["analyze", str(out), "--config", cfgp, "--out", str(rep)]) == 0
        doc = json.loads(rep.read_text())
        assert doc["motion_stop"] == pytest.approx(30.0)
        assert doc["peak_force"] > 0

    def test_seed_override(self, tmp_path):
        out = tmp_path / "run.csv"
        assert run(["simulate", "--config", write(tmp_path, SHORT), "--seed", "42", "--out", str(out)]) == 0
        assert json.loads((tmp_path / "run.csv.provenance.json").read_text())["config"]["seed"] == 42

    def test_preset_overlay(self, tmp_path):
        out = tmp_path / "run.csv"
        over = {"dt": 0.001, "schedule": {"kind": "direct", "depth": 3.0, "hold_time": 1.0}}
        assert run(["simulate", "--preset", "direct_1mms", "--config", write(tmp_path, over), "--out", str(out)]) == 0
        prov = json.loads((tmp_path / "run.csv.provenance.json").read_text())
        assert prov["preset"] == "direct_1mms"
        assert prov["config"]["schedule"]["depth"] == 3.0

    def test_calibrate_writes_fragment(self, tmp_path):
        doc = {**SHORT, "schedule": {"kind": "direct", "depth": 70.0, "hold_time": 5.0},
               "calibration": {"budget": 3, "search_dt": 0.01, "hold_time": 5.0,
                               "bounds": {"f_cut": [0.0, 0.1]},
                               "weights": {k: 0.0 for k in ("recip_4mms.peak", "recip_4mms.work",
                                                             "recip_4mms.plateau", "recip_1mms.peak",
                                                             "recip_1mms.work", "recip_1mms.plateau")}}}
        out = tmp_path / "materials.json"
        assert run(["calibrate", "--config", write(tmp_path, doc), "--out", str(out)]) == 0
        frag = json.loads(out.read_text())
        cfg = parse_config(json.dumps(frag))
        assert 0.0 <= cfg.data["materials"]["cutting"]["f_cut"] <= 0.1


def test_atomic_write_leaves_nothing_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "out.csv"

    def boom(*a):
        raise OSError("disk full")

    monkeypatch.setattr(cli.os, "replace", boom)
    with pytest.raises(OSError):
        atomic_write(target, "t\n1.0\n")
    assert os.listdir(tmp_path) == []


def test_atomic_write_replaces(tmp_path):
    target = tmp_path / "out.csv"
    target.write_text("old")
    atomic_write(target, "new\n")
    assert target.read_text() == "new\n"
    assert os.listdir(tmp_path) == ["out.csv"]


def test_compare_preset(capsys):
    assert run(["compare", "--preset", "direct_1mms"]) == 0
    lines = capsys.readouterr().out.splitlines()
    peak = float(lines[0].split(":")[1].strip().rstrip("%"))
    assert lines[0].startswith("peak force reduction")
    assert 10.0 <= peak <= 30.0
