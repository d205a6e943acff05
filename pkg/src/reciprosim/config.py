"""JSON run configuration: schema, defaults, validation with path diagnostics."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any

from .calibration import DEFAULT_BOUNDS, CalibrationTargets
from .mechanics import CuttingParams, FrictionParams, KelvinParams
from .piv import OpticsSpec, ViewGeometry
from .simulator import (
    DirectSchedule,
    Materials,
    NodeGrid,
    ProbeGeometry,
    ReciprocalSchedule,
    SimConfig,
)


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending key."""

    def __init__(self, path: str, msg: str, line: int | None = None):
        where = path or "<root>"
        if line is not None:
            where = f"line {line}: {where}"
        super().__init__(f"{where}: {msg}")
        self.path = path
        self.line = line


# leaf checks ---------------------------------------------------------------


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def positive(v):
    return _num(v) and v > 0


def nonneg(v):
    return _num(v) and v >= 0


def number(v):
    return _num(v)


def fraction(v):
    return _num(v) and 0 < v < 1


def pos_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 1


def nonneg_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def any_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def boolean(v):
    return isinstance(v, bool)


def text(v):
    return isinstance(v, str)


CHECK_MSG = {
    positive: "must be a number > 0",
    nonneg: "must be a number >= 0",
    number: "must be a finite number",
    fraction: "must lie strictly between 0 and 1",
    pos_int: "must be an integer >= 1",
    nonneg_int: "must be an integer >= 0",
    any_int: "must be an integer",
    boolean: "must be true or false",
    text: "must be a string",
}


def _list_of(check, length=None):
    def f(v):
        return (isinstance(v, list) and (length is None or len(v) == length)
                and all(check(x) for x in v))

    size = f" of length {length}" if length else ""
    CHECK_MSG[f] = f"must be a list{size} whose items each {CHECK_MSG[check].replace('must ', '')}"
    return f


# schema: nested dict of (default, check); a dict value is a subsection

_F, _K, _C = FrictionParams(), KelvinParams(), CuttingParams()
_D, _R = DirectSchedule(), ReciprocalSchedule()
_G, _N, _O, _V = ProbeGeometry(), NodeGrid(), OpticsSpec(), ViewGeometry()
_T = CalibrationTargets()

SCHEDULE_KEYS = {
    "direct": {
        "kind": ("direct", text),
        "v_probe": (_D.v_probe, positive),
        "depth": (_D.depth, nonneg),
        "hold_time": (_D.hold_time, nonneg),
    },
    "reciprocal": {
        "kind": ("reciprocal", text),
        "v_segment": (_R.v_segment, positive),
        "stroke": (_R.stroke, positive),
        "cycles": (_R.cycles, nonneg_int),
        "segment_order": (list(_R.segment_order), _list_of(nonneg_int, 4)),
        "hold_time": (_R.hold_time, nonneg),
    },
}

SCHEMA = {
    "seed": (0, any_int),
    "dt": (1e-3, positive),
    "dt_max": (1e-3, positive),
    "record_stride": (10, pos_int),
    "schedule": "schedule",
    "materials": {
        "friction": {
            "f_breakaway": (_F.f_breakaway, positive),
            "f_coulomb": (_F.f_coulomb, positive),
            "v_breakaway": (_F.v_breakaway, positive),
            "f_viscous": (_F.f_viscous, nonneg),
            "extract_gain": (_F.extract_gain, positive),
        },
        "kelvin": {
            "k_parallel": (_K.k_parallel, positive),
            "k_series": (_K.k_series, positive),
            "c_damper": (_K.c_damper, positive),
        },
        "cutting": {"f_cut": (_C.f_cut, nonneg)},
        "radial_gain": (1.0, nonneg),
        "tip_length": (3.0, positive),
    },
    "geometry": {
        "diameter": (_G.diameter, positive),
        "length": (_G.length, positive),
        "clearance": (_G.clearance, nonneg),
    },
    "grid": {
        "first_station": (_N.first_station, nonneg),
        "spacing": (_N.spacing, positive),
        "n_stations": (_N.n_stations, pos_int),
        "radial_offsets": (list(_N.radial_offsets), _list_of(number)),
        "coupling_length": (_N.coupling_length, positive),
    },
    "analysis": {
        "plateau_slope_frac": (0.1, fraction),
        "node": ([5, 3], _list_of(pos_int, 2)),
    },
    "optics": {
        "field_of_view": (list(_O.field_of_view), _list_of(positive, 2)),
        "resolution": (_O.resolution, positive),
        "particle_diameter_px": (_O.particle_diameter_px, positive),
        "particle_density": (_O.particle_density, positive),
        "noise_std": (_O.noise_std, nonneg),
        "peak_intensity": (_O.peak_intensity, positive),
        "window": (32, pos_int),
        "overlap": (0.5, nonneg),
        "max_px_per_pair": (4.0, positive),
        "mask_probe": (True, boolean),
        "x_offset": (_V.x_offset, number),
        "axis_from_bottom": (_V.axis_from_bottom, positive),
    },
    "calibration": {
        "targets": {k: (getattr(_T, k), positive) for k in (
            "direct_peak", "direct_work", "recip4_peak", "recip4_work", "recip1_peak",
            "recip1_work", "plateau_direct", "plateau_recip4", "plateau_recip1")},
        "weights": "weights",
        "bounds": "bounds",
        "budget": (500, pos_int),
        "search_dt": (0.01, positive),
        "hold_time": (30.0, nonneg),
    },
    "compare": {
        "reference": "schedule",
        "test": "schedule",
    },
}

DEFAULT_SCHEDULES = {
    "schedule": {"kind": "direct"},
    "compare.reference": {"kind": "direct"},
    "compare.test": {"kind": "reciprocal"},
}


def _join(path, key):
    return f"{path}.{key}" if path else key


def _fill(doc: Any, schema: dict, path: str, applied: list) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(path, "must be an object")
    for key in doc:
        if key not in schema:
            raise ConfigError(_join(path, key), "unknown key")
    out = {}
    for key, entry in schema.items():
        p = _join(path, key)
        if entry == "schedule":
            out[key] = _fill_schedule(doc.get(key), p, applied)
        elif entry == "weights":
            out[key] = _fill_weights(doc.get(key, {}), p, applied if key not in doc else None)
        elif entry == "bounds":
            out[key] = _fill_bounds(doc.get(key), p, applied)
        elif isinstance(entry, dict):
            out[key] = _fill(doc.get(key, {}), entry, p, applied)
            if key not in doc:
                applied.append(p)
        else:
            default, check = entry
            if key in doc:
                v = doc[key]
                if not check(v):
                    raise ConfigError(p, f"{CHECK_MSG[check]}, got {json.dumps(v)}")
                out[key] = copy.deepcopy(v)
            else:
                out[key] = copy.deepcopy(default)
                applied.append(p)
    return out


def _fill_schedule(doc, path, applied):
    if doc is None:
        applied.append(path)
        doc = DEFAULT_SCHEDULES[path]
    if not isinstance(doc, dict):
        raise ConfigError(path, "must be an object")
    kind = doc.get("kind")
    if kind not in SCHEDULE_KEYS:
        raise ConfigError(_join(path, "kind"), f"must be one of {sorted(SCHEDULE_KEYS)}, got {json.dumps(kind)}")
    return _fill(doc, SCHEDULE_KEYS[kind], path, applied)


def _fill_weights(doc, path, applied):
    if not isinstance(doc, dict):
        raise ConfigError(path, "must be an object")
    valid = CalibrationTargets().values()
    for k, w in doc.items():
        if k not in valid:
            raise ConfigError(_join(path, k), f"unknown target; expected one of {sorted(valid)}")
        if not nonneg(w):
            raise ConfigError(_join(path, k), "must be a number >= 0")
    if applied is not None:
        applied.append(path)
    return dict(doc)


def _fill_bounds(doc, path, applied):
    if doc is None:
        applied.append(path)
        return {k: list(v) for k, v in DEFAULT_BOUNDS.items()}
    if not isinstance(doc, dict) or not doc:
        raise ConfigError(path, "must be a non-empty object")
    from .calibration import _FIELDS

    for k, b in doc.items():
        if k not in _FIELDS:
            raise ConfigError(_join(path, k), f"unknown parameter; expected one of {sorted(_FIELDS)}")
        if not (_list_of(number, 2)(b) and b[0] <= b[1]):
            raise ConfigError(_join(path, k), "must be [low, high] with low <= high")
    return {k: list(v) for k, v in doc.items()}


# typed view ----------------------------------------------------------------


def build_schedule(d: dict):
    args = {k: v for k, v in d.items() if k != "kind"}
    if d["kind"] == "direct":
        return DirectSchedule(**args)
    args["segment_order"] = tuple(args["segment_order"])
    return ReciprocalSchedule(**args)


@dataclass(frozen=True)
class Config:
    """Validated configuration; ``data`` is the fully populated document."""

    data: dict
    applied_defaults: tuple = field(default=(), compare=False)

    def __eq__(self, other):
        return isinstance(other, Config) and self.data == other.data

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def materials(self) -> Materials:
        m = self.data["materials"]
        return Materials(
            friction=FrictionParams(**m["friction"]),
            kelvin=KelvinParams(**m["kelvin"]),
            cutting=CuttingParams(**m["cutting"]),
            radial_gain=m["radial_gain"],
            tip_length=m["tip_length"],
        )

    def sim_config(self, schedule=None) -> SimConfig:
        d = self.data
        return SimConfig(
            schedule=schedule if schedule is not None else build_schedule(d["schedule"]),
            materials=self.materials(),
            geometry=ProbeGeometry(**d["geometry"]),
            grid=NodeGrid(**{**d["grid"], "radial_offsets": tuple(d["grid"]["radial_offsets"])}),
            dt=d["dt"],
            dt_max=d["dt_max"],
            record_stride=d["record_stride"],
        )

    def optics(self, seed: int | None = None) -> OpticsSpec:
        o = self.data["optics"]
        return OpticsSpec(
            field_of_view=tuple(o["field_of_view"]),
            resolution=o["resolution"],
            particle_diameter_px=o["particle_diameter_px"],
            particle_density=o["particle_density"],
            noise_std=o["noise_std"],
            peak_intensity=o["peak_intensity"],
            seed=self.seed if seed is None else seed,
        )

    def view(self) -> ViewGeometry:
        o = self.data["optics"]
        return ViewGeometry(x_offset=o["x_offset"], axis_from_bottom=o["axis_from_bottom"],
                            probe_radius=0.5 * self.data["geometry"]["diameter"])

    def targets(self) -> CalibrationTargets:
        c = self.data["calibration"]
        return CalibrationTargets(**c["targets"], weights=dict(c["weights"]))

    def bounds(self) -> dict:
        return {k: tuple(v) for k, v in self.data["calibration"]["bounds"].items()}

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=False) + "\n"


def _check_semantics(cfg: Config):
    """Cross-field checks, reported against the key that would need changing."""
    d = cfg.data
    try:
        cfg.materials()
    except ValueError as exc:
        raise ConfigError("materials", str(exc)) from None
    if d["dt"] > d["dt_max"]:
        raise ConfigError("dt", f"exceeds dt_max={d['dt_max']}")
    for path, sched in (("schedule", d["schedule"]), ("compare.reference", d["compare"]["reference"]),
                        ("compare.test", d["compare"]["test"])):
        try:
            build_schedule(sched)
        except ValueError as exc:
            raise ConfigError(path, str(exc)) from None
    if any(o == 0 for o in d["grid"]["radial_offsets"]) or not d["grid"]["radial_offsets"]:
        raise ConfigError("grid.radial_offsets", "offsets must be non-empty and non-zero")
    if d["optics"]["overlap"] > 0.75:
        raise ConfigError("optics.overlap", "must lie in [0, 0.75]")
    if d["optics"]["window"] < 16:
        raise ConfigError("optics.window", "must be >= 16")
    n_r, n_c = d["grid"]["n_stations"], len(d["grid"]["radial_offsets"])
    row, col = d["analysis"]["node"]
    if row > n_r or col > n_c:
        raise ConfigError("analysis.node", f"[{row},{col}] outside the {n_r}x{n_c} grid")
    f = d["materials"]["friction"]
    if f["extract_gain"] < 1:
        raise ConfigError("materials.friction.extract_gain", "must be >= 1")


def parse_config(text: str) -> Config:
    """Parse and validate JSON text; omitted keys take their defaults."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from None
    applied: list[str] = []
    data = _fill(doc, SCHEMA, "", applied)
    cfg = Config(data=data, applied_defaults=tuple(applied))
    _check_semantics(cfg)
    return cfg


def materials_fragment(m: Materials) -> dict:
    """Materials as a config fragment, e.g. to write back fitted values."""
    return {
        "materials": {
            "friction": asdict(m.friction),
            "kelvin": asdict(m.kelvin),
            "cutting": asdict(m.cutting),
            "radial_gain": m.radial_gain,
            "tip_length": m.tip_length,
        }
    }


def schedule_dict(s) -> dict:
    d = {f.name: getattr(s, f.name) for f in fields(s)}
    if "segment_order" in d:
        d["segment_order"] = list(d["segment_order"])
    return {"kind": "direct" if isinstance(s, DirectSchedule) else "reciprocal", **d}
