"""Command-line front end.

    reciprosim simulate --preset recip_4mms --out run.csv
    reciprosim analyze run.csv --preset recip_4mms
    reciprosim compare --config c.json
    reciprosim piv-roundtrip --preset direct_1mms --out tracks.csv
    reciprosim calibrate --config c.json --out materials.json

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or usage.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import RunSummary, compare, profile_stats, segment_phases, summarize
from .calibration import calibrate
from .config import Config, ConfigError, build_schedule, materials_fragment, parse_config
from .piv import roundtrip, track_rows
from .simulator import SimulationError, simulate

log = logging.getLogger("reciprosim")

PRESETS = ("direct_1mms", "recip_4mms", "recip_1mms")

# commands that integrate the model and therefore need the step size spelled out
NEEDS_DT = {"simulate", "compare", "calibrate", "piv-roundtrip"}


class UsageError(Exception):
    pass


# config loading -------------------------------------------------------------


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("reciprosim.presets").joinpath(f"{name}.json").read_text(encoding="utf-8")


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("schedule", "reference", "test"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(args) -> Config:
    """Preset (if any), overlaid by the config file (if any), then --seed."""
    doc: dict = {}
    if args.preset:
        doc = json.loads(preset_text(args.preset))
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("", f"cannot read {args.config}: {exc.strerror}") from None
        parse_config(text)  # diagnostics against the user's own file
        raw = json.loads(text)
        if args.command in NEEDS_DT and "dt" not in raw:
            raise ConfigError("dt", "required key is missing (time step in seconds)")
        doc = _merge(doc, raw)
    if args.seed is not None:
        doc["seed"] = args.seed
    return parse_config(json.dumps(doc))


# output ---------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for i, row in enumerate(rows):
        w.writerow(row if i == 0 else [_fmt(v) for v in row])
    return buf.getvalue()


def provenance(cfg: Config, args) -> dict:
    return {
        "tool": "reciprosim",
        "version": __version__,
        "command": args.command,
        "preset": args.preset,
        "config_file": args.config,
        "applied_defaults": list(cfg.applied_defaults),
        "config": cfg.data,
    }


def write_provenance(out, cfg: Config, args) -> None:
    atomic_write(str(out) + ".provenance.json", json.dumps(provenance(cfg, args), indent=2) + "\n")


def run_rows(r, grid):
    n = grid.n_nodes
    head = ["t", "seg0", "seg1", "seg2", "seg3"]
    for i in range(n):
        head += [f"node_{i}_ux", f"node_{i}_uy"]
    head += ["reaction_force", "cut_depth", "work"]
    yield head
    for k in range(len(r.t)):
        row = [r.t[k], *r.segment_pos[k]]
        for i in range(n):
            row += [r.node_u_x[k, i], r.node_u_y[k, i]]
        row += [r.reaction_force[k], r.cut_depth[k], r.work[k]]
        yield row


def read_run(path):
    """Columns of a run CSV as float arrays keyed by header name."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    head = rows[0]
    for col in ("t", "seg0", "seg1", "seg2", "seg3", "reaction_force", "work"):
        if col not in head:
            raise ValueError(f"{path}: missing column {col!r}")
    data = np.array(rows[1:], dtype=float).reshape(-1, len(head))
    return {h: data[:, j] for j, h in enumerate(head)}


def motion_stop_from_segments(cols) -> float:
    """Last sample time at which any segment still moved."""
    seg = np.stack([cols[f"seg{i}"] for i in range(4)], axis=1)
    moving = np.any(np.diff(seg, axis=0) != 0, axis=1)
    if not moving.any():
        return float(cols["t"][0])
    return float(cols["t"][np.flatnonzero(moving)[-1] + 1])


# commands --------------------------------------------------------------------


def cmd_simulate(cfg: Config, args) -> int:
    if not args.out:
        raise UsageError("simulate needs --out")
    sc = cfg.sim_config()
    r = simulate(sc)
    atomic_write(args.out, csv_text(run_rows(r, sc.grid)))
    write_provenance(args.out, cfg, args)
    print(f"wrote {len(r.t)} samples to {args.out}")
    return 0


def cmd_analyze(cfg: Config, args) -> int:
    cols = read_run(args.input)
    sc = cfg.sim_config()
    row, col = cfg.data["analysis"]["node"]
    key = f"node_{sc.grid.node_index(row, col)}_ux"
    if key not in cols:
        raise ValueError(f"{args.input}: missing column {key!r}")
    stop = motion_stop_from_segments(cols)
    seg = segment_phases(cols[key], cols["t"], motion_stop=stop,
                         plateau_slope_frac=cfg.data["analysis"]["plateau_slope_frac"],
                         period=sc.schedule.cycle_period)
    st = profile_stats(cols[key], seg)
    report = {
        "peak_force": float(np.max(cols["reaction_force"])),
        "work": float(cols["work"][-1]),
        "motion_stop": stop,
        "t_cut": list(seg.t_cut),
        "t_relax": list(seg.t_relax),
        "node": [row, col],
        "displacement_peak": st.peak,
        "plateau_mean": st.plateau_mean,
        "relaxation_level": st.relaxation_level,
        "oscillation_amp": st.oscillation_amp,
    }
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        atomic_write(args.out, text)
        write_provenance(args.out, cfg, args)
    sys.stdout.write(text)
    return 0


def _summary(cfg: Config, schedule) -> RunSummary:
    a = cfg.data["analysis"]
    return summarize(simulate(cfg.sim_config(schedule)), node=tuple(a["node"]),
                     plateau_slope_frac=a["plateau_slope_frac"])


def cmd_compare(cfg: Config, args) -> int:
    c = cfg.data["compare"]
    ref = _summary(cfg, build_schedule(c["reference"]))
    test = _summary(cfg, build_schedule(c["test"]))
    rep = compare(ref, test)
    lines = rep.lines()
    if args.out:
        doc = {
            "reference": {"peak_force": ref.peak_force, "work": ref.work,
                          "plateau": ref.displacement.plateau_mean if ref.displacement else None},
            "test": {"peak_force": test.peak_force, "work": test.work,
                     "plateau": test.displacement.plateau_mean if test.displacement else None},
            "peak_reduction_pct": rep.peak_reduction_pct,
            "plateau_reduction_pct": rep.plateau_reduction_pct,
            "work_reduction_pct": rep.work_reduction_pct,
        }
        atomic_write(args.out, json.dumps(doc, indent=2) + "\n")
        write_provenance(args.out, cfg, args)
    print("\n".join(lines))
    return 0


def cmd_piv(cfg: Config, args) -> int:
    if not args.out:
        raise UsageError("piv-roundtrip needs --out")
    o = cfg.data["optics"]
    r = simulate(cfg.sim_config())
    rt = roundtrip(r, cfg.optics(), cfg.view(), window=o["window"], overlap=o["overlap"],
                   max_px_per_pair=o["max_px_per_pair"], mask_probe=o["mask_probe"],
                   node=tuple(cfg.data["analysis"]["node"]), frames_dir=args.frames)
    atomic_write(args.out, csv_text(track_rows(rt)))
    write_provenance(args.out, cfg, args)
    row, col = rt.node
    print(f"frame pairs: {rt.n_pairs}")
    print(f"node [{row},{col}] rms error: {rt.rms:.6g} mm ({100 * rt.rms_fraction:.3g}% of peak {rt.peak:.6g} mm)")
    return 0


def cmd_calibrate(cfg: Config, args) -> int:
    if not args.out:
        raise UsageError("calibrate needs --out")
    c = cfg.data["calibration"]
    base = cfg.sim_config()
    base = replace(base, schedule=replace(base.schedule, hold_time=c["hold_time"]))
    m, res = calibrate(base, cfg.targets(), cfg.bounds(), budget=c["budget"], dt=c["search_dt"])
    atomic_write(args.out, json.dumps(materials_fragment(m), indent=2) + "\n")
    write_provenance(args.out, cfg, args)
    print(f"evaluations: {res.evaluations}")
    print(f"best loss: {res.best_loss:.6g}")
    for k, v in res.best.as_dict().items():
        print(f"  {k} = {v!r}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "compare": cmd_compare,
    "piv-roundtrip": cmd_piv,
    "calibrate": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reciprosim", description="Reciprocating probe insertion simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--preset", help=f"built-in configuration: {', '.join(PRESETS)}")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output file")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    common(sub.add_parser("simulate", help="run one schedule and write run.csv"))
    a = common(sub.add_parser("analyze", help="phase statistics of a run.csv"))
    a.add_argument("input", help="run CSV written by simulate")
    common(sub.add_parser("compare", help="reference vs test schedule reductions"))
    pv = common(sub.add_parser("piv-roundtrip", help="render, track and score simulated motion"))
    pv.add_argument("--frames", help="directory for rendered PGM frames")
    common(sub.add_parser("calibrate", help="fit material parameters to targets"))
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, ValueError, IndexError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
