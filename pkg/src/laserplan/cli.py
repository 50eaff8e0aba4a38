"""Command-line entry point: calibrate, field, grad-check, plan, simulate.

Each verb reads a JSON config, fills in defaults, rejects unknown keys and
writes its artifacts plus ``resolved_config.json`` under the output
directory. Angles are degrees in every file; radians only internally.

Exit codes: 0 success, 1 bad input or config, 2 non-convergence,
3 validation failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import jacobian
from .calibration import (InsufficientDataError, fit_gaussian, patch_grid, project_measurement,
                          read_dataset, synthesize_cavity, write_dataset)
from .field import (CostParams, DegenerateBoundaryError, GridSpec, build_field, gaussian_bowl,
                    halfspace, load_field, save_field)
from .geometry import AblationFrame, BeamParams, PointSet
from .planner import NonFiniteGradientError, PlannerConfig, plan
from .sim import EXPERIMENTS, ExperimentSpec, default_spec, run_experiment

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_VALIDATION = 0, 1, 2, 3

REQUIRED = object()


class ConfigError(ValueError):
    pass


# -- schema -------------------------------------------------------------------------

FRAME = {"q_c": [0.0, 0.0, 0.0], "v0": [0.0, 0.0, -1.0], "L_ref": 1.0,
         "bounds_deg": [[-30.0, -30.0, -30.0], [30.0, 30.0, 30.0]]}
BEAM = {"L_G": 1.4376, "sigma_G": 0.6486, "fit_from": None}
GRID = {"origin": [-3.15, -3.15, -3.5], "spacing": 0.1, "dims": [64, 64, 64]}
BOWL = {"type": "gaussian_bowl", "amplitude": 1.8, "sigma_b": 0.6, "apex": [0.0, 0.0, 0.0]}
HALFSPACE = {"type": "halfspace", "normal": [0.0, 0.0, 1.0], "offset": 0.0}
COST = {"epsilon": 0.6}
PATCH = {"center": None, "half_width": 1.0, "n": 7}
PLANNER = {"alpha": 0.01, "max_iters": 200, "theta_init_deg": [0.0, 0.0, 0.0],
           "select_fraction": 0.30, "cost_tol": 1e-6, "stall_iters": 10,
           "selection": "probe", "record_points": False}
SYNTHETIC = {"L_G": 1.4376, "sigma_G": 0.6486, "q_c": [0.0, 0.0, 0.0],
             "v0": [0.0, 0.0, -1.0], "L_ref": 1.0,
             "angles_deg": [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0], [10.0, 10.0, 0.0]],
             "repeats": 10, "noise_sigma": 0.0, "half_width": 1.5, "n": 21}
COMMON = {"seed": 0, "threads": 1, "out": "out"}

VERBS = {
    "calibrate": {"dataset": None, "synthetic": None, "max_iter": 200, "tol": 1e-10},
    "field": {"grid": GRID, "boundary": BOWL},
    "grad-check": {"n_configs": 1000, "tolerance": 1e-5, "objective_tolerance": 1e-3},
    "plan": {"frame": FRAME, "beam": BEAM, "cost": COST, "grid": GRID, "boundary": BOWL,
             "field_dir": None, "points": None, "planner": PLANNER},
    "simulate": {"experiment": REQUIRED},
}


def _merge(given, defaults: dict, where: str) -> dict:
    """Overlay ``given`` on ``defaults`` one level deep; unknown keys are errors."""
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    missing = [k for k, v in out.items() if v is REQUIRED]
    if missing:
        raise ConfigError(f"missing required keys in {where}: {', '.join(missing)}")
    return out


def resolve(verb: str, raw: dict) -> dict:
    """Full config for ``verb`` with every default filled in."""
    cfg = _merge(raw, COMMON | VERBS[verb], "config")
    if verb == "calibrate":
        if (cfg["dataset"] is None) == (cfg["synthetic"] is None):
            raise ConfigError("calibrate needs exactly one of 'dataset' or 'synthetic'")
        if cfg["synthetic"] is not None:
            cfg["synthetic"] = _merge(cfg["synthetic"], SYNTHETIC, "synthetic")
    if verb in ("field", "plan"):
        cfg["grid"] = _merge(cfg["grid"], GRID, "grid")
        cfg["boundary"] = _resolve_boundary(cfg["boundary"])
    if verb == "plan":
        cfg["frame"] = _merge(cfg["frame"], FRAME, "frame")
        cfg["beam"] = _merge(cfg["beam"], BEAM, "beam")
        cfg["cost"] = _merge(cfg["cost"], COST, "cost")
        cfg["planner"] = _merge(cfg["planner"], PLANNER, "planner")
        pts = cfg["points"] if cfg["points"] is not None else {"patch": {}}
        if not isinstance(pts, dict) or len(pts) != 1 or next(iter(pts)) not in ("csv", "patch"):
            raise ConfigError("points must be {'csv': path} or {'patch': {...}}")
        if "patch" in pts:
            pts = {"patch": _merge(pts["patch"], PATCH, "points.patch")}
            if pts["patch"]["center"] is None:
                pts["patch"]["center"] = list(cfg["frame"]["q_c"])
        cfg["points"] = pts
    if verb == "simulate":
        exp = cfg["experiment"]
        if not isinstance(exp, dict) or exp.get("which") not in EXPERIMENTS:
            raise ConfigError(f"experiment.which must be one of {', '.join(EXPERIMENTS)}")
        allowed = set(ExperimentSpec.__dataclass_fields__) - {"seed", "threads"}
        unknown = sorted(set(exp) - allowed)
        if unknown:
            raise ConfigError(f"unknown keys in experiment: {', '.join(unknown)}")
        spec = default_spec(exp["which"], **{k: v for k, v in exp.items() if k != "which"})
        cfg["experiment"] = {k: v for k, v in spec.to_dict().items() if k not in ("seed", "threads")}
    return cfg


def _resolve_boundary(b) -> dict:
    kind = (b or {}).get("type", "gaussian_bowl")
    if kind == "gaussian_bowl":
        return _merge(b, BOWL, "boundary")
    if kind == "halfspace":
        return _merge(b, HALFSPACE, "boundary")
    raise ConfigError(f"unknown boundary type {kind!r}")


# -- builders -------------------------------------------------------------------------

def _grid(g) -> GridSpec:
    return GridSpec(g["origin"], float(g["spacing"]), g["dims"])


def _boundary(b):
    if b["type"] == "halfspace":
        return halfspace(b["normal"], float(b["offset"]))
    return gaussian_bowl(float(b["amplitude"]), float(b["sigma_b"]), b["apex"])


def _frame(f) -> AblationFrame:
    lo, hi = f["bounds_deg"]
    return AblationFrame(f["q_c"], f["v0"], float(f["L_ref"]), np.radians(lo), np.radians(hi))


def _path(p, base: Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _absolute_inputs(cfg: dict, base: Path) -> dict:
    """Anchor input paths so the echoed config replays from any directory."""
    def fix(section, key):
        if section.get(key) is not None:
            section[key] = str(_path(section[key], base).resolve())
    fix(cfg, "dataset")
    fix(cfg, "field_dir")
    fix(cfg.get("points") or {}, "csv")
    fix(cfg.get("beam") or {}, "fit_from")
    return cfg


def _beam(b, base: Path) -> BeamParams:
    if b["fit_from"] is not None:
        fit = json.loads(_path(b["fit_from"], base).read_text())
        return BeamParams(float(fit["L_G"]), float(fit["sigma_G"]))
    return BeamParams(float(b["L_G"]), float(b["sigma_G"]))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    path.write_text(buf.getvalue())


# -- verbs ----------------------------------------------------------------------------

def cmd_calibrate(cfg: dict, out: Path, base: Path) -> int:
    if cfg["synthetic"] is not None:
        syn = cfg["synthetic"]
        beam = BeamParams(float(syn["L_G"]), float(syn["sigma_G"]))
        frame = AblationFrame(syn["q_c"], syn["v0"], float(syn["L_ref"]))
        grid = {"half_width": float(syn["half_width"]), "n": int(syn["n"])}
        pre, clouds = None, []
        for i, ang in enumerate(syn["angles_deg"]):
            reps = []
            for j in range(int(syn["repeats"])):
                pre, m = synthesize_cavity(beam, frame, np.radians(ang), grid,
                                           float(syn["noise_sigma"]),
                                           seed=[int(cfg["seed"]), i, j])
                reps.append(m.cloud)
            clouds.append(reps)
        if pre is None:
            raise InsufficientDataError("synthetic dataset has no angles")
        dataset = out / "dataset"
        write_dataset(dataset, pre, frame, syn["angles_deg"], clouds)
    else:
        dataset = _path(cfg["dataset"], base)
    pre, measurements = read_dataset(dataset)
    parts = [project_measurement(m, pre) for m in measurements]
    s = np.concatenate([p[0] for p in parts])
    d = np.concatenate([p[1] for p in parts])
    fit = fit_gaussian(s, d, int(cfg["max_iter"]), float(cfg["tol"]))
    _write_json(out / "fit.json", fit.to_dict() | {"n_samples": int(s.size),
                                                   "n_measurements": len(measurements)})
    if not fit.converged:
        print("calibrate: fit did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_field(cfg: dict, out: Path, base: Path) -> int:
    phi, grad = build_field(_grid(cfg["grid"]), _boundary(cfg["boundary"]))
    save_field(out, phi, grad)
    return EXIT_OK


def cmd_grad_check(cfg: dict, out: Path, base: Path) -> int:
    rows = jacobian.finite_difference_suite(int(cfg["n_configs"]), int(cfg["seed"]))
    cols = jacobian.GRADCHECK_COLUMNS
    _write_csv(out / "grad_check.csv", ("config",) + cols,
               ([i] + [r[c] for c in cols] for i, r in enumerate(rows)))
    worst = {c: max((r[c] for r in rows), default=0.0) for c in cols}
    tol = {c: float(cfg["objective_tolerance"] if c == "objective" else cfg["tolerance"])
           for c in cols}
    ok = all(worst[c] < tol[c] for c in cols)
    _write_json(out / "grad_check_summary.json",
                {"n_configs": len(rows), "max_rel_error": worst, "tolerance": tol, "passed": ok})
    if not ok:
        bad = [c for c in cols if worst[c] >= tol[c]]
        print(f"grad-check: tolerance exceeded for {', '.join(bad)}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_plan(cfg: dict, out: Path, base: Path) -> int:
    frame = _frame(cfg["frame"])
    beam = _beam(cfg["beam"], base)
    cost = CostParams(float(cfg["cost"]["epsilon"]))
    if cfg["field_dir"] is not None:
        phi, grad = load_field(_path(cfg["field_dir"], base))
    else:
        phi, grad = build_field(_grid(cfg["grid"]), _boundary(cfg["boundary"]))
    if "csv" in cfg["points"]:
        pts = PointSet.from_csv(_path(cfg["points"]["csv"], base))
    else:
        p = cfg["points"]["patch"]
        pts = patch_grid(p["center"], frame.v0, float(p["half_width"]), int(p["n"]))
    if len(pts) == 0:
        raise ConfigError("point set is empty")
    pc = cfg["planner"]
    kw = {k: v for k, v in pc.items() if k != "theta_init_deg"}
    planner_cfg = PlannerConfig(theta_init=np.radians(pc["theta_init_deg"]), bounds=frame.bounds, **kw)
    res = plan(pts, frame, beam, phi, grad, cost, planner_cfg)

    thetas = np.degrees(np.array(res.thetas))
    _write_json(out / "plan.json", {
        "theta_star_deg": np.degrees(res.theta_star).tolist(),
        "theta_init_deg": [float(x) for x in pc["theta_init_deg"]],
        "termination": res.termination, "iterations": res.iterations,
        "initial_cost": res.cost_trace[0], "final_cost": res.cost_trace[-1],
        "clamp_events": res.clamp_events, "failed_points": res.failed_points,
        "n_points": len(pts),
    })
    active = [len(pts)] + res.active_sizes
    _write_csv(out / "trace.csv", ("iter", "cost", "theta_x_deg", "theta_y_deg", "theta_z_deg", "active"),
               ([k, float(c), *map(float, thetas[k]), active[k]] for k, c in enumerate(res.cost_trace)))
    if res.point_trajectories is not None:
        _write_csv(out / "point_trajectories.csv", ("iter", "point", "x", "y", "z"),
                   ([k, i, *map(float, q)] for k, Q in enumerate(res.point_trajectories)
                    for i, q in enumerate(Q)))
    return EXIT_OK


def cmd_simulate(cfg: dict, out: Path, base: Path) -> int:
    exp = dict(cfg["experiment"])
    spec = ExperimentSpec(seed=int(cfg["seed"]), threads=int(cfg["threads"]), **exp)
    run_experiment(spec).write(out)
    return EXIT_OK


COMMANDS = {"calibrate": cmd_calibrate, "field": cmd_field, "grad-check": cmd_grad_check,
            "plan": cmd_plan, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="laserplan", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in COMMANDS:
        p = sub.add_parser(verb)
        p.add_argument("--config", type=Path, required=verb != "grad-check",
                       help="JSON config file")
        p.add_argument("--out", type=Path, help="output directory (overrides config)")
        p.add_argument("--threads", type=int, help="worker cap (overrides config)")
        p.add_argument("--seed", type=int, help="random seed (overrides config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = {}
        base = Path.cwd()
        if args.config is not None:
            raw = json.loads(args.config.read_text())
            base = args.config.resolve().parent
            if not isinstance(raw, dict):
                raise ConfigError("config must be a JSON object")
        for key in ("out", "threads", "seed"):
            if getattr(args, key) is not None:
                raw[key] = str(getattr(args, key)) if key == "out" else getattr(args, key)
        if raw.pop("verb", args.verb) != args.verb:
            raise ConfigError(f"config was written for a different verb, not {args.verb!r}")
        cfg = _absolute_inputs(resolve(args.verb, raw), base)
        if int(cfg["threads"]) < 1:
            raise ConfigError("threads must be at least 1")
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        # the output location is excluded so reruns elsewhere stay byte-identical
        _write_json(out / "resolved_config.json",
                    {"verb": args.verb} | {k: v for k, v in cfg.items() if k != "out"})
        return COMMANDS[args.verb](cfg, out, base)
    except NonFiniteGradientError as exc:
        print(f"{args.verb}: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (ConfigError, DegenerateBoundaryError, InsufficientDataError, OSError,
            ValueError, KeyError, TypeError) as exc:
        print(f"{args.verb}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
