"""Desk-scale simulation studies.

test1  point robots steered by fixed reference vectors, XY orientation error
test2  independent point robots descending the obstacle cost of Gaussian bowls
test3  one shared orientation per surface patch, planned with gain selection
offset1d  a single free angle against a laterally offset bowl, checked by grid search

Every run is a pure function of its ExperimentSpec, including the seed.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .calibration import patch_grid
from .field import CostParams, GridSpec, build_field, gaussian_bowl, obstacle_cost
from .geometry import AblationFrame, BeamParams, PointSet, ablate_set
from .jacobian import objective
from .planner import PlannerConfig, plan, point_robot_traces

__all__ = [
    "ExperimentSpec",
    "MetricsReport",
    "default_spec",
    "xy_orientation_error",
    "sample_reference",
    "initial_angles",
    "run_test1",
    "run_test2",
    "run_test3",
    "run_offset1d",
    "run_experiment",
]

EXPERIMENTS = ("test1", "test2", "test3", "offset1d")
DEFAULT_BOWLS = ((1.8, 0.5), (1.8, 0.6), (1.8, 0.7), (1.8, 0.8), (1.8, 1.0), (1.8, 1.5))


@dataclass
class ExperimentSpec:
    which: str = "test2"
    seed: int = 0
    # boundaries as (amplitude, sigma_b) pairs in mm, apex at the origin
    bowls: tuple = DEFAULT_BOWLS
    n_angles: int = 9
    grid_points: int = 7
    patch_half_width: float = 1.0
    standoff: float = 0.6
    L_G: float = 1.4376
    sigma_G: float = 0.6486
    epsilon: float = 0.6
    bound_deg: float = 30.0
    grid_origin: tuple = (-3.15, -3.15, -3.5)
    grid_spacing: float = 0.1
    grid_dims: tuple = (64, 64, 64)
    # point-robot runs (test1, test2)
    steps: int = 150
    alpha: float = 0.02
    # test1
    n_references: int = 50
    transient: int = 5
    # test3
    planner: dict = field(default_factory=dict)
    # offset1d: bowls[0] shifted by -offset along y, only theta_x free
    offset: float = 0.25
    offset_starts_deg: tuple = (0.0, 20.0, -25.0)
    oracle_step_deg: float = 0.05
    threads: int = 1

    def __post_init__(self):
        if self.which not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.which!r}")
        self.bowls = tuple(tuple(float(x) for x in b) for b in self.bowls)
        self.grid_origin = tuple(float(x) for x in self.grid_origin)
        self.grid_dims = tuple(int(x) for x in self.grid_dims)
        self.offset_starts_deg = tuple(float(x) for x in self.offset_starts_deg)
        if not self.oracle_step_deg > 0:
            raise ValueError("oracle_step_deg must be positive")
        for name in ("n_angles", "grid_points", "n_references", "steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not self.bowls:
            raise ValueError("at least one boundary is required")
        unknown = set(self.planner) - {f.name for f in fields(PlannerConfig)} - {"bounds_deg"}
        if unknown:
            raise ValueError(f"unknown planner keys: {sorted(unknown)}")

    @property
    def beam(self) -> BeamParams:
        return BeamParams(self.L_G, self.sigma_G)

    @property
    def cost(self) -> CostParams:
        return CostParams(self.epsilon)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.grid_origin, self.grid_spacing, self.grid_dims)

    def frame(self, bound_deg: float | None = None) -> AblationFrame:
        b = np.radians(self.bound_deg if bound_deg is None else bound_deg)
        return AblationFrame((0.0, 0.0, self.standoff), (0.0, 0.0, -1.0), 1.0,
                             np.full(3, -b), np.full(3, b))

    def patch(self) -> PointSet:
        return patch_grid((0.0, 0.0, self.standoff), (0.0, 0.0, -1.0),
                          self.patch_half_width, self.grid_points)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bowls"] = [list(b) for b in self.bowls]
        d["grid_origin"] = list(self.grid_origin)
        d["grid_dims"] = list(self.grid_dims)
        d["offset_starts_deg"] = list(self.offset_starts_deg)
        return d


_PER_TEST = {
    "test1": dict(steps=30, alpha=0.01, bound_deg=60.0),
    "test2": dict(steps=150, alpha=0.02),
    "test3": dict(planner={"alpha": 0.005, "max_iters": 300}),
    "offset1d": dict(bowls=((1.8, 0.6),), planner={"alpha": 0.005, "max_iters": 500}),
}


def default_spec(which: str, **overrides) -> ExperimentSpec:
    kw = dict(_PER_TEST[which])
    kw.update(overrides)
    return ExperimentSpec(which=which, **kw)


@dataclass
class MetricsReport:
    which: str
    records: list
    histogram: dict
    summary: dict
    traces: dict = field(default_factory=dict)
    contours: dict = field(default_factory=dict)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report = {"which": self.which, "summary": self.summary, "histogram": self.histogram,
                  "n_records": len(self.records)}
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        (out / "records.csv").write_text(_csv(self.records))
        for run, costs in self.traces.items():
            rows = [{"iter": i, "cost": c} for i, c in enumerate(costs)]
            (out / f"trace_{run}.csv").write_text(_csv(rows))
        for run, (before, after) in self.contours.items():
            before.to_csv(out / f"contour_before_{run}.csv")
            after.to_csv(out / f"contour_after_{run}.csv")


def _csv(rows) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def histogram(values, width: float, lo: float = 0.0) -> dict:
    values = np.asarray(values, dtype=float)
    # the last bin is half-open, so the maximum always lands strictly inside
    nbins = int((values.max() - lo) // width) + 1 if values.size else 1
    edges = lo + width * np.arange(nbins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return {"bin_width": width, "edges": edges.tolist(), "counts": counts.tolist()}


def _map(fn, items, threads: int):
    # ordered map keeps report order independent of scheduling
    items = list(items)
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- test 1 -----------------------------------------------------------------------

def sample_reference(rng):
    """Reference direction from horizontal angle in [-180, 180] deg and vertical in [-80, 80] deg.

    The rotation about the base incident axis leaves ``v0`` unchanged, so only
    two angles are drawn; the vertical range keeps the XY part non-zero.
    """
    h = np.radians(rng.uniform(-180.0, 180.0))
    g = np.radians(rng.uniform(-80.0, 80.0))
    v_h = np.cos(g) * np.array([np.cos(h), np.sin(h), 0.0])
    v_g = np.array([0.0, 0.0, np.sin(g)])
    return v_h + v_g, float(np.degrees(h)), float(np.degrees(g))


def xy_orientation_error(reference, displacements):
    """Unsigned XY-plane angle in degrees between a reference and each displacement.

    Displacements with no XY component give NaN.
    """
    d = np.asarray(displacements, dtype=float)
    r = np.asarray(reference, dtype=float)
    cross = r[0] * d[..., 1] - r[1] * d[..., 0]
    dot = r[0] * d[..., 0] + r[1] * d[..., 1]
    err = np.degrees(np.abs(np.arctan2(cross, dot)))
    still = np.hypot(d[..., 0], d[..., 1]) < 1e-12
    return np.where(still, np.nan, err)


def run_test1(spec: ExperimentSpec) -> MetricsReport:
    rng = np.random.default_rng(spec.seed)
    frame = spec.frame()
    pts = spec.patch()
    refs = [sample_reference(rng) for _ in range(spec.n_references)]

    def one(item):
        k, (vr, h, g) = item
        tr = point_robot_traces(pts.points, np.zeros(3), frame, spec.beam, "follow-reference",
                                spec.steps, spec.alpha, reference=vr)
        err = xy_orientation_error(vr, np.diff(tr.positions, axis=0))[spec.transient:]
        return k, h, g, err

    records, all_err = [], []
    for k, h, g, err in _map(one, enumerate(refs), spec.threads):
        for i in range(len(pts)):
            e = err[:, i]
            e = e[np.isfinite(e)]
            all_err.append(e)
            records.append({"reference": k, "horizontal_deg": h, "vertical_deg": g, "robot": i,
                            "steps_scored": int(e.size),
                            "median_error_deg": float(np.median(e)) if e.size else float("nan"),
                            "max_error_deg": float(e.max()) if e.size else float("nan")})
    e = np.concatenate(all_err)
    summary = {"median_error_deg": float(np.median(e)), "mean_error_deg": float(e.mean()),
               "p90_error_deg": float(np.percentile(e, 90)), "n_errors": int(e.size),
               "n_references": spec.n_references, "n_robots": len(pts)}
    return MetricsReport("test1", records, histogram(e, 1.0), summary)


# -- tests 2 and 3 ----------------------------------------------------------------

def initial_angles(spec: ExperimentSpec, bowl_id: int) -> np.ndarray:
    """``n_angles`` starting angles drawn uniformly inside the planner bounds."""
    frame = spec.frame()
    rng = np.random.default_rng([spec.seed, bowl_id])
    return rng.uniform(frame.theta_lo, frame.theta_hi, size=(spec.n_angles, 3))


def _fields(spec: ExperimentSpec):
    return [build_field(spec.grid, gaussian_bowl(a, s)) for a, s in spec.bowls]


def run_test2(spec: ExperimentSpec) -> MetricsReport:
    frame, pts, cost = spec.frame(), spec.patch(), spec.cost
    flds = _fields(spec)
    jobs = [(b, a) for b in range(len(spec.bowls)) for a in range(spec.n_angles)]
    starts = [initial_angles(spec, b) for b in range(len(spec.bowls))]

    def one(job):
        b, a = job
        phi, grad = flds[b]
        tr = point_robot_traces(pts.points, starts[b][a], frame, spec.beam, "descent-cost",
                                spec.steps, spec.alpha, phi=phi, grad_phi=grad, cost=cost)
        return job, tr

    records, finals = [], []
    for (b, a), tr in _map(one, jobs, spec.threads):
        c0 = obstacle_cost(tr.phi[0], cost)
        c1 = obstacle_cost(tr.phi[-1], cost)
        moved = np.any(tr.thetas[1:] != tr.thetas[0], axis=(0, 2))
        th0 = np.degrees(starts[b][a])
        for i in range(len(pts)):
            records.append({"bowl": b, "amplitude": spec.bowls[b][0], "sigma_b": spec.bowls[b][1],
                            "angle": a, "theta0_x_deg": float(th0[0]), "theta0_y_deg": float(th0[1]),
                            "theta0_z_deg": float(th0[2]), "robot": i,
                            "initial_cost": float(c0[i]), "final_cost": float(c1[i]),
                            "moved": bool(moved[i]), "clamped_steps": int(tr.clamped[:, i].sum())})
        finals.append(c1)
    finals = np.concatenate(finals)
    summary = {"fraction_le_0.5": float(np.mean(finals <= 0.5)), "n_robots": int(finals.size),
               "n_runs": len(jobs), "mean_final_cost": float(finals.mean()),
               "epsilon": spec.epsilon}
    return MetricsReport("test2", records, histogram(finals, 0.05), summary)


def small_bowl(spec: ExperimentSpec, sigma_b: float) -> bool:
    """Bowl whose half-depth radius is well inside the surface patch."""
    return sigma_b * math.sqrt(2.0 * math.log(2.0)) < 0.75 * spec.patch_half_width


def planner_config(spec: ExperimentSpec, theta_init) -> PlannerConfig:
    kw = dict(spec.planner)
    frame = spec.frame()
    bounds_deg = kw.pop("bounds_deg", None)
    bounds = (np.radians(bounds_deg[0]), np.radians(bounds_deg[1])) if bounds_deg else frame.bounds
    return PlannerConfig(theta_init=theta_init, bounds=bounds, **kw)


def run_test3(spec: ExperimentSpec) -> MetricsReport:
    frame, pts, cost = spec.frame(), spec.patch(), spec.cost
    flds = _fields(spec)
    jobs = [(b, a) for b in range(len(spec.bowls)) for a in range(spec.n_angles)]
    starts = [initial_angles(spec, b) for b in range(len(spec.bowls))]

    def one(job):
        b, a = job
        phi, grad = flds[b]
        res = plan(pts, frame, spec.beam, phi, grad, cost, planner_config(spec, starts[b][a]))
        return job, res

    records, point_costs = [], []
    report_traces, contours = {}, {}
    for (b, a), res in _map(one, jobs, spec.threads):
        run = f"b{b}_a{a}"
        phi = flds[b][0]
        _, c_final, _ = objective(pts, res.theta_star, frame, spec.beam, phi, cost)
        point_costs.append(c_final)
        ts = np.degrees(res.theta_star)
        records.append({"run": run, "bowl": b, "amplitude": spec.bowls[b][0],
                        "sigma_b": spec.bowls[b][1], "angle": a,
                        "small_bowl": small_bowl(spec, spec.bowls[b][1]),
                        "initial_cost": float(res.cost_trace[0]),
                        "final_cost": float(res.cost_trace[-1]),
                        "min_cost": float(min(res.cost_trace)),
                        "iterations": res.iterations, "termination": res.termination,
                        "theta_star_x_deg": float(ts[0]), "theta_star_y_deg": float(ts[1]),
                        "theta_star_z_deg": float(ts[2]), "clamp_events": res.clamp_events,
                        "trace_constant": bool(len(set(res.cost_trace)) == 1)})
        report_traces[run] = [float(c) for c in res.cost_trace]
        contours[run] = (ablate_set(pts, starts[b][a], frame, spec.beam),
                         ablate_set(pts, res.theta_star, frame, spec.beam))
    pc = np.concatenate(point_costs)
    reduced = [r["final_cost"] <= r["initial_cost"] for r in records]
    safe = [r for r in records if r["initial_cost"] == 0.0]
    small = [r for r in records if r["small_bowl"]]
    summary = {"fraction_reduced": float(np.mean(reduced)), "n_runs": len(records),
               "fraction_points_le_0.5": float(np.mean(pc <= 0.5)),
               "safe_start_runs": len(safe),
               "safe_start_constant": all(r["trace_constant"] for r in safe),
               "small_bowl_runs": len(small),
               "small_bowl_all_positive": all(r["final_cost"] > 0.0 for r in small)}
    return MetricsReport("test3", records, histogram(pc, 0.05), summary, report_traces, contours)


# -- offset bowl, one free angle ------------------------------------------------

def run_offset1d(spec: ExperimentSpec) -> MetricsReport:
    """Planner optimum over theta_x versus a dense grid search of the same objective.

    The bowl is shifted along -y because theta_x tilts the beam in the y-z plane.
    """
    amplitude, sigma_b = spec.bowls[0]
    phi, grad = build_field(spec.grid, gaussian_bowl(amplitude, sigma_b, (0.0, -spec.offset, 0.0)))
    b = math.radians(spec.bound_deg)
    lo, hi = np.array([-b, 0.0, 0.0]), np.array([b, 0.0, 0.0])
    frame = spec.frame().replace(theta_lo=lo, theta_hi=hi)
    pts, cost = spec.patch(), spec.cost

    n = int(round(2 * spec.bound_deg / spec.oracle_step_deg))
    grid_deg = np.linspace(-spec.bound_deg, spec.bound_deg, n + 1)
    f_grid = np.array([objective(pts, np.radians([t, 0.0, 0.0]), frame, spec.beam, phi, cost)[0]
                       for t in grid_deg])
    k = int(np.argmin(f_grid))
    oracle_deg, oracle_cost = float(grid_deg[k]), float(f_grid[k])

    kw = {key: v for key, v in spec.planner.items() if key != "bounds_deg"}
    records, traces = [], {}
    for i, start in enumerate(spec.offset_starts_deg):
        cfg = PlannerConfig(theta_init=np.radians([start, 0.0, 0.0]), bounds=(lo, hi), **kw)
        res = plan(pts, frame, spec.beam, phi, grad, cost, cfg)
        x = float(np.degrees(res.theta_star[0]))
        records.append({"start": i, "theta0_x_deg": start, "theta_star_x_deg": x,
                        "final_cost": float(res.cost_trace[-1]), "iterations": res.iterations,
                        "termination": res.termination, "error_deg": abs(x - oracle_deg)})
        traces[f"s{i}"] = [float(c) for c in res.cost_trace]
    summary = {"oracle_theta_x_deg": oracle_deg, "oracle_cost": oracle_cost,
               "max_error_deg": max(r["error_deg"] for r in records),
               "offset": spec.offset, "sigma_b": sigma_b,
               "oracle_step_deg": spec.oracle_step_deg}
    hist = {"theta_x_deg": grid_deg.tolist(), "cost": f_grid.tolist()}
    return MetricsReport("offset1d", records, hist, summary, traces)


def run_experiment(spec: ExperimentSpec) -> MetricsReport:
    runners = {"test1": run_test1, "test2": run_test2, "test3": run_test3,
               "offset1d": run_offset1d}
    return runners[spec.which](spec)
