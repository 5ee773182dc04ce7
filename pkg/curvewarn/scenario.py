"""
Scenario pipeline: match, fuse, solve, classify, and the ablation studies.

Artifacts are data only and reproducible: the trajectory CSV uses a fixed
float format and the JSON files are written with sorted keys.
"""

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from jinja2 import Environment, FileSystemLoader

from curvewarn.colors import Theme
from curvewarn.common import StateSpace
from curvewarn.config import ScenarioConfig
from curvewarn.err import ConfigError, CurveWarnError, ParseError
from curvewarn.fusion import InitialState, fuse_trace, load_perception
from curvewarn.matching import load_graph, load_trace, matched_profile_id, viterbi_match
from curvewarn.ocp import OcpSolution, plan_trajectory
from curvewarn.risk import RiskReport, classify_maneuver
from curvewarn.road import (
    FileMapProvider,
    RoadProfile,
    load_polyline,
    load_profile,
    profile_from_polyline,
)

logger = logging.getLogger(__name__)

TRAJECTORY_FIELDS = (
    "s",
    "n",
    "alpha",
    "phi",
    "ux",
    "wpsi",
    "wphi",
    "ax",
    "apsi",
    "jx",
    "jpsi",
    "gg_ratio",
    "n_lo",
    "n_hi",
    "risk",
)
RIDER_FIELDS = ("s", "ux", "phi", "n")
ROLL_LANE_PHI = 0.49  # stages with at least this much roll


@dataclass(frozen=True)
class ScenarioResult:
    config: ScenarioConfig
    initial: InitialState
    solution: OcpSolution
    report: RiskReport

    @property
    def exit_code(self) -> int:
        return self.report.overall.exit_code


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------


def resolve_profile(config: ScenarioConfig) -> RoadProfile:
    """
    Road profile of a scenario: an explicit profile file, the profile the
    GPS trace matches onto, or one derived from a polyline.
    """
    paths = config.paths
    if paths.profile is not None:
        return load_profile(paths.profile)
    if paths.trace is not None and paths.graph is not None and paths.profiles is not None:
        graph = load_graph(paths.graph)
        path = viterbi_match(load_trace(paths.trace), graph, config.matching)
        return FileMapProvider(paths.profiles).profile(matched_profile_id(path, graph))
    if paths.polyline is not None:
        return profile_from_polyline(load_polyline(paths.polyline), config.ocp.d_s)
    raise ConfigError("no road profile configured", "paths", "profile")


def resolve_initial(config: ScenarioConfig, profile: RoadProfile) -> InitialState:
    paths = config.paths
    if paths.trace is not None:
        if paths.graph is None or paths.perception is None:
            raise ConfigError("a GPS trace needs graph and perception files", "paths", "trace")
        return fuse_trace(
            load_trace(paths.trace),
            load_graph(paths.graph),
            load_perception(paths.perception),
            profile,
            config.bike,
            config.matching,
        )
    init = config.initial
    road = profile.query(init.s0)
    n = 0.5 * road.width if init.n is None else init.n
    if init.w_psi is None:
        w_psi = road.kappa * init.speed / (1.0 - n * road.kappa)
    else:
        w_psi = init.w_psi
    x0 = StateSpace(n, init.alpha, init.phi, init.speed, w_psi, init.w_phi, init.a_x, init.a_psi)
    x0.check_geometry(road.kappa)
    return InitialState(init.s0, x0)


def _solve(profile: RoadProfile, initial: InitialState, config: ScenarioConfig):
    ocp = dataclasses.replace(config.ocp, s0=initial.s0)
    solution = plan_trajectory(profile, initial.x0, ocp, config.bike)
    report = classify_maneuver(solution, config.risk, config.window_m)
    return solution, report


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float | np.floating):
        return f"{float(value):.6f}"
    return str(value)


def trajectory_rows(solution: OcpSolution, report: RiskReport | None = None) -> list[dict]:
    rows = []
    for k, s in enumerate(solution.s_grid):
        x = solution.x[k]
        has_input = k < len(solution.u)
        level = None
        if report is not None and k < len(report.per_step):
            level = report.per_step[k].value
        rows.append(
            {
                "s": float(s),
                "n": float(x[0]),
                "alpha": float(x[1]),
                "phi": float(x[2]),
                "ux": float(x[3]),
                "wpsi": float(x[4]),
                "wphi": float(x[5]),
                "ax": float(x[6]),
                "apsi": float(x[7]),
                "jx": float(solution.u[k, 0]) if has_input else None,
                "jpsi": float(solution.u[k, 1]) if has_input else None,
                "gg_ratio": float(solution.gg_ratio[k]),
                "n_lo": float(solution.n_lo[k]),
                "n_hi": float(solution.n_hi[k]),
                "risk": level,
            }
        )
    return rows


def write_csv(path, rows: list[dict], fields) -> None:
    with Path(path).open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in fields})


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_artifacts(result: ScenarioResult, output_dir) -> tuple[Path, Path]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj = out / "trajectory.csv"
    risk = out / "risk.json"
    write_csv(traj, trajectory_rows(result.solution, result.report), TRAJECTORY_FIELDS)
    write_json(risk, result.report.to_dict())
    return traj, risk


def render_summary(result: ScenarioResult, theme=None) -> str:
    """Human summary of a run rendered from the packaged template."""
    template_dir = os.path.join(os.path.dirname(__file__), "templates")
    env = Environment(loader=FileSystemLoader(template_dir), keep_trailing_newline=True)
    template = env.get_template("summary.txt.j2")
    sol, report = result.solution, result.report
    return template.render(
        s0=result.initial.s0,
        x0=result.initial.x0,
        clamped=result.initial.clamped,
        horizon=sol.s_grid[-1] - sol.s_grid[0],
        solution=sol,
        report=report,
        counts=report.counts,
        theme=theme or Theme,
    )


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


def run_scenario(config: ScenarioConfig, output_dir=None) -> ScenarioResult:
    """Match, fuse, solve and classify one scenario; write artifacts if asked."""
    config.check_files()
    profile = resolve_profile(config)
    initial = resolve_initial(config, profile)
    solution, report = _solve(profile, initial, config)
    result = ScenarioResult(config, initial, solution, report)
    out = output_dir if output_dir is not None else config.paths.output_dir
    if out is not None:
        write_artifacts(result, out)
    return result


def _summary_row(horizon: float, solution: OcpSolution, report: RiskReport) -> dict:
    return {
        "horizon": horizon,
        "N": solution.N,
        "status": solution.status.value,
        "objective": solution.objective,
        "min_jerk": report.min_jerk,
        "worst_s": report.worst_s,
        "initial_ax": float(solution.x[0, 6]),
        "initial_jx": float(solution.u[0, 0]),
        "overall": report.overall.value,
        "iterations": solution.iterations,
        "error": None,
    }


def run_horizon_sweep(
    config: ScenarioConfig, horizons=None, jobs: int | None = None, output_dir=None
) -> list[dict]:
    """
    One solve per horizon length from a shared initial state. Failures are
    recorded per horizon; rows come back in the order of ``horizons``.
    """
    config.check_files()
    horizons = tuple(horizons if horizons is not None else config.horizons)
    jobs = jobs or config.jobs
    profile = resolve_profile(config)
    initial = resolve_initial(config, profile)

    def one(horizon: float) -> dict:
        steps = int(round(horizon / config.ocp.d_s))
        try:
            solution, report = _solve(profile, initial, config.with_horizon(horizon))
        except (CurveWarnError, ValueError) as exc:
            logger.warning("Horizon %.0f m failed: %s", horizon, exc)
            return {"horizon": horizon, "N": steps, "error": str(exc)}
        return _summary_row(horizon, solution, report)

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        rows = list(pool.map(one, horizons))
    out = output_dir if output_dir is not None else config.paths.output_dir
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_json(Path(out) / "sweep.json", rows)
    return rows


def _sign(value: float, tol: float = 1e-9) -> int:
    if value > tol:
        return 1
    if value < -tol:
        return -1
    return 0


def run_slope_ablation(config: ScenarioConfig, output_dir=None) -> dict:
    """Solve with and without the road slope and compare the minimum jerk."""
    config.check_files()
    profile = resolve_profile(config)
    initial = resolve_initial(config, profile)
    rows = {}
    for label, flag in (("with_slope", True), ("without_slope", False)):
        cfg = config.replace(ocp=dataclasses.replace(config.ocp, include_slope=flag))
        solution, report = _solve(profile, initial, cfg)
        rows[label] = _summary_row(cfg.ocp.horizon, solution, report)
    diff = rows["with_slope"]["min_jerk"] - rows["without_slope"]["min_jerk"]
    payload = {
        **rows,
        "min_jerk_difference": diff,
        "sign": _sign(diff),
    }
    out = output_dir if output_dir is not None else config.paths.output_dir
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_json(Path(out) / "ablate_slope.json", payload)
    return payload


def run_roll_lane_ablation(config: ScenarioConfig, output_dir=None) -> dict:
    """
    Solve with and without the roll-dependent lane and report how much of
    the lane the roll takes away at the stages of large roll.
    """
    config.check_files()
    profile = resolve_profile(config)
    initial = resolve_initial(config, profile)
    solutions = {}
    rows = {}
    for label, flag in (("with_roll_lane", True), ("without_roll_lane", False)):
        cfg = config.replace(ocp=dataclasses.replace(config.ocp, include_roll_lane=flag))
        solution, report = _solve(profile, initial, cfg)
        solutions[label] = solution
        rows[label] = _summary_row(cfg.ocp.horizon, solution, report)

    sol = solutions["with_roll_lane"]
    width = profile.query_many(sol.s_grid).width
    shrink = width - (sol.n_hi - sol.n_lo)
    rolled = np.abs(sol.x[:, 2]) >= ROLL_LANE_PHI
    tol = config.ocp.feas_tol
    payload = {
        **rows,
        "objective_increase": rows["with_roll_lane"]["objective"]
        - rows["without_roll_lane"]["objective"],
        "monotone": rows["with_roll_lane"]["objective"]
        >= rows["without_roll_lane"]["objective"] - tol,
        "max_roll": float(np.max(np.abs(sol.x[:, 2]))),
        "rolled_stages": int(np.sum(rolled)),
        "min_shrink_at_roll": float(np.min(shrink[rolled])) if rolled.any() else None,
        "max_shrink": float(np.max(shrink)),
        "max_shrink_fraction": float(np.max(shrink / width)),
    }
    out = output_dir if output_dir is not None else config.paths.output_dir
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_json(Path(out) / "ablate_roll_lane.json", payload)
    return payload


# ---------------------------------------------------------------------------
# rider comparison
# ---------------------------------------------------------------------------


def load_rider(path) -> dict[str, np.ndarray]:
    """Recorded rider trajectory, CSV ``s,ux,phi,n`` sorted by s."""
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise ParseError(path, f"cannot read file: {exc.strerror}") from exc
    columns: dict[str, list[float]] = {k: [] for k in RIDER_FIELDS}
    with handle:
        reader = csv.DictReader(handle)
        missing = [f for f in RIDER_FIELDS if f not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(path, f"missing columns {missing}", line=1)
        for row in reader:
            try:
                for key in RIDER_FIELDS:
                    columns[key].append(float(row[key]))
            except (TypeError, ValueError) as exc:
                raise ParseError(path, str(exc), line=reader.line_num) from exc
    if len(columns["s"]) < 2:
        raise ParseError(path, "a rider trajectory needs at least two rows")
    order = np.argsort(columns["s"])
    return {k: np.asarray(v)[order] for k, v in columns.items()}


def compare_rider(solution: OcpSolution, rider: dict[str, np.ndarray]) -> dict:
    """
    RMS and maximum deviation of the rider from the optimal trajectory for
    speed, roll and lane position over the arc lengths both cover.
    """
    s = solution.s_grid
    mask = (s >= rider["s"][0]) & (s <= rider["s"][-1])
    if not mask.any():
        raise ValueError("Rider trajectory does not overlap the optimised horizon.")
    out: dict = {"s_start": float(s[mask][0]), "s_end": float(s[mask][-1]), "samples": int(mask.sum())}
    for key, column in (("ux", 3), ("phi", 2), ("n", 0)):
        rider_values = np.interp(s[mask], rider["s"], rider[key])
        delta = rider_values - solution.x[mask, column]
        out[key] = {
            "rms": float(math.sqrt(np.mean(delta**2))),
            "max_abs": float(np.max(np.abs(delta))),
            "mean": float(np.mean(delta)),
        }
    return out
