"""
curvewarn - curve warning from optimal rider trajectories.
"""

import dataclasses
import json
import logging
import sys
from pathlib import Path

import click

from curvewarn.colors import Theme
from curvewarn.config import ScenarioConfig, load_config
from curvewarn.err import CurveWarnError, MissingProfileLink

EXIT_ERROR = 3

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"

POSITIVE = click.FloatRange(min=0.0, min_open=True)


class CurveWarnGroup(click.Group):
    """
    Group whose usage errors exit with the error status, not click's 2.

    Errors a command does not handle itself exit with the same status so
    they never read as a risk level.
    """

    def main(self, *args, **kwargs):
        kwargs.pop("standalone_mode", None)
        try:
            return super().main(*args, standalone_mode=False, **kwargs)
        except click.ClickException as exc:
            exc.show()
            sys.exit(EXIT_ERROR)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_ERROR)
        except (CurveWarnError, ValueError) as exc:
            _fail(exc)


def _fail(exc: Exception):
    click.echo(f"{Theme.ERROR}error:{Theme.RESET} {exc}", err=True)
    sys.exit(EXIT_ERROR)


def _configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.WARNING
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.ERROR
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


# ---------------------------------------------------------------------------
# scenario options
# ---------------------------------------------------------------------------


def _scenario_options(func):
    """Flags that override fields of the scenario configuration."""
    options = [
        click.argument("config_path", required=False, type=click.Path(dir_okay=False)),
        click.option("--profile", "profile_path", type=click.Path(dir_okay=False), help="Road profile JSON."),
        click.option("--output-dir", type=click.Path(file_okay=False), help="Artifact directory."),
        click.option("--horizon", type=POSITIVE, help="Look-ahead length in metres."),
        click.option("--d-s", type=POSITIVE, help="Spatial step in metres."),
        click.option("--s0", type=float, help="Initial arc length (no GPS trace)."),
        click.option("--speed", type=POSITIVE, help="Initial speed in m/s (no GPS trace)."),
        click.option("--lane-offset", "n", type=float, help="Initial n in metres (no GPS trace)."),
        click.option("--roll", "phi", type=float, help="Initial roll in rad (no GPS trace)."),
        click.option("--theta1", type=float, help="Safe/intermediate jerk threshold."),
        click.option("--theta2", type=float, help="Intermediate/danger jerk threshold."),
        click.option("--window", "window_m", type=POSITIVE, help="Classify only the first metres."),
        click.option("--max-iter", type=click.IntRange(min=1), help="SQP iteration limit."),
        click.option("--slope/--no-slope", default=None, help="Include the road slope."),
        click.option("--roll-lane/--no-roll-lane", default=None, help="Roll-dependent lane."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _scenario(config_path, profile_path=None, output_dir=None, **flags) -> ScenarioConfig:
    try:
        config = load_config(config_path) if config_path else ScenarioConfig()
    except CurveWarnError as exc:
        _fail(exc)
    paths = config.paths
    if profile_path:
        paths = dataclasses.replace(paths, profile=Path(profile_path))
    if output_dir:
        paths = dataclasses.replace(paths, output_dir=Path(output_dir))
    if paths.profile is None and paths.trace is None and paths.polyline is None:
        raise click.UsageError("Give a scenario file or --profile.")

    ocp_changes = {}
    d_s = flags.get("d_s") or config.ocp.d_s
    length = flags.get("horizon") or config.ocp.N * config.ocp.d_s
    if flags.get("d_s") is not None or flags.get("horizon") is not None:
        ocp_changes.update(d_s=d_s, N=int(round(length / d_s)))
    for key, field_name in (
        ("max_iter", "max_iter"),
        ("slope", "include_slope"),
        ("roll_lane", "include_roll_lane"),
    ):
        if flags.get(key) is not None:
            ocp_changes[field_name] = flags[key]
    initial_changes = {k: flags[k] for k in ("s0", "speed", "n", "phi") if flags.get(k) is not None}
    risk_changes = {k: flags[k] for k in ("theta1", "theta2") if flags.get(k) is not None}
    window_m = flags["window_m"] if flags.get("window_m") is not None else config.window_m
    try:
        return config.replace(
            paths=paths,
            ocp=dataclasses.replace(config.ocp, **ocp_changes),
            initial=dataclasses.replace(config.initial, **initial_changes),
            risk=dataclasses.replace(config.risk, **risk_changes),
            window_m=window_m,
        )
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise click.UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# main
# ---------------------------------------------------------------------------


@click.group(cls=CurveWarnGroup, invoke_without_command=True)
@click.version_option(package_name="curvewarn", prog_name="curvewarn")
@click.option("-v", "--verbose", is_flag=True, help="Log solver progress.")
@click.option("-q", "--quiet", is_flag=True, help="Log errors only.")
@click.pass_context
def main(ctx, verbose, quiet):
    """curvewarn - curve warning from optimal rider trajectories."""
    _configure_logging(verbose, quiet)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


@main.command()
@_scenario_options
@click.option("--json", "as_json", is_flag=True, help="Print the risk JSON instead of the summary.")
def run(config_path, profile_path, output_dir, as_json, **flags):
    """Solve one scenario and classify the risk (exit 0 safe, 1, 2 danger)."""
    from curvewarn.scenario import render_summary, run_scenario

    config = _scenario(config_path, profile_path, output_dir, **flags)
    try:
        result = run_scenario(config)
    except CurveWarnError as exc:
        _fail(exc)
    if as_json:
        click.echo(json.dumps(result.report.to_dict(), indent=2, sort_keys=True))
    else:
        click.echo(render_summary(result), nl=False)
    sys.exit(result.exit_code)


@main.command("sweep-horizon")
@_scenario_options
@click.option("--horizons", help="Comma-separated horizon lengths in metres.")
@click.option("-j", "--jobs", type=click.IntRange(min=1), help="Horizons solved concurrently.")
def sweep_horizon(config_path, profile_path, output_dir, horizons, jobs, **flags):
    """Solve the scenario for several horizon lengths."""
    from curvewarn.scenario import run_horizon_sweep

    config = _scenario(config_path, profile_path, output_dir, **flags)
    lengths = None
    if horizons:
        try:
            lengths = [float(h) for h in horizons.split(",") if h.strip()]
        except ValueError as exc:
            raise click.UsageError(f"--horizons: {exc}") from exc
        if not lengths or any(h <= 0 for h in lengths):
            raise click.UsageError("--horizons needs positive lengths.")
    try:
        rows = run_horizon_sweep(config, lengths, jobs)
    except CurveWarnError as exc:
        _fail(exc)

    click.echo(f"{Theme.HEADER}{'horizon':>8} {'N':>5} {'status':>10} {'min jx':>9} {'jx(0)':>9}  risk{Theme.RESET}")
    for row in rows:
        if row.get("error"):
            click.echo(f"{row['horizon']:8.0f} {row['N']:5d} {Theme.ERROR}{row['error']}{Theme.RESET}")
            continue
        click.echo(
            f"{row['horizon']:8.0f} {row['N']:5d} {row['status']:>10} "
            f"{row['min_jerk']:9.3f} {row['initial_jx']:9.3f}  "
            f"{Theme.level(row['overall'])}{row['overall']}{Theme.RESET}"
        )


@main.command("ablate-slope")
@_scenario_options
def ablate_slope(config_path, profile_path, output_dir, **flags):
    """Compare the minimum jerk with and without the road slope."""
    from curvewarn.scenario import run_slope_ablation

    config = _scenario(config_path, profile_path, output_dir, **flags)
    try:
        payload = run_slope_ablation(config)
    except CurveWarnError as exc:
        _fail(exc)
    for label in ("with_slope", "without_slope"):
        row = payload[label]
        click.echo(
            f"{label:>14}: min jx {row['min_jerk']:.3f} m/s^3 at s={row['worst_s']:.1f} m, "
            f"{Theme.level(row['overall'])}{row['overall']}{Theme.RESET}"
        )
    click.echo(f"{'difference':>14}: {payload['min_jerk_difference']:+.3f} m/s^3")


@main.command("ablate-roll-lane")
@_scenario_options
def ablate_roll_lane(config_path, profile_path, output_dir, **flags):
    """Compare the solution with and without the roll-dependent lane."""
    from curvewarn.scenario import run_roll_lane_ablation

    config = _scenario(config_path, profile_path, output_dir, **flags)
    try:
        payload = run_roll_lane_ablation(config)
    except CurveWarnError as exc:
        _fail(exc)
    for label in ("with_roll_lane", "without_roll_lane"):
        row = payload[label]
        click.echo(f"{label:>18}: objective {row['objective']:.3f}, min jx {row['min_jerk']:.3f} m/s^3")
    click.echo(f"{'max roll':>18}: {payload['max_roll']:.3f} rad")
    click.echo(f"{'max lane shrink':>18}: {payload['max_shrink']:.2f} m ({100 * payload['max_shrink_fraction']:.0f}%)")
    if not payload["monotone"]:
        click.echo(f"{Theme.WARNING}objective decreased with the tighter lane{Theme.RESET}", err=True)


@main.command()
@click.argument("graph_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="CSV file (default stdout).")
@click.option("--sigma-gps", type=float, default=None, help="GPS noise in metres.")
@click.option("--beta", type=float, default=None, help="Route/great-circle mismatch scale in metres.")
@click.option("--radius", type=float, default=None, help="Candidate search radius in metres.")
def match(graph_path, trace_path, output, sigma_gps, beta, radius):
    """Map-match a GPS trace onto a road graph."""
    from curvewarn.matching import (
        MatchingParams,
        load_graph,
        load_trace,
        matched_arclength,
        viterbi_match,
        write_matches,
    )

    changes = {k: v for k, v in (("sigma_gps", sigma_gps), ("beta", beta), ("radius", radius)) if v is not None}
    try:
        params = MatchingParams(**changes)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    try:
        graph = load_graph(graph_path)
        path = viterbi_match(load_trace(trace_path), graph, params)
        try:
            s = matched_arclength(path, graph)
        except MissingProfileLink:
            s = None
    except CurveWarnError as exc:
        _fail(exc)

    rows = path.to_rows(s)
    if output:
        write_matches(rows, output)
        click.echo(f"Matched {len(path)} fixes onto {len(path.edges)} edges -> {output}")
    else:
        click.echo("t,lat,lon,edge,offset,distance,s")
        for row in rows:
            s_text = "" if row["s"] is None else f"{row['s']:.6f}"
            click.echo(
                f"{row['t']:.6f},{row['lat']:.6f},{row['lon']:.6f},{row['edge']},"
                f"{row['offset']:.6f},{row['distance']:.6f},{s_text}"
            )
    if path.dropped:
        click.echo(f"{Theme.WARNING}dropped fixes: {list(path.dropped)}{Theme.RESET}", err=True)
    if path.breaks:
        click.echo(f"{Theme.WARNING}chain restarted at fixes: {list(path.breaks)}{Theme.RESET}", err=True)


@main.command()
@click.argument("polyline_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("output", type=click.Path(dir_okay=False))
@click.option("--spacing", type=float, default=1.0, show_default=True, help="Knot spacing in metres.")
@click.option("--width", type=float, default=None, help="Lane width in metres.")
@click.option("--speed-limit", type=float, default=None, help="Speed limit in m/s.")
def profile(polyline_path, output, spacing, width, speed_limit):
    """Derive a road profile from a [lat, lon, ele] polyline."""
    from curvewarn.road import (
        DEFAULT_U_LIMIT,
        DEFAULT_WIDTH,
        load_polyline,
        profile_from_polyline,
        save_profile,
    )

    try:
        road = profile_from_polyline(
            load_polyline(polyline_path),
            spacing,
            width=width or DEFAULT_WIDTH,
            u_limit=speed_limit or DEFAULT_U_LIMIT,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    except CurveWarnError as exc:
        _fail(exc)
    save_profile(road, output)
    click.echo(f"Profile of {road.length:.1f} m with {len(road.s_grid)} knots -> {output}")


@main.command()
@click.argument("kind", type=click.Choice(["straight", "curve", "s-curve"]))
@click.argument("output", type=click.Path(dir_okay=False))
@click.option("--radius", type=float, default=50.0, show_default=True)
@click.option("--lead-in", type=float, default=600.0, show_default=True)
@click.option("--arc", type=float, default=80.0, show_default=True)
@click.option("--lead-out", type=float, default=600.0, show_default=True)
@click.option("--length", type=float, default=1200.0, show_default=True, help="Straight length.")
@click.option("--right", is_flag=True, help="Curve to the right.")
@click.option("--sigma", type=float, default=0.0, show_default=True, help="Slope, descending positive.")
@click.option("--width", type=float, default=3.5, show_default=True)
@click.option("--speed-limit", type=float, default=22.2, show_default=True)
def synth(kind, output, radius, lead_in, arc, lead_out, length, right, sigma, width, speed_limit):
    """Write a synthetic road profile."""
    from curvewarn.road import curve_profile, s_curve_profile, save_profile, straight_profile

    common = {"sigma": sigma, "width": width, "u_limit": speed_limit}
    try:
        if kind == "straight":
            road = straight_profile(length, **common)
        elif kind == "curve":
            road = curve_profile(radius, lead_in, arc, lead_out, left=not right, **common)
        else:
            road = s_curve_profile(radius, lead_in, arc, lead_out, **common)
    except (ValueError, CurveWarnError) as exc:
        raise click.UsageError(str(exc)) from exc
    save_profile(road, output)
    click.echo(f"{kind} profile of {road.length:.1f} m -> {output}")


@main.command("speed-profile")
@click.argument("profile_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--s0", type=float, default=0.0, show_default=True)
@click.option("--length", type=float, default=500.0, show_default=True)
@click.option("--speed", type=float, required=True, help="Start speed in m/s.")
@click.option("--d-s", type=float, default=1.0, show_default=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="CSV file.")
def speed_profile_cmd(profile_path, s0, length, speed, d_s, output):
    """Curvature-limited forward-backward speed profile."""
    from curvewarn.road import load_profile
    from curvewarn.scenario import write_csv
    from curvewarn.speed_profile import forward_backward

    try:
        result = forward_backward(load_profile(profile_path), s0, length, speed, d_s=d_s)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    except CurveWarnError as exc:
        _fail(exc)
    if output:
        write_csv(output, result.to_rows(), ("s", "v", "v_cap", "a_long"))
    click.echo(f"time {result.time:.2f} s, min speed {result.v.min():.2f} m/s, strongest braking {result.min_accel:.2f} m/s^2")
    if not result.feasible:
        click.echo(f"{Theme.DANGER}start speed cannot be braked down in time{Theme.RESET}")


@main.command("compare-rider")
@_scenario_options
@click.option("--rider", "rider_path", type=click.Path(exists=True, dir_okay=False), help="Rider CSV s,ux,phi,n.")
def compare_rider_cmd(config_path, profile_path, output_dir, rider_path, **flags):
    """Compare a recorded rider trajectory with the optimal one."""
    from curvewarn.scenario import compare_rider, load_rider, run_scenario, write_json

    config = _scenario(config_path, profile_path, output_dir, **flags)
    rider_path = rider_path or config.paths.rider
    if rider_path is None:
        raise click.UsageError("Give --rider or set paths.rider.")
    try:
        result = run_scenario(config)
        comparison = compare_rider(result.solution, load_rider(rider_path))
    except (ValueError, CurveWarnError) as exc:
        _fail(exc)
    if config.paths.output_dir is not None:
        write_json(Path(config.paths.output_dir) / "rider.json", comparison)
    click.echo(f"s {comparison['s_start']:.1f}..{comparison['s_end']:.1f} m ({comparison['samples']} samples)")
    for key, unit in (("ux", "m/s"), ("phi", "rad"), ("n", "m")):
        row = comparison[key]
        click.echo(f"{key:>4}: rms {row['rms']:.3f} {unit}, max {row['max_abs']:.3f} {unit}")


if __name__ == "__main__":
    main()
