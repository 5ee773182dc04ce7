import json

import pytest
from click.testing import CliRunner

from curvewarn.cli import EXIT_ERROR, main
from curvewarn.geo import LocalProjection


@pytest.fixture
def road(tmp_path):
    """A 300 m straight written by the synth command."""
    path = tmp_path / "road.json"
    result = CliRunner().invoke(main, ["synth", "straight", str(path), "--length", "300"])
    assert result.exit_code == 0
    return path


def _run(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def test_cli_help():
    result = _run("--help")
    assert result.exit_code == 0
    assert "curvewarn - curve warning" in result.output
    for command in ("run", "sweep-horizon", "ablate-slope", "match", "profile", "synth"):
        assert command in result.output


def test_cli_version():
    result = _run("--version")
    assert result.exit_code == 0
    assert "curvewarn" in result.output


def test_no_command_prints_help():
    result = _run()
    assert result.exit_code == 0
    assert "Usage:" in result.output


def test_synth(tmp_path):
    path = tmp_path / "curve.json"
    result = _run("synth", "curve", path, "--radius", "80", "--lead-in", "100", "--lead-out", "100")
    assert result.exit_code == 0
    assert "curve profile of 280.0 m" in result.output
    assert path.exists()


def test_run_safe_cruise(road, tmp_path):
    out = tmp_path / "out"
    result = _run("run", "--profile", road, "--horizon", 30, "--speed", 22.2, "--output-dir", out)
    assert result.exit_code == 0
    assert "risk: SAFE" in result.output
    assert (out / "trajectory.csv").exists()
    assert (out / "risk.json").exists()


def test_run_json(road):
    result = _run("run", "--profile", road, "--horizon", 30, "--speed", 22.2, "--json")
    assert result.exit_code == 0
    assert json.loads(result.stdout)["overall"] == "safe"


def test_run_from_scenario_file(road, tmp_path):
    scenario = tmp_path / "scenario.toml"
    scenario.write_text(f'[paths]\nprofile = "{road.name}"\n\n[initial]\nspeed = 22.2\n\n[ocp]\nN = 30\n')
    result = _run("run", scenario)
    assert result.exit_code == 0


@pytest.mark.slow
def test_run_late_braking_warns(tmp_path):
    path = tmp_path / "curve.json"
    _run("synth", "curve", path, "--lead-in", "300", "--lead-out", "400")
    result = _run("run", "--profile", path, "--s0", 230, "--speed", 22.0, "--horizon", 200)
    assert result.exit_code in (1, 2)
    assert "risk: SAFE" not in result.output


def test_run_without_road_is_a_usage_error():
    result = _run("run")
    assert result.exit_code == EXIT_ERROR
    assert "--profile" in result.output


def test_run_missing_files_fail(tmp_path):
    result = _run("run", "--profile", tmp_path / "none.json")
    assert result.exit_code == EXIT_ERROR
    assert "error:" in result.output
    result = _run("run", tmp_path / "none.toml")
    assert result.exit_code == EXIT_ERROR


def test_bad_option_value_exits_with_error_status(road):
    result = _run("run", "--profile", road, "--horizon", "far")
    assert result.exit_code == EXIT_ERROR
    result = _run("run", "--profile", road, "--horizon", 5)
    assert result.exit_code == EXIT_ERROR


@pytest.mark.parametrize(
    "option",
    [("--window", -5), ("--window", 0), ("--speed", -1), ("--d-s", 0), ("--max-iter", 0)],
)
def test_out_of_range_flags_exit_with_error_status(road, option):
    result = _run("run", "--profile", road, "--horizon", 30, *option)
    assert result.exit_code == EXIT_ERROR


def test_negative_window_in_scenario_file(road, tmp_path):
    scenario = tmp_path / "scenario.toml"
    scenario.write_text(f'[paths]\nprofile = "{road.name}"\n\n[risk]\nwindow_m = -5.0\n')
    result = _run("run", scenario)
    assert result.exit_code == EXIT_ERROR
    assert "window_m" in result.output


def test_unexpected_value_errors_exit_with_error_status(road, monkeypatch):
    def broken(config):
        raise ValueError("bad input")

    monkeypatch.setattr("curvewarn.scenario.run_scenario", broken)
    result = _run("run", "--profile", road, "--horizon", 30)
    assert result.exit_code == EXIT_ERROR
    assert "bad input" in result.output


def test_sweep_horizon(road):
    result = _run("sweep-horizon", "--profile", road, "--speed", 22.2, "--horizons", "30,5")
    assert result.exit_code == 0
    lines = [line for line in result.output.splitlines() if not line.startswith("WARNING")]
    assert "horizon" in lines[0]
    assert "safe" in lines[1]
    assert "at least" in lines[2]
    result = _run("sweep-horizon", "--profile", road, "--horizons", "30,-1")
    assert result.exit_code == EXIT_ERROR


def test_ablations(road, tmp_path):
    result = _run("ablate-slope", "--profile", road, "--speed", 22.2, "--horizon", 30, "--output-dir", tmp_path)
    assert result.exit_code == 0
    assert "difference" in result.output
    assert (tmp_path / "ablate_slope.json").exists()
    result = _run("ablate-roll-lane", "--profile", road, "--speed", 22.2, "--horizon", 30)
    assert result.exit_code == 0
    assert "max lane shrink" in result.output


def test_match(tmp_path):
    proj = LocalProjection(48.0, 11.0)
    nodes = []
    for name, x in (("a", 0.0), ("b", 200.0)):
        lat, lon = proj.inverse(x, 0.0)
        nodes.append({"id": name, "lat": float(lat), "lon": float(lon)})
    graph = tmp_path / "graph.json"
    graph.write_text(
        json.dumps({"nodes": nodes, "edges": [{"id": "e1", "from": "a", "to": "b", "profile": "road", "profile_offset": 100.0}]})
    )
    trace = tmp_path / "trace.csv"
    rows = ["t,lat,lon"]
    for t in range(4):
        lat, lon = proj.inverse(20.0 + 30.0 * t, 3.0)
        rows.append(f"{t},{float(lat)},{float(lon)}")
    trace.write_text("\n".join(rows) + "\n")

    result = _run("match", graph, trace)
    assert result.exit_code == 0
    lines = result.stdout.splitlines()
    assert lines[0] == "t,lat,lon,edge,offset,distance,s"
    assert len(lines) == 5
    assert lines[1].split(",")[3] == "e1"
    assert float(lines[4].split(",")[-1]) == pytest.approx(210.0, abs=0.01)

    out = tmp_path / "matches.csv"
    result = _run("match", graph, trace, "-o", out)
    assert result.exit_code == 0
    assert "Matched 4 fixes onto 1 edges" in result.output
    assert out.exists()

    result = _run("match", graph, trace, "--beta", -1)
    assert result.exit_code == EXIT_ERROR


def test_profile_from_polyline(tmp_path):
    line = tmp_path / "line.json"
    line.write_text(json.dumps([[48.0, 11.0 + 0.0001 * k, 500.0] for k in range(40)]))
    out = tmp_path / "road.json"
    result = _run("profile", line, out, "--width", 3.0)
    assert result.exit_code == 0
    assert "Profile of" in result.output
    assert out.exists()

    line.write_text("[[48.0, 11.0]]")
    result = _run("profile", line, out)
    assert result.exit_code == EXIT_ERROR


def test_speed_profile(tmp_path):
    road = tmp_path / "curve.json"
    _run("synth", "curve", road, "--lead-in", "300", "--lead-out", "300", "--speed-limit", "30")
    out = tmp_path / "speed.csv"
    result = _run("speed-profile", road, "--speed", 30, "--length", 400, "-o", out)
    assert result.exit_code == 0
    assert "min speed 18.71 m/s" in result.output
    assert "cannot be braked" not in result.output
    assert out.read_text().splitlines()[0] == "s,v,v_cap,a_long"

    result = _run("speed-profile", road, "--speed", 30, "--s0", 290, "--length", 100)
    assert result.exit_code == 0
    assert "cannot be braked" in result.output


def test_compare_rider(road, tmp_path):
    rider = tmp_path / "rider.csv"
    rider.write_text("s,ux,phi,n\n0,22.2,0,1.75\n20,22.2,0,1.75\n")
    out = tmp_path / "out"
    result = _run(
        "compare-rider", "--profile", road, "--speed", 22.2, "--horizon", 30,
        "--rider", rider, "--output-dir", out,
    )
    assert result.exit_code == 0
    assert "21 samples" in result.output
    assert json.loads((out / "rider.json").read_text())["samples"] == 21

    result = _run("compare-rider", "--profile", road, "--speed", 22.2, "--horizon", 30)
    assert result.exit_code == EXIT_ERROR
