import itertools
import json
import math

import numpy as np
import pytest

from curvewarn.err import MissingProfileLink, NoCandidates, NoPath, ParseError
from curvewarn.geo import LocalProjection
from curvewarn.matching import (
    Candidate,
    GpsFix,
    GpsTrace,
    MatchedPath,
    MatchedPoint,
    MatchingParams,
    RoadGraph,
    candidates,
    emission_logprob,
    grid_graph,
    load_graph,
    load_trace,
    matched_arclength,
    matched_profile_id,
    path_logprob,
    transition_logprob,
    viterbi_match,
    write_matches,
)

ORIGIN = LocalProjection(48.0, 11.0)


def _fix(x, y, t=0.0):
    """Fix at grid coordinates (metres east and north of the grid origin)."""
    lat, lon = ORIGIN.inverse(x, y)
    return GpsFix(t, float(lat), float(lon))


def _trace(points):
    return GpsTrace(tuple(_fix(x, y, float(t)) for t, (x, y) in enumerate(points)))


def _line_graph_payload():
    """Three nodes along an eastbound road, both edges linked to one profile."""
    nodes = []
    for name, x in (("a", 0.0), ("b", 50.0), ("c", 100.0)):
        lat, lon = ORIGIN.inverse(x, 0.0)
        nodes.append({"id": name, "lat": float(lat), "lon": float(lon)})
    edges = [
        {"id": "e1", "from": "a", "to": "b", "profile": "road", "profile_offset": 0.0},
        {"id": "e2", "from": "b", "to": "c", "profile": "road", "profile_offset": 50.0},
    ]
    return {"nodes": nodes, "edges": edges}


# ---------------------------------------------------------------------------
# graph and candidates
# ---------------------------------------------------------------------------


def test_grid_graph_layout():
    graph = grid_graph(2, 3)
    assert len(graph) == 7
    assert "r0c0-r0c1" in graph.edges
    assert "r0c2-r1c2" in graph.edges
    assert "r0c1-r0c0" not in graph.edges
    for edge in graph.edges.values():
        assert edge.length == pytest.approx(100.0, abs=0.05)
    assert graph.heading_at("r0c0-r0c1", 10.0) == pytest.approx(0.0, abs=1e-6)
    assert graph.heading_at("r0c0-r1c0", 10.0) == pytest.approx(math.pi / 2, abs=1e-6)


def test_graph_validation():
    with pytest.raises(ValueError):
        grid_graph(1, 1)
    nodes = {"a": (48.0, 11.0), "b": (48.001, 11.0)}
    with pytest.raises(ValueError, match="unknown node"):
        RoadGraph(nodes, [{"id": "e", "source": "a", "target": "z"}])


def test_candidate_on_edge():
    graph = grid_graph(2, 2)
    found = candidates(_fix(50.0, 0.0), graph, radius=30.0)
    assert [c.edge for c in found] == ["r0c0-r0c1"]
    assert found[0].distance == pytest.approx(0.0, abs=0.05)
    assert found[0].offset == pytest.approx(50.0, abs=0.05)


def test_candidates_sorted_by_distance():
    graph = grid_graph(2, 2, spacing=20.0)
    found = candidates(_fix(10.0, 8.0), graph, radius=50.0)
    assert found[0].edge == "r0c0-r0c1"
    assert found[0].distance == pytest.approx(8.0, abs=0.05)
    assert {c.edge for c in found} == set(graph.edges)
    distances = [c.distance for c in found]
    assert distances == sorted(distances)


def test_no_candidates():
    graph = grid_graph(2, 2)
    with pytest.raises(NoCandidates):
        candidates(_fix(500.0, 500.0), graph)
    with pytest.raises(ValueError):
        candidates(_fix(0.0, 0.0), graph, radius=0.0)


# ---------------------------------------------------------------------------
# probabilities
# ---------------------------------------------------------------------------


def test_emission_drops_half_per_sigma_squared():
    assert emission_logprob(4.07) - emission_logprob(0.0) == pytest.approx(-0.5, abs=1e-12)
    assert emission_logprob(0.0, 1.0) == pytest.approx(-0.5 * math.log(2 * math.pi))
    with pytest.raises(ValueError):
        emission_logprob(1.0, 0.0)


def test_transition_penalises_detours():
    graph = grid_graph(2, 2)
    c_i = Candidate("r0c0-r0c1", 0.0, 0.0)
    c_j = Candidate("r0c1-r1c1", 100.0, 0.0)
    value = transition_logprob(c_i, c_j, graph, beta=50.0, straight=100.0)
    assert value + math.log(50.0) == pytest.approx(-2.0, abs=1e-3)


def test_transition_along_one_edge():
    graph = grid_graph(2, 2)
    c_i = Candidate("r0c0-r0c1", 20.0, 0.0)
    c_j = Candidate("r0c0-r0c1", 40.0, 0.0)
    assert transition_logprob(c_i, c_j, graph, beta=20.0, straight=20.0) == pytest.approx(
        -math.log(20.0)
    )


def test_unreachable_transition_is_minus_infinity():
    graph = grid_graph(2, 2)
    up = Candidate("r0c1-r1c1", 50.0, 0.0)
    back = Candidate("r0c0-r0c1", 0.0, 0.0)
    assert transition_logprob(up, back, graph, straight=50.0) == -math.inf
    ahead = Candidate("r0c0-r0c1", 60.0, 0.0)
    behind = Candidate("r0c0-r0c1", 20.0, 0.0)
    assert transition_logprob(ahead, behind, graph, straight=40.0) == -math.inf


def test_short_step_back_is_jitter():
    graph = grid_graph(2, 2)
    ahead = Candidate("r0c0-r0c1", 60.0, 0.0)
    behind = Candidate("r0c0-r0c1", 45.0, 0.0)
    assert transition_logprob(ahead, behind, graph, beta=20.0, straight=15.0) == pytest.approx(
        -math.log(20.0)
    )


def test_transition_needs_fixes_or_distance():
    graph = grid_graph(2, 2)
    c = Candidate("r0c0-r0c1", 0.0, 0.0)
    with pytest.raises(ValueError):
        transition_logprob(c, c, graph)
    with pytest.raises(ValueError):
        transition_logprob(c, c, graph, beta=0.0, straight=0.0)


def test_matching_params_validation():
    with pytest.raises(ValueError):
        MatchingParams(sigma_gps=-1.0)
    with pytest.raises(ValueError):
        MatchingParams(radius=float("nan"))


# ---------------------------------------------------------------------------
# Viterbi
# ---------------------------------------------------------------------------


def _brute_force(trace, graph, params):
    stages = [candidates(fix, graph, params.radius) for fix in trace]
    best = -math.inf
    for chain in itertools.product(*stages):
        total = sum(emission_logprob(c.distance, params.sigma_gps) for c in chain)
        for a, b in itertools.pairwise(chain):
            total += transition_logprob(a, b, graph, params.beta)
        best = max(best, total)
    return best


def test_viterbi_matches_brute_force(rng):
    graph = grid_graph(3, 3)
    params = MatchingParams()
    # eastbound, northbound, eastbound, northbound
    corners = np.array([[0.0, 0.0], [100.0, 0.0], [100.0, 100.0], [200.0, 100.0], [200.0, 200.0]])
    for _ in range(50):
        arc = 100.0 * np.arange(4) + rng.uniform(20.0, 80.0, 4)
        leg = (arc // 100).astype(int)
        frac = (arc % 100) / 100.0
        true = corners[leg] + frac[:, None] * (corners[leg + 1] - corners[leg])
        noisy = true + rng.normal(0.0, 5.0, true.shape)
        trace = _trace(noisy)
        path = viterbi_match(trace, graph, params)
        assert path.breaks == ()
        assert len(path) == 4
        assert path_logprob(path, graph, params) == pytest.approx(
            _brute_force(trace, graph, params), abs=1e-9
        )


def test_single_fix_takes_the_closest_candidate():
    graph = grid_graph(2, 2)
    path = viterbi_match(_trace([(30.0, 6.0)]), graph)
    assert len(path) == 1
    assert path.points[0].edge == "r0c0-r0c1"
    assert path.edges == ["r0c0-r0c1"]


def test_backwards_trace_breaks_the_chain():
    graph = grid_graph(2, 2)
    path = viterbi_match(_trace([(50.0, 0.0), (10.0, 0.0)]), graph, MatchingParams(radius=5.0))
    assert path.breaks == (1,)
    assert [p.index for p in path.points] == [0, 1]


def test_far_fixes_are_dropped():
    graph = grid_graph(2, 2)
    path = viterbi_match(_trace([(20.0, 0.0), (900.0, 900.0), (60.0, 0.0)]), graph)
    assert path.dropped == (1,)
    assert [p.index for p in path.points] == [0, 2]
    assert path.edges == ["r0c0-r0c1"]
    with pytest.raises(NoPath):
        viterbi_match(_trace([(900.0, 900.0)]), graph)


def test_noisy_drive_stays_on_its_road(rng):
    graph = grid_graph(2, 6)
    x_true = 10.0 + 24.0 * np.arange(20)
    noisy = np.column_stack([x_true, np.zeros(20)]) + rng.normal(0.0, 10.0, (20, 2))
    path = viterbi_match(_trace(noisy), graph)
    assert path.dropped == ()
    on_road = [p for p in path.points if p.edge.startswith("r0c") and "-r0c" in p.edge]
    assert len(on_road) >= 18
    errors = []
    for p in on_road:
        col = int(p.edge.split("-")[0][3:])
        errors.append(abs(100.0 * col + p.offset - x_true[p.index]))
    assert np.median(errors) < 15.0


def _staircase(rng, moves):
    """Random east/north route from the grid origin: corners and edge ids."""
    r = c = 0
    corners = [(0.0, 0.0)]
    route = []
    for east in rng.random(moves) < 0.5:
        here = f"r{r}c{c}"
        if east:
            c += 1
        else:
            r += 1
        route.append(f"{here}-r{r}c{c}")
        corners.append((100.0 * c, 100.0 * r))
    return np.array(corners), route


@pytest.mark.slow
def test_noisy_grid_benchmark(rng):
    graph = grid_graph(11, 11)
    params = MatchingParams(sigma_gps=10.0)
    arc = 10.0 + 20.0 * np.arange(50)
    leg = (arc // 100.0).astype(int)
    frac = (arc % 100.0)[:, None] / 100.0
    on_route = matched = found = traversed = right = 0
    for _ in range(100):
        corners, route = _staircase(rng, 10)
        true = corners[leg] + frac * (corners[leg + 1] - corners[leg])
        path = viterbi_match(_trace(true + rng.normal(0.0, 10.0, true.shape)), graph, params)
        edges = path.edges
        on_route += sum(e in route for e in edges)
        matched += len(edges)
        found += len(set(route) & set(edges))
        traversed += len(route)
        right += sum(p.edge == route[leg[p.index]] for p in path.points)
    assert on_route / matched >= 0.95
    assert found / traversed >= 0.95
    # fixes within a few metres of a node cannot be told apart from the next edge
    assert right / (100 * len(arc)) >= 0.8


# ---------------------------------------------------------------------------
# profile links and files
# ---------------------------------------------------------------------------


def _points(graph, placements):
    fix = _fix(0.0, 0.0)
    return MatchedPath(
        tuple(
            MatchedPoint(i, fix, edge, offset, 0.0, 0.0)
            for i, (edge, offset) in enumerate(placements)
        )
    )


def _collinear_graph_payload(lengths):
    """Eastbound chain of edges with no profile offsets, all on one profile."""
    xs = np.concatenate(([0.0], np.cumsum(lengths)))
    nodes = []
    for k, x in enumerate(xs):
        lat, lon = ORIGIN.inverse(float(x), 0.0)
        nodes.append({"id": f"n{k}", "lat": float(lat), "lon": float(lon)})
    edges = [
        {"id": f"e{k + 1}", "from": f"n{k}", "to": f"n{k + 1}", "profile": "road"}
        for k in range(len(lengths))
    ]
    return {"nodes": nodes, "edges": edges}


def test_matched_arclength(write_json):
    graph = load_graph(write_json(_collinear_graph_payload([50.0, 50.0]), "graph.json"))
    path = _points(graph, [("e1", 0.0), ("e1", 35.0), ("e2", 25.0)])
    np.testing.assert_allclose(matched_arclength(path, graph), [0.0, 35.0, 75.0], atol=0.1)
    assert matched_profile_id(path, graph) == "road"


def test_matched_arclength_accumulates_along_route(write_json):
    graph = load_graph(write_json(_collinear_graph_payload([40.0, 40.0]), "graph.json"))
    path = viterbi_match(_trace([(0.0, 0.0), (35.0, 0.0), (75.0, 0.0)]), graph)
    assert [p.edge for p in path.points] == ["e1", "e1", "e2"]
    np.testing.assert_allclose(matched_arclength(path, graph), [0.0, 35.0, 75.0], atol=0.1)


def test_matched_arclength_starts_at_profile_offset(write_json):
    payload = _collinear_graph_payload([50.0, 50.0, 50.0])
    payload["edges"][1]["profile_offset"] = 300.0
    graph = load_graph(write_json(payload, "graph.json"))
    path = _points(graph, [("e2", 10.0), ("e2", 5.0), ("e3", 20.0)])
    np.testing.assert_allclose(
        matched_arclength(path, graph), [310.0, 305.0, 370.0], atol=0.1
    )


def test_missing_profile_links(write_json):
    payload = _line_graph_payload()
    payload["edges"][1]["profile"] = "other"
    graph = load_graph(write_json(payload, "graph.json"))
    with pytest.raises(MissingProfileLink, match="other"):
        matched_arclength(_points(graph, [("e1", 10.0), ("e2", 10.0)]), graph)
    grid = grid_graph(2, 2)
    with pytest.raises(MissingProfileLink):
        matched_arclength(_points(grid, [("r0c0-r0c1", 1.0)]), grid)
    with pytest.raises(NoPath):
        matched_profile_id(MatchedPath(()), graph)


def test_load_graph_errors(write_json, tmp_path):
    payload = _line_graph_payload()
    payload["edges"][0]["length"] = 80.0
    with pytest.raises(ParseError, match="differs"):
        load_graph(write_json(payload, "bad_length.json"))
    broken = tmp_path / "broken.json"
    broken.write_text('{"nodes": [\n')
    with pytest.raises(ParseError) as info:
        load_graph(broken)
    assert info.value.line == 2
    with pytest.raises(ParseError) as info:
        load_graph(write_json({"nodes": [{"id": "a"}], "edges": []}, "nodes.json"))
    assert info.value.field == "nodes"


def test_load_trace(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("t,lat,lon\n0,48.0,11.0\n1,48.0001,11.0\n")
    trace = load_trace(path)
    assert len(trace) == 2
    assert trace.fixes[1].lat == 48.0001

    path.write_text("t,lat\n0,48.0\n")
    with pytest.raises(ParseError) as info:
        load_trace(path)
    assert info.value.line == 1

    path.write_text("t,lat,lon\n0,48.0,11.0\n0,48.0,11.0\n")
    with pytest.raises(ParseError, match="increasing"):
        load_trace(path)

    path.write_text("t,lat,lon\n0,48.0,x\n")
    with pytest.raises(ParseError) as info:
        load_trace(path)
    assert info.value.line == 2


def test_write_matches(tmp_path):
    graph = grid_graph(2, 2)
    path = viterbi_match(_trace([(20.0, 0.0), (60.0, 0.0)]), graph)
    out = tmp_path / "matches.csv"
    write_matches(path.to_rows(), out)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,lat,lon,edge,offset,distance,s"
    assert len(lines) == 3
    assert lines[1].split(",")[3] == "r0c0-r0c1"
    assert lines[1].endswith(",")
    write_matches(path.to_rows(s=[5.0, 45.0]), out)
    assert out.read_text().splitlines()[2].endswith(",45.000000")
