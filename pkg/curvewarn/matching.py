"""
HMM map matching of GPS traces onto a directed road graph.

Hidden states are candidate projections of each fix onto nearby edges. The
emission model is a zero-mean Gaussian on the projection distance; the
transition model is an exponential density on the difference between the
route distance of two candidates and the great-circle distance of their
fixes. The most likely candidate sequence is found with the Viterbi
algorithm.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from curvewarn.err import MissingProfileLink, NoCandidates, NoPath, ParseError
from curvewarn.geo import LocalProjection, great_circle

logger = logging.getLogger(__name__)

SIGMA_GPS = 4.07
BETA = 20.0
RADIUS = 50.0
LENGTH_TOLERANCE = 1e-3
# largest backward step along one edge read as fix jitter, in m
BACKTRACK = 25.0
TRACE_FIELDS = ("t", "lat", "lon")


@dataclass(frozen=True)
class MatchingParams:
    sigma_gps: float = SIGMA_GPS
    beta: float = BETA
    radius: float = RADIUS

    def __post_init__(self):
        for name in ("sigma_gps", "beta", "radius"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"Matching parameter '{name}' must be positive.")


# ---------------------------------------------------------------------------
# road graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    id: str
    source: str
    target: str
    xy: np.ndarray = field(repr=False)
    length: float
    profile: str | None = None
    profile_offset: float = 0.0

    @property
    def cumulative(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(np.hypot(*np.diff(self.xy, axis=0).T))))


class RoadGraph:
    """
    Directed road graph; edges carry their polyline and an optional link to
    the road profile they lie on (profile id and arc length of the edge
    start on that profile).
    """

    def __init__(self, nodes: dict, edges: list[dict]):
        if not nodes:
            raise ValueError("Road graph needs at least one node.")
        lat = np.array([v[0] for v in nodes.values()], dtype=float)
        lon = np.array([v[1] for v in nodes.values()], dtype=float)
        self.projection = LocalProjection.about(lat, lon)
        self.nodes = {str(k): (float(v[0]), float(v[1])) for k, v in nodes.items()}
        self.edges: dict[str, Edge] = {}
        self.routing = nx.DiGraph()
        self.routing.add_nodes_from(self.nodes)
        for edge in edges:
            self._add_edge(**edge)
        if not self.edges:
            raise ValueError("Road graph needs at least one edge.")
        self._index_segments()
        self._routes: dict[str, dict[str, float]] = {}

    def _add_edge(
        self,
        id,
        source,
        target,
        polyline=None,
        length=None,
        profile=None,
        profile_offset=0.0,
    ):
        id, source, target = str(id), str(source), str(target)
        if id in self.edges:
            raise ValueError(f"Duplicate edge id '{id}'.")
        for node in (source, target):
            if node not in self.nodes:
                raise ValueError(f"Edge '{id}' references unknown node '{node}'.")
        if polyline is None:
            polyline = [self.nodes[source], self.nodes[target]]
        pts = np.asarray(polyline, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError(f"Edge '{id}' polyline must hold at least two (lat, lon).")
        x, y = self.projection.forward(pts[:, 0], pts[:, 1])
        xy = np.column_stack([x, y])
        arc = float(np.sum(np.hypot(*np.diff(xy, axis=0).T)))
        if arc <= 0:
            raise ValueError(f"Edge '{id}' has zero length.")
        if length is not None and abs(float(length) - arc) > LENGTH_TOLERANCE * arc:
            raise ValueError(
                f"Edge '{id}' length {length} m differs from its polyline "
                f"arc length {arc:.3f} m by more than 0.1%."
            )
        edge = Edge(id, source, target, xy, arc, profile, float(profile_offset))
        self.edges[id] = edge
        current = self.routing.get_edge_data(source, target)
        if current is None or current["length"] > arc:
            self.routing.add_edge(source, target, length=arc)

    def _index_segments(self):
        starts, vecs, owner, offsets = [], [], [], []
        for i, edge in enumerate(self.edges.values()):
            cum = edge.cumulative
            starts.append(edge.xy[:-1])
            vecs.append(np.diff(edge.xy, axis=0))
            owner.append(np.full(len(edge.xy) - 1, i))
            offsets.append(cum[:-1])
        self._seg_start = np.vstack(starts)
        self._seg_vec = np.vstack(vecs)
        self._seg_owner = np.concatenate(owner)
        self._seg_offset = np.concatenate(offsets)
        self._edge_ids = list(self.edges)

    def __len__(self):
        return len(self.edges)

    def route_lengths_from(self, node: str) -> dict[str, float]:
        """Shortest route lengths from a node, cached per source."""
        if node not in self._routes:
            self._routes[node] = nx.single_source_dijkstra_path_length(
                self.routing, node, weight="length"
            )
        return self._routes[node]

    def project(self, x: float, y: float):
        """Closest point of every segment: (distance, edge index, offset) arrays."""
        rel = np.array([x, y]) - self._seg_start
        seg_len2 = np.sum(self._seg_vec**2, axis=1)
        t = np.clip(np.sum(rel * self._seg_vec, axis=1) / seg_len2, 0.0, 1.0)
        closest = self._seg_start + t[:, None] * self._seg_vec
        dist = np.hypot(*(np.array([x, y]) - closest).T)
        offset = self._seg_offset + t * np.sqrt(seg_len2)
        return dist, self._seg_owner, offset

    def heading_at(self, edge_id: str, offset: float) -> float:
        """Heading of the edge polyline at an offset, counter-clockwise from east."""
        edge = self.edges[edge_id]
        cum = edge.cumulative
        k = int(np.clip(np.searchsorted(cum, offset, side="right") - 1, 0, len(cum) - 2))
        dx, dy = edge.xy[k + 1] - edge.xy[k]
        return math.atan2(dy, dx)

    def point_at(self, edge_id: str, offset: float) -> tuple[float, float]:
        """Latitude and longitude of the point at an offset along an edge."""
        edge = self.edges[edge_id]
        cum = edge.cumulative
        x = np.interp(offset, cum, edge.xy[:, 0])
        y = np.interp(offset, cum, edge.xy[:, 1])
        lat, lon = self.projection.inverse(x, y)
        return float(lat), float(lon)


def grid_graph(
    rows: int,
    cols: int,
    spacing: float = 100.0,
    origin: tuple[float, float] = (48.0, 11.0),
) -> RoadGraph:
    """
    Directed grid with eastbound and northbound edges between neighbouring
    nodes; node ids are ``"r{row}c{col}"`` and edge ids ``"{a}-{b}"``.
    """
    proj = LocalProjection(*origin)
    nodes = {}
    for r in range(rows):
        for c in range(cols):
            lat, lon = proj.inverse(c * spacing, r * spacing)
            nodes[f"r{r}c{c}"] = (float(lat), float(lon))
    edges = []
    for r in range(rows):
        for c in range(cols):
            here = f"r{r}c{c}"
            if c + 1 < cols:
                edges.append({"id": f"{here}-r{r}c{c + 1}", "source": here, "target": f"r{r}c{c + 1}"})
            if r + 1 < rows:
                edges.append({"id": f"{here}-r{r + 1}c{c}", "source": here, "target": f"r{r + 1}c{c}"})
    return RoadGraph(nodes, edges)


# ---------------------------------------------------------------------------
# traces and candidates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GpsFix:
    t: float
    lat: float
    lon: float

    def __post_init__(self):
        for name in ("t", "lat", "lon"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"GPS fix '{name}' must be finite.")


@dataclass(frozen=True)
class GpsTrace:
    fixes: tuple[GpsFix, ...]

    def __post_init__(self):
        if not self.fixes:
            raise ValueError("GPS trace needs at least one fix.")
        t = np.array([f.t for f in self.fixes])
        if np.any(np.diff(t) <= 0):
            raise ValueError("GPS trace timestamps must be strictly increasing.")

    def __len__(self):
        return len(self.fixes)

    def __iter__(self):
        return iter(self.fixes)


@dataclass(frozen=True)
class Candidate:
    edge: str
    offset: float
    distance: float
    fix: GpsFix | None = field(default=None, compare=False)


def candidates(fix: GpsFix, graph: RoadGraph, radius: float = RADIUS) -> list[Candidate]:
    """Closest projection of the fix onto every edge within ``radius``."""
    if radius <= 0:
        raise ValueError(f"Candidate radius must be positive, got {radius}.")
    x, y = graph.projection.forward(fix.lat, fix.lon)
    dist, owner, offset = graph.project(float(x), float(y))
    best: dict[int, tuple[float, float]] = {}
    for k in np.flatnonzero(dist <= radius):
        i = int(owner[k])
        if i not in best or dist[k] < best[i][0]:
            best[i] = (float(dist[k]), float(offset[k]))
    if not best:
        raise NoCandidates(
            f"No road within {radius} m of fix ({fix.lat:.6f}, {fix.lon:.6f}) at t={fix.t}."
        )
    found = []
    for i, (d, off) in best.items():
        edge = graph.edges[graph._edge_ids[i]]
        found.append(Candidate(edge.id, min(max(off, 0.0), edge.length), d, fix))
    found.sort(key=lambda c: (c.distance, c.edge))
    return found


def emission_logprob(distance: float, sigma_gps: float = SIGMA_GPS) -> float:
    if sigma_gps <= 0:
        raise ValueError("sigma_gps must be positive.")
    return -0.5 * (distance / sigma_gps) ** 2 - math.log(math.sqrt(2.0 * math.pi) * sigma_gps)


def route_distance(c_i: Candidate, c_j: Candidate, graph: RoadGraph) -> float:
    """
    Driving distance from one candidate to the next; inf when unreachable.

    A short step backwards along the same edge is fix jitter and costs its
    length; a longer one has to go round the network.
    """
    if c_i.edge == c_j.edge and c_j.offset >= c_i.offset - BACKTRACK:
        return abs(c_j.offset - c_i.offset)
    e_i, e_j = graph.edges[c_i.edge], graph.edges[c_j.edge]
    between = graph.route_lengths_from(e_i.target).get(e_j.source)
    if between is None:
        return math.inf
    return (e_i.length - c_i.offset) + between + c_j.offset


def transition_logprob(
    c_i: Candidate,
    c_j: Candidate,
    graph: RoadGraph,
    beta: float = BETA,
    straight: float | None = None,
) -> float:
    """
    Log density of moving between two candidates; ``straight`` is the
    great-circle distance of their fixes and is derived from the candidates'
    fixes when omitted. Unreachable pairs give ``-inf``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive.")
    route = route_distance(c_i, c_j, graph)
    if math.isinf(route):
        return -math.inf
    if straight is None:
        if c_i.fix is None or c_j.fix is None:
            raise ValueError("Candidates carry no fixes; pass the straight-line distance.")
        straight = float(great_circle(c_i.fix.lat, c_i.fix.lon, c_j.fix.lat, c_j.fix.lon))
    return -math.log(beta) - abs(route - straight) / beta


# ---------------------------------------------------------------------------
# Viterbi
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatchedPoint:
    index: int
    fix: GpsFix
    edge: str
    offset: float
    distance: float
    emission: float


@dataclass(frozen=True)
class MatchedPath:
    points: tuple[MatchedPoint, ...]
    breaks: tuple[int, ...] = ()
    dropped: tuple[int, ...] = ()

    def __len__(self):
        return len(self.points)

    @property
    def edges(self) -> list[str]:
        """Matched edge sequence with consecutive repeats collapsed."""
        out: list[str] = []
        for p in self.points:
            if not out or out[-1] != p.edge:
                out.append(p.edge)
        return out

    def to_rows(self, s=None) -> list[dict]:
        rows = []
        for k, p in enumerate(self.points):
            rows.append(
                {
                    "t": p.fix.t,
                    "lat": p.fix.lat,
                    "lon": p.fix.lon,
                    "edge": p.edge,
                    "offset": p.offset,
                    "distance": p.distance,
                    "s": None if s is None else float(s[k]),
                }
            )
        return rows


def _backtrack(stage_cands, back, scores) -> list[Candidate]:
    k = int(np.argmax(scores))
    chain = [stage_cands[-1][k]]
    for t in range(len(stage_cands) - 1, 0, -1):
        k = back[t][k]
        chain.append(stage_cands[t - 1][k])
    return chain[::-1]


def viterbi_match(
    trace: GpsTrace, graph: RoadGraph, params: MatchingParams | None = None
) -> MatchedPath:
    """
    Most likely candidate sequence for a trace.

    Fixes without candidates are dropped. When no transition connects two
    consecutive stages the chain is closed and decoding restarts at the
    later fix; restart positions are reported in ``breaks``.
    """
    params = params or MatchingParams()
    stages: list[tuple[int, list[Candidate]]] = []
    dropped = []
    for i, fix in enumerate(trace):
        try:
            stages.append((i, candidates(fix, graph, params.radius)))
        except NoCandidates as exc:
            logger.warning("Dropping fix %d: %s", i, exc)
            dropped.append(i)
    if not stages:
        raise NoPath("No fix of the trace lies near the road graph.")

    chains: list[list[tuple[int, Candidate]]] = []
    breaks = []
    seg_idx: list[int] = []
    seg_cands: list[list[Candidate]] = []
    back: list[list[int]] = []
    scores = np.zeros(0)

    def close():
        chain = _backtrack(seg_cands, back, scores)
        chains.append(list(zip(seg_idx, chain, strict=True)))

    for i, cands in stages:
        emis = np.array([emission_logprob(c.distance, params.sigma_gps) for c in cands])
        if seg_cands:
            prev = seg_cands[-1]
            new_scores = np.full(len(cands), -np.inf)
            pointers = [0] * len(cands)
            for j, cj in enumerate(cands):
                for k, ck in enumerate(prev):
                    if not np.isfinite(scores[k]):
                        continue
                    value = scores[k] + transition_logprob(ck, cj, graph, params.beta)
                    if value > new_scores[j]:
                        new_scores[j] = value
                        pointers[j] = k
            if np.all(np.isneginf(new_scores)):
                logger.warning("Viterbi chain broken at fix %d; restarting", i)
                close()
                breaks.append(i)
                seg_idx, seg_cands, back = [], [], []
            else:
                seg_idx.append(i)
                seg_cands.append(cands)
                back.append(pointers)
                scores = new_scores + emis
                continue
        seg_idx.append(i)
        seg_cands.append(cands)
        back.append([])
        scores = emis
    close()

    points = []
    for chain in chains:
        for i, c in chain:
            points.append(
                MatchedPoint(
                    i,
                    trace.fixes[i],
                    c.edge,
                    c.offset,
                    c.distance,
                    emission_logprob(c.distance, params.sigma_gps),
                )
            )
    return MatchedPath(tuple(points), tuple(breaks), tuple(dropped))


def path_logprob(
    path: MatchedPath, graph: RoadGraph, params: MatchingParams | None = None
) -> float:
    """Joint log-probability of a matched path (emissions plus transitions)."""
    params = params or MatchingParams()
    total = 0.0
    prev = None
    for p in path.points:
        cand = Candidate(p.edge, p.offset, p.distance, p.fix)
        total += emission_logprob(p.distance, params.sigma_gps)
        if prev is not None and p.index not in path.breaks:
            total += transition_logprob(prev, cand, graph, params.beta)
        prev = cand
    return total


def matched_arclength(path: MatchedPath, graph: RoadGraph) -> np.ndarray:
    """
    Arc length on the linked road profile for every matched fix.

    Every matched edge must link to the same profile. The first fix sits at
    its edge's ``profile_offset`` (0 unless the graph places the edge start
    further along the profile) plus the matched offset; every later fix adds
    the driving distance along the route from the previous one. Moving back
    along the same edge gives a negative increment. Across a chain break
    with no route between the two candidates the straight-line distance of
    the fixes is used.
    """
    s: list[float] = []
    profile = None
    prev: MatchedPoint | None = None
    for p in path.points:
        edge = graph.edges[p.edge]
        if edge.profile is None:
            raise MissingProfileLink(f"Edge '{edge.id}' is not linked to a road profile.")
        if profile is None:
            profile = edge.profile
        elif edge.profile != profile:
            raise MissingProfileLink(
                f"Matched route leaves profile '{profile}' for '{edge.profile}' "
                f"on edge '{edge.id}'."
            )
        if prev is None:
            s.append(edge.profile_offset + p.offset)
        else:
            s.append(s[-1] + _route_step(prev, p, graph))
        prev = p
    return np.array(s)


def _route_step(prev: MatchedPoint, here: MatchedPoint, graph: RoadGraph) -> float:
    if prev.edge == here.edge:
        return here.offset - prev.offset
    route = route_distance(
        Candidate(prev.edge, prev.offset, prev.distance),
        Candidate(here.edge, here.offset, here.distance),
        graph,
    )
    if math.isinf(route):
        logger.warning(
            "No route from edge '%s' to '%s'; using the straight-line distance",
            prev.edge,
            here.edge,
        )
        return float(great_circle(prev.fix.lat, prev.fix.lon, here.fix.lat, here.fix.lon))
    return route


def matched_profile_id(path: MatchedPath, graph: RoadGraph) -> str:
    if not path.points:
        raise NoPath("Matched path is empty.")
    profile = graph.edges[path.points[0].edge].profile
    if profile is None:
        raise MissingProfileLink(f"Edge '{path.points[0].edge}' is not linked to a road profile.")
    return profile


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def load_graph(path) -> RoadGraph:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.msg, line=exc.lineno) from exc
    except OSError as exc:
        raise ParseError(path, f"cannot read file: {exc.strerror}") from exc
    if not isinstance(data, dict):
        raise ParseError(path, "expected a JSON object with 'nodes' and 'edges'")
    try:
        nodes = {str(n["id"]): (float(n["lat"]), float(n["lon"])) for n in data["nodes"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(path, f"malformed node: {exc}", field="nodes") from exc
    edges = []
    for k, e in enumerate(data.get("edges", [])):
        try:
            edges.append(
                {
                    "id": e["id"],
                    "source": e["from"],
                    "target": e["to"],
                    "polyline": e.get("polyline"),
                    "length": e.get("length"),
                    "profile": e.get("profile"),
                    "profile_offset": float(e.get("profile_offset", 0.0)),
                }
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ParseError(path, f"malformed edge #{k}: {exc}", field="edges") from exc
    try:
        return RoadGraph(nodes, edges)
    except ValueError as exc:
        raise ParseError(path, str(exc)) from exc


def load_trace(path) -> GpsTrace:
    """Read a ``t,lat,lon`` CSV file."""
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise ParseError(path, f"cannot read file: {exc.strerror}") from exc
    fixes = []
    with handle:
        reader = csv.DictReader(handle)
        missing = [f for f in TRACE_FIELDS if f not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(path, f"missing columns {missing}", line=1)
        for row in reader:
            try:
                fixes.append(GpsFix(float(row["t"]), float(row["lat"]), float(row["lon"])))
            except (TypeError, ValueError) as exc:
                raise ParseError(path, str(exc), line=reader.line_num) from exc
    try:
        return GpsTrace(tuple(fixes))
    except ValueError as exc:
        raise ParseError(path, str(exc)) from exc


def write_matches(rows: list[dict], path) -> None:
    fields = ["t", "lat", "lon", "edge", "offset", "distance", "s"]
    with Path(path).open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {
                    k: (f"{v:.6f}" if isinstance(v, float) else ("" if v is None else v))
                    for k, v in row.items()
                }
            )
