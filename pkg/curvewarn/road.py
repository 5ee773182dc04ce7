"""
Arc-length parameterised road attributes.

A RoadProfile carries curvature, slope, lane width and speed limit on a
strictly increasing grid of arc lengths and is evaluated by piecewise-linear
interpolation.

Sign conventions (shared by the whole package):

* kappa > 0 is a left curve; n, alpha and phi are positive to the left.
* n is measured from the lane divider, 0 <= n <= width inside the lane.
* sigma > 0 is a DESCENDING road. The longitudinal dynamics add
  ``+ g * sigma * cos(alpha)`` to the acceleration, so a positive grade
  speeds the motorcycle up. Profiles derived from elevation data therefore
  store ``sigma = -d(elevation)/ds``.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d

from curvewarn.err import (
    DegeneratePolyline,
    InvariantViolation,
    OutOfRange,
    ParseError,
    UnimplementedMethodError,
)
from curvewarn.geo import LocalProjection

logger = logging.getLogger(__name__)

DEFAULT_WIDTH = 3.5
DEFAULT_U_LIMIT = 22.2  # 80 km/h
SMOOTHING_WINDOW = 5
PROFILE_FIELDS = ("s", "kappa", "sigma", "width", "u_limit")

# knots produced by s0 + k*d_s drift by a few ulps
_GRID_SLACK = 1e-9


@dataclass(frozen=True)
class RoadSample:
    kappa: float
    sigma: float
    width: float
    u_limit: float

    def __post_init__(self):
        for name in ("kappa", "sigma", "width", "u_limit"):
            if not math.isfinite(getattr(self, name)):
                raise InvariantViolation(f"RoadSample '{name}' must be finite.")
        if self.width <= 0:
            raise InvariantViolation(
                f"Lane width must be positive, got {self.width} m."
            )
        if self.u_limit <= 0:
            raise InvariantViolation(
                f"Speed limit must be positive, got {self.u_limit} m/s."
            )
        if abs(self.kappa) * self.width >= 1.0:
            raise InvariantViolation(
                f"Curvature {self.kappa} 1/m is too tight for a {self.width} m "
                f"lane: the lane would cross the centre of curvature."
            )


@dataclass(frozen=True)
class RoadSamples:
    """Vectorised counterpart of RoadSample; every field is an array."""

    kappa: np.ndarray
    sigma: np.ndarray
    width: np.ndarray
    u_limit: np.ndarray

    def __len__(self):
        return len(self.kappa)

    def __getitem__(self, k) -> "RoadSamples":
        return RoadSamples(
            self.kappa[k], self.sigma[k], self.width[k], self.u_limit[k]
        )

    def flat(self) -> "RoadSamples":
        """The same samples with the slope removed."""
        return RoadSamples(
            self.kappa, np.zeros_like(self.sigma), self.width, self.u_limit
        )


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.flags.writeable = False
    return arr


class RoadProfile:
    """
    Immutable road description on an arc-length grid.

    Construction validates every knot; the arrays are read-only so a profile
    can be shared between concurrent solver runs.
    """

    __slots__ = ("s_grid", "kappa", "sigma", "width", "u_limit")

    def __init__(self, s_grid, kappa, sigma, width, u_limit):
        arrays = [_frozen(a) for a in (s_grid, kappa, sigma, width, u_limit)]
        for name, arr in zip(PROFILE_FIELDS, arrays, strict=True):
            if arr.ndim != 1:
                raise InvariantViolation(f"Profile field '{name}' must be 1-D.")
        if len({a.size for a in arrays}) != 1:
            sizes = ", ".join(
                f"{n}={a.size}" for n, a in zip(PROFILE_FIELDS, arrays, strict=True)
            )
            raise InvariantViolation(f"Profile fields differ in length ({sizes}).")
        s = arrays[0]
        if s.size < 2:
            raise InvariantViolation(
                f"A road profile needs at least 2 knots, got {s.size}."
            )
        steps = np.diff(s)
        if not np.all(steps > 0):
            bad = int(np.argmax(steps <= 0))
            raise InvariantViolation(
                f"Arc-length grid is not strictly increasing at knot {bad + 1} "
                f"(s={s[bad]} followed by s={s[bad + 1]})."
            )
        for slot, arr in zip(self.__slots__, arrays, strict=True):
            object.__setattr__(self, slot, arr)
        self._check_samples()

    def __setattr__(self, name, value):
        raise AttributeError("RoadProfile is immutable.")

    def _check_samples(self):
        for k in range(self.s_grid.size):
            try:
                RoadSample(
                    float(self.kappa[k]),
                    float(self.sigma[k]),
                    float(self.width[k]),
                    float(self.u_limit[k]),
                )
            except InvariantViolation as e:
                raise InvariantViolation(
                    f"Knot {k} at s={self.s_grid[k]} m: {e}"
                ) from None

    def __eq__(self, other):
        if not isinstance(other, RoadProfile):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in self.__slots__
        )

    def __hash__(self):
        return hash(tuple(getattr(self, f).tobytes() for f in self.__slots__))

    def __repr__(self):
        return (
            f"RoadProfile({self.s_grid.size} knots, "
            f"s=[{self.s_start:g}, {self.s_end:g}] m)"
        )

    @property
    def s_start(self) -> float:
        return float(self.s_grid[0])

    @property
    def s_end(self) -> float:
        return float(self.s_grid[-1])

    @property
    def length(self) -> float:
        return self.s_end - self.s_start

    @property
    def samples(self) -> tuple[RoadSample, ...]:
        return tuple(
            RoadSample(float(k), float(g), float(w), float(u))
            for k, g, w, u in zip(
                self.kappa, self.sigma, self.width, self.u_limit, strict=True
            )
        )

    def contains(self, s) -> bool:
        s = np.asarray(s, dtype=float)
        return bool(
            np.all(s >= self.s_start - _GRID_SLACK)
            and np.all(s <= self.s_end + _GRID_SLACK)
        )

    def _checked(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if not self.contains(s):
            bad = s[(s < self.s_start - _GRID_SLACK) | (s > self.s_end + _GRID_SLACK)]
            raise OutOfRange(float(np.ravel(bad)[0]), self.s_start, self.s_end)
        return np.clip(s, self.s_start, self.s_end)

    def query(self, s: float) -> RoadSample:
        s = float(self._checked(s))
        return RoadSample(
            float(np.interp(s, self.s_grid, self.kappa)),
            float(np.interp(s, self.s_grid, self.sigma)),
            float(np.interp(s, self.s_grid, self.width)),
            float(np.interp(s, self.s_grid, self.u_limit)),
        )

    def query_many(self, s) -> RoadSamples:
        s = self._checked(s)
        return RoadSamples(
            np.interp(s, self.s_grid, self.kappa),
            np.interp(s, self.s_grid, self.sigma),
            np.interp(s, self.s_grid, self.width),
            np.interp(s, self.s_grid, self.u_limit),
        )

    def slice(self, s_start: float, s_end: float) -> "RoadProfile":
        """Sub-profile on [s_start, s_end], keeping the original arc lengths."""
        if s_end <= s_start:
            raise ValueError(f"Empty slice [{s_start}, {s_end}].")
        self._checked([s_start, s_end])
        inner = self.s_grid[(self.s_grid > s_start) & (self.s_grid < s_end)]
        s = np.concatenate(([s_start], inner, [s_end]))
        rs = self.query_many(s)
        return RoadProfile(s, rs.kappa, rs.sigma, rs.width, rs.u_limit)

    def with_flat_slope(self) -> "RoadProfile":
        return RoadProfile(
            self.s_grid,
            self.kappa,
            np.zeros_like(self.sigma),
            self.width,
            self.u_limit,
        )

    def to_dict(self) -> dict:
        return {
            "s": self.s_grid.tolist(),
            "kappa": self.kappa.tolist(),
            "sigma": self.sigma.tolist(),
            "width": self.width.tolist(),
            "u_limit": self.u_limit.tolist(),
        }


def query(profile: RoadProfile, s: float) -> RoadSample:
    return profile.query(s)


# ---------------------------------------------------------------------------
# polylines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeoPolyline:
    """Sequence of (latitude [deg], longitude [deg], elevation [m])."""

    points: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        pts = tuple(tuple(float(c) for c in p) for p in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 3:
            raise DegeneratePolyline(
                f"A polyline needs at least 3 points to carry curvature, got {len(pts)}."
            )
        for i, p in enumerate(pts):
            if len(p) != 3:
                raise DegeneratePolyline(
                    f"Point {i} has {len(p)} coordinates; expected (lat, lon, ele)."
                )
            if i and p[:2] == pts[i - 1][:2]:
                raise DegeneratePolyline(
                    f"Points {i - 1} and {i} are identical ({p[0]}, {p[1]})."
                )

    @property
    def lat(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def lon(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def elevation(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    def reversed(self) -> "GeoPolyline":
        return GeoPolyline(tuple(reversed(self.points)))


def signed_curvature(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    Circumcircle curvature at every vertex, positive for left turns.

    Interior vertices use the triple (i-1, i, i+1); the end vertices copy
    their neighbour. Collinear triples give 0.
    """
    ax, ay = x[1:-1] - x[:-2], y[1:-1] - y[:-2]
    bx, by = x[2:] - x[1:-1], y[2:] - y[1:-1]
    cx, cy = x[2:] - x[:-2], y[2:] - y[:-2]
    a = np.hypot(ax, ay)
    b = np.hypot(bx, by)
    c = np.hypot(cx, cy)
    cross = ax * by - ay * bx
    collinear = np.abs(cross) <= 1e-10 * a * b
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = np.where(collinear, 0.0, 2.0 * cross / (a * b * c))
    kappa = np.empty_like(x)
    kappa[1:-1] = inner
    kappa[0] = inner[0]
    kappa[-1] = inner[-1]
    return kappa


def _vertex_grade(s: np.ndarray, ele: np.ndarray) -> np.ndarray:
    grade = np.empty_like(s)
    grade[1:-1] = (ele[2:] - ele[:-2]) / (s[2:] - s[:-2])
    grade[0] = (ele[1] - ele[0]) / (s[1] - s[0])
    grade[-1] = (ele[-1] - ele[-2]) / (s[-1] - s[-2])
    return grade


def profile_from_polyline(
    line: GeoPolyline,
    knot_spacing: float,
    width: float = DEFAULT_WIDTH,
    u_limit: float = DEFAULT_U_LIMIT,
    window: int = SMOOTHING_WINDOW,
) -> RoadProfile:
    """
    Derive a RoadProfile from a geographic polyline.

    Points are projected about the polyline centroid, curvature comes from
    circumcircles of consecutive triples and the slope from elevation
    differences, both smoothed by a centred moving average of ``window``
    vertices before resampling onto uniform knots.

    The slope is ``sigma = -d(elevation)/ds``: a road rising 1 m every 10 m
    gets ``sigma = -0.1`` and the same road ridden downhill ``+0.1``.
    """
    if knot_spacing <= 0:
        raise ValueError(f"Knot spacing must be positive, got {knot_spacing}.")
    proj = LocalProjection.about(line.lat, line.lon)
    x, y = proj.forward(line.lat, line.lon)
    s = np.concatenate(([0.0], np.cumsum(np.hypot(np.diff(x), np.diff(y)))))
    if s[-1] < knot_spacing:
        raise DegeneratePolyline(
            f"Polyline is {s[-1]:.2f} m long, shorter than one knot spacing "
            f"({knot_spacing} m)."
        )

    kappa = signed_curvature(x, y)
    sigma = -_vertex_grade(s, line.elevation)
    if window > 1:
        kappa = uniform_filter1d(kappa, size=window, mode="nearest")
        sigma = uniform_filter1d(sigma, size=window, mode="nearest")

    knots = np.arange(0.0, s[-1] + _GRID_SLACK, knot_spacing)
    kappa_k = np.interp(knots, s, kappa)
    too_tight = np.abs(kappa_k) * width >= 1.0
    if np.any(too_tight):
        logger.warning(
            "Clipping curvature at %d knots tighter than the %.2f m lane allows.",
            int(too_tight.sum()),
            width,
        )
        limit = 0.99 / width
        kappa_k = np.clip(kappa_k, -limit, limit)
    return RoadProfile(
        knots,
        kappa_k,
        np.interp(knots, s, sigma),
        np.full_like(knots, width),
        np.full_like(knots, u_limit),
    )


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def _read_json(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(path, f"cannot read file: {e.strerror or e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(path, f"invalid JSON: {e.msg}", line=e.lineno) from e


def _numeric_column(path, data: dict, name: str) -> list[float]:
    if name not in data:
        raise ParseError(path, "required column is missing", field=name)
    column = data[name]
    if not isinstance(column, list):
        raise ParseError(path, "column must be an array of numbers", field=name)
    values = []
    for i, v in enumerate(column):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(path, f"entry {i} is not a number: {v!r}", field=name)
        values.append(float(v))
    return values


def load_profile(path) -> RoadProfile:
    data = _read_json(path)
    if not isinstance(data, dict):
        raise ParseError(path, "top level must be a JSON object")
    columns = {name: _numeric_column(path, data, name) for name in PROFILE_FIELDS}
    lengths = {len(c) for c in columns.values()}
    if len(lengths) != 1:
        detail = ", ".join(f"{k}={len(v)}" for k, v in columns.items())
        raise ParseError(path, f"columns differ in length ({detail})")
    try:
        return RoadProfile(*(columns[name] for name in PROFILE_FIELDS))
    except InvariantViolation as e:
        raise InvariantViolation(f"{path}: {e}") from None


def save_profile(profile: RoadProfile, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(profile.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_polyline(path) -> GeoPolyline:
    data = _read_json(path)
    if not isinstance(data, list):
        raise ParseError(path, "polyline must be a JSON array of [lat, lon, ele]")
    points = []
    for i, p in enumerate(data):
        ok = isinstance(p, list) and len(p) == 3
        ok = ok and all(
            isinstance(c, (int, float)) and not isinstance(c, bool) for c in p
        )
        if not ok:
            raise ParseError(path, f"point {i} is not a [lat, lon, ele] triple: {p!r}")
        points.append(tuple(float(c) for c in p))
    return GeoPolyline(tuple(points))


# ---------------------------------------------------------------------------
# map providers
# ---------------------------------------------------------------------------


class MapProvider:
    """Source of road profiles referenced by id from a road graph."""

    def profile(self, profile_id: str) -> RoadProfile:
        raise UnimplementedMethodError()


class FileMapProvider(MapProvider):
    """Profiles stored as ``<directory>/<profile_id>.json``."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self._cache: dict[str, RoadProfile] = {}

    def profile(self, profile_id: str) -> RoadProfile:
        if profile_id not in self._cache:
            path = self.directory / f"{profile_id}.json"
            logger.debug("Loading profile '%s' from %s", profile_id, path)
            self._cache[profile_id] = load_profile(path)
        return self._cache[profile_id]


# ---------------------------------------------------------------------------
# synthetic profiles
# ---------------------------------------------------------------------------


def _curvature_segments(segments, spacing: float, transition: float):
    """Piecewise-constant curvature with linear ramps of length `transition`."""
    total = sum(length for length, _ in segments)
    s = np.arange(0.0, total + _GRID_SLACK, spacing)
    ends = np.cumsum([length for length, _ in segments])
    starts = ends - np.array([length for length, _ in segments])
    kappa = np.zeros_like(s)
    for (_, k), a, b in zip(segments, starts, ends, strict=True):
        if k == 0.0:
            continue
        if transition > 0:
            ramp_in = np.clip((s - a) / transition, 0.0, 1.0)
            ramp_out = np.clip((b - s) / transition, 0.0, 1.0)
            kappa += k * np.minimum(ramp_in, ramp_out)
        else:
            kappa += np.where((s >= a) & (s <= b), k, 0.0)
    return s, kappa


def _build(s, kappa, sigma, width, u_limit) -> RoadProfile:
    return RoadProfile(
        s,
        kappa,
        np.broadcast_to(np.asarray(sigma, dtype=float), s.shape),
        np.full_like(s, width),
        np.full_like(s, u_limit),
    )


def straight_profile(
    length: float,
    spacing: float = 1.0,
    sigma: float = 0.0,
    width: float = DEFAULT_WIDTH,
    u_limit: float = DEFAULT_U_LIMIT,
) -> RoadProfile:
    s = np.arange(0.0, length + _GRID_SLACK, spacing)
    return _build(s, np.zeros_like(s), sigma, width, u_limit)


def curve_profile(
    radius: float,
    lead_in: float,
    arc: float,
    lead_out: float,
    left: bool = True,
    spacing: float = 1.0,
    transition: float = 20.0,
    sigma: float = 0.0,
    width: float = DEFAULT_WIDTH,
    u_limit: float = DEFAULT_U_LIMIT,
) -> RoadProfile:
    """Straight lead-in, one constant-radius curve, straight lead-out."""
    k = (1.0 if left else -1.0) / radius
    s, kappa = _curvature_segments(
        [(lead_in, 0.0), (arc, k), (lead_out, 0.0)], spacing, transition
    )
    return _build(s, kappa, sigma, width, u_limit)


def s_curve_profile(
    radius: float,
    lead_in: float,
    arc: float,
    lead_out: float,
    spacing: float = 1.0,
    transition: float = 20.0,
    sigma: float = 0.0,
    width: float = DEFAULT_WIDTH,
    u_limit: float = DEFAULT_U_LIMIT,
) -> RoadProfile:
    """Straight lead-in, a left curve directly followed by a right curve."""
    k = 1.0 / radius
    s, kappa = _curvature_segments(
        [(lead_in, 0.0), (arc, k), (arc, -k), (lead_out, 0.0)], spacing, transition
    )
    return _build(s, kappa, sigma, width, u_limit)
