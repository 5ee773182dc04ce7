"""
Initial state of the trajectory problem from perception, GPS and speed.

The lane-position network measures the offset of the camera from the lane
divider; when the motorcycle rolls the camera swings sideways by
``h_c * sin(phi)``, so the measurement is roll-corrected before use.
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from curvewarn.common import StateSpace
from curvewarn.err import FusionError, ParseError, SpeedTooLow
from curvewarn.matching import (
    GpsTrace,
    MatchingParams,
    RoadGraph,
    matched_arclength,
    viterbi_match,
)
from curvewarn.model import EPS_S, BikeParams
from curvewarn.ocp import ROLL_MAX, W_PHI_MAX, W_PSI_MAX, lane_bounds
from curvewarn.road import RoadProfile

logger = logging.getLogger(__name__)

PERCEPTION_FIELDS = ("t", "n_lnet", "phi_rnet")


@dataclass(frozen=True)
class PerceptionSample:
    n_lnet: float
    phi_rnet: float
    timestamp: float = 0.0

    def __post_init__(self):
        for name in ("n_lnet", "phi_rnet", "timestamp"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"PerceptionSample '{name}' must be finite.")
        if abs(self.phi_rnet) > math.pi / 2:
            raise ValueError(
                f"Roll estimate {self.phi_rnet} rad is outside [-pi/2, pi/2]."
            )


@dataclass(frozen=True)
class MotionSample:
    """An earlier fused sample used for finite differences."""

    perception: PerceptionSample
    speed: float
    heading: float | None = None


@dataclass(frozen=True)
class InitialState:
    s0: float
    x0: StateSpace
    clamped: tuple[str, ...] = ()

    @property
    def was_clamped(self) -> bool:
        return bool(self.clamped)


def roll_correct_lane(n_lnet: float, phi: float, h_c: float) -> float:
    return n_lnet - h_c * math.sin(phi)


def _wrap(angle: float) -> float:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def _clamp(value: float, lo: float, hi: float, flag: str, flags: list[str]) -> float:
    if value < lo:
        flags.append(f"{flag}_low")
        return lo
    if value > hi:
        flags.append(f"{flag}_high")
        return hi
    return value


def build_initial_state(
    perc: PerceptionSample,
    speed: float,
    s0: float,
    prev: MotionSample | None,
    profile: RoadProfile,
    p: BikeParams | None = None,
    heading: float | None = None,
) -> InitialState:
    """
    Assemble x(0) at arc length ``s0``.

    Without a previous sample the yaw rate is the steady-state value of the
    road curvature and all other rates are zero. With one, yaw rate, roll
    rate and longitudinal acceleration are finite differences. Values
    outside the stage constraints are clamped and the clamp is reported.
    """
    p = p or BikeParams()
    if speed <= EPS_S:
        raise SpeedTooLow(
            f"Speed {speed} m/s is at or below {EPS_S} m/s; the model needs forward motion."
        )
    road = profile.query(s0)
    flags: list[str] = []

    phi = _clamp(perc.phi_rnet, -ROLL_MAX, ROLL_MAX, "phi", flags)
    n = roll_correct_lane(perc.n_lnet, perc.phi_rnet, p.h_c)
    n = _clamp(n, 0.0, road.width, "n", flags)
    lo, hi = lane_bounds(phi, road, p)
    n = _clamp(n, lo, hi, "n_roll", flags)

    w_psi = road.kappa * speed / (1.0 - n * road.kappa)
    w_phi = 0.0
    a_x = 0.0
    if prev is not None:
        dt = perc.timestamp - prev.perception.timestamp
        if dt <= 0:
            raise FusionError(
                f"Previous sample at t={prev.perception.timestamp} is not before "
                f"t={perc.timestamp}."
            )
        if heading is not None and prev.heading is not None:
            w_psi = _wrap(heading - prev.heading) / dt
        w_phi = (perc.phi_rnet - prev.perception.phi_rnet) / dt
        a_x = (speed - prev.speed) / dt - p.g * road.sigma
    w_psi = _clamp(w_psi, -W_PSI_MAX, W_PSI_MAX, "w_psi", flags)
    w_phi = _clamp(w_phi, -W_PHI_MAX, W_PHI_MAX, "w_phi", flags)

    # keep the measured state inside the g-g ellipse
    lateral = speed * w_psi / p.a_y_max
    if abs(lateral) > 1.0:
        w_psi = math.copysign(p.a_y_max / speed, w_psi)
        flags.append("w_psi_gg")
        lateral = math.copysign(1.0, lateral)
    long_cap = p.a_x_max * math.sqrt(max(0.0, 1.0 - lateral**2))
    a_long = _clamp(a_x + p.g * road.sigma, -long_cap, long_cap, "a_x", flags)
    a_x = a_long - p.g * road.sigma

    if flags:
        logger.warning("Initial state at s=%.1f m clamped: %s", s0, ", ".join(flags))
    x0 = StateSpace(n, 0.0, phi, float(speed), w_psi, w_phi, a_x, 0.0)
    return InitialState(float(s0), x0, tuple(flags))


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


def load_perception(path) -> list[PerceptionSample]:
    """Read a ``t,n_lnet,phi_rnet`` CSV file sorted by time."""
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise ParseError(path, f"cannot read file: {exc.strerror}") from exc
    samples = []
    with handle:
        reader = csv.DictReader(handle)
        missing = [f for f in PERCEPTION_FIELDS if f not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(path, f"missing columns {missing}", line=1)
        for row in reader:
            try:
                samples.append(
                    PerceptionSample(
                        float(row["n_lnet"]), float(row["phi_rnet"]), float(row["t"])
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ParseError(path, str(exc), line=reader.line_num) from exc
    if not samples:
        raise ParseError(path, "no perception samples")
    return sorted(samples, key=lambda s: s.timestamp)


def perception_at(samples: list[PerceptionSample], t: float) -> PerceptionSample:
    """Perception linearly interpolated to time t (held at the ends)."""
    ts = np.array([s.timestamp for s in samples])
    n = float(np.interp(t, ts, [s.n_lnet for s in samples]))
    phi = float(np.interp(t, ts, [s.phi_rnet for s in samples]))
    return PerceptionSample(n, phi, float(t))


def fuse_trace(
    trace: GpsTrace,
    graph: RoadGraph,
    perception: list[PerceptionSample],
    profile: RoadProfile,
    p: BikeParams | None = None,
    params: MatchingParams | None = None,
    at: float | None = None,
) -> InitialState:
    """
    Initial state at the matched fix closest to time ``at`` (default: the
    last fix). Speed comes from matched arc-length differences.
    """
    path = viterbi_match(trace, graph, params)
    s = matched_arclength(path, graph)
    if len(path) < 2:
        raise FusionError("Need at least two matched fixes to estimate the speed.")
    t = np.array([pt.fix.t for pt in path.points])
    k = len(t) - 1 if at is None else int(np.argmin(np.abs(t - at)))
    k = max(k, 1)

    def speed(i: int) -> float:
        j = max(i, 1)
        return float((s[j] - s[j - 1]) / (t[j] - t[j - 1]))

    def heading(i: int) -> float:
        pt = path.points[i]
        return graph.heading_at(pt.edge, pt.offset)

    prev = MotionSample(perception_at(perception, t[k - 1]), speed(k - 1), heading(k - 1))
    logger.info("Fusing initial state at t=%.2f s, s=%.1f m", t[k], s[k])
    return build_initial_state(
        perception_at(perception, t[k]),
        speed(k),
        float(s[k]),
        prev,
        profile,
        p,
        heading=heading(k),
    )
