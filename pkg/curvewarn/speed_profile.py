"""
Forward-backward speed profile along the lane.

A quick point-mass baseline for the trajectory optimizer: the speed is capped
by the speed limit and by the lateral acceleration the curvature allows, the
forward pass limits acceleration and the backward pass limits braking, both
to the part of the g-g ellipse the lateral acceleration leaves free.

The slope does not appear: the g-g ellipse bounds ``a_x + g*sigma``, which is
exactly the rate of change of the speed.
"""

import logging
from dataclasses import dataclass

import numpy as np

from curvewarn.model import BikeParams
from curvewarn.road import RoadProfile

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpeedProfile:
    s: np.ndarray
    v: np.ndarray
    v_cap: np.ndarray
    a_long: np.ndarray
    time: float
    feasible: bool

    @property
    def min_accel(self) -> float:
        return float(np.min(self.a_long)) if len(self.a_long) else 0.0

    def to_rows(self) -> list[dict]:
        a = np.append(self.a_long, np.nan)
        return [
            {"s": s, "v": v, "v_cap": c, "a_long": acc}
            for s, v, c, acc in zip(self.s, self.v, self.v_cap, a, strict=True)
        ]


def curvature_speed_limit(kappa, u_limit, a_y_max: float) -> np.ndarray:
    """min(u_limit, sqrt(a_y_max / |kappa|)), elementwise."""
    kappa = np.abs(np.asarray(kappa, dtype=float))
    lateral = np.sqrt(a_y_max / np.where(kappa > 0, kappa, 1.0))
    return np.where(kappa > 0, np.minimum(u_limit, lateral), u_limit)


def _long_capacity(v: float, kappa: float, p: BikeParams) -> float:
    """Longitudinal acceleration left over by the lateral acceleration."""
    ratio = v * v * abs(kappa) / p.a_y_max
    return p.a_x_max * float(np.sqrt(max(0.0, 1.0 - ratio * ratio)))


def _pass(v_cap: np.ndarray, kappa: np.ndarray, d_s: float, v0: float, p: BikeParams):
    v = v_cap.copy()
    v[0] = v0
    for k in range(len(v) - 1):
        a = _long_capacity(v[k], kappa[k], p)
        v[k + 1] = min(v_cap[k + 1], np.sqrt(v[k] ** 2 + 2.0 * a * d_s))
    return v


def forward_backward(
    profile: RoadProfile,
    s0: float,
    length: float,
    v_start: float,
    p: BikeParams | None = None,
    d_s: float = 1.0,
    v_end: float | None = None,
) -> SpeedProfile:
    """
    Fastest speed profile over ``[s0, s0 + length]`` starting at ``v_start``.

    ``feasible`` is False when even full braking from ``v_start`` cannot
    respect the downstream caps.
    """
    p = p or BikeParams()
    if v_start <= 0:
        raise ValueError(f"Start speed must be positive, got {v_start}.")
    s = s0 + d_s * np.arange(int(round(length / d_s)) + 1)
    road = profile.query_many(s)
    v_cap = curvature_speed_limit(road.kappa, road.u_limit, p.a_y_max)
    if v_end is not None:
        v_cap[-1] = min(v_cap[-1], v_end)

    fwd = _pass(v_cap, road.kappa, d_s, v_start, p)
    bwd = _pass(v_cap[::-1], road.kappa[::-1], d_s, v_cap[-1], p)[::-1]
    v = np.minimum(fwd, bwd)
    v[0] = v_start
    feasible = bool(v_start <= bwd[0] + 1e-9)
    if not feasible:
        logger.info(
            "Start speed %.2f m/s exceeds the brakeable speed %.2f m/s at s=%.1f m",
            v_start,
            bwd[0],
            s0,
        )
    a_long = np.diff(v**2) / (2.0 * d_s)
    time = float(np.sum(2.0 * d_s / (v[:-1] + v[1:])))
    return SpeedProfile(s, v, v_cap, a_long, time, feasible)
