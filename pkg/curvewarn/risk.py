"""
Three-level rider risk from the optimal longitudinal jerk.

A strongly negative optimal jerk means the rider has to start braking hard
to stay within what they can execute; the thresholds split the jerk axis
into safe, intermediate and danger.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum

import numpy as np

from curvewarn.err import EmptySolution
from curvewarn.ocp import OcpSolution
from curvewarn.sqp import Status

logger = logging.getLogger(__name__)


class Level(Enum):
    SAFE = "safe"
    INTERMEDIATE = "intermediate"
    DANGER = "danger"

    @property
    def severity(self) -> int:
        return _SEVERITY[self]

    @property
    def exit_code(self) -> int:
        return self.severity

    def __str__(self):
        return self.value


_SEVERITY = {Level.SAFE: 0, Level.INTERMEDIATE: 1, Level.DANGER: 2}


@dataclass(frozen=True)
class RiskThresholds:
    theta1: float = -0.1
    theta2: float = -0.5

    def __post_init__(self):
        if not (math.isfinite(self.theta1) and math.isfinite(self.theta2)):
            raise ValueError("Risk thresholds must be finite.")
        if not self.theta2 < self.theta1 < 0:
            raise ValueError(
                f"Risk thresholds must satisfy theta2 < theta1 < 0, "
                f"got theta1={self.theta1}, theta2={self.theta2}."
            )

    def scaled(self, factor: float) -> "RiskThresholds":
        if factor <= 0:
            raise ValueError("Threshold scale factor must be positive.")
        return RiskThresholds(self.theta1 * factor, self.theta2 * factor)

    def to_dict(self) -> dict:
        return {"theta1": self.theta1, "theta2": self.theta2}


def classify_step(j_x: float, th: RiskThresholds | None = None) -> Level:
    th = th or RiskThresholds()
    if not math.isfinite(j_x):
        raise ValueError(f"Jerk must be finite, got {j_x}.")
    if j_x >= th.theta1:
        return Level.SAFE
    if j_x <= th.theta2:
        return Level.DANGER
    return Level.INTERMEDIATE


@dataclass(frozen=True)
class RiskReport:
    per_step: tuple[Level, ...]
    overall: Level
    worst_s: float
    min_jerk: float
    solver_status: Status
    thresholds: RiskThresholds
    first_s: float
    solver: dict

    @property
    def counts(self) -> dict[str, int]:
        counts = Counter(level.value for level in self.per_step)
        return {level.value: counts.get(level.value, 0) for level in Level}

    def to_dict(self) -> dict:
        return {
            "overall": self.overall.value,
            "worst_s": self.worst_s,
            "min_jerk": self.min_jerk,
            "first_s": self.first_s,
            "counts": self.counts,
            "thresholds": self.thresholds.to_dict(),
            "solver": dict(self.solver, status=self.solver_status.value),
        }


def classify_maneuver(
    sol: OcpSolution,
    th: RiskThresholds | None = None,
    window_m: float | None = None,
) -> RiskReport:
    """
    Classify every input stage of a solution and summarise the worst one.

    ``window_m`` restricts the summary to the first metres of the horizon;
    by default the whole horizon counts. An infeasible solution is danger
    whatever its jerks are.
    """
    th = th or RiskThresholds()
    j_x = np.asarray(sol.u)[:, 0] if len(sol.u) else np.zeros(0)
    s_inputs = np.asarray(sol.s_grid)[: len(j_x)]
    if window_m is not None:
        if window_m <= 0:
            raise ValueError(f"Risk window must be positive, got {window_m}.")
        keep = s_inputs <= s_inputs[0] + window_m if len(s_inputs) else s_inputs
        j_x, s_inputs = j_x[keep], s_inputs[keep]
    if len(j_x) == 0:
        raise EmptySolution("Solution has no input stage to classify.")

    per_step = tuple(classify_step(float(j), th) for j in j_x)
    overall = max(per_step, key=lambda level: level.severity)
    worst = int(np.argmin(j_x))
    first = next(i for i, level in enumerate(per_step) if level is overall)
    if sol.status is Status.INFEASIBLE:
        logger.warning("No feasible manoeuvre within rider ability: risk is danger")
        overall = Level.DANGER
    elif sol.status is not Status.OPTIMAL:
        logger.warning("Solver finished as %s; classifying its last iterate", sol.status)
    solver = {
        "iterations": sol.iterations,
        "kkt": sol.kkt_residual,
        "feasibility": sol.feasibility_residual,
    }
    return RiskReport(
        per_step=per_step,
        overall=overall,
        worst_s=float(s_inputs[worst]),
        min_jerk=float(j_x[worst]),
        solver_status=sol.status,
        thresholds=th,
        first_s=float(s_inputs[first]),
        solver=solver,
    )
