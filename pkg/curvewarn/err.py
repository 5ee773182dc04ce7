"""
Exception hierarchy for curvewarn.

Every failure raised by the library derives from CurveWarnError, grouped by
the subsystem that detected it. Outcomes that carry meaning for the warning
pipeline (an infeasible trajectory problem, an unreachable HMM transition)
are returned as values instead.
"""

import inspect


class UnimplementedMethodError(NotImplementedError):
    """
    Raised by abstract methods; the message names the method and the class
    it was called on, found by frame introspection.
    """

    def __init__(self, message=None):
        frame = inspect.currentframe().f_back
        method_name = frame.f_code.co_name

        class_name = None
        local_vars = frame.f_locals
        if "self" in local_vars:
            class_name = local_vars["self"].__class__.__name__
        elif "cls" in local_vars:
            class_name = local_vars["cls"].__name__

        if class_name:
            auto_message = (
                f"Method '{method_name}' is not implemented in class '{class_name}'"
            )
        else:
            auto_message = f"Method '{method_name}' is not implemented"

        final_message = f"{auto_message}. {message}" if message else auto_message
        super().__init__(final_message)


class CurveWarnError(Exception):
    """Root of every error raised by curvewarn."""


# ---------------------------------------------------------------------------
# road geometry
# ---------------------------------------------------------------------------


class RoadError(CurveWarnError):
    pass


class OutOfRange(RoadError):
    """A profile was queried outside its arc-length grid."""

    def __init__(self, s: float, s_min: float, s_max: float):
        self.s = s
        self.s_min = s_min
        self.s_max = s_max
        super().__init__(
            f"Arc length s={s:.3f} m lies outside the road profile "
            f"[{s_min:.3f}, {s_max:.3f}] m."
        )


class DegeneratePolyline(RoadError, ValueError):
    pass


class ParseError(RoadError):
    """A road, graph or trace file does not follow its schema."""

    def __init__(self, path, message: str, line: int | None = None, field=None):
        self.path = str(path)
        self.line = line
        self.field = field
        where = self.path
        if line is not None:
            where += f":{line}"
        if field is not None:
            where += f" [{field}]"
        super().__init__(f"{where}: {message}")


class InvariantViolation(RoadError, ValueError):
    pass


# ---------------------------------------------------------------------------
# motorcycle model
# ---------------------------------------------------------------------------


class ModelError(CurveWarnError):
    pass


class SingularGeometry(ModelError):
    """The lateral offset reaches the centre of curvature (1 - n*kappa <= 0)."""


class SingularProgress(ModelError):
    """The progress rate along the road is too small for the space transform."""


# ---------------------------------------------------------------------------
# trajectory optimisation
# ---------------------------------------------------------------------------


class OcpError(CurveWarnError):
    pass


class EmptyLane(OcpError):
    """The roll angle leaves no admissible lateral position in the lane."""


class HorizonExceedsMap(OcpError):
    pass


# ---------------------------------------------------------------------------
# risk, matching, fusion, configuration
# ---------------------------------------------------------------------------


class RiskError(CurveWarnError):
    pass


class EmptySolution(RiskError):
    pass


class MatchingError(CurveWarnError):
    pass


class NoCandidates(MatchingError):
    pass


class NoPath(MatchingError):
    pass


class MissingProfileLink(MatchingError):
    pass


class FusionError(CurveWarnError):
    pass


class SpeedTooLow(FusionError):
    pass


class ConfigError(CurveWarnError):
    """Invalid scenario configuration; the message names section and key."""

    def __init__(self, message: str, section: str | None = None, key=None):
        self.section = section
        self.key = key
        where = ""
        if section:
            where = f"[{section}]"
            if key:
                where += f".{key}"
            where += ": "
        super().__init__(f"{where}{message}")
