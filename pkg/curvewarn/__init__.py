# curvewarn/__init__.py
from .common import ControlInput, StateSpace, StateTime  # noqa: F401
from .model import BikeParams  # noqa: F401
from .ocp import OcpConfig, OcpSolution, Status, plan_trajectory  # noqa: F401
from .risk import Level, RiskReport, RiskThresholds, classify_maneuver, classify_step  # noqa: F401
from .road import RoadProfile, RoadSample, query  # noqa: F401
