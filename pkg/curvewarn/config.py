"""
Scenario configuration files.

A scenario is one TOML file::

    [paths]
    profile = "road.json"        # RoadProfile JSON
    graph = "graph.json"         # optional, with trace and perception
    trace = "gps.csv"
    perception = "perception.csv"
    profiles = "profiles/"       # directory for graph-linked profiles
    output_dir = "out"

    [initial]                    # used when no GPS trace is configured
    s0 = 0.0
    speed = 20.0
    n = 1.75
    phi = 0.0

    [bike]                       # any BikeParams field
    [ocp]                        # horizon (m) or N, d_s, weights, tolerances, flags
    [risk]                       # theta1, theta2, window_m
    [matching]                   # sigma_gps, beta, radius
    [sweep]                      # horizons, jobs

Relative paths resolve against the directory of the file.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import toml

from curvewarn.err import ConfigError
from curvewarn.matching import MatchingParams
from curvewarn.model import BikeParams
from curvewarn.ocp import OcpConfig
from curvewarn.risk import RiskThresholds

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 500.0
DEFAULT_SWEEP = (500.0, 200.0, 100.0, 50.0)

PATH_KEYS = ("profile", "graph", "trace", "perception", "profiles", "polyline", "rider", "output_dir")
INITIAL_KEYS = ("s0", "speed", "n", "alpha", "phi", "w_psi", "w_phi", "a_x", "a_psi")
OCP_KEYS = (
    "horizon",
    "N",
    "d_s",
    "q_t",
    "q_a",
    "r_x",
    "r_psi",
    "feas_tol",
    "stat_tol",
    "max_iter",
    "include_slope",
    "include_roll_lane",
)
RISK_KEYS = ("theta1", "theta2", "window_m")
SWEEP_KEYS = ("horizons", "jobs")


@dataclass(frozen=True)
class Paths:
    profile: Path | None = None
    graph: Path | None = None
    trace: Path | None = None
    perception: Path | None = None
    profiles: Path | None = None
    polyline: Path | None = None
    rider: Path | None = None
    output_dir: Path | None = None


@dataclass(frozen=True)
class InitialSpec:
    """Explicit x(0); ``n`` defaults to the lane centre."""

    s0: float = 0.0
    speed: float = 20.0
    n: float | None = None
    alpha: float = 0.0
    phi: float = 0.0
    w_psi: float | None = None
    w_phi: float = 0.0
    a_x: float = 0.0
    a_psi: float = 0.0

    def __post_init__(self):
        if self.speed <= 0:
            raise ValueError(f"Initial speed must be positive, got {self.speed}.")


@dataclass(frozen=True)
class ScenarioConfig:
    paths: Paths = field(default_factory=Paths)
    initial: InitialSpec = field(default_factory=InitialSpec)
    bike: BikeParams = field(default_factory=BikeParams)
    ocp: OcpConfig = field(default_factory=lambda: OcpConfig.from_horizon(DEFAULT_HORIZON))
    risk: RiskThresholds = field(default_factory=RiskThresholds)
    window_m: float | None = None
    matching: MatchingParams = field(default_factory=MatchingParams)
    horizons: tuple[float, ...] = DEFAULT_SWEEP
    jobs: int = 1

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError(f"jobs must be at least 1, got {self.jobs}.")
        if not self.horizons or any(h <= 0 for h in self.horizons):
            raise ValueError("Sweep horizons must be a non-empty list of positive lengths.")
        if self.window_m is not None and not self.window_m > 0:
            raise ValueError(f"Risk window must be positive, got {self.window_m} m.")

    @property
    def uses_gps(self) -> bool:
        return self.paths.trace is not None

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def with_horizon(self, length: float) -> "ScenarioConfig":
        return self.replace(ocp=dataclasses.replace(self.ocp, N=int(round(length / self.ocp.d_s))))

    def check_files(self) -> None:
        """Raise ConfigError for configured input files that do not exist."""
        for key in ("profile", "graph", "trace", "perception", "profiles", "polyline", "rider"):
            value = getattr(self.paths, key)
            if value is not None and not value.exists():
                raise ConfigError(f"file not found: {value}", "paths", key)


def _section(data: dict, name: str, keys: tuple[str, ...]) -> dict:
    section = data.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError("expected a table", name)
    for key in section:
        if key not in keys:
            raise ConfigError(f"unknown key (expected one of {', '.join(keys)})", name, key)
    return section


def _build(section: str, factory, **kwargs):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), section) from exc


def _ocp_from(section: dict) -> OcpConfig:
    values = dict(section)
    horizon = values.pop("horizon", None)
    d_s = float(values.get("d_s", 1.0))
    if "N" not in values:
        length = DEFAULT_HORIZON if horizon is None else horizon
        try:
            values["N"] = int(round(float(length) / d_s))
        except (TypeError, ValueError, ZeroDivisionError) as exc:
            raise ConfigError(str(exc), "ocp", "horizon") from exc
    elif horizon is not None:
        raise ConfigError("give either horizon or N, not both", "ocp", "N")
    return _build("ocp", OcpConfig, **values)


def config_from_dict(data: dict, base_dir: Path | None = None) -> ScenarioConfig:
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    unknown = set(data) - {"paths", "initial", "bike", "ocp", "risk", "matching", "sweep"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

    paths = {}
    for key, value in _section(data, "paths", PATH_KEYS).items():
        if not isinstance(value, str):
            raise ConfigError("expected a path string", "paths", key)
        path = Path(value)
        paths[key] = path if path.is_absolute() else base / path

    bike_keys = tuple(f.name for f in dataclasses.fields(BikeParams))
    matching_keys = tuple(f.name for f in dataclasses.fields(MatchingParams))
    risk = dict(_section(data, "risk", RISK_KEYS))
    window_m = risk.pop("window_m", None)
    if window_m is not None and not (isinstance(window_m, int | float) and window_m > 0):
        raise ConfigError("expected a positive length in metres", "risk", "window_m")
    sweep = _section(data, "sweep", SWEEP_KEYS)
    horizons = sweep.get("horizons", DEFAULT_SWEEP)
    if not isinstance(horizons, list | tuple):
        raise ConfigError("expected a list of lengths", "sweep", "horizons")

    return _build(
        "sweep",
        ScenarioConfig,
        paths=Paths(**paths),
        initial=_build("initial", InitialSpec, **_section(data, "initial", INITIAL_KEYS)),
        bike=_build("bike", BikeParams, **_section(data, "bike", bike_keys)),
        ocp=_ocp_from(_section(data, "ocp", OCP_KEYS)),
        risk=_build("risk", RiskThresholds, **risk),
        window_m=window_m,
        matching=_build("matching", MatchingParams, **_section(data, "matching", matching_keys)),
        horizons=tuple(float(h) for h in horizons),
        jobs=int(sweep.get("jobs", 1)),
    )


def load_config(path) -> ScenarioConfig:
    """Read a scenario TOML file; errors name the section and key at fault."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file not found: {path}")
    try:
        data = toml.load(path)
    except toml.TomlDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    logger.debug("Loaded scenario configuration %s", path)
    return config_from_dict(data, path.parent)


def dump_config(config: ScenarioConfig) -> str:
    """TOML text reproducing a configuration."""
    data = {
        "paths": {k: str(v) for k, v in dataclasses.asdict(config.paths).items() if v is not None},
        "initial": {k: v for k, v in dataclasses.asdict(config.initial).items() if v is not None},
        "bike": config.bike.to_dict(),
        "ocp": {k: v for k, v in dataclasses.asdict(config.ocp).items() if k != "s0"},
        "risk": dict(config.risk.to_dict(), **({"window_m": config.window_m} if config.window_m else {})),
        "matching": dataclasses.asdict(config.matching),
        "sweep": {"horizons": list(config.horizons), "jobs": config.jobs},
    }
    return toml.dumps(data)
