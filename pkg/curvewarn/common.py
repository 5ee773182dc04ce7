"""
State and input types shared by the model, the optimizer and state fusion.

The optimizer works on plain arrays; these dataclasses are the typed view of
one row of those arrays. Index constants give the column of every state.
"""

import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from curvewarn.err import SingularGeometry

STATE_NAMES = ("n", "alpha", "phi", "u_x", "w_psi", "w_phi", "a_x", "a_psi")
INPUT_NAMES = ("j_x", "j_psi")
N_STATE = len(STATE_NAMES)
N_INPUT = len(INPUT_NAMES)

N, ALPHA, PHI, UX, WPSI, WPHI, AX, APSI = range(N_STATE)
JX, JPSI = range(N_INPUT)


def _require_finite(obj):
    for f in fields(obj):
        value = getattr(obj, f.name)
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise TypeError(
                f"{type(obj).__name__} '{f.name}' must be a number, got {value!r}."
            )
        if not math.isfinite(value):
            raise ValueError(f"{type(obj).__name__} '{f.name}' must be finite.")


@dataclass(frozen=True)
class StateSpace:
    """Space-domain state: the time-domain state without the arc length s."""

    n: float
    alpha: float
    phi: float
    u_x: float
    w_psi: float = 0.0
    w_phi: float = 0.0
    a_x: float = 0.0
    a_psi: float = 0.0

    def __post_init__(self):
        _require_finite(self)
        if self.u_x <= 0:
            raise ValueError(
                f"Forward speed u_x must be positive, got {self.u_x} m/s; "
                f"the model is only valid in forward motion."
            )

    def check_geometry(self, kappa: float) -> None:
        if 1.0 - self.n * kappa <= 0:
            raise SingularGeometry(
                f"Lateral offset n={self.n} m reaches the centre of curvature "
                f"(kappa={kappa} 1/m)."
            )

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values) -> "StateSpace":
        values = np.asarray(values, dtype=float)
        if values.shape != (N_STATE,):
            raise ValueError(f"Expected {N_STATE} state values, got {values.shape}.")
        return cls(*(float(v) for v in values))

    def replace(self, **changes) -> "StateSpace":
        data = dict(zip(STATE_NAMES, astuple(self), strict=True))
        data.update(changes)
        return StateSpace(**data)


@dataclass(frozen=True)
class StateTime:
    """Time-domain state: arc length s followed by the space-domain state."""

    s: float
    n: float
    alpha: float
    phi: float
    u_x: float
    w_psi: float = 0.0
    w_phi: float = 0.0
    a_x: float = 0.0
    a_psi: float = 0.0

    def __post_init__(self):
        _require_finite(self)
        if self.u_x <= 0:
            raise ValueError(
                f"Forward speed u_x must be positive, got {self.u_x} m/s."
            )

    @property
    def space(self) -> StateSpace:
        return StateSpace(*astuple(self)[1:])

    @classmethod
    def at(cls, s: float, x: StateSpace) -> "StateTime":
        return cls(s, *astuple(x))


@dataclass(frozen=True)
class ControlInput:
    j_x: float = 0.0
    j_psi: float = 0.0

    def __post_init__(self):
        _require_finite(self)

    def to_array(self) -> np.ndarray:
        return np.array([self.j_x, self.j_psi], dtype=float)


def as_state_array(x) -> np.ndarray:
    if isinstance(x, StateSpace):
        return x.to_array()
    if isinstance(x, StateTime):
        return x.space.to_array()
    return np.asarray(x, dtype=float)


def as_input_array(u) -> np.ndarray:
    if isinstance(u, ControlInput):
        return u.to_array()
    return np.asarray(u, dtype=float)
