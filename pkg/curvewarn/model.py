"""
Single-track motorcycle model in road-aligned coordinates.

The time-domain model has nine states ``[s, n, alpha, phi, u_x, w_psi, w_phi,
a_x, a_psi]`` driven by the longitudinal and yaw jerk. Dividing every row by
the progress rate ``s_dot`` eliminates ``s`` and gives the space-domain model
used by the trajectory optimizer.

Every function comes in two flavours: a typed one working on a single
StateSpace/ControlInput/RoadSample, and a vectorised one (``*_rhs``,
``*_jacobians``) working on arrays whose last axis holds the states. The
vectorised functions do not validate their inputs; the optimizer keeps its
iterates inside the region where the transform is defined.
"""

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from curvewarn.common import (
    ALPHA,
    APSI,
    AX,
    JPSI,
    JX,
    N,
    N_INPUT,
    N_STATE,
    PHI,
    UX,
    WPHI,
    WPSI,
    ControlInput,
    StateSpace,
    StateTime,
    as_input_array,
    as_state_array,
)
from curvewarn.err import SingularGeometry, SingularProgress
from curvewarn.road import RoadSample

EPS_S = 0.1  # minimum progress rate [m/s]


@dataclass(frozen=True)
class BikeParams:
    """Physical parameters of motorcycle and rider."""

    g: float = 9.81
    h: float = 0.6
    r: float = 0.1
    rho_x: float = 0.3
    R: float = 0.3
    m: float = 280.0
    I_w: float = 0.7
    h_r: float = 1.0
    h_c: float = 1.2
    a_x_max: float = 4.0
    a_y_max: float = 7.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise TypeError(f"BikeParams '{f.name}' must be a number.")
            if not (math.isfinite(value) and value > 0):
                raise ValueError(
                    f"BikeParams '{f.name}' must be strictly positive, got {value}."
                )
        if self.a_x_max > self.a_y_max:
            raise ValueError(
                f"a_x_max ({self.a_x_max}) must not exceed a_y_max ({self.a_y_max})."
            )

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# vectorised core
# ---------------------------------------------------------------------------


def _columns(x):
    return tuple(x[..., i] for i in range(N_STATE))


def _roll_terms(phi, u_x, w_psi, w_phi, p: BikeParams):
    """Numerator and denominator of the roll acceleration."""
    sp, cp = np.sin(phi), np.cos(phi)
    k_w = p.I_w / p.m
    num = (
        p.h * p.g * sp
        - p.h * w_psi * u_x * cp
        + p.h**2 * w_psi**2 * sp * cp
        + k_w * w_psi * cp * (w_psi * sp - u_x / p.R)
        + p.r * p.h * (w_phi**2 + w_psi**2) * sp
        - p.r * w_psi * u_x
    )
    den = p.rho_x**2 + p.h**2 + p.r * p.h * cp
    return num, den


def progress_rate(x, kappa):
    """s_dot = u_x cos(alpha) / (1 - n kappa); broadcasts over stages."""
    x = as_state_array(x)
    return x[..., UX] * np.cos(x[..., ALPHA]) / (1.0 - x[..., N] * kappa)


def time_rhs(x, u, kappa, sigma, p: BikeParams):
    """
    Time derivatives of the eight space-domain states and the progress rate.

    Returns ``(s_dot, F)`` where ``F`` has the shape of ``x``.
    """
    n, alpha, phi, u_x, w_psi, w_phi, a_x, a_psi = _columns(x)
    ca = np.cos(alpha)
    s_dot = u_x * ca / (1.0 - n * kappa)
    num, den = _roll_terms(phi, u_x, w_psi, w_phi, p)
    F = np.stack(
        [
            u_x * np.sin(alpha),
            w_psi - kappa * s_dot,
            w_phi,
            a_x + p.g * sigma * ca,
            a_psi,
            num / den,
            u[..., JX] * np.ones_like(n),
            u[..., JPSI] * np.ones_like(n),
        ],
        axis=-1,
    )
    return s_dot, F


def space_rhs(x, u, kappa, sigma, p: BikeParams):
    s_dot, F = time_rhs(x, u, kappa, sigma, p)
    return F / s_dot[..., None]


def space_jacobians(x, u, kappa, sigma, p: BikeParams):
    """
    Analytic Jacobians of ``space_rhs``: ``(A, B)`` with shapes (..., 8, 8)
    and (..., 8, 2).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n, alpha, phi, u_x, w_psi, w_phi, a_x, a_psi = _columns(x)
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), n.shape)
    sa, ca = np.sin(alpha), np.cos(alpha)
    sp, cp = np.sin(phi), np.cos(phi)
    geo = 1.0 - n * kappa

    s_dot, F = time_rhs(x, u, kappa, sigma, p)
    q = 1.0 / s_dot

    ds_dn = u_x * ca * kappa / geo**2
    ds_dalpha = -u_x * sa / geo
    ds_du = ca / geo

    dF = np.zeros(x.shape + (N_STATE,))
    dF[..., N, ALPHA] = u_x * ca
    dF[..., N, UX] = sa
    dF[..., ALPHA, N] = -kappa * ds_dn
    dF[..., ALPHA, ALPHA] = -kappa * ds_dalpha
    dF[..., ALPHA, UX] = -kappa * ds_du
    dF[..., ALPHA, WPSI] = 1.0
    dF[..., PHI, WPHI] = 1.0
    dF[..., UX, ALPHA] = -p.g * sigma * sa
    dF[..., UX, AX] = 1.0
    dF[..., WPSI, APSI] = 1.0

    k_w = p.I_w / p.m
    num, den = _roll_terms(phi, u_x, w_psi, w_phi, p)
    dnum_dphi = (
        p.h * p.g * cp
        + p.h * w_psi * u_x * sp
        + p.h**2 * w_psi**2 * (cp**2 - sp**2)
        + k_w * w_psi * (-sp * (w_psi * sp - u_x / p.R) + w_psi * cp**2)
        + p.r * p.h * (w_phi**2 + w_psi**2) * cp
    )
    dden_dphi = -p.r * p.h * sp
    dnum_du = -p.h * w_psi * cp - k_w * w_psi * cp / p.R - p.r * w_psi
    dnum_dwpsi = (
        -p.h * u_x * cp
        + 2.0 * p.h**2 * w_psi * sp * cp
        + k_w * cp * (2.0 * w_psi * sp - u_x / p.R)
        + 2.0 * p.r * p.h * w_psi * sp
        - p.r * u_x
    )
    dnum_dwphi = 2.0 * p.r * p.h * w_phi * sp
    dF[..., WPHI, PHI] = (dnum_dphi * den - num * dden_dphi) / den**2
    dF[..., WPHI, UX] = dnum_du / den
    dF[..., WPHI, WPSI] = dnum_dwpsi / den
    dF[..., WPHI, WPHI] = dnum_dwphi / den

    dq = np.zeros(x.shape)
    dq[..., N] = -kappa / (u_x * ca)
    dq[..., ALPHA] = geo * sa / (u_x * ca**2)
    dq[..., UX] = -geo / (u_x**2 * ca)

    A = q[..., None, None] * dF + F[..., :, None] * dq[..., None, :]
    B = np.zeros(x.shape + (N_INPUT,))
    B[..., AX, JX] = q
    B[..., APSI, JPSI] = q
    return A, B


# ---------------------------------------------------------------------------
# typed single-stage interface
# ---------------------------------------------------------------------------


def _check_geometry(x: np.ndarray, road: RoadSample) -> None:
    if 1.0 - x[N] * road.kappa <= 0:
        raise SingularGeometry(
            f"1 - n*kappa = {1.0 - x[N] * road.kappa:.3g} <= 0 "
            f"(n={x[N]} m, kappa={road.kappa} 1/m)."
        )


def _check_progress(x: np.ndarray, road: RoadSample) -> float:
    _check_geometry(x, road)
    s_dot = float(progress_rate(x, road.kappa))
    if s_dot <= EPS_S:
        raise SingularProgress(
            f"Progress rate s_dot={s_dot:.4g} m/s is below {EPS_S} m/s "
            f"(u_x={x[UX]}, alpha={x[ALPHA]})."
        )
    return s_dot


# Return the nine time derivatives [s, n, alpha, ..., a_psi].
def time_dynamics(
    x: StateTime, u: ControlInput, road: RoadSample, p: BikeParams
) -> np.ndarray:
    xs = as_state_array(x)
    _check_geometry(xs, road)
    s_dot, F = time_rhs(xs, as_input_array(u), road.kappa, road.sigma, p)
    return np.concatenate([[float(s_dot)], F])


# Return the eight space derivatives d/ds of the space-domain state.
def space_dynamics(
    x: StateSpace, u: ControlInput, road: RoadSample, p: BikeParams
) -> np.ndarray:
    xs = as_state_array(x)
    _check_progress(xs, road)
    return space_rhs(xs, as_input_array(u), road.kappa, road.sigma, p)


def euler_step(
    x_k: StateSpace, u_k: ControlInput, d_s: float, road: RoadSample, p: BikeParams
) -> StateSpace:
    """One explicit Euler step of length d_s in the space domain."""
    if d_s < 0:
        raise ValueError(f"Step length d_s must be non-negative, got {d_s}.")
    xs = as_state_array(x_k)
    return StateSpace.from_array(xs + d_s * space_dynamics(x_k, u_k, road, p))


def jacobians(
    x: StateSpace, u: ControlInput, road: RoadSample, p: BikeParams
) -> tuple[np.ndarray, np.ndarray]:
    xs = as_state_array(x)
    _check_progress(xs, road)
    return space_jacobians(xs, as_input_array(u), road.kappa, road.sigma, p)


def longitudinal_acceleration(x, sigma, p: BikeParams):
    """a_x + g sigma cos(alpha); broadcasts over stages."""
    x = as_state_array(x)
    return x[..., AX] + p.g * sigma * np.cos(x[..., ALPHA])


def lateral_acceleration(x):
    """u_x w_psi, the no-slip lateral acceleration."""
    x = as_state_array(x)
    return x[..., UX] * x[..., WPSI]


def steady_state_roll(u_x, kappa, g: float = 9.81):
    """Roll angle balancing gravity against the centripetal acceleration."""
    return np.arctan(np.asarray(u_x, dtype=float) ** 2 * kappa / g)
