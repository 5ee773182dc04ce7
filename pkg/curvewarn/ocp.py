"""
Minimum-time trajectory problem over a look-ahead horizon.

The horizon is discretised in space with step ``d_s``: the states
``x_0 .. x_{N+1}`` sit at ``s0 + k*d_s`` and the inputs ``u_0 .. u_N`` act
between them through explicit Euler steps of the space-domain model. ``x_0``
is the measured state and not a decision variable.

Decision vector layout: ``[x_1, ..., x_{N+1}, u_0, ..., u_N]``, eight
entries per state followed by two per input.

Constraints:

* Euler defects ``x_{k+1} - x_k - d_s f(x_k, u_k)`` for k = 0..N, and six
  linear terminal conditions on ``x_{N+1}`` (lane centre, straight heading,
  no roll rate, no accelerations, steady yaw rate);
* the g-g ellipse on ``x_1 .. x_{N+1}``; on ``x_0`` it is checked as data
  and a violation marks the problem infeasible;
* hard bounds on every variable, the speed limit included, and the
  roll-dependent lane ``0 <= n + phi*h_r <= b``, ``0 <= n <= b``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

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
    as_state_array,
)
from curvewarn.err import EmptyLane, HorizonExceedsMap, SingularGeometry, SingularProgress
from curvewarn.model import (
    EPS_S,
    BikeParams,
    longitudinal_acceleration,
    space_jacobians,
    space_rhs,
    steady_state_roll,
)
from curvewarn.road import RoadProfile, RoadSample, RoadSamples
from curvewarn.sqp import NlpProblem, SqpOptions, Status, minimize

logger = logging.getLogger(__name__)

# Bound sets X(s) and U.
ROLL_MAX = 1.05  # 60 degrees
ALPHA_MAX = 0.5
W_PSI_MAX = 2.0
W_PHI_MAX = 3.0
A_PSI_MAX = 5.0
J_X_MAX = 10.0
J_PSI_MAX = 20.0

MIN_HORIZON_STEPS = 10
N_TERMINAL = 6
HESSIAN_FLOOR = 1e-6
GUESS_LATERAL_MARGIN = 0.95

__all__ = [
    "OcpConfig",
    "OcpSolution",
    "Status",
    "Trajectory",
    "TrajectoryProblem",
    "build_problem",
    "gg_constraint",
    "gg_ratio",
    "initial_guess",
    "lane_bounds",
    "plan_trajectory",
    "solve",
    "stage_costs",
    "terminal_residual",
]


@dataclass(frozen=True)
class OcpConfig:
    N: int
    d_s: float = 1.0
    s0: float = 0.0
    q_t: float = 1.0
    q_a: float = 0.1
    r_x: float = 0.05
    r_psi: float = 0.05
    feas_tol: float = 1e-6
    stat_tol: float = 1e-6
    max_iter: int = 200
    include_slope: bool = True
    include_roll_lane: bool = True

    def __post_init__(self):
        if not isinstance(self.N, int) or isinstance(self.N, bool):
            raise TypeError("OcpConfig 'N' must be an integer.")
        if self.N < MIN_HORIZON_STEPS:
            raise ValueError(
                f"Horizon needs at least {MIN_HORIZON_STEPS} steps, got N={self.N}."
            )
        if not self.d_s > 0:
            raise ValueError(f"Discretisation d_s must be positive, got {self.d_s}.")
        for name in ("q_t", "q_a", "r_x", "r_psi"):
            if getattr(self, name) < 0:
                raise ValueError(f"Cost weight '{name}' must be non-negative.")
        if not (self.feas_tol > 0 and self.stat_tol > 0):
            raise ValueError("Solver tolerances must be positive.")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1.")

    @classmethod
    def from_horizon(cls, length: float, d_s: float = 1.0, **kwargs) -> "OcpConfig":
        """Config whose N steps of d_s cover ``length`` metres."""
        return cls(N=int(round(length / d_s)), d_s=d_s, **kwargs)

    @property
    def horizon(self) -> float:
        """Distance from x_0 to x_{N+1}."""
        return (self.N + 1) * self.d_s

    @property
    def s_grid(self) -> np.ndarray:
        return self.s0 + self.d_s * np.arange(self.N + 2)

    def sqp_options(self) -> SqpOptions:
        return SqpOptions(
            feas_tol=self.feas_tol, stat_tol=self.stat_tol, max_iter=self.max_iter
        )


@dataclass(frozen=True)
class Trajectory:
    """States (N+2, 8) and inputs (N+1, 2) on the horizon grid."""

    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        if self.states.ndim != 2 or self.states.shape[1] != N_STATE:
            raise ValueError(f"States must have shape (N+2, {N_STATE}).")
        if self.inputs.shape != (self.states.shape[0] - 1, N_INPUT):
            raise ValueError(
                f"Inputs must have shape ({self.states.shape[0] - 1}, {N_INPUT})."
            )


@dataclass(frozen=True)
class OcpSolution:
    x: np.ndarray
    u: np.ndarray
    s_grid: np.ndarray
    objective: float
    cost_breakdown: tuple[float, float, float]
    kkt_residual: float
    feasibility_residual: float
    status: Status
    gg_ratio: np.ndarray
    n_lo: np.ndarray
    n_hi: np.ndarray
    time: float
    iterations: int = 0
    penalty: float = 0.0
    solve_time: float = 0.0
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def states(self) -> tuple[StateSpace, ...]:
        return tuple(StateSpace.from_array(row) for row in self.x)

    @property
    def inputs(self) -> tuple[ControlInput, ...]:
        return tuple(ControlInput(float(a), float(b)) for a, b in self.u)

    @property
    def j_x(self) -> np.ndarray:
        return self.u[:, JX]

    @property
    def lane_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.n_lo, self.n_hi

    @property
    def N(self) -> int:
        return len(self.u) - 1


# ---------------------------------------------------------------------------
# constraint and cost primitives
# ---------------------------------------------------------------------------


def gg_ratio(x, sigma, p: BikeParams):
    """Left-hand side of the g-g ellipse; broadcasts over stages."""
    x = as_state_array(x)
    a_long = longitudinal_acceleration(x, sigma, p)
    a_lat = x[..., UX] * x[..., WPSI]
    return (a_long / p.a_x_max) ** 2 + (a_lat / p.a_y_max) ** 2


def _gg_gradient(x: np.ndarray, sigma, p: BikeParams) -> np.ndarray:
    grad = np.zeros_like(x)
    a_long = longitudinal_acceleration(x, sigma, p)
    u_x, w_psi = x[..., UX], x[..., WPSI]
    grad[..., AX] = 2.0 * a_long / p.a_x_max**2
    grad[..., ALPHA] = -2.0 * a_long * p.g * sigma * np.sin(x[..., ALPHA]) / p.a_x_max**2
    grad[..., UX] = 2.0 * u_x * w_psi**2 / p.a_y_max**2
    grad[..., WPSI] = 2.0 * u_x**2 * w_psi / p.a_y_max**2
    return grad


def gg_constraint(x: StateSpace, road: RoadSample, p: BikeParams) -> float:
    """Combined acceleration ratio; the state is feasible iff it is <= 1."""
    return float(gg_ratio(x, road.sigma, p))


def _lane_interval(phi, width, h_r: float, include_roll_lane: bool = True):
    phi = np.asarray(phi, dtype=float)
    width = np.asarray(width, dtype=float)
    if not include_roll_lane:
        return np.zeros(np.broadcast(phi, width).shape), width * np.ones_like(phi)
    lo = np.maximum(0.0, -phi * h_r)
    hi = np.minimum(width, width - phi * h_r)
    return lo, hi


def lane_bounds(
    phi: float, road: RoadSample, p: BikeParams, include_roll_lane: bool = True
) -> tuple[float, float]:
    """Admissible lateral offsets for a given roll angle."""
    lo, hi = _lane_interval(phi, road.width, p.h_r, include_roll_lane)
    lo, hi = float(lo), float(hi)
    if lo >= hi:
        raise EmptyLane(
            f"Roll angle {phi:.3f} rad leaves no room in a {road.width} m lane "
            f"(n_lo={lo:.3f}, n_hi={hi:.3f}, h_r={p.h_r} m)."
        )
    return lo, hi


def _steady_yaw_factor(road: RoadSample | RoadSamples):
    """kappa / (1 - kappa*b/2): terminal yaw rate per unit speed."""
    geo = 1.0 - 0.5 * road.width * road.kappa
    if np.any(np.asarray(geo) <= 0):
        raise SingularGeometry(
            f"Lane centre lies beyond the centre of curvature (kappa={road.kappa})."
        )
    return road.kappa / geo


def terminal_residual(x_T: StateSpace, road: RoadSample) -> np.ndarray:
    x = as_state_array(x_T)
    factor = _steady_yaw_factor(road)
    return np.array(
        [
            x[N] - 0.5 * road.width,
            x[ALPHA],
            x[WPHI],
            x[AX],
            x[APSI],
            x[WPSI] - factor * x[UX],
        ]
    )


def _time_per_metre(x: np.ndarray, kappa) -> np.ndarray:
    return (1.0 - x[..., N] * kappa) / (x[..., UX] * np.cos(x[..., ALPHA]))


def _time_per_metre_gradient(x: np.ndarray, kappa) -> np.ndarray:
    grad = np.zeros_like(x)
    geo = 1.0 - x[..., N] * kappa
    u_x, ca, sa = x[..., UX], np.cos(x[..., ALPHA]), np.sin(x[..., ALPHA])
    grad[..., N] = -kappa / (u_x * ca)
    grad[..., ALPHA] = geo * sa / (u_x * ca**2)
    grad[..., UX] = -geo / (u_x**2 * ca)
    return grad


def _horizon_road(profile: RoadProfile, config: OcpConfig) -> RoadSamples:
    s_grid = config.s_grid
    if not profile.contains(s_grid):
        raise HorizonExceedsMap(
            f"Horizon [{s_grid[0]:.1f}, {s_grid[-1]:.1f}] m exceeds the road "
            f"profile [{profile.s_start:.1f}, {profile.s_end:.1f}] m."
        )
    road = profile.query_many(s_grid)
    return road if config.include_slope else road.flat()


def _cost_terms(X, U, road: RoadSamples, config: OcpConfig, p: BikeParams):
    j_t = config.q_t * config.d_s * float(np.sum(_time_per_metre(X[:-1], road.kappa[:-1])))
    j_a = config.q_a * float(np.sum(gg_ratio(X, road.sigma, p)))
    j_j = float(np.sum(config.r_x * U[:, JX] ** 2 + config.r_psi * U[:, JPSI] ** 2))
    return j_t, j_a, j_j


def _as_rows(values, width: int) -> np.ndarray:
    if len(values) and isinstance(values[0], (StateSpace, ControlInput)):
        return np.array([v.to_array() for v in values])
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ValueError(f"Expected rows of {width} values, got shape {arr.shape}.")
    return arr


def stage_costs(states, inputs, profile: RoadProfile, config: OcpConfig, p: BikeParams):
    """Return (J_t, J_a, J_j) of a trajectory on the configured horizon."""
    X = _as_rows(states, N_STATE)
    U = _as_rows(inputs, N_INPUT)
    if X.shape[0] != config.N + 2 or U.shape[0] != config.N + 1:
        raise ValueError(
            f"Trajectory has {X.shape[0]} states and {U.shape[0]} inputs; "
            f"N={config.N} needs {config.N + 2} and {config.N + 1}."
        )
    road = _horizon_road(profile, config)
    progress = X[:-1, UX] * np.cos(X[:-1, ALPHA])
    if np.any(progress <= EPS_S):
        k = int(np.argmax(progress <= EPS_S))
        raise SingularProgress(
            f"Stage {k} moves at u_x*cos(alpha)={progress[k]:.4g} m/s <= {EPS_S} m/s."
        )
    return _cost_terms(X, U, road, config, p)


# ---------------------------------------------------------------------------
# nonlinear program
# ---------------------------------------------------------------------------


class TrajectoryProblem(NlpProblem):
    """The discretised trajectory problem in the form the SQP driver expects."""

    def __init__(self, profile: RoadProfile, x0, config: OcpConfig, p: BikeParams):
        self.profile = profile
        self.config = config
        self.params = p
        self.x0 = as_state_array(x0).copy()
        self.road = _horizon_road(profile, config)
        self.s_grid = config.s_grid
        self.N = config.N
        self.n_x = N_STATE * (self.N + 1)
        self.n_u = N_INPUT * (self.N + 1)
        if 1.0 - self.x0[N] * self.road.kappa[0] <= 0:
            raise SingularGeometry(
                f"Initial offset n={self.x0[N]} m is beyond the centre of curvature."
            )
        self._build_bounds()
        self._build_lane_rows()

    # -- layout --------------------------------------------------------------

    def unpack(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.vstack([self.x0, z[: self.n_x].reshape(self.N + 1, N_STATE)])
        U = z[self.n_x :].reshape(self.N + 1, N_INPUT)
        return X, U

    def pack(self, trajectory: Trajectory) -> np.ndarray:
        return np.concatenate([trajectory.states[1:].ravel(), trajectory.inputs.ravel()])

    def x_index(self, k: int) -> int:
        """Offset of x_k (k >= 1) in the decision vector."""
        return (k - 1) * N_STATE

    def u_index(self, k: int) -> int:
        return self.n_x + k * N_INPUT

    @property
    def n_equalities(self) -> int:
        return N_STATE * (self.N + 1) + N_TERMINAL

    # -- bounds --------------------------------------------------------------

    def roll_limit(self) -> np.ndarray:
        """Per-state roll bound; tightened so the roll-dependent lane stays open."""
        limit = np.full(self.N + 2, ROLL_MAX)
        if self.config.include_roll_lane:
            limit = np.minimum(limit, 0.999 * self.road.width / self.params.h_r)
        return limit

    def _build_bounds(self):
        p = self.params
        K = self.N + 1
        roll = self.roll_limit()[1:]
        lo_x = np.zeros((K, N_STATE))
        hi_x = np.zeros((K, N_STATE))
        lo_x[:, N], hi_x[:, N] = 0.0, self.road.width[1:]
        lo_x[:, ALPHA], hi_x[:, ALPHA] = -ALPHA_MAX, ALPHA_MAX
        lo_x[:, PHI], hi_x[:, PHI] = -roll, roll
        lo_x[:, UX], hi_x[:, UX] = EPS_S, np.maximum(self.road.u_limit[1:], EPS_S)
        lo_x[:, WPSI], hi_x[:, WPSI] = -W_PSI_MAX, W_PSI_MAX
        lo_x[:, WPHI], hi_x[:, WPHI] = -W_PHI_MAX, W_PHI_MAX
        # |a_x + g sigma cos(alpha)| <= a_x_max implies this box
        lo_x[:, AX], hi_x[:, AX] = -(p.a_x_max + p.g), p.a_x_max + p.g
        lo_x[:, APSI], hi_x[:, APSI] = -A_PSI_MAX, A_PSI_MAX
        lo_u = np.tile([-J_X_MAX, -J_PSI_MAX], (K, 1))
        self.lower = np.concatenate([lo_x.ravel(), lo_u.ravel()])
        self.upper = np.concatenate([hi_x.ravel(), -lo_u.ravel()])

    def _build_lane_rows(self):
        n_vars = self.n_x + self.n_u
        if not self.config.include_roll_lane:
            self.linear_rows = sp.csr_matrix((0, n_vars))
            self.linear_rhs = np.zeros(0)
            return
        rows, cols, vals = [], [], []
        rhs = []
        h_r = self.params.h_r
        for k in range(1, self.N + 2):
            i = self.x_index(k)
            r = len(rhs)
            # -(n + phi*h_r) <= 0
            rows += [r, r]
            cols += [i + N, i + PHI]
            vals += [-1.0, -h_r]
            rhs.append(0.0)
            # n + phi*h_r <= b
            rows += [r + 1, r + 1]
            cols += [i + N, i + PHI]
            vals += [1.0, h_r]
            rhs.append(self.road.width[k])
        self.linear_rows = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), n_vars))
        self.linear_rhs = np.array(rhs)

    # -- callbacks -----------------------------------------------------------

    def costs(self, z: np.ndarray) -> tuple[float, float, float]:
        X, U = self.unpack(z)
        return _cost_terms(X, U, self.road, self.config, self.params)

    def objective(self, z):
        return float(sum(self.costs(z)))

    def gradient(self, z):
        cfg, p, road = self.config, self.params, self.road
        X, U = self.unpack(z)
        gx = cfg.q_a * _gg_gradient(X[1:], road.sigma[1:], p)
        gx[:-1] += cfg.q_t * cfg.d_s * _time_per_metre_gradient(X[1:-1], road.kappa[1:-1])
        gu = np.column_stack([2.0 * cfg.r_x * U[:, JX], 2.0 * cfg.r_psi * U[:, JPSI]])
        return np.concatenate([gx.ravel(), gu.ravel()])

    def _terminal_factor(self) -> float:
        return float(_steady_yaw_factor(self.road[-1]))

    def equalities(self, z):
        X, U = self.unpack(z)
        road = self.road
        f = space_rhs(X[:-1], U, road.kappa[:-1], road.sigma[:-1], self.params)
        defects = X[1:] - X[:-1] - self.config.d_s * f
        x_T = X[-1]
        terminal = np.array(
            [
                x_T[N] - 0.5 * road.width[-1],
                x_T[ALPHA],
                x_T[WPHI],
                x_T[AX],
                x_T[APSI],
                x_T[WPSI] - self._terminal_factor() * x_T[UX],
            ]
        )
        return np.concatenate([defects.ravel(), terminal])

    def equality_jacobian(self, z):
        X, U = self.unpack(z)
        road, d_s = self.road, self.config.d_s
        A, B = space_jacobians(X[:-1], U, road.kappa[:-1], road.sigma[:-1], self.params)
        rows, cols, vals = [], [], []
        r8 = np.arange(N_STATE)
        eye = np.eye(N_STATE)
        for k in range(self.N + 1):
            r0 = N_STATE * k
            # d/dx_{k+1}
            rows.append(r0 + r8)
            cols.append(self.x_index(k + 1) + r8)
            vals.append(np.ones(N_STATE))
            if k >= 1:
                blk = -eye - d_s * A[k]
                rr, cc = np.meshgrid(r8, r8, indexing="ij")
                rows.append(r0 + rr.ravel())
                cols.append(self.x_index(k) + cc.ravel())
                vals.append(blk.ravel())
            rr, cc = np.meshgrid(r8, np.arange(N_INPUT), indexing="ij")
            rows.append(r0 + rr.ravel())
            cols.append(self.u_index(k) + cc.ravel())
            vals.append((-d_s * B[k]).ravel())
        rt = N_STATE * (self.N + 1)
        iT = self.x_index(self.N + 1)
        rows.append(rt + np.array([0, 1, 2, 3, 4, 5, 5]))
        cols.append(iT + np.array([N, ALPHA, WPHI, AX, APSI, WPSI, UX]))
        vals.append(np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -self._terminal_factor()]))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_equalities, self.n_x + self.n_u),
        )

    def inequalities(self, z):
        X, _ = self.unpack(z)
        return gg_ratio(X[1:], self.road.sigma[1:], self.params) - 1.0

    def inequality_jacobian(self, z):
        X, _ = self.unpack(z)
        grad = _gg_gradient(X[1:], self.road.sigma[1:], self.params)
        K = self.N + 1
        rows = np.repeat(np.arange(K), N_STATE)
        cols = (np.arange(K)[:, None] * N_STATE + np.arange(N_STATE)).ravel()
        return sp.csr_matrix((grad.ravel(), (rows, cols)), shape=(K, self.n_x + self.n_u))

    def _stage_gradients(self, W, nu_stage, lam_stage):
        """Gradient of each stage's Lagrangian w.r.t. (x_k, u_k); W is (N+2, 10)."""
        cfg, p, road = self.config, self.params, self.road
        x, u = W[:, :N_STATE], W[:, N_STATE:]
        K = self.N + 1
        gx = (cfg.q_a + lam_stage)[:, None] * _gg_gradient(x, road.sigma, p)
        gx[:K] += cfg.q_t * cfg.d_s * _time_per_metre_gradient(x[:K], road.kappa[:K])
        A, B = space_jacobians(x[:K], u[:K], road.kappa[:K], road.sigma[:K], p)
        gx[:K] -= cfg.d_s * np.einsum("kij,ki->kj", A, nu_stage)
        gu = np.zeros_like(u)
        gu[:K, JX] = 2.0 * cfg.r_x * u[:K, JX]
        gu[:K, JPSI] = 2.0 * cfg.r_psi * u[:K, JPSI]
        gu[:K] -= cfg.d_s * np.einsum("kij,ki->kj", B, nu_stage)
        return np.hstack([gx, gu])

    def hessian(self, z, nu, lam):
        """
        Block-diagonal convexified Lagrangian Hessian, one 10x10 block per
        stage, from central differences of the analytic stage gradients.
        """
        X, U = self.unpack(z)
        K = self.N + 1
        W = np.hstack([X, np.vstack([U, np.zeros((1, N_INPUT))])])
        nu_stage = nu[: N_STATE * K].reshape(K, N_STATE)
        lam_stage = np.concatenate([[0.0], lam])
        dim = N_STATE + N_INPUT
        blocks = np.zeros((K + 1, dim, dim))
        for j in range(dim):
            h = 1e-6 * (1.0 + np.abs(W[:, j]))
            Wp, Wm = W.copy(), W.copy()
            Wp[:, j] += h
            Wm[:, j] -= h
            gp = self._stage_gradients(Wp, nu_stage, lam_stage)
            gm = self._stage_gradients(Wm, nu_stage, lam_stage)
            blocks[:, :, j] = (gp - gm) / (2.0 * h[:, None])
        blocks = 0.5 * (blocks + blocks.transpose(0, 2, 1))
        # x_0 is data; x_{N+1} has no input
        blocks[0, :N_STATE, :] = 0.0
        blocks[0, :, :N_STATE] = 0.0
        blocks[-1, N_STATE:, :] = 0.0
        blocks[-1, :, N_STATE:] = 0.0
        w, V = np.linalg.eigh(blocks)
        w = np.maximum(w, HESSIAN_FLOOR)
        blocks = np.einsum("kij,kj,klj->kil", V, w, V)

        rows, cols, vals = [], [], []
        for k in range(K + 1):
            idx = []
            if k >= 1:
                idx += list(range(self.x_index(k), self.x_index(k) + N_STATE))
                local = list(range(N_STATE))
            else:
                local = []
            if k <= self.N:
                idx += list(range(self.u_index(k), self.u_index(k) + N_INPUT))
                local += [N_STATE, N_STATE + 1]
            idx = np.array(idx)
            sub = blocks[k][np.ix_(local, local)]
            rr, cc = np.meshgrid(idx, idx, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(sub.ravel())
        n = self.n_x + self.n_u
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )


def build_problem(
    profile: RoadProfile, x0: StateSpace, config: OcpConfig, p: BikeParams
) -> TrajectoryProblem:
    return TrajectoryProblem(profile, x0, config, p)


# ---------------------------------------------------------------------------
# initial guess and solve
# ---------------------------------------------------------------------------


def initial_guess(
    profile: RoadProfile,
    x0: StateSpace,
    config: OcpConfig,
    p: BikeParams | None = None,
) -> Trajectory:
    """
    Constant-speed ride along the lane centre with steady-state cornering
    roll and yaw rate, and zero inputs.

    The speed is ``min(u_x(0), u_limit)`` per stage, further capped so the
    steady cornering acceleration stays inside the g-g ellipse.
    """
    p = p or BikeParams()
    x0 = as_state_array(x0)
    road = _horizon_road(profile, config)
    K = config.N + 2
    n = 0.5 * road.width
    geo = 1.0 - n * road.kappa
    u = np.minimum(x0[UX], road.u_limit)
    curved = np.abs(road.kappa) > 1e-12
    cap = np.sqrt(
        GUESS_LATERAL_MARGIN * p.a_y_max * geo / np.where(curved, np.abs(road.kappa), 1.0)
    )
    u = np.where(curved, np.minimum(u, cap), u)
    u = np.maximum(u, 2.0 * EPS_S)
    roll_max = np.full(K, ROLL_MAX)
    if config.include_roll_lane:
        roll_max = np.minimum(roll_max, 0.999 * road.width / p.h_r)
    phi = np.clip(steady_state_roll(u, road.kappa, p.g), -roll_max, roll_max)
    X = np.zeros((K, N_STATE))
    X[:, N] = n
    X[:, PHI] = phi
    X[:, UX] = u
    X[:, WPSI] = road.kappa * u / geo
    if config.include_roll_lane:
        lo, hi = _lane_interval(phi, road.width, p.h_r)
        X[:, N] = np.clip(n, lo, hi)
    X[0] = x0
    return Trajectory(X, np.zeros((K - 1, N_INPUT)))


def solve(problem: TrajectoryProblem, guess: Trajectory | None = None) -> OcpSolution:
    cfg, p = problem.config, problem.params
    if guess is None:
        guess = initial_guess(problem.profile, problem.x0, cfg, p)
    if guess.states.shape[0] != cfg.N + 2:
        raise ValueError(
            f"Guess has {guess.states.shape[0]} states; N={cfg.N} needs {cfg.N + 2}."
        )
    logger.info(
        "Solving trajectory problem: N=%d, d_s=%.2f m, s0=%.1f m",
        cfg.N,
        cfg.d_s,
        cfg.s0,
    )
    result = minimize(problem, problem.pack(guess), cfg.sqp_options())
    X, U = problem.unpack(result.z)
    road = problem.road

    status = result.status
    ratio = gg_ratio(X, road.sigma, p)
    if ratio[0] > 1.0 + cfg.feas_tol:
        logger.warning(
            "Initial state exceeds the g-g ellipse (ratio %.3f); no feasible manoeuvre",
            ratio[0],
        )
        status = Status.INFEASIBLE

    n_lo, n_hi = _lane_interval(X[:, PHI], road.width, p.h_r, cfg.include_roll_lane)
    j_t, j_a, j_j = _cost_terms(X, U, road, cfg, p)
    manoeuvre_time = cfg.d_s * float(np.sum(_time_per_metre(X[:-1], road.kappa[:-1])))
    logger.info(
        "Solve finished: %s after %d iterations (J=%.4f, kkt=%.2g, feas=%.2g, %.2fs)",
        status,
        result.iterations,
        j_t + j_a + j_j,
        result.kkt_residual,
        result.feasibility_residual,
        result.solve_time,
    )
    return OcpSolution(
        x=X,
        u=U,
        s_grid=problem.s_grid,
        objective=j_t + j_a + j_j,
        cost_breakdown=(j_t, j_a, j_j),
        kkt_residual=result.kkt_residual,
        feasibility_residual=result.feasibility_residual,
        status=status,
        gg_ratio=ratio,
        n_lo=n_lo,
        n_hi=n_hi,
        time=manoeuvre_time,
        iterations=result.iterations,
        penalty=result.penalty,
        solve_time=result.solve_time,
        diagnostics={"initial_gg_ratio": float(ratio[0])},
    )


def plan_trajectory(
    profile: RoadProfile, x0: StateSpace, config: OcpConfig, p: BikeParams | None = None
) -> OcpSolution:
    """Build the problem, seed it with the default guess and solve it."""
    p = p or BikeParams()
    return solve(build_problem(profile, x0, config, p))
