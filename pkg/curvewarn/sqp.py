"""
Sequential quadratic programming for smooth, sparse nonlinear programs.

The driver handles problems of the form

    minimise    f(z)
    subject to  c_E(z)  = 0            (nonlinear, softened in the QP)
                c_I(z) <= 0            (nonlinear, softened in the QP)
                G z    <= h            (linear, always enforced)
                lb <= z <= ub          (always enforced)

Every iteration solves an elastic QP: the linearised equalities and
inequalities receive non-negative slacks priced at the penalty parameter, so
the subproblem is feasible whatever the linearisation looks like. The step is
globalised with the exact l1 merit function and Armijo backtracking. A
problem whose linearised constraint violation persists at the largest
penalty is reported as infeasible; a step that cannot move the iterate
anywhere else is reported as stalled, and a QP subproblem the interior-point
solver cannot bring below its acceptance residual ends the run as a
numerical failure.
"""

import logging
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from curvewarn.err import UnimplementedMethodError
from curvewarn.qp import QpResult, solve_qp

logger = logging.getLogger(__name__)

# largest QP residual a step is taken on
QP_ACCEPT = 1e-6
# multiplier size above which stationarity is measured relative to it
MULTIPLIER_SCALE = 100.0
QP_RETRY_ITER = 300


class Status(Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"
    STALLED = "Stalled"
    NUMERICAL_FAILURE = "NumericalFailure"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class SqpOptions:
    feas_tol: float = 1e-6
    stat_tol: float = 1e-6
    max_iter: int = 200
    penalty0: float = 100.0
    penalty_max: float = 1e8
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-10
    stall_window: int = 5

    def __post_init__(self):
        if self.feas_tol <= 0 or self.stat_tol <= 0:
            raise ValueError("Solver tolerances must be positive.")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}.")
        if not 0 < self.penalty0 <= self.penalty_max:
            raise ValueError("Penalty parameters must satisfy 0 < penalty0 <= penalty_max.")
        if not 0 < self.backtrack < 1:
            raise ValueError("Backtracking factor must lie in (0, 1).")


@dataclass(frozen=True)
class SqpResult:
    z: np.ndarray
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    status: Status
    iterations: int
    kkt_residual: float
    feasibility_residual: float
    penalty: float
    solve_time: float


class NlpProblem:
    """
    Interface of a sparse nonlinear program consumed by ``minimize``.

    Subclasses set ``lower``, ``upper`` (variable bounds, finite),
    ``linear_rows`` (sparse G) and ``linear_rhs`` (h), and implement the
    callbacks below. ``hessian`` must return a positive semi-definite
    approximation of the Lagrangian Hessian.
    """

    lower: np.ndarray
    upper: np.ndarray
    linear_rows: sp.spmatrix
    linear_rhs: np.ndarray

    @property
    def n_vars(self) -> int:
        return len(self.lower)

    def objective(self, z: np.ndarray) -> float:
        raise UnimplementedMethodError()

    def gradient(self, z: np.ndarray) -> np.ndarray:
        raise UnimplementedMethodError()

    def equalities(self, z: np.ndarray) -> np.ndarray:
        raise UnimplementedMethodError()

    def equality_jacobian(self, z: np.ndarray) -> sp.spmatrix:
        raise UnimplementedMethodError()

    def inequalities(self, z: np.ndarray) -> np.ndarray:
        raise UnimplementedMethodError()

    def inequality_jacobian(self, z: np.ndarray) -> sp.spmatrix:
        raise UnimplementedMethodError()

    def hessian(self, z: np.ndarray, nu: np.ndarray, lam: np.ndarray) -> sp.spmatrix:
        raise UnimplementedMethodError()


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _hard_rows(problem: NlpProblem) -> sp.csr_matrix:
    n = problem.n_vars
    eye = sp.identity(n, format="csr")
    return sp.vstack([problem.linear_rows, eye, -eye], format="csr")


def _hard_rhs(problem: NlpProblem, z: np.ndarray) -> np.ndarray:
    """Right-hand side of the hard rows, shifted to the step d = z_new - z."""
    return np.concatenate(
        [
            problem.linear_rhs - problem.linear_rows @ z,
            problem.upper - z,
            z - problem.lower,
        ]
    )


def _soft_violation(c_eq: np.ndarray, c_in: np.ndarray) -> tuple[float, float]:
    """Infinity and one norm of the violation of the softened constraints."""
    pos = np.maximum(c_in, 0.0)
    v_inf = max(
        float(np.max(np.abs(c_eq), initial=0.0)), float(np.max(pos, initial=0.0))
    )
    return v_inf, float(np.sum(np.abs(c_eq)) + np.sum(pos))


def _hard_violation(problem: NlpProblem, z: np.ndarray) -> float:
    return float(np.max(-_hard_rhs(problem, z), initial=0.0))


@dataclass(frozen=True)
class _ElasticStep:
    d: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    linear_viol: float
    slack_1: float
    qp: QpResult


class _Elastic:
    """Elastic QP subproblem at one iterate."""

    def __init__(self, problem: NlpProblem, hard: sp.csr_matrix):
        self.problem = problem
        self.hard = hard

    def solve(self, z, g, H, c_eq, J_eq, c_in, J_in, penalty) -> _ElasticStep:
        n = len(z)
        m_e, m_i = len(c_eq), len(c_in)
        n_y = n + 2 * m_e + m_i
        Q = sp.block_diag([H, sp.csr_matrix((2 * m_e + m_i, 2 * m_e + m_i))])
        c = np.concatenate([g, np.full(2 * m_e + m_i, penalty)])
        eye_e = sp.identity(m_e, format="csr")
        E = sp.hstack(
            [J_eq, -eye_e, eye_e, sp.csr_matrix((m_e, m_i))], format="csr"
        )
        F_soft = sp.hstack(
            [J_in, sp.csr_matrix((m_i, 2 * m_e)), -sp.identity(m_i)], format="csr"
        )
        F_hard = sp.hstack(
            [self.hard, sp.csr_matrix((self.hard.shape[0], n_y - n))], format="csr"
        )
        F_slack = sp.hstack(
            [sp.csr_matrix((n_y - n, n)), -sp.identity(n_y - n)], format="csr"
        )
        F = sp.vstack([F_soft, F_hard, F_slack], format="csr")
        f = np.concatenate(
            [-c_in, _hard_rhs(self.problem, z), np.zeros(n_y - n)]
        )
        res = solve_qp(Q, c, E, -c_eq, F, f)
        if not res.converged:
            logger.debug("QP residual %.3g; retrying with more iterations", res.residual)
            retry = solve_qp(Q, c, E, -c_eq, F, f, max_iter=QP_RETRY_ITER, reg=1e-8)
            if retry.residual < res.residual:
                res = retry
        y = res.y
        p, q, t = y[n : n + m_e], y[n + m_e : n + 2 * m_e], y[n + 2 * m_e :]
        lam = res.ineq_multipliers
        return _ElasticStep(
            d=y[:n],
            nu=res.eq_multipliers,
            lam=lam[:m_i],
            mu=lam[m_i : m_i + self.hard.shape[0]],
            linear_viol=float(
                max(np.max(p, initial=0.0), np.max(q, initial=0.0), np.max(t, initial=0.0))
            ),
            slack_1=float(np.sum(np.abs(p - q)) + np.sum(t)),
            qp=res,
        )


def _kkt_residual(problem, hard, z, g, J_eq, J_in, c_in, nu, lam, mu) -> float:
    """
    Scaled stationarity and complementarity error at ``z``, relative to the
    gradient norm and, past ``MULTIPLIER_SCALE``, to the mean multiplier size.
    """
    stationarity = g + J_eq.T @ nu + J_in.T @ lam + hard.T @ mu
    slack_hard = _hard_rhs(problem, z)
    comp = max(
        float(np.max(np.abs(lam * c_in), initial=0.0)),
        float(np.max(np.abs(mu * slack_hard), initial=0.0)),
    )
    count = len(nu) + len(lam) + len(mu)
    mean_mult = (np.sum(np.abs(nu)) + np.sum(np.abs(lam)) + np.sum(np.abs(mu))) / max(count, 1)
    scale = max(1.0, float(np.linalg.norm(g, np.inf)), float(mean_mult) / MULTIPLIER_SCALE)
    return max(float(np.linalg.norm(stationarity, np.inf)) / scale, comp / scale)


def _merit(problem: NlpProblem, z: np.ndarray, penalty: float):
    c_eq = problem.equalities(z)
    c_in = problem.inequalities(z)
    return problem.objective(z) + penalty * _soft_violation(c_eq, c_in)[1], c_eq, c_in


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def minimize(problem: NlpProblem, z0, options: SqpOptions | None = None) -> SqpResult:
    """
    Run SQP from ``z0``; deterministic for identical inputs.

    Optimality is tested at the current iterate with the multipliers of the
    QP solved there, before any step is taken, so the returned point and
    multipliers are the pair that passed the test. A rejected full step is
    retried once with a second-order correction before backtracking.
    """
    opts = options or SqpOptions()
    started = time.perf_counter()
    hard = _hard_rows(problem)
    elastic = _Elastic(problem, hard)

    z = np.clip(np.asarray(z0, dtype=float), problem.lower, problem.upper)
    c_eq = problem.equalities(z)
    c_in = problem.inequalities(z)
    nu = np.zeros(len(c_eq))
    lam = np.zeros(len(c_in))
    mu = np.zeros(hard.shape[0])
    penalty = opts.penalty0
    history: list[float] = []
    kkt = np.inf
    status = Status.MAX_ITER
    iteration = 0

    for iteration in range(1, opts.max_iter + 1):
        g = problem.gradient(z)
        J_eq = problem.equality_jacobian(z)
        J_in = problem.inequality_jacobian(z)
        H = problem.hessian(z, nu, lam)
        viol_inf, viol_1 = _soft_violation(c_eq, c_in)

        while True:
            step = elastic.solve(z, g, H, c_eq, J_eq, c_in, J_in, penalty)
            if step.qp.residual > QP_ACCEPT:
                break
            if step.linear_viol > max(opts.feas_tol, 0.1 * viol_inf) and penalty < opts.penalty_max:
                penalty = min(10.0 * penalty, opts.penalty_max)
                logger.info(
                    "Penalty raised to %.3g (linearised violation %.3g)", penalty, step.linear_viol
                )
                continue
            break
        if step.qp.residual > QP_ACCEPT:
            status = Status.NUMERICAL_FAILURE
            logger.warning(
                "QP subproblem failed at SQP iteration %d (residual %.3g after %d iterations)",
                iteration,
                step.qp.residual,
                step.qp.iterations,
            )
            break

        nu, lam, mu = step.nu, step.lam, step.mu
        feas = max(viol_inf, _hard_violation(problem, z))
        kkt = _kkt_residual(problem, hard, z, g, J_eq, J_in, c_in, nu, lam, mu)
        if feas <= opts.feas_tol and kkt <= opts.stat_tol:
            status = Status.OPTIMAL
            break

        d = step.d
        merit0 = problem.objective(z) + penalty * viol_1
        slope = float(g @ d) + penalty * (step.slack_1 - viol_1)
        if slope >= 0:
            slope = -0.5 * float(d @ (H @ d))

        alpha = 1.0
        merit, c_eq_try, c_in_try = _merit(problem, z + d, penalty)
        z_try = z + d
        if merit > merit0 + opts.armijo * slope:
            # second-order correction of the full step
            soc = elastic.solve(
                z, g, H, c_eq_try - J_eq @ d, J_eq, c_in_try - J_in @ d, J_in, penalty
            )
            merit_soc, c_eq_soc, c_in_soc = _merit(problem, z + soc.d, penalty)
            if soc.qp.residual <= QP_ACCEPT and merit_soc <= merit0 + opts.armijo * slope:
                logger.debug("Second-order correction accepted at iteration %d", iteration)
                d, merit, c_eq_try, c_in_try = soc.d, merit_soc, c_eq_soc, c_in_soc
                z_try = z + d
            else:
                while merit > merit0 + opts.armijo * alpha * slope and alpha > opts.min_step:
                    alpha *= opts.backtrack
                    z_try = z + alpha * d
                    merit, c_eq_try, c_in_try = _merit(problem, z_try, penalty)
        if alpha <= opts.min_step:
            logger.debug("Line search reached the minimum step at iteration %d", iteration)

        z, c_eq, c_in = z_try, c_eq_try, c_in_try
        feas = max(_soft_violation(c_eq, c_in)[0], _hard_violation(problem, z))
        history.append(feas)
        moved = alpha * float(np.linalg.norm(d, np.inf))
        logger.debug(
            "SQP %3d: f=%.6g feas=%.3g kkt=%.3g step=%.3g alpha=%.3g rho=%.3g",
            iteration,
            problem.objective(z),
            feas,
            kkt,
            moved,
            alpha,
            penalty,
        )

        tiny = alpha <= opts.min_step or moved <= 1e-10 * (1.0 + float(np.linalg.norm(z, np.inf)))
        stalled = (
            len(history) > opts.stall_window
            and history[-1] >= 0.99 * history[-1 - opts.stall_window]
        )
        if (
            penalty >= opts.penalty_max
            and step.linear_viol > opts.feas_tol
            and feas > opts.feas_tol
            and (tiny or stalled)
        ):
            status = Status.INFEASIBLE
            logger.warning(
                "Problem is locally infeasible: violation %.3g at penalty %.3g", feas, penalty
            )
            break
        if tiny:
            status = Status.STALLED
            logger.warning(
                "SQP stalled at iteration %d (kkt %.3g, feas %.3g)", iteration, kkt, feas
            )
            break

    if status is Status.MAX_ITER:
        kkt = _kkt_residual(
            problem,
            hard,
            z,
            problem.gradient(z),
            problem.equality_jacobian(z),
            problem.inequality_jacobian(z),
            c_in,
            nu,
            lam,
            mu,
        )
    feas = max(_soft_violation(c_eq, c_in)[0], _hard_violation(problem, z))
    return SqpResult(
        z=z,
        eq_multipliers=nu,
        ineq_multipliers=lam,
        status=status,
        iterations=iteration,
        kkt_residual=float(kkt),
        feasibility_residual=float(feas),
        penalty=penalty,
        solve_time=time.perf_counter() - started,
    )
