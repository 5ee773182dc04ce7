"""
Sparse convex quadratic programming by a primal-dual interior-point method.

Solves

    minimise    1/2 y'Qy + c'y
    subject to  E y  = e
                F y <= f

with Mehrotra's predictor-corrector. Each iteration factorises the reduced
KKT matrix ``[[Q + F'DF + dI, E'], [E, -dI]]`` once with a sparse LU and
reuses the factors for the predictor and the corrector solve.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

logger = logging.getLogger(__name__)

STEP_FRACTION = 0.995
MAX_REGULARISATION = 1e-2
REFINEMENT_STEPS = 2


@dataclass(frozen=True)
class QpResult:
    y: np.ndarray
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    converged: bool
    iterations: int
    residual: float


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest alpha in [0, 1] keeping v + alpha*dv non-negative."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _factorise(H, E, reg: float):
    n, m_e = H.shape[0], E.shape[0]
    while True:
        K = sp.bmat(
            [
                [H + reg * sp.identity(n, format="csc"), E.T],
                [E, -reg * sp.identity(m_e, format="csc")],
            ],
            format="csc",
        )
        try:
            return splu(K, permc_spec="COLAMD"), reg
        except RuntimeError:
            if reg >= MAX_REGULARISATION:
                raise
            reg *= 100.0
            logger.debug("KKT factorisation singular; regularisation raised to %g", reg)


def _refined_solve(lu, K, rhs: np.ndarray) -> np.ndarray:
    """Solve with the regularised factors, then correct against the exact KKT matrix."""
    sol = lu.solve(rhs)
    err = rhs - K @ sol
    for _ in range(REFINEMENT_STEPS):
        trial = sol + lu.solve(err)
        trial_err = rhs - K @ trial
        if not np.linalg.norm(trial_err, np.inf) < np.linalg.norm(err, np.inf):
            break
        sol, err = trial, trial_err
    return sol


def solve_qp(
    Q,
    c,
    E,
    e,
    F,
    f,
    *,
    tol: float = 1e-9,
    max_iter: int = 100,
    reg: float = 1e-10,
) -> QpResult:
    """
    Solve a convex QP; ``Q``, ``E`` and ``F`` are scipy sparse matrices.

    The returned multipliers follow the convention
    ``Q y + c + E' nu + F' lam = 0`` with ``lam >= 0``. The residual is the
    largest of the scaled stationarity, equality, inequality and
    complementarity errors. Without convergence the iterate with the smallest
    residual is returned and ``converged`` is False.
    """
    Q = sp.csc_matrix(Q)
    E = sp.csc_matrix(E)
    F = sp.csc_matrix(F)
    c = np.asarray(c, dtype=float)
    e = np.asarray(e, dtype=float)
    f = np.asarray(f, dtype=float)
    n, m_e, m_i = len(c), E.shape[0], F.shape[0]

    y = np.zeros(n)
    nu = np.zeros(m_e)
    s = np.maximum(f - F @ y, 1.0)
    lam = np.ones(m_i)

    scale_d = 1.0 + np.linalg.norm(c, np.inf)
    scale_e = 1.0 + (np.linalg.norm(e, np.inf) if m_e else 0.0)
    scale_i = 1.0 + (np.linalg.norm(f[np.isfinite(f)], np.inf) if m_i else 0.0)

    best = None
    it = 0
    for it in range(max_iter + 1):
        r_d = Q @ y + c + E.T @ nu + F.T @ lam
        r_e = E @ y - e
        r_i = F @ y + s - f
        mu = float(s @ lam) / m_i if m_i else 0.0
        residual = float(
            max(
                np.linalg.norm(r_d, np.inf) / scale_d,
                np.linalg.norm(r_e, np.inf) / scale_e if m_e else 0.0,
                np.linalg.norm(r_i, np.inf) / scale_i if m_i else 0.0,
                mu / scale_d,
            )
        )
        if best is None or residual < best.residual:
            best = QpResult(y, nu, lam, residual <= tol, it, residual)
        if residual <= tol or it == max_iter:
            break

        D = lam / s
        H = (Q + F.T @ sp.diags(D) @ F).tocsc()
        lu, reg = _factorise(H, E, reg)
        K = sp.bmat([[H, E.T], [E, None]], format="csc") if m_e else H

        def direction(r_c):
            rhs = np.concatenate([-r_d - F.T @ (D * r_i - r_c / s), -r_e])
            sol = _refined_solve(lu, K, rhs)
            dy, dnu = sol[:n], sol[n:]
            dlam = D * (F @ dy + r_i) - r_c / s
            ds = (-r_c - s * dlam) / lam
            return dy, dnu, dlam, ds

        # predictor
        dy, dnu, dlam, ds = direction(s * lam)
        if m_i:
            a_aff = min(_max_step(s, ds), _max_step(lam, dlam))
            mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dlam)) / m_i
            centring = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            # corrector
            dy, dnu, dlam, ds = direction(s * lam + ds * dlam - centring * mu)
            alpha = min(1.0, STEP_FRACTION * min(_max_step(s, ds), _max_step(lam, dlam)))
        else:
            alpha = 1.0

        if alpha < 1e-14:
            logger.debug("QP step length collapsed at iteration %d", it)
            break
        y = y + alpha * dy
        nu = nu + alpha * dnu
        s = s + alpha * ds
        lam = lam + alpha * dlam

    if not best.converged:
        logger.debug(
            "QP stopped after %d iterations; best residual %.3g at iteration %d",
            it, best.residual, best.iterations,
        )
    return best
