import dataclasses
import math

import numpy as np
import pytest
import scipy.sparse as sp

from curvewarn.err import UnimplementedMethodError
from curvewarn import sqp
from curvewarn.qp import solve_qp
from curvewarn.sqp import NlpProblem, SqpOptions, Status, minimize

# ---------------------------------------------------------------------------
# interior-point QP
# ---------------------------------------------------------------------------


def test_qp_equality_constrained():
    res = solve_qp(
        sp.identity(2),
        np.zeros(2),
        sp.csr_matrix([[1.0, 1.0]]),
        np.array([1.0]),
        sp.csr_matrix([[1.0, 0.0]]),
        np.array([10.0]),
    )
    assert res.converged
    assert res.y == pytest.approx([0.5, 0.5], abs=1e-6)
    assert res.eq_multipliers[0] == pytest.approx(-0.5, abs=1e-6)
    assert res.ineq_multipliers[0] == pytest.approx(0.0, abs=1e-6)


def test_qp_active_inequality():
    res = solve_qp(
        sp.identity(2),
        np.array([-2.0, -2.0]),
        sp.csr_matrix((0, 2)),
        np.zeros(0),
        sp.csr_matrix([[1.0, 1.0], [-1.0, 0.0]]),
        np.array([2.0, 5.0]),
    )
    assert res.converged
    assert res.y == pytest.approx([1.0, 1.0], abs=1e-6)
    assert res.ineq_multipliers[0] == pytest.approx(1.0, abs=1e-6)
    assert res.ineq_multipliers[1] == pytest.approx(0.0, abs=1e-6)


def test_qp_bounds_as_rows():
    # minimise -y subject to 0 <= y <= 3
    res = solve_qp(
        sp.csr_matrix((1, 1)),
        np.array([-1.0]),
        sp.csr_matrix((0, 1)),
        np.zeros(0),
        sp.csr_matrix([[1.0], [-1.0]]),
        np.array([3.0, 0.0]),
    )
    assert res.converged
    assert res.y[0] == pytest.approx(3.0, abs=1e-6)


def _bounded_qp(**kwargs):
    return solve_qp(
        sp.diags([1.0, 4.0]),
        np.array([-3.0, 1.0]),
        sp.csr_matrix([[1.0, 1.0]]),
        np.array([1.0]),
        sp.csr_matrix([[1.0, 0.0], [0.0, -1.0]]),
        np.array([0.5, 2.0]),
        **kwargs,
    )


def test_qp_reports_an_unconverged_solve():
    start = _bounded_qp(max_iter=0)
    assert not start.converged
    assert start.iterations == 0
    res = _bounded_qp(max_iter=2)
    assert not res.converged
    assert res.residual <= start.residual
    assert _bounded_qp().converged


def test_qp_complementarity_scales_with_the_objective():
    res = solve_qp(
        sp.identity(2) * 1e6,
        np.array([-2e6, -2e6]),
        sp.csr_matrix((0, 2)),
        np.zeros(0),
        sp.csr_matrix([[1.0, 1.0]]),
        np.array([2.0]),
    )
    assert res.converged
    assert res.y == pytest.approx([1.0, 1.0], abs=1e-6)
    assert res.ineq_multipliers[0] == pytest.approx(1e6, rel=1e-6)


# ---------------------------------------------------------------------------
# SQP
# ---------------------------------------------------------------------------


class _Disc(NlpProblem):
    """Closest point of the unit disc to (2, 2)."""

    def __init__(self):
        self.lower = np.full(2, -5.0)
        self.upper = np.full(2, 5.0)
        self.linear_rows = sp.csr_matrix((0, 2))
        self.linear_rhs = np.zeros(0)

    def objective(self, z):
        return float(np.sum((z - 2.0) ** 2))

    def gradient(self, z):
        return 2.0 * (z - 2.0)

    def equalities(self, z):
        return np.zeros(0)

    def equality_jacobian(self, z):
        return sp.csr_matrix((0, 2))

    def inequalities(self, z):
        return np.array([z @ z - 1.0])

    def inequality_jacobian(self, z):
        return sp.csr_matrix(2.0 * z.reshape(1, 2))

    def hessian(self, z, nu, lam):
        return sp.identity(2, format="csr") * (2.0 + 2.0 * max(float(lam[0]), 0.0))


class _OutOfReach(_Disc):
    """Requires z0 = 5 while the bounds keep z0 within [-1, 1]."""

    def __init__(self):
        super().__init__()
        self.lower = np.full(2, -1.0)
        self.upper = np.full(2, 1.0)

    def objective(self, z):
        return 0.5 * float(z[1] ** 2)

    def gradient(self, z):
        return np.array([0.0, z[1]])

    def equalities(self, z):
        return np.array([z[0] - 5.0])

    def equality_jacobian(self, z):
        return sp.csr_matrix([[1.0, 0.0]])

    def inequalities(self, z):
        return np.zeros(0)

    def inequality_jacobian(self, z):
        return sp.csr_matrix((0, 2))

    def hessian(self, z, nu, lam):
        return sp.diags([1e-6, 1.0]).tocsr()


def test_sqp_converges_on_convex_problem():
    res = minimize(_Disc(), np.zeros(2))
    assert res.status is Status.OPTIMAL
    assert res.z == pytest.approx([1 / math.sqrt(2)] * 2, abs=1e-5)
    assert res.ineq_multipliers[0] == pytest.approx(2.0 * math.sqrt(2) - 1.0, abs=1e-4)
    assert res.feasibility_residual <= 1e-6
    assert res.kkt_residual <= 1e-6


def test_sqp_is_deterministic():
    a = minimize(_Disc(), np.array([0.3, -0.2]))
    b = minimize(_Disc(), np.array([0.3, -0.2]))
    assert np.array_equal(a.z, b.z)
    assert a.iterations == b.iterations


def test_sqp_reports_infeasibility():
    res = minimize(_OutOfReach(), np.zeros(2))
    assert res.status is Status.INFEASIBLE
    assert res.penalty == SqpOptions().penalty_max
    assert res.feasibility_residual == pytest.approx(4.0, abs=1e-4)


def test_sqp_iteration_limit():
    res = minimize(_Disc(), np.zeros(2), SqpOptions(max_iter=1))
    assert res.iterations == 1
    assert res.status in (Status.MAX_ITER, Status.OPTIMAL)


class _WrongGradient(_Disc):
    """Gradient callback of the wrong sign: no step decreases the merit."""

    def gradient(self, z):
        return -2.0 * (z - 2.0)


def test_sqp_reports_a_stall():
    res = minimize(_WrongGradient(), np.zeros(2))
    assert res.status is Status.STALLED
    assert res.iterations < SqpOptions().max_iter
    assert res.kkt_residual > 1e-6
    assert str(res.status) == "Stalled"


def test_sqp_stops_when_a_subproblem_fails(monkeypatch):
    real = sqp.solve_qp

    def failing(*args, **kwargs):
        return dataclasses.replace(real(*args, **kwargs), converged=False, residual=1.0)

    monkeypatch.setattr(sqp, "solve_qp", failing)
    res = minimize(_Disc(), np.zeros(2))
    assert res.status is Status.NUMERICAL_FAILURE
    assert res.iterations == 1
    assert str(res.status) == "NumericalFailure"


def test_sqp_converges_from_a_curved_start():
    res = minimize(_Disc(), np.array([-0.9, 0.3]))
    assert res.status is Status.OPTIMAL
    assert res.z == pytest.approx([1 / math.sqrt(2)] * 2, abs=1e-5)
    assert res.kkt_residual <= 1e-6


def test_options_validation():
    with pytest.raises(ValueError):
        SqpOptions(max_iter=0)
    with pytest.raises(ValueError):
        SqpOptions(penalty0=1e9)


def test_abstract_problem():
    with pytest.raises(UnimplementedMethodError, match="objective"):
        NlpProblem().objective(np.zeros(1))
