import math

import numpy as np
import pytest

from fifobound import lp
from fifobound.lp import (INFEASIBLE, OPTIMAL, UNBOUNDED, AllInfeasibleError, LpInstance,
                          check_point, min_over_branches, solve, to_lp_text)
from fifobound.symbolic import AffineExpr, Constraint

x, y = AffineExpr.var(0), AffineExpr.var(1)


def test_single_bound():
    sol = solve(LpInstance(x, (Constraint.ge(x - 1),), (0.0,)))
    assert sol.status == OPTIMAL
    assert sol.value == pytest.approx(1)


def test_infeasible():
    cons = (Constraint.ge(x - 2), Constraint.ge(y - 3), Constraint.le(x + y - 4))
    assert solve(LpInstance(x + y, cons, (0.0, 0.0))).status == INFEASIBLE


def test_unbounded():
    assert solve(LpInstance(x * -1.0, (), (0.0,))).status == UNBOUNDED


def test_lower_bounds_respected():
    sol = solve(LpInstance(x + y, (), (1.5, 2.0)))
    assert sol.value == pytest.approx(3.5)
    assert sol.point == pytest.approx((1.5, 2.0))


def test_min_over_branches():
    a = LpInstance(x + 3.2, (), (0.0,))
    b = LpInstance(x, (Constraint.ge(x - 2), Constraint.le(x - 1)), (0.0,))
    c = LpInstance(x + 2.9, (), (0.0,))
    assert min_over_branches([a, b, c])[0] == pytest.approx(2.9)
    assert min_over_branches([c, b, a])[0] == pytest.approx(2.9)
    assert min_over_branches([a])[0] == pytest.approx(3.2)
    with pytest.raises(AllInfeasibleError):
        min_over_branches([b])


def test_adding_constraint_never_decreases():
    base = (Constraint.ge(x + y - 1),)
    v0 = solve(LpInstance(x + y * 2, base, (0.0, 0.0))).value
    v1 = solve(LpInstance(x + y * 2, base + (Constraint.ge(y - x),), (0.0, 0.0))).value
    assert v1 >= v0 - 1e-9


def test_lp_text():
    txt = to_lp_text(LpInstance(x + y + 1, (Constraint.ge(x - 1),), (0.0, 0.5)))
    assert "Minimize" in txt and "Subject To" in txt and "theta1 >= 0.5" in txt


def _random_lp(rng, n, m):
    cons = []
    for _ in range(m):
        coef = rng.normal(size=n)
        cons.append(Constraint(AffineExpr(float(rng.normal() * 3), tuple(float(v) for v in coef))))
    obj = AffineExpr(0.0, tuple(float(v) for v in rng.uniform(0.1, 2.0, size=n)))
    return LpInstance(obj, tuple(cons), tuple(float(v) for v in rng.uniform(0, 1, size=n)))


def test_against_scipy():
    linprog = pytest.importorskip("scipy.optimize").linprog
    rng = np.random.default_rng(7)
    for _ in range(150):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 7))
        inst = _random_lp(rng, n, m)
        A = np.array([[-c.lhs.coeffs.get(j, 0.0) for j in range(n)] for c in inst.cons])
        bvec = np.array([c.lhs.c0 for c in inst.cons])
        ref = linprog([inst.objective.coeffs.get(j, 0.0) for j in range(n)], A_ub=A, b_ub=bvec,
                      bounds=[(lb, None) for lb in inst.bounds()], method="highs")
        sol = solve(inst)
        if ref.status == 2:
            assert sol.status == INFEASIBLE
        elif ref.status == 3:
            assert sol.status == UNBOUNDED
        else:
            assert sol.status == OPTIMAL
            assert sol.value == pytest.approx(ref.fun, abs=1e-6)
            assert check_point(inst, sol.point)


def test_feasibility_tolerance_constant():
    assert lp.FEAS_TOL == 1e-7 and lp.PIVOT_TOL == 1e-9
    assert math.isfinite(solve(LpInstance(AffineExpr(2.0), (), ())).value)
