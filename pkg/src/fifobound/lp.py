"""
Small dense linear programs in the theta variables.

The solver is a textbook two-phase tableau simplex.  Variables are shifted by
their lower bounds so that the standard form ``x >= 0`` applies directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .symbolic import AffineExpr, Constraint

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
FAILED = "failed"


class AllInfeasibleError(RuntimeError):
    """Every branch LP was infeasible, so the branches did not cover the theta space."""


@dataclass(frozen=True)
class LpInstance:
    """Minimise ``objective`` subject to ``c.lhs >= 0`` for all ``cons`` and ``theta >= lower``."""

    objective: AffineExpr
    cons: tuple[Constraint, ...]
    lower: tuple[float, ...] = ()

    @property
    def nvars(self) -> int:
        return max([len(self.lower), self.objective.nvars] + [c.lhs.nvars for c in self.cons])

    def bounds(self) -> list[float]:
        n = self.nvars
        return [max(self.lower[j], 0.0) if j < len(self.lower) else 0.0 for j in range(n)]


@dataclass(frozen=True)
class LpSolution:
    status: str
    value: float = math.nan
    point: tuple[float, ...] = ()
    iterations: int = 0


def _pivot(T: np.ndarray, basis: list[int], row: int, col: int) -> None:
    T[row] /= T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= np.outer(colv, T[row])
    basis[row] = col


def _run(T: np.ndarray, basis: list[int], ncols: int, cap: int, it: int) -> tuple[str, int]:
    """Minimise the last row (reduced costs) over the first ``ncols`` columns."""
    degenerate = 0
    while True:
        if it >= cap:
            return FAILED, it
        cost = T[-1, :ncols]
        if degenerate > 0:
            cand = np.nonzero(cost < -PIVOT_TOL)[0]
            if cand.size == 0:
                return OPTIMAL, it
            col = int(cand[0])  # Bland
        else:
            col = int(np.argmin(cost))
            if cost[col] >= -PIVOT_TOL:
                return OPTIMAL, it
        colv = T[:-1, col]
        pos = colv > PIVOT_TOL
        if not pos.any():
            return UNBOUNDED, it
        ratios = np.full(colv.shape, np.inf)
        ratios[pos] = T[:-1, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.nonzero(ratios <= best + PIVOT_TOL)[0]
        row = int(min(ties, key=lambda i: basis[i]))
        degenerate = degenerate + 1 if best <= PIVOT_TOL else 0
        _pivot(T, basis, row, col)
        it += 1


def solve(lp: LpInstance) -> LpSolution:
    """Two-phase simplex with Bland's rule once pivots stall on a degenerate vertex."""
    n = lp.nvars
    lb = np.array(lp.bounds(), dtype=float)
    rows = []
    rhs = []
    for c in lp.cons:
        a = np.zeros(n)
        a[:c.lhs.nvars] = c.lhs.co
        r = -c.lhs.c0 - float(a @ lb)  # a.x >= r for shifted x
        if not a.any():
            if r > FEAS_TOL:
                return LpSolution(INFEASIBLE)
            continue
        rows.append(a)
        rhs.append(r)
    m = len(rows)
    c = np.zeros(n)
    c[:lp.objective.nvars] = lp.objective.co
    base_val = lp.objective.c0 + float(c @ lb)
    if m == 0:
        if (c < -PIVOT_TOL).any():
            return LpSolution(UNBOUNDED)
        return LpSolution(OPTIMAL, base_val, tuple(float(v) for v in lb))
    A = np.array(rows)
    b = np.array(rhs)
    # a.x - s = r ; rows with r <= 0 are flipped to -a.x + s = -r with s basic
    need_art = b > 0.0
    nart = int(need_art.sum())
    width = n + m + nart
    T = np.zeros((m + 1, width + 1))
    basis = [0] * m
    k = 0
    for i in range(m):
        if need_art[i]:
            T[i, :n] = A[i]
            T[i, n + i] = -1.0
            T[i, n + m + k] = 1.0
            T[i, -1] = b[i]
            basis[i] = n + m + k
            k += 1
        else:
            T[i, :n] = -A[i]
            T[i, n + i] = 1.0
            T[i, -1] = -b[i]
            basis[i] = n + i
    cap = 10 * (n + m) ** 2 + 50
    it = 0
    if nart:
        T[-1, n + m:width] = 1.0
        for i in range(m):
            if need_art[i]:
                T[-1] -= T[i]
        status, it = _run(T, basis, width, cap, it)
        if status == FAILED:
            return LpSolution(FAILED, iterations=it)
        if -T[-1, -1] > FEAS_TOL * max(1.0, float(np.abs(b).max())):
            return LpSolution(INFEASIBLE, iterations=it)
        # drive artificials out of the basis
        keep = []
        for i in range(m):
            if basis[i] >= n + m:
                nz = np.nonzero(np.abs(T[i, :n + m]) > PIVOT_TOL)[0]
                if nz.size:
                    _pivot(T, basis, i, int(nz[0]))
                    keep.append(i)
            else:
                keep.append(i)
        T = np.vstack([T[keep], T[-1:]])
        basis = [basis[i] for i in keep]
        T = np.delete(T, np.s_[n + m:width], axis=1)
        width = n + m
    T[-1] = 0.0
    T[-1, :n] = c
    for i, j in enumerate(basis):
        if T[-1, j] != 0.0:
            T[-1] -= T[-1, j] * T[i]
    status, it = _run(T, basis, width, cap, it)
    if status != OPTIMAL:
        return LpSolution(status, iterations=it)
    x = np.zeros(width)
    for i, j in enumerate(basis):
        x[j] = T[i, -1]
    theta = x[:n] + lb
    value = float(lp.objective(theta))
    return LpSolution(OPTIMAL, value, tuple(float(v) for v in theta), it)


def feasible(cons: Sequence[Constraint], lower: Sequence[float]) -> bool:
    """Phase one only: is the polyhedron non-empty?"""
    sol = solve(LpInstance(AffineExpr(0.0), tuple(cons), tuple(lower)))
    return sol.status in (OPTIMAL, FAILED)


def check_point(lp: LpInstance, point: Sequence[float], tol: float = FEAS_TOL) -> bool:
    lb = lp.bounds()
    if any(point[j] < lb[j] - tol for j in range(len(lb))):
        return False
    return all(c.lhs(point) >= -tol * max(1.0, abs(c.lhs.c0)) for c in lp.cons)


def min_over_branches(lps: Sequence[LpInstance]) -> tuple[float, int, tuple[float, ...]]:
    """Minimum over the feasible LPs as ``(value, index, point)``."""
    if not lps:
        raise ValueError("no branch LPs to minimise over")
    best = (math.inf, -1, ())
    for i, lp in enumerate(lps):
        sol = solve(lp)
        if sol.status == UNBOUNDED:
            return -math.inf, i, ()
        if sol.status == OPTIMAL and sol.value < best[0]:
            best = (sol.value, i, sol.point)
    if best[1] < 0:
        raise AllInfeasibleError(f"all {len(lps)} branch LPs are infeasible")
    return best


def _fmt(expr: AffineExpr, names: Sequence[str]) -> str:
    parts = []
    for j, v in expr.coeffs.items():
        parts.append(f"{'+' if v >= 0 else '-'} {abs(v):.12g} {names[j]}")
    s = " ".join(parts).lstrip("+ ") or "0"
    return s


def to_lp_text(lp: LpInstance, names: Sequence[str] | None = None) -> str:
    """CPLEX-style LP text of the instance, for cross-checking with other solvers."""
    n = lp.nvars
    names = list(names) if names is not None else [f"theta{j}" for j in range(n)]
    lines = ["\\ constant objective offset %.12g" % lp.objective.c0, "Minimize",
             f" obj: {_fmt(lp.objective, names)}", "Subject To"]
    for i, c in enumerate(lp.cons):
        lines.append(f" c{i}: {_fmt(c.lhs, names)} >= {-c.lhs.c0:.12g}")
    lines.append("Bounds")
    for j, v in enumerate(lp.bounds()):
        lines.append(f" {names[j]} >= {v:.12g}")
    lines.append("End")
    return "\n".join(lines) + "\n"
