"""
Curves whose stage parameters are affine in the FIFO parameters theta.

A symbolic curve carries the linear constraints under which its stage list is
valid.  The leftover operation splits on every case distinction of the
closed-form leftover and every positive part, so one numeric curve becomes a
family of symbolic branches whose constraint sets cover the theta space.

Plateau widths and heights are kept as :class:`Nonneg` values: a non-negative
constant plus a non-negative combination of "atoms", where an atom is the left
hand side of a constraint the branch asserts to be >= 0.  Comparing two such
values coefficientwise gives cheap, sound dominance proofs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .curves import (INF, TOL, Mslc, PreconditionError, ShapedArrival, Stage,
                     TokenBucket, check_delay_rates)


class AffineExpr:
    """``c0 + sum_j co[j] * theta_j``; trailing zero coefficients are trimmed."""

    __slots__ = ("c0", "co")

    def __init__(self, c0: float = 0.0, co: Sequence[float] = ()):
        co = tuple(float(v) for v in co)
        n = len(co)
        while n and co[n - 1] == 0.0:
            n -= 1
        self.c0 = float(c0)
        self.co = co[:n]
        if not math.isfinite(self.c0) or not all(math.isfinite(v) for v in self.co):
            raise ValueError(f"affine expressions need finite coefficients: {self!r}")

    @classmethod
    def var(cls, j: int, coef: float = 1.0, c0: float = 0.0) -> "AffineExpr":
        co = [0.0] * (j + 1)
        co[j] = coef
        return cls(c0, co)

    @property
    def coeffs(self) -> dict[int, float]:
        return {j: v for j, v in enumerate(self.co) if v != 0.0}

    @property
    def nvars(self) -> int:
        return len(self.co)

    def is_const(self, tol: float = TOL) -> bool:
        return all(abs(v) <= tol for v in self.co)

    def __add__(self, other) -> "AffineExpr":
        if not isinstance(other, AffineExpr):
            return AffineExpr(self.c0 + other, self.co)
        a, b = self.co, other.co
        if len(a) < len(b):
            a, b = b, a
        co = list(a)
        for j, v in enumerate(b):
            co[j] += v
        return AffineExpr(self.c0 + other.c0, co)

    __radd__ = __add__

    def __neg__(self) -> "AffineExpr":
        return AffineExpr(-self.c0, [-v for v in self.co])

    def __sub__(self, other) -> "AffineExpr":
        return self + (-other)

    def __rsub__(self, other) -> "AffineExpr":
        return (-self) + other

    def __mul__(self, k: float) -> "AffineExpr":
        return AffineExpr(self.c0 * k, [v * k for v in self.co])

    __rmul__ = __mul__

    def __truediv__(self, k: float) -> "AffineExpr":
        return self * (1.0 / k)

    def __call__(self, theta: Sequence[float]) -> float:
        val = self.c0
        for j, v in enumerate(self.co):
            if v != 0.0:
                val += v * theta[j]
        return val

    def key(self) -> tuple[float, ...]:
        return (round(self.c0, 9),) + tuple(round(v, 9) for v in self.co)

    def close(self, other: "AffineExpr", tol: float = TOL) -> bool:
        d = self - other
        return abs(d.c0) <= tol and d.is_const(tol)

    def lower_bound(self, lower: Sequence[float]) -> float:
        """Infimum over ``theta >= lower``; ``-inf`` if some coefficient is negative."""
        val = self.c0
        for j, v in enumerate(self.co):
            if v < -TOL:
                return -INF
            if v > 0.0:
                val += v * (lower[j] if j < len(lower) else 0.0)
        return val

    def __repr__(self) -> str:
        parts = [f"{self.c0:g}"] + [f"{v:+g}*t{j}" for j, v in self.coeffs.items()]
        return " ".join(parts)


@dataclass(frozen=True)
class Constraint:
    """``lhs >= 0``."""

    lhs: AffineExpr

    @classmethod
    def ge(cls, expr: AffineExpr) -> "Constraint":
        return cls(expr)

    @classmethod
    def le(cls, expr: AffineExpr) -> "Constraint":
        return cls(-expr)

    def satisfied(self, theta: Sequence[float], tol: float = 1e-7) -> bool:
        return self.lhs(theta) >= -tol

    def key(self) -> tuple[float, ...]:
        return self.lhs.key()

    def __repr__(self) -> str:
        return f"[{self.lhs!r} >= 0]"


class Nonneg:
    """A value known to be >= 0: ``const + sum coef * atom`` with everything non-negative."""

    __slots__ = ("expr", "const", "atoms")

    def __init__(self, expr: AffineExpr, const: float, atoms: dict):
        self.expr = expr
        self.const = const
        self.atoms = atoms

    @classmethod
    def constant(cls, v: float) -> "Nonneg":
        v = max(float(v), 0.0)
        return cls(AffineExpr(v), v, {})

    @classmethod
    def atom(cls, e: AffineExpr) -> "Nonneg":
        """``e`` itself, valid where the branch asserts ``e >= 0``."""
        if e.is_const():
            return cls.constant(e.c0)
        return cls(e, 0.0, {e.key(): 1.0})

    def __add__(self, other) -> "Nonneg":
        if not isinstance(other, Nonneg):
            if other < 0.0:
                raise ValueError("only non-negative shifts keep a Nonneg")
            return Nonneg(self.expr + other, self.const + other, self.atoms)
        atoms = dict(self.atoms)
        for k, v in other.atoms.items():
            atoms[k] = atoms.get(k, 0.0) + v
        return Nonneg(self.expr + other.expr, self.const + other.const, atoms)

    __radd__ = __add__

    def scale(self, k: float) -> "Nonneg":
        if k < 0.0:
            raise ValueError("only non-negative scaling keeps a Nonneg")
        return Nonneg(self.expr * k, self.const * k, {a: v * k for a, v in self.atoms.items()})

    def __call__(self, theta: Sequence[float]) -> float:
        return self.expr(theta)

    def __repr__(self) -> str:
        return repr(self.expr)


def provably_ge(pos: Sequence[tuple[float, Nonneg]], neg: Sequence[tuple[float, Nonneg]],
                lower: Sequence[float] = (), tol: float = TOL) -> bool:
    """Is ``sum k*p over pos >= sum k*n over neg`` for every theta in the branch?

    First tries the atom certificates, then the plain coefficients with the
    variable lower bounds.  A False answer means "not proven".
    """
    const = 0.0
    atoms: dict = {}
    for k, v in pos:
        const += k * v.const
        for a, c in v.atoms.items():
            atoms[a] = atoms.get(a, 0.0) + k * c
    for k, v in neg:
        const -= k * v.const
        for a, c in v.atoms.items():
            atoms[a] = atoms.get(a, 0.0) - k * c
    if const >= -tol and all(c >= -tol for c in atoms.values()):
        return True
    diff = AffineExpr()
    for k, v in pos:
        diff = diff + v.expr * k
    for k, v in neg:
        diff = diff - v.expr * k
    return diff.lower_bound(lower) >= -tol


@dataclass(frozen=True)
class SymStage:
    tau: Nonneg
    sigma: Nonneg
    rho: float

    def instantiate(self, theta: Sequence[float]) -> Stage:
        return Stage(max(self.tau(theta), 0.0), max(self.sigma(theta), 0.0), self.rho)

    def key(self):
        return (self.tau.expr.key(), self.sigma.expr.key())


@dataclass(frozen=True)
class SymMslc:
    """Offset ``D`` (numeric), symbolic stages and the constraints they rely on.

    ``lower[j]`` is the lower bound ``theta_j >= D_j`` of each variable in use.
    """

    D: float
    stages: tuple[SymStage, ...]
    cons: tuple[Constraint, ...] = ()
    lower: tuple[float, ...] = ()

    def instantiate(self, theta: Sequence[float]) -> Mslc:
        return Mslc(self.D, tuple(s.instantiate(theta) for s in self.stages))

    def feasible_at(self, theta: Sequence[float], tol: float = 1e-7) -> bool:
        if any(theta[j] < lb - tol for j, lb in enumerate(self.lower)):
            return False
        return all(c.satisfied(theta, tol) for c in self.cons)

    @property
    def rates(self) -> list[float]:
        return [s.rho for s in self.stages]


def sym_from_mslc(c: Mslc) -> SymMslc:
    return SymMslc(c.D, tuple(SymStage(Nonneg.constant(s.tau), Nonneg.constant(s.sigma), s.rho)
                              for s in c.stages))


def merge_lower(a: Sequence[float], b: Sequence[float]) -> tuple[float, ...]:
    n = max(len(a), len(b))
    return tuple(max(a[j] if j < len(a) else 0.0, b[j] if j < len(b) else 0.0) for j in range(n))


def merge_cons(a: Sequence[Constraint], b: Sequence[Constraint]) -> tuple[Constraint, ...]:
    seen = {c.key() for c in a}
    out = list(a)
    for c in b:
        k = c.key()
        if k not in seen:
            seen.add(k)
            out.append(c)
    return tuple(out)


def sym_stage_dominates(a: SymStage, b: SymStage, lower: Sequence[float] = (),
                        tol: float = TOL) -> bool:
    """True when ``a`` is provably pointwise >= ``b`` in the whole branch."""
    if a.rho == INF and a.tau.expr.is_const() and a.tau.expr.c0 <= tol:
        return True
    if a.rho < b.rho - tol:
        return False
    if not provably_ge([(1.0, a.sigma)], [(1.0, b.sigma)], lower, tol):
        return False
    if provably_ge([(1.0, b.tau)], [(1.0, a.tau)], lower, tol):
        return True
    if b.rho == INF:
        return False
    return provably_ge([(1.0, a.sigma), (b.rho, b.tau)], [(1.0, b.sigma), (b.rho, a.tau)],
                       lower, tol)


def simplify_sym_stages(stages: Iterable[SymStage], lower: Sequence[float] = (),
                        tol: float = TOL) -> tuple[SymStage, ...]:
    by_key: dict = {}
    for s in stages:
        k = s.key()
        kept = by_key.get(k)
        if kept is None or s.rho < kept.rho:
            by_key[k] = s
    cand = list(by_key.values())
    alive = [True] * len(cand)
    for i, a in enumerate(cand):
        for j, b in enumerate(cand):
            if i != j and alive[j] and sym_stage_dominates(a, b, lower, tol):
                alive[i] = False
                break
    return tuple(s for s, ok in zip(cand, alive) if ok)


def simplify(s: SymMslc) -> SymMslc:
    """Drop duplicate and provably dominated stages; the curve is unchanged pointwise."""
    return SymMslc(s.D, simplify_sym_stages(s.stages, s.lower), s.cons, s.lower)


def sym_convolve(a: SymMslc, b: SymMslc) -> SymMslc:
    lower = merge_lower(a.lower, b.lower)
    out: list[SymStage] = []
    for s in a.stages:
        for t in b.stages:
            tau, sigma = s.tau + t.tau, s.sigma + t.sigma
            out.extend((s, t, SymStage(tau, sigma, s.rho), SymStage(tau, sigma, t.rho)))
    return SymMslc(a.D + b.D, simplify_sym_stages(out, lower), merge_cons(a.cons, b.cons), lower)


# Leftover

Feasibility = Callable[[Sequence[Constraint], Sequence[float]], bool]


def interval_feasible(cons: Sequence[Constraint], lower: Sequence[float]) -> bool:
    """Cheap necessary test: single-variable constraints against each other and the bounds."""
    lo = {j: v for j, v in enumerate(lower)}
    hi: dict[int, float] = {}
    for c in cons:
        e = c.lhs
        nz = e.coeffs
        if not nz:
            if e.c0 < -1e-7:
                return False
            continue
        if len(nz) > 1:
            if e.lower_bound(lower) >= 0.0:
                continue
            # upper bound of lhs with unknown upper limits: only decidable if all coefs <= 0
            if all(v < 0.0 for v in nz.values()):
                if e.c0 + sum(v * lo.get(j, 0.0) for j, v in nz.items()) < -1e-7:
                    return False
            continue
        (j, v), = nz.items()
        bound = -e.c0 / v
        if v > 0.0:
            lo[j] = max(lo.get(j, 0.0), bound)
        else:
            hi[j] = min(hi.get(j, INF), bound)
    return all(lo.get(j, 0.0) <= h + 1e-7 for j, h in hi.items())


@dataclass
class _StageCase:
    cons: tuple[Constraint, ...]
    stage: SymStage | None
    dead: bool = False  # the case leaves no service at all (stage stuck at zero)


def _infinite_cases(st: SymStage, D: float, alpha: ShapedArrival, theta: AffineExpr) -> list[_StageCase]:
    """Plateau ``[sigma - alpha(u)]^+`` with ``u = D + tau - theta``, split on the arrival piece and the sign."""
    tau, sigma = st.tau, st.sigma
    u = tau.expr + D - theta
    zero = Nonneg.constant(0.0)
    gone = _StageCase((Constraint.ge(theta - D - tau.expr),), None)
    floor = alpha.sh.L if alpha.sh.active else alpha.b  # alpha(u) >= floor for u > 0
    if provably_ge([(1.0, Nonneg.constant(floor))], [(1.0, sigma)]):
        return [_StageCase((Constraint.ge(u),), SymStage(tau, zero, INF)), gone]
    x = alpha.burst_time
    pieces = [((Constraint.ge(u - x),), sigma.expr - alpha.b - u * alpha.r)]
    if alpha.sh.active:
        pieces.append(((Constraint.ge(u), Constraint.le(u - x)), sigma.expr - alpha.sh.L - u * alpha.sh.Rp))
    out = []
    for cons, g in pieces:
        out.append(_StageCase(cons + (Constraint.ge(g),), SymStage(tau, Nonneg.atom(g), INF)))
        out.append(_StageCase(cons + (Constraint.le(g),), SymStage(tau, zero, INF)))
    out.append(gone)
    return out


def _leftover_cases(st: SymStage, D: float, alpha: ShapedArrival, j: int) -> list[_StageCase]:
    b, r = alpha.b, alpha.r
    x, K = alpha.burst_time, alpha.knee
    theta = AffineExpr.var(j)
    cut = Nonneg.atom(theta - D)
    tau, sigma = st.tau, st.sigma
    if st.rho == INF:
        return _infinite_cases(st, D, alpha, theta)
    rr = st.rho - r
    zero = Nonneg.constant(0.0)
    out = []
    c1 = Constraint.ge(tau.expr + (D - x) - theta)
    g = (tau.expr + D - theta) * r + b - sigma.expr
    if rr > 0.0:
        out.append(_StageCase((c1, Constraint.ge(g)), SymStage(tau + Nonneg.atom(g).scale(1.0 / rr), zero, rr)))
    else:
        out.append(_StageCase((c1, Constraint.ge(g)), None, dead=True))
    out.append(_StageCase((c1, Constraint.le(g)), SymStage(tau, Nonneg.atom(-g), rr)))
    c2 = Constraint.ge(theta - D - tau.expr + x)
    h = (theta + (x - D) - tau.expr) * st.rho + sigma.expr - K
    out.append(_StageCase((c2, Constraint.ge(h)), SymStage(cut + x, Nonneg.atom(h), rr)))
    if rr > 0.0:
        out.append(_StageCase((c2, Constraint.le(h)), SymStage(cut + x + Nonneg.atom(-h).scale(1.0 / rr), zero, rr)))
    else:
        out.append(_StageCase((c2, Constraint.le(h)), None, dead=True))
    return out


def _add_cons(cons: tuple[Constraint, ...], keys: frozenset, new: Iterable[Constraint],
              lower: Sequence[float]):
    """Append constraints, skipping ones implied by the bounds; None if one is trivially false."""
    cons_l = list(cons)
    keys_s = set(keys)
    for c in new:
        e = c.lhs
        if e.is_const():
            if e.c0 < -1e-7:
                return None
            continue
        if e.lower_bound(lower) >= 0.0:
            continue
        k = c.key()
        if k in keys_s:
            continue
        keys_s.add(k)
        cons_l.append(c)
    return tuple(cons_l), frozenset(keys_s)


@dataclass
class LeftoverStats:
    dead: int = 0
    pruned: int = 0


def sym_leftover(beta: SymMslc, alpha: ShapedArrival, theta: int,
                 feasible: Feasibility | None = interval_feasible,
                 stats: LeftoverStats | None = None,
                 do_simplify: bool = True) -> list[SymMslc]:
    """Branches of ``(beta -_theta alpha)`` closed to a non-decreasing curve.

    ``theta`` is the index of a fresh variable.  Branches whose stage is stuck
    at zero forever (arrival rate equal to the stage rate) give no finite
    bound and are dropped; their number is counted in ``stats.dead``.
    """
    check_delay_rates(alpha, beta.rates)
    if theta < len(beta.lower) or any(s.tau.expr.nvars > theta or s.sigma.expr.nvars > theta
                                      for s in beta.stages):
        raise ValueError(f"theta_{theta} is not a fresh variable")
    lower = tuple(beta.lower) + (0.0,) * (theta - len(beta.lower)) + (beta.D,)
    stats = stats if stats is not None else LeftoverStats()
    per_stage = [_leftover_cases(st, beta.D, alpha, theta) for st in beta.stages]
    cutoff = SymStage(Nonneg.atom(AffineExpr.var(theta) - beta.D), Nonneg.constant(0.0), INF)
    base = _add_cons(beta.cons, frozenset(c.key() for c in beta.cons), (), lower)
    out: list[SymMslc] = []

    def rec(i: int, cons, keys, stages):
        if i == len(per_stage):
            sts = stages + [cutoff]
            if do_simplify:
                sts = simplify_sym_stages(sts, lower)
            out.append(SymMslc(beta.D, tuple(sts), cons, lower))
            return
        for case in per_stage[i]:
            res = _add_cons(cons, keys, case.cons, lower)
            if res is None:
                continue
            ncons, nkeys = res
            if feasible is not None and len(ncons) > len(cons) and not feasible(ncons, lower):
                stats.pruned += 1
                continue
            if case.dead:
                stats.dead += 1
                continue
            rec(i + 1, ncons, nkeys, stages + ([case.stage] if case.stage is not None else []))

    rec(0, base[0], base[1], [])
    return out


# Delay and backlog objectives

@dataclass(frozen=True)
class HdevAlternative:
    """One case of a stage's delay term, valid under ``cons``.

    ``term`` None means the case never raises the bound, unless ``infinite``
    is set (a zero-rate stage below the knee: the delay is unbounded).
    """

    cons: tuple[Constraint, ...]
    term: AffineExpr | None
    infinite: bool = False


def hdev_alternatives(alpha: ShapedArrival, st: SymStage, lower: Sequence[float] = ()
                      ) -> list[HdevAlternative]:
    """Cases of one stage's bracket term.  Their maximum over valid cases is the term.

    A case whose term is never positive is reported with ``term=None``; it can
    not raise the positive part of the maximum.
    """
    b, r = alpha.b, alpha.r
    K, x = alpha.knee, alpha.burst_time
    L, Rp = alpha.sh.L, alpha.sh.Rp
    tau, sigma = st.tau.expr, st.sigma.expr
    s_minus_K = sigma - K
    above = s_minus_K.lower_bound(lower) >= -TOL
    below = (-s_minus_K).lower_bound(lower) > TOL or (s_minus_K.is_const() and s_minus_K.c0 < -TOL)

    def hi_case(cons):
        # sigma >= K >= b
        if r <= 0.0:
            return HdevAlternative(cons, None)
        return HdevAlternative(cons, tau - (sigma - b) / r)

    def lo_cases(cons):
        if st.rho == INF:
            if Rp == INF:
                return [HdevAlternative(cons, tau)]
            g = sigma - L
            if g.lower_bound(lower) >= -TOL:
                return [HdevAlternative(cons, tau - g / Rp)]
            if (-g).lower_bound(lower) >= -TOL:
                return [HdevAlternative(cons, tau)]
            return [HdevAlternative(cons + (Constraint.ge(g),), tau - g / Rp),
                    HdevAlternative(cons + (Constraint.le(g),), tau)]
        if st.rho <= 0.0:
            return [HdevAlternative(cons, None, infinite=True)]
        return [HdevAlternative(cons, tau + (K - sigma) / st.rho - x)]

    if above:
        return [hi_case(())]
    if below:
        return lo_cases(())
    return [hi_case((Constraint.ge(s_minus_K),))] + lo_cases((Constraint.le(s_minus_K),))


def sym_hdev_terms(alpha: ShapedArrival, beta: SymMslc) -> list[list[HdevAlternative]]:
    check_delay_rates(alpha, beta.rates)
    return [hdev_alternatives(alpha, st, beta.lower) for st in beta.stages]


def _assignments(alts: list[list[HdevAlternative]]):
    if not alts:
        yield ()
        return
    first, rest = alts[0], alts[1:]
    for a in first:
        for tail in _assignments(rest):
            yield (a,) + tail


def sym_hdev_decompose(alpha: ShapedArrival, beta: SymMslc, split_max: bool = True):
    """LPs whose minimum is ``inf_theta hdev``.

    With ``split_max`` there is one LP per case assignment and per maximising
    term (including the zero of the positive part).  Otherwise each case
    assignment gives one LP with an extra epigraph variable ``z`` bounding
    every term from above.
    """
    from .lp import LpInstance
    alts = sym_hdev_terms(alpha, beta)
    nv = max([len(beta.lower)] + [c.lhs.nvars for c in beta.cons]
             + [s.tau.expr.nvars for s in beta.stages] + [s.sigma.expr.nvars for s in beta.stages])
    lower = tuple(beta.lower) + (0.0,) * (nv - len(beta.lower))
    lps = []
    for assign in _assignments(alts):
        if any(a.infinite for a in assign):
            continue
        cons = list(beta.cons)
        for a in assign:
            cons.extend(a.cons)
        terms = [a.term for a in assign if a.term is not None]
        if split_max:
            cands = terms + [AffineExpr(0.0)]
            for m in cands:
                mc = cons + [Constraint.ge(m - t) for t in cands if t is not m]
                lps.append(LpInstance(m + beta.D, tuple(mc), lower))
        else:
            z = AffineExpr.var(nv)
            mc = cons + [Constraint.ge(z - t) for t in terms]
            lps.append(LpInstance(z + beta.D, tuple(mc), lower + (0.0,)))
    return lps


def vdev_terms(alpha: TokenBucket, beta: SymMslc) -> list[AffineExpr]:
    if alpha.r > min(beta.rates) + TOL:
        raise PreconditionError(
            f"arrival rate r={alpha.r} must be <= every stage rate (min {min(beta.rates)})")
    b, r, D = alpha.b, alpha.r, beta.D
    terms = [AffineExpr(b + D * r if D > 0.0 else 0.0)]
    for st in beta.stages:
        terms.append(b - st.sigma.expr + (st.tau.expr + D) * r)
    return terms


def sym_vdev_decompose(alpha: TokenBucket, beta: SymMslc, split_max: bool = True):
    """LPs whose minimum is ``inf_theta vdev``; one per maximising term, or one epigraph LP."""
    from .lp import LpInstance
    terms = vdev_terms(alpha, beta)
    nv = max([len(beta.lower)] + [c.lhs.nvars for c in beta.cons] + [t.nvars for t in terms])
    lower = tuple(beta.lower) + (0.0,) * (nv - len(beta.lower))
    if not split_max:
        z = AffineExpr.var(nv)
        cons = tuple(beta.cons) + tuple(Constraint.ge(z - t) for t in terms)
        return [LpInstance(z, cons, lower + (0.0,))]
    lps = []
    for m in terms:
        cons = tuple(beta.cons) + tuple(Constraint.ge(m - t) for t in terms if t is not m)
        lps.append(LpInstance(m, cons, lower))
    return lps
