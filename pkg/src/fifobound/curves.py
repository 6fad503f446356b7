"""
Numeric curves over the extended non-negative reals.

Service curves are kept in the "minimum of steps, then linear" form: an offset
``D`` followed by the minimum of several stages, each stage being a plateau of
height ``sigma`` on ``(0, tau]`` and a line of slope ``rho`` afterwards.  Rate
latency curves are the one-stage special case ``(0, 0, R)``.

Arrival curves are token buckets, optionally capped by a shaper (a second,
steeper token bucket with a smaller burst).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

INF = math.inf
TOL = 1e-9


class PreconditionError(ValueError):
    """Raised when an operation is called outside the rate assumptions it relies on."""


def pos(x: float) -> float:
    return x if x > 0.0 else 0.0


def ratio(num: float, den: float) -> float:
    """``num / den`` for ``num >= 0`` with ``x/inf = 0`` and ``x/0 = inf`` (``0/0 = 0``)."""
    if num <= TOL:
        return 0.0
    if den == INF:
        return 0.0
    if den <= 0.0:
        return INF
    return num / den


def _check_nonneg(name: str, value: float) -> None:
    if not value >= 0.0 or math.isnan(value):
        raise ValueError(f"{name} must be >= 0, got {value!r}")


@dataclass(frozen=True)
class TokenBucket:
    """Token bucket arrival curve ``gamma_{b,r}(t) = b + r t`` for ``t > 0``."""

    b: float
    r: float

    def __post_init__(self):
        _check_nonneg("burst b", self.b)
        _check_nonneg("rate r", self.r)
        if self.r == INF:
            raise ValueError("token bucket rate must be finite")

    def __call__(self, t: float) -> float:
        return 0.0 if t <= 0.0 else self.b + self.r * t

    def __add__(self, other: "TokenBucket") -> "TokenBucket":
        return TokenBucket(self.b + other.b, self.r + other.r)


@dataclass(frozen=True)
class Shaper:
    """Shaping curve ``gamma_{L,R'}``; ``Rp = inf`` means the shaper is absent."""

    L: float
    Rp: float

    def __post_init__(self):
        _check_nonneg("shaper burst L", self.L)
        if not self.Rp > 0.0:
            raise ValueError(f"shaper rate R' must be > 0, got {self.Rp!r}")

    @property
    def active(self) -> bool:
        return self.Rp < INF

    def __add__(self, other: "Shaper") -> "Shaper":
        if not (self.active and other.active):
            return NO_SHAPER
        return Shaper(self.L + other.L, self.Rp + other.Rp)


NO_SHAPER = Shaper(0.0, INF)


@dataclass(frozen=True)
class ShapedArrival:
    """Arrival curve ``gamma_{b,r} /\\ gamma_{L,R'}`` with ``L <= b`` and ``r < R'``."""

    tb: TokenBucket
    sh: Shaper = NO_SHAPER

    def __post_init__(self):
        if not self.sh.active and self.sh.L != 0.0:
            object.__setattr__(self, "sh", NO_SHAPER)
        if self.sh.L > self.tb.b + TOL:
            raise PreconditionError(
                f"shaper burst L={self.sh.L} exceeds token bucket burst b={self.tb.b} (L <= b)")
        if not self.tb.r < self.sh.Rp:
            raise PreconditionError(
                f"token bucket rate r={self.tb.r} must be below shaper rate R'={self.sh.Rp} (r < R')")

    @property
    def b(self) -> float:
        return self.tb.b

    @property
    def r(self) -> float:
        return self.tb.r

    @property
    def burst_time(self) -> float:
        """Abscissa of the knee, ``(b - L) / (R' - r)``; zero without shaper."""
        if not self.sh.active:
            return 0.0
        return pos(self.tb.b - self.sh.L) / (self.sh.Rp - self.tb.r)

    @property
    def knee(self) -> float:
        """Ordinate of the knee, ``K = (b - L)/(R' - r) * r + b``."""
        return self.burst_time * self.tb.r + self.tb.b

    def __call__(self, t: float) -> float:
        if t <= 0.0:
            return 0.0
        return min(self.tb.b + self.tb.r * t, self.sh.L + self.sh.Rp * t)


@dataclass(frozen=True)
class RateLatency:
    R: float
    T: float

    def __post_init__(self):
        if not self.R > 0.0:
            raise ValueError(f"service rate must be > 0, got {self.R!r}")
        _check_nonneg("latency T", self.T)

    def __call__(self, t: float) -> float:
        return self.R * pos(t - self.T)


@dataclass(frozen=True)
class Stage:
    """Plateau of height ``sigma`` on ``(0, tau]``, then slope ``rho``."""

    tau: float
    sigma: float
    rho: float

    def __post_init__(self):
        _check_nonneg("stage tau", self.tau)
        _check_nonneg("stage sigma", self.sigma)
        _check_nonneg("stage rho", self.rho)

    def __call__(self, t: float) -> float:
        if t <= 0.0:
            return 0.0
        if t <= self.tau:
            return self.sigma
        if self.rho == INF:
            return INF
        return self.sigma + self.rho * (t - self.tau)


@dataclass(frozen=True)
class Mslc:
    """Offset ``D`` followed by the minimum of ``stages``."""

    D: float
    stages: tuple[Stage, ...]

    def __post_init__(self):
        _check_nonneg("offset D", self.D)
        if not self.stages:
            raise ValueError("an Mslc needs at least one stage")
        object.__setattr__(self, "stages", tuple(self.stages))

    def __call__(self, t: float) -> float:
        return mslc_eval(self, t)

    @property
    def min_rate(self) -> float:
        return min(s.rho for s in self.stages)

    @property
    def max_finite_rate(self) -> float:
        finite = [s.rho for s in self.stages if s.rho < INF]
        return max(finite) if finite else 0.0


DELTA0 = Mslc(0.0, (Stage(0.0, 0.0, INF),))


def mslc_from_rate_latency(rl: RateLatency) -> Mslc:
    return Mslc(rl.T, (Stage(0.0, 0.0, rl.R),))


def as_mslc(service) -> Mslc:
    if isinstance(service, Mslc):
        return service
    if isinstance(service, RateLatency):
        return mslc_from_rate_latency(service)
    raise TypeError(f"cannot interpret {service!r} as a service curve")


def mslc_eval(c: Mslc, t: float) -> float:
    if t <= c.D:
        return 0.0
    return min(s(t - c.D) for s in c.stages)


def stage_dominates(a: Stage, b: Stage, tol: float = TOL) -> bool:
    """True when stage ``a`` is pointwise >= stage ``b`` (so ``a`` is redundant in a minimum)."""
    if a.rho == INF and a.tau <= tol:
        return True
    if a.rho < b.rho - tol:
        return False
    if a.tau <= b.tau + tol:
        return a.sigma >= b.sigma - tol
    if b.rho == INF:
        return False
    return a.sigma >= b.sigma + b.rho * (a.tau - b.tau) - tol


def simplify_stages(stages: Iterable[Stage], tol: float = TOL) -> tuple[Stage, ...]:
    """Drop duplicates, keep the smallest rate per plateau and remove dominated stages."""
    by_key: dict[tuple[float, float], Stage] = {}
    for s in stages:
        key = (round(s.tau, 9) if s.tau < INF else INF, round(s.sigma, 9))
        kept = by_key.get(key)
        if kept is None or s.rho < kept.rho:
            by_key[key] = s
    cand = sorted(by_key.values(), key=lambda s: (s.tau, s.sigma, s.rho))
    alive = [True] * len(cand)
    for i, a in enumerate(cand):
        for j, b in enumerate(cand):
            if i != j and alive[j] and stage_dominates(a, b, tol):
                alive[i] = False
                break
    return tuple(s for s, ok in zip(cand, alive) if ok)


def convolve_stage_pair(s: Stage, t: Stage) -> tuple[Stage, Stage, Stage, Stage]:
    tau, sigma = s.tau + t.tau, s.sigma + t.sigma
    return s, t, Stage(tau, sigma, s.rho), Stage(tau, sigma, t.rho)


def mslc_convolve(a: Mslc, b: Mslc) -> Mslc:
    """Min-plus convolution; the class is closed under it."""
    out: list[Stage] = []
    for s in a.stages:
        for t in b.stages:
            out.extend(convolve_stage_pair(s, t))
    return Mslc(a.D + b.D, simplify_stages(out))


def check_delay_rates(alpha: ShapedArrival, rates: Sequence[float]) -> None:
    finite = [p for p in rates if p < INF]
    if finite and alpha.sh.Rp < max(finite) - TOL:
        raise PreconditionError(
            f"shaper rate R'={alpha.sh.Rp} must be >= every finite stage rate (max {max(finite)})")
    if alpha.tb.r > min(rates) + TOL:
        raise PreconditionError(
            f"arrival rate r={alpha.tb.r} must be <= every stage rate (min {min(rates)})")


def stage_hdev(alpha: ShapedArrival, tau: float, sigma: float, rho: float) -> float:
    """Horizontal deviation against one stage at zero offset, before the positive part.

    Above the knee the plateau is left by the token-bucket branch of the
    arrival curve; below it the knee itself is the critical point.  The
    indicator of the knee branch is taken strictly so that a flat arrival
    (``r = 0``) sitting exactly on the plateau has no delay.
    """
    b, r = alpha.tb.b, alpha.tb.r
    K = alpha.knee
    if sigma >= K - TOL:
        if r <= 0.0:
            return -INF
        return tau - pos(sigma - b) / r
    if rho == INF:
        return tau - ratio(pos(sigma - alpha.sh.L), alpha.sh.Rp)
    return tau + ratio(K - sigma, rho) - alpha.burst_time


def hdev_shaped(alpha: ShapedArrival, beta: Mslc) -> float:
    """Delay bound of a shaped token bucket against an Mslc service curve."""
    check_delay_rates(alpha, [s.rho for s in beta.stages])
    worst = max(stage_hdev(alpha, s.tau, s.sigma, s.rho) for s in beta.stages)
    return beta.D + pos(worst)


def vdev_and_output(alpha: TokenBucket, beta: Mslc) -> tuple[float, TokenBucket]:
    """Backlog bound and the token-bucket output curve ``gamma_{vdev, r}``."""
    if alpha.r > beta.min_rate + TOL:
        raise PreconditionError(
            f"arrival rate r={alpha.r} must be <= every stage rate (min {beta.min_rate})")
    b, r, D = alpha.b, alpha.r, beta.D
    # the plain b + D*r term is only reached at t = D when D > 0; at D = 0 the
    # arrival is still 0 and the stage terms already cover t > 0
    head = b + D * r if D > 0.0 else 0.0
    backlog = max([head] + [b - s.sigma + (D + s.tau) * r for s in beta.stages])
    return backlog, TokenBucket(backlog, r)


def leftover_stage(st: Stage, D: float, alpha: ShapedArrival, theta: float) -> Stage | None:
    """Lower non-decreasing bound of one stage's FIFO leftover (cutoff stage not included).

    Returns None when the stage only contributes the cutoff.
    """
    b, r = alpha.tb.b, alpha.tb.r
    x, K = alpha.burst_time, alpha.knee
    if st.rho == INF:
        if theta > D + st.tau:
            return None
        # the raw leftover falls until the plateau ends, so its lowest point
        # is at t = D + tau, where the arrival has been sending for u
        u = D + st.tau - theta
        sent = alpha(u) if u > 0.0 else (alpha.sh.L if alpha.sh.active else b)
        return Stage(st.tau, pos(st.sigma - sent), INF)
    rr = st.rho - r
    if theta <= D + st.tau - x:
        y = (D + st.tau - theta) * r + b
        if y >= st.sigma:
            return Stage(st.tau + ratio(y - st.sigma, rr), 0.0, rr)
        return Stage(st.tau, st.sigma - y, rr)
    y = (theta + x - D - st.tau) * st.rho + st.sigma
    if y >= K:
        return Stage(theta - D + x, y - K, rr)
    return Stage(theta - D + x + ratio(K - y, rr), 0.0, rr)


def leftover_numeric(beta: Mslc, alpha: ShapedArrival, theta: float) -> Mslc:
    """FIFO leftover ``(beta -_theta alpha)`` closed to a non-decreasing lower bound.

    Only ``theta >= D`` is meaningful; smaller values are rejected.
    """
    if theta < beta.D - TOL:
        raise PreconditionError(f"theta={theta} is below the service offset D={beta.D}")
    check_delay_rates(alpha, [s.rho for s in beta.stages])
    theta = max(theta, beta.D)
    out = []
    for st in beta.stages:
        s = leftover_stage(st, beta.D, alpha, theta)
        if s is not None and s not in out:
            out.append(s)
    cutoff = Stage(theta - beta.D, 0.0, INF)
    if cutoff not in out:
        out.append(cutoff)
    return Mslc(beta.D, tuple(out))


def shape_tb(alpha: TokenBucket, sh: Shaper) -> ShapedArrival:
    """Cap a token bucket with a shaper; an ineffective shaper is dropped."""
    if not sh.active or sh.L >= alpha.b - TOL or not alpha.r < sh.Rp:
        return ShapedArrival(alpha, NO_SHAPER)
    return ShapedArrival(alpha, Shaper(min(sh.L, alpha.b), sh.Rp))
