"""
Brute-force min-plus operations on sampled curves.

Everything here works on a uniform grid ``0, h, 2h, ..., T_max`` and is meant
as slow ground truth for the closed forms.  Deconvolution and the leftover
closure only see the window up to ``T_max``; pick the horizon a few times
larger than the bound under test.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .curves import INF, Mslc, RateLatency, ShapedArrival, Stage, TokenBucket, as_mslc


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SampledFn:
    h: float
    T_max: float
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.h

    def compatible(self, other: "SampledFn") -> bool:
        return math.isclose(self.h, other.h) and len(self) == len(other)


def grid_size(h: float, T_max: float) -> int:
    if not h > 0.0 or not T_max > 0.0:
        raise GridError("grid step and horizon must be positive")
    return int(math.floor(T_max / h + 1e-9)) + 1


def _eval_stages(stages: Sequence[Stage], u: np.ndarray) -> np.ndarray:
    out = np.full(u.shape, np.inf)
    for s in stages:
        if s.rho == INF:
            v = np.where(u <= s.tau, s.sigma, np.inf)
        else:
            v = s.sigma + s.rho * np.maximum(u - s.tau, 0.0)
        out = np.minimum(out, v)
    return np.where(u <= 0.0, 0.0, out)


def evaluate(curve, t: np.ndarray) -> np.ndarray:
    """Vectorised evaluation of the curve types of :mod:`fifobound.curves`."""
    if isinstance(curve, TokenBucket):
        return np.where(t <= 0.0, 0.0, curve.b + curve.r * t)
    if isinstance(curve, ShapedArrival):
        v = curve.tb.b + curve.tb.r * t
        if curve.sh.active:
            v = np.minimum(v, curve.sh.L + curve.sh.Rp * t)
        return np.where(t <= 0.0, 0.0, v)
    if isinstance(curve, (Mslc, RateLatency)):
        c = as_mslc(curve)
        return np.where(t <= c.D, 0.0, _eval_stages(c.stages, t - c.D))
    if callable(curve):
        return np.array([curve(float(x)) for x in t], dtype=float)
    raise TypeError(f"cannot sample {curve!r}")


def sample(curve, h: float, T_max: float) -> SampledFn:
    n = grid_size(h, T_max)
    t = np.arange(n) * h
    return SampledFn(h, T_max, evaluate(curve, t))


def delta0(h: float, T_max: float) -> SampledFn:
    n = grid_size(h, T_max)
    v = np.full(n, np.inf)
    v[0] = 0.0
    return SampledFn(h, T_max, v)


def _check(f: SampledFn, g: SampledFn) -> None:
    if not f.compatible(g):
        raise GridError(f"grid mismatch: h={f.h}/{g.h}, n={len(f)}/{len(g)}")


def oracle_convolve(f: SampledFn, g: SampledFn) -> SampledFn:
    """``inf_{0<=u<=d} f(d-u) + g(u)`` over grid points."""
    _check(f, g)
    n = len(f)
    out = np.full(n, np.inf)
    for u in range(n):
        gu = g.values[u]
        if gu == np.inf:
            continue
        np.minimum(out[u:], f.values[:n - u] + gu, out=out[u:])
    return SampledFn(f.h, f.T_max, out)


def oracle_deconvolve(f: SampledFn, g: SampledFn) -> SampledFn:
    """``sup_{u>=0} f(d+u) - g(u)``, truncated at the horizon."""
    _check(f, g)
    n = len(f)
    out = np.full(n, -np.inf)
    for u in range(n):
        gu = g.values[u]
        if gu == np.inf:
            continue
        np.maximum(out[:n - u], f.values[u:] - gu, out=out[:n - u])
    return SampledFn(f.h, f.T_max, out)


def oracle_hdev(alpha: SampledFn, beta: SampledFn, scan: float = 0.5) -> float:
    """Largest horizontal distance from the arrival points in the first ``scan`` of the window.

    Later arrival points are left out because beta may not catch up with them
    before the horizon; ``inf`` if it does not catch up with a scanned point.
    """
    _check(alpha, beta)
    b = np.maximum.accumulate(beta.values)
    m = max(1, int(len(alpha) * scan))
    j = np.searchsorted(b, alpha.values[:m], side="left")
    if (j >= len(b)).any():
        return math.inf
    i = np.arange(m)
    return float(np.maximum(j - i, 0).max() * alpha.h)


def oracle_vdev(alpha: SampledFn, beta: SampledFn) -> float:
    _check(alpha, beta)
    return float(np.max(alpha.values - beta.values))


def oracle_leftover(beta: SampledFn, alpha: SampledFn, theta: float) -> SampledFn:
    """``[beta(t) - alpha(t - theta)]^+ 1{t > theta}`` closed to its non-decreasing lower bound."""
    _check(beta, alpha)
    k = int(round(theta / beta.h))
    if abs(k * beta.h - theta) > 1e-9 * max(1.0, theta):
        raise GridError(f"theta={theta} is not a grid point of step {beta.h}")
    n = len(beta)
    raw = np.zeros(n)
    if k < n - 1:
        with np.errstate(invalid="ignore"):
            d = beta.values[k + 1:] - alpha.values[1:n - k]
        d = np.where(np.isnan(d), np.inf, d)
        raw[k + 1:] = np.maximum(d, 0.0)
    closed = np.minimum.accumulate(raw[::-1])[::-1]
    return SampledFn(beta.h, beta.T_max, closed)


# Tandem grid search

@dataclass(frozen=True)
class GridSearchResult:
    value: float
    theta: tuple[float, ...]
    evaluations: int
    step: float
    at_boundary: bool


class GridTooCoarse(RuntimeError):
    pass


def tandem_objective(tandem, objective: str, h: float, T_max: float) -> tuple[Callable, int]:
    """Objective ``theta -> bound`` built from sampled curves in nesting-tree order.

    Returns the function and the number of theta variables.
    """
    from .analysis import build_nesting_tree

    tree = build_nesting_tree(tandem)
    servers = [sample(s, h, T_max) for s in tandem.service_curves]
    d0 = delta0(h, T_max)
    nodes = tree.postorder()
    node_alpha = {id(nd): sample(nd.arrival, h, T_max) for nd in nodes if nd.theta is not None}
    foi = tree.root.arrival

    def service(node, theta):
        acc = d0
        for seg in node.segments:
            if isinstance(seg, int):
                part = servers[seg]
            else:
                inner = service(seg, theta)
                part = oracle_leftover(inner, node_alpha[id(seg)], snap(theta[seg.theta], h))
            acc = oracle_convolve(acc, part)
        return acc

    def f(theta: Sequence[float]) -> float:
        s = service(tree.root, theta)
        if objective == "delay":
            return oracle_hdev(sample(foi, h, T_max), s)
        return oracle_vdev(sample(foi.tb, h, T_max), s)

    return f, tree.nthetas


def snap(v: float, h: float) -> float:
    return round(v / h) * h


def tandem_grid_search(tandem, objective: str = "delay", theta_max: float | None = None,
                       coarse: float = 0.25, step: float = 1e-3, h: float = 1e-2,
                       T_max: float | None = None, refine: int = 2) -> GridSearchResult:
    """Minimise the sampled bound over a theta grid, zooming in around the best point.

    The coarse pass spans ``[0, theta_max]`` for every variable; each zoom pass
    shrinks the step by 10 around the incumbent until ``step`` is reached.
    """
    from .analysis import tandem_scale

    scale = tandem_scale(tandem)
    theta_max = theta_max if theta_max is not None else 2.0 * scale
    T_max = T_max if T_max is not None else 6.0 * scale
    f, m = tandem_objective(tandem, objective, h, T_max)
    if m == 0:
        return GridSearchResult(f(()), (), 1, step, False)
    evals = 0
    cache: dict = {}

    def F(pt):
        nonlocal evals
        key = tuple(round(v / h) for v in pt)
        if key not in cache:
            evals += 1
            cache[key] = f(pt)
        return cache[key]

    axis = np.arange(0.0, theta_max + 1e-12, coarse)
    best_pt, best = None, math.inf
    for pt in itertools.product(axis, repeat=m):
        v = F(pt)
        if v < best:
            best, best_pt = v, pt
    cur = coarse
    while cur > max(step, h) + 1e-12:
        nxt = max(cur / 10.0, step, h)
        lo = [max(0.0, p - refine * cur) for p in best_pt]
        axes = [np.arange(l, p + refine * cur + 1e-12, nxt) for l, p in zip(lo, best_pt)]
        for pt in itertools.product(*axes):
            v = F(pt)
            if v < best:
                best, best_pt = v, pt
        cur = nxt
    at_boundary = any(p >= theta_max - coarse for p in best_pt)
    return GridSearchResult(best, tuple(float(p) for p in best_pt), evals, cur, at_boundary)
