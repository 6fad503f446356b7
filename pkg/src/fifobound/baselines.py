"""
Reference analyses for comparison: SFA-FIFO with the fixed theta rule, TFA++
(total flow analysis with shaped link aggregates), and LUDB-FF, which is the
LUDB engine with every shaper removed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .analysis import DELAY, feedforward_analyze
from .curves import INF, TOL, RateLatency, Shaper, TokenBucket, shape_tb
from .network import Topology


class StabilityError(ValueError):
    pass


@dataclass(frozen=True)
class BaselineResult:
    method: str
    bound: float
    per_server_detail: tuple = field(default=(), compare=False)


def _rate_latency(net: Topology, sid: str) -> RateLatency:
    svc = net.server(sid).service
    if not isinstance(svc, RateLatency):
        raise TypeError(f"server {sid}: the baselines need rate-latency service")
    return svc


def _flows_at(net: Topology, sid: str):
    for f in net.flows:
        if sid in f.path:
            yield f, f.path.index(sid)


# SFA-FIFO

class _Sfa:
    def __init__(self, net: Topology):
        self.net = net
        self.memo: dict[tuple[str, int], TokenBucket] = {}

    def arrival(self, fid: str, k: int) -> TokenBucket:
        key = (fid, k)
        if key not in self.memo:
            f = self.net.flow(fid)
            if k == 0:
                tb = f.arrival
            else:
                R, T = self.residual(fid, k - 1)
                prev = self.arrival(fid, k - 1)
                tb = TokenBucket(prev.b + prev.r * T, prev.r)
            self.memo[key] = tb
        return self.memo[key]

    def residual(self, fid: str, k: int) -> tuple[float, float]:
        """Residual rate-latency curve of ``fid`` at the ``k``-th server of its path."""
        sid = self.net.flow(fid).path[k]
        rl = _rate_latency(self.net, sid)
        b = r = 0.0
        for g, j in _flows_at(self.net, sid):
            if g.id != fid:
                tb = self.arrival(g.id, j)
                b += tb.b
                r += tb.r
        own = self.net.flow(fid).arrival.r
        if r + own > rl.R + TOL:
            raise StabilityError(f"server {sid}: arrival rates exceed the service rate")
        if rl.R - r <= 0.0:
            return 0.0, INF
        return rl.R - r, rl.T + b / rl.R


def sfa_fifo_delay(net: Topology, foi: str) -> BaselineResult:
    """Per-server FIFO residual with ``theta = T + b_cross/R``, then end-to-end convolution.

    Shapers are ignored.  Crossflow arrivals at later servers are propagated
    through their own residual curves at the servers they cross.
    """
    sfa = _Sfa(net)
    f = net.flow(foi)
    rates, lat, detail = [], 0.0, []
    for k, sid in enumerate(f.path):
        R, T = sfa.residual(foi, k)
        rates.append(R)
        lat += T
        detail.append((sid, R, T))
    Rmin = min(rates)
    if Rmin <= 0.0 or lat == INF:
        return BaselineResult("sfa_fifo", INF, tuple(detail))
    if f.arrival.r > Rmin + TOL:
        raise StabilityError(f"flow {foi}: rate above its end-to-end residual rate")
    return BaselineResult("sfa_fifo", lat + f.arrival.b / Rmin, tuple(detail))


# TFA++

def _aggregate_hdev(parts: list[tuple[TokenBucket, Shaper]], rl: RateLatency) -> float:
    """Delay of a sum of shaped token buckets through a rate-latency server."""
    shaped = [shape_tb(tb, sh) for tb, sh in parts]
    total_r = sum(a.r for a in shaped)
    if total_r > rl.R + TOL:
        return INF
    points = [0.0] + [a.burst_time for a in shaped if a.sh.active]

    def A(t: float) -> float:
        if t <= 0.0:
            return sum(a.b if not a.sh.active else a.sh.L for a in shaped)
        return sum(a(t) for a in shaped)

    return rl.T + max(A(t) / rl.R - t for t in points)


def tfa_pp_delay(net: Topology, foi: str, shaping: bool = True) -> BaselineResult:
    """Total flow analysis with the link shapers capping every inbound aggregate.

    Each server's delay is the horizontal deviation of its whole shaped input
    against its service; a flow's burst grows by ``r * d`` at each server.
    """
    if not shaping:
        net = net.without_shapers()
    delay: dict[str, float] = {}
    tb_at: dict[tuple[str, int], TokenBucket] = {}
    for f in net.flows:
        tb_at[(f.id, 0)] = f.arrival
    for sid in net.topological_order():
        rl = _rate_latency(net, sid)
        groups: dict[object, list[TokenBucket]] = {}
        shapers: dict[object, Shaper] = {}
        present = list(_flows_at(net, sid))
        if not present:
            continue
        for g, k in present:
            tb = tb_at[(g.id, k)]
            if k == 0:
                link = ("ingress", g.id)
                shapers[link] = g.ingress_shaper
            else:
                link = (g.path[k - 1], sid)
                shapers[link] = net.link_shaper(*link)
            groups.setdefault(link, []).append(tb)
        parts = [(TokenBucket(sum(t.b for t in tbs), sum(t.r for t in tbs)), shapers[l])
                 for l, tbs in groups.items()]
        d = _aggregate_hdev(parts, rl)
        delay[sid] = d
        for g, k in present:
            tb = tb_at[(g.id, k)]
            if k + 1 < len(g.path):
                tb_at[(g.id, k + 1)] = TokenBucket(tb.b + tb.r * d, tb.r) if d < INF else TokenBucket(0.0, 0.0)
    f = net.flow(foi)
    detail = tuple((s, delay[s]) for s in f.path)
    total = sum(d for _, d in detail)
    return BaselineResult("tfa_pp", total, detail)


def ludb_ff_delay(net: Topology, foi: str) -> BaselineResult:
    r = feedforward_analyze(net, foi, DELAY, shaping=False)
    return BaselineResult("ludb_ff", r.bound, (("theta", r.theta_point),))
