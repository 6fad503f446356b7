"""
Least-upper-delay-bound analysis of nested FIFO tandems with shapers, and its
feedforward extension.

A tandem is turned into a nesting tree.  Walking the tree bottom-up, bare
servers contribute their service curves, and every inner node contributes the
leftover of its own service after its aggregated crossflow, with a fresh FIFO
parameter theta.  The symbolic leftover splits into branches; at the root the
delay (or backlog) bound of each branch is a min-max of affine terms, solved
as linear programs.  The bound is the minimum over all branches.

Delay LPs are searched by branch and bound: a stage whose case split is still
open is left out of the max, which gives a lower bound, and evaluating the
numeric pipeline at any LP point gives an upper bound.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

from . import lp as lpmod
from .curves import (INF, NO_SHAPER, TOL, Mslc, PreconditionError, RateLatency, ShapedArrival,
                     Shaper, TokenBucket, as_mslc, hdev_shaped, leftover_numeric, mslc_convolve,
                     shape_tb, vdev_and_output)
from .network import Topology
from .symbolic import (AffineExpr, Constraint, LeftoverStats, SymMslc, interval_feasible,
                       sym_convolve, sym_from_mslc, sym_hdev_terms, sym_leftover,
                       sym_vdev_decompose)

log = logging.getLogger(__name__)

DELAY, BACKLOG = "delay", "backlog"


class NestingError(ValueError):
    """Two flows of a tandem overlap without one interval containing the other."""


class DeadlineExceeded(RuntimeError):
    """Raised when an analysis runs past its wall-clock deadline."""


class AnalysisError(RuntimeError):
    pass


@dataclass(frozen=True)
class TandemFlow:
    """A flow on servers ``entry..exit`` (inclusive, 0-based) of a tandem.

    ``link`` names the physical link the flow arrives on and ``link_shaper``
    the shaper of that link (None at the ingress, where each flow has its own).
    """

    id: str
    entry: int
    exit: int
    arrival: ShapedArrival
    link: object = None
    link_shaper: Shaper | None = None


@dataclass(frozen=True)
class Tandem:
    servers: tuple[str, ...]
    service_curves: tuple[Mslc, ...]
    flows: tuple[TandemFlow, ...]
    foi: str

    def __post_init__(self):
        object.__setattr__(self, "service_curves", tuple(as_mslc(c) for c in self.service_curves))
        if len(self.servers) != len(self.service_curves):
            raise ValueError("one service curve per server is needed")
        n = len(self.servers)
        ids = [f.id for f in self.flows]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate flow ids in tandem")
        for f in self.flows:
            if not 0 <= f.entry <= f.exit < n:
                raise ValueError(f"flow {f.id}: interval [{f.entry}, {f.exit}] outside the tandem")
        foi = self.flow(self.foi)
        if foi.entry != 0 or foi.exit != n - 1:
            raise ValueError("the flow of interest must cross the whole tandem")

    def flow(self, fid: str) -> TandemFlow:
        for f in self.flows:
            if f.id == fid:
                return f
        raise KeyError(f"unknown flow {fid!r}")


def tandem_scale(t: Tandem) -> float:
    """A rough time scale of the tandem, used to size oracle grids."""
    rate = min(c.min_rate for c in t.service_curves)
    burst = sum(f.arrival.b for f in t.flows)
    return sum(c.D for c in t.service_curves) + (burst / rate if rate > 0 else 0.0) + 1.0


def aggregate_crossflows(flows: Sequence[TandemFlow]) -> tuple[ShapedArrival, bool]:
    """Arrival curve of several flows sharing one interval.

    Token buckets add up.  On a shared link the link shaper caps the sum; flows
    from different links get the componentwise sum of their shapers.  The flag
    tells whether that second, looser rule was needed.
    """
    if len(flows) == 1:
        return flows[0].arrival, False
    tb = TokenBucket(sum(f.arrival.b for f in flows), sum(f.arrival.r for f in flows))
    links = {f.link for f in flows}
    if len(links) == 1 and flows[0].link_shaper is not None:
        return shape_tb(tb, flows[0].link_shaper), False
    sh = flows[0].arrival.sh
    for f in flows[1:]:
        sh = sh + f.arrival.sh
    return shape_tb(tb, sh), len(links) > 1


@dataclass(eq=False)
class Node:
    entry: int
    exit: int
    flows: list[str]
    arrival: ShapedArrival
    segments: list = field(default_factory=list)  # server index or child Node
    theta: int | None = None
    loose: bool = False

    @property
    def children(self) -> list["Node"]:
        return [s for s in self.segments if isinstance(s, Node)]


@dataclass
class NestingTree:
    root: Node
    nthetas: int

    def postorder(self) -> list[Node]:
        out: list[Node] = []

        def rec(n: Node):
            for c in n.children:
                rec(c)
            out.append(n)

        rec(self.root)
        return out

    def theta_nodes(self) -> list[Node]:
        """Nodes carrying a theta, indexed by their variable."""
        nodes = [n for n in self.postorder() if n.theta is not None]
        return sorted(nodes, key=lambda n: n.theta)


def build_nesting_tree(t: Tandem) -> NestingTree:
    n = len(t.servers)
    groups: dict[tuple[int, int], list[TandemFlow]] = {}
    for f in t.flows:
        if f.id != t.foi:
            groups.setdefault((f.entry, f.exit), []).append(f)
    keys = sorted(groups, key=lambda k: (k[0] - k[1], k[0]))  # longest first
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            disjoint = a[1] < b[0] or b[1] < a[0]
            nested = (a[0] <= b[0] and b[1] <= a[1]) or (b[0] <= a[0] and a[1] <= b[1])
            if not (disjoint or nested):
                raise NestingError(
                    f"flows {groups[a][0].id} {list(a)} and {groups[b][0].id} {list(b)} "
                    "are neither nested nor disjoint")
    foi = t.flow(t.foi)
    root = Node(0, n - 1, [t.foi], foi.arrival)
    nodes = {}
    for k in keys:
        arr, loose = aggregate_crossflows(groups[k])
        nodes[k] = Node(k[0], k[1], [f.id for f in groups[k]], arr, loose=loose)
    parent_of: dict[tuple[int, int], Node] = {}
    for k in keys:
        best = None
        for p in keys:
            if p != k and p[0] <= k[0] and k[1] <= p[1]:
                if best is None or p[1] - p[0] < best[1] - best[0]:
                    best = p
        parent_of[k] = nodes[best] if best is not None else root
    for node in [root] + [nodes[k] for k in keys]:
        kids = sorted((nodes[k] for k in keys if parent_of[k] is node), key=lambda c: c.entry)
        segs: list = []
        p = node.entry
        it = iter(kids)
        nxt = next(it, None)
        while p <= node.exit:
            if nxt is not None and nxt.entry == p:
                segs.append(nxt)
                p = nxt.exit + 1
                nxt = next(it, None)
            else:
                segs.append(p)
                p += 1
        node.segments = segs
    tree = NestingTree(root, 0)
    count = 0
    for node in tree.postorder():
        if node is not root:
            node.theta = count
            count += 1
    tree.nthetas = count
    return tree


def node_offset(t: Tandem, node: Node) -> float:
    total = 0.0
    for s in node.segments:
        total += t.service_curves[s].D if isinstance(s, int) else node_offset(t, s)
    return total


def theta_lower(t: Tandem, tree: NestingTree) -> tuple[float, ...]:
    return tuple(node_offset(t, nd) for nd in tree.theta_nodes())


# Numeric pipeline at a fixed theta

def numeric_service(t: Tandem, node: Node, theta: Sequence[float]) -> Mslc:
    acc = None
    for s in node.segments:
        if isinstance(s, int):
            part = t.service_curves[s]
        else:
            inner = numeric_service(t, s, theta)
            part = leftover_numeric(inner, s.arrival, max(theta[s.theta], inner.D))
        acc = part if acc is None else mslc_convolve(acc, part)
    return acc


def evaluate_at(t: Tandem, theta: Sequence[float], objective: str = DELAY,
                tree: NestingTree | None = None) -> float:
    """The bound obtained with every theta fixed; an upper bound on the optimum."""
    tree = tree or build_nesting_tree(t)
    s = numeric_service(t, tree.root, theta)
    if objective == DELAY:
        return hdev_shaped(tree.root.arrival, s)
    return vdev_and_output(tree.root.arrival.tb, s)[0]


# Symbolic pipeline

@dataclass
class _Counters:
    branches: int = 0
    dead: int = 0
    pruned: int = 0
    lps: int = 0
    failed: int = 0
    deadline: float | None = None

    def tick(self) -> None:
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise DeadlineExceeded("analysis deadline exceeded")


def _prune(cons, lower) -> bool:
    return interval_feasible(cons, lower) and lpmod.feasible(cons, lower)


def _sym_service(t: Tandem, node: Node, ctr: _Counters) -> list[SymMslc]:
    acc: list[SymMslc] | None = None
    ctr.tick()
    for s in node.segments:
        if isinstance(s, int):
            part = [sym_from_mslc(t.service_curves[s])]
        else:
            part = []
            stats = LeftoverStats()
            for br in _sym_service(t, s, ctr):
                part.extend(sym_leftover(br, s.arrival, s.theta, feasible=_prune, stats=stats))
            ctr.dead += stats.dead
            ctr.pruned += stats.pruned
        acc = part if acc is None else [sym_convolve(a, p) for a in acc for p in part]
    return acc or []


@dataclass(frozen=True)
class AnalysisResult:
    bound: float
    kind: str
    theta_point: tuple[float, ...] = ()
    branch_count: int = 0
    lp_count: int = 0
    notes: tuple[str, ...] = ()

    @property
    def loose(self) -> bool:
        return bool(self.notes)


def _round(v: float) -> float:
    return v if not math.isfinite(v) else round(v, 9)


class _DelaySearch:
    """Branch and bound over the per-stage case splits of the delay terms."""

    def __init__(self, t: Tandem, tree: NestingTree, lower: tuple[float, ...], ctr: _Counters,
                 exhaustive: bool = False):
        self.t, self.tree, self.lower, self.ctr = t, tree, lower, ctr
        self.alpha = tree.root.arrival
        self.nv = len(lower)
        self.best = INF
        self.best_pt: tuple[float, ...] = tuple(lower)
        self.exhaustive = exhaustive
        self.seen: set = set()

    def incumbent(self, pt: Sequence[float]) -> None:
        key = tuple(round(v, 7) for v in pt)
        if key in self.seen:
            return
        self.seen.add(key)
        try:
            v = evaluate_at(self.t, pt, DELAY, self.tree)
        except PreconditionError:
            return
        if v < self.best:
            self.best, self.best_pt = v, tuple(pt)

    def lp(self, br: SymMslc, cons: list[Constraint], terms: list[AffineExpr]) -> lpmod.LpSolution:
        z = AffineExpr.var(self.nv)
        allc = tuple(br.cons) + tuple(cons) + tuple(Constraint.ge(z - tm) for tm in terms)
        inst = lpmod.LpInstance(z + br.D, allc, self.lower + (0.0,))
        self.ctr.lps += 1
        self.ctr.tick()
        sol = lpmod.solve(inst)
        if sol.status == lpmod.FAILED:
            self.ctr.failed += 1
        return sol

    def run(self, branches: Sequence[SymMslc]) -> None:
        if not self.exhaustive:
            self.incumbent(self.lower)
        plans = []
        for br in branches:
            alts = sym_hdev_terms(self.alpha, br)
            cons: list[Constraint] = []
            terms: list[AffineExpr] = []
            multi = []
            infinite = False
            for a in alts:
                if len(a) == 1:
                    if a[0].infinite:
                        infinite = True
                        break
                    cons.extend(a[0].cons)
                    if a[0].term is not None:
                        terms.append(a[0].term)
                else:
                    multi.append(a)
            if infinite:
                continue
            if self.exhaustive:
                self._enumerate(br, cons, terms, multi, 0)
                continue
            sol = self.lp(br, cons, terms)
            if sol.status == lpmod.OPTIMAL:
                plans.append((sol.value, len(plans), br, cons, terms, multi, sol))
        plans.sort(key=lambda p: (p[0], p[1]))
        for _, _, br, cons, terms, multi, sol in plans:
            self._dfs(br, cons, terms, multi, sol)

    @staticmethod
    def _active_value(alts, pt) -> float:
        """Value at ``pt`` of the stage term whose case holds there."""
        vals = []
        for a in alts:
            if all(c.satisfied(pt, 1e-9) for c in a.cons):
                if a.infinite:
                    return INF
                vals.append(-INF if a.term is None else a.term(pt))
        return max(vals) if vals else -INF

    def _dfs(self, br, cons, terms, multi, sol) -> None:
        """Branch only on stages whose term exceeds the LP value at the LP optimum."""
        if sol.status != lpmod.OPTIMAL or sol.value >= self.best - TOL:
            return
        pt = sol.point[:self.nv]
        self.incumbent(pt)
        if sol.value >= self.best - TOL:
            return
        z = sol.value - br.D
        worst, pick = z + 1e-9, None
        for k, alts in enumerate(multi):
            v = self._active_value(alts, pt)
            if v > worst:
                worst, pick = v, k
        if pick is None:
            if sol.value < self.best:
                self.best, self.best_pt = sol.value, tuple(pt)
            return
        rest = multi[:pick] + multi[pick + 1:]
        for a in multi[pick]:
            if a.infinite:
                continue
            ncons = cons + list(a.cons)
            nterms = terms + ([a.term] if a.term is not None else [])
            self._dfs(br, ncons, nterms, rest, self.lp(br, ncons, nterms))

    def _enumerate(self, br, cons, terms, multi, i) -> None:
        """Every case assignment, no pruning; for cross-checks."""
        if i == len(multi):
            sol = self.lp(br, cons, terms)
            if sol.status == lpmod.OPTIMAL and sol.value < self.best:
                self.best, self.best_pt = sol.value, tuple(sol.point[:self.nv])
            return
        for a in multi[i]:
            if not a.infinite:
                self._enumerate(br, cons + list(a.cons),
                                terms + ([a.term] if a.term is not None else []), multi, i + 1)


def tandem_ludbpp(t: Tandem, objective: str = DELAY, exhaustive: bool = False,
                  deadline: float | None = None) -> AnalysisResult:
    """Bound for the tandem's flow of interest, minimised over all theta.

    ``deadline`` is a :func:`time.monotonic` instant; past it the search
    raises :class:`DeadlineExceeded`.
    """
    if objective not in (DELAY, BACKLOG):
        raise ValueError(f"objective must be {DELAY!r} or {BACKLOG!r}")
    tree = build_nesting_tree(t)
    lower = theta_lower(t, tree)
    ctr = _Counters(deadline=deadline)
    branches = _sym_service(t, tree.root, ctr)
    ctr.branches = len(branches)
    notes = []
    if any(nd.loose for nd in tree.postorder()):
        notes.append("crossflows from different links were aggregated with summed shapers")
    if not branches:
        if ctr.dead:
            return AnalysisResult(INF, objective, (), 0, 0, tuple(notes + ["no service left for the flow"]))
        raise lpmod.AllInfeasibleError("no feasible branch was generated")
    if objective == DELAY:
        search = _DelaySearch(t, tree, lower, ctr, exhaustive)
        search.run(branches)
        bound, point = search.best, search.best_pt
    else:
        bound, point = INF, tuple(lower)
        foi = tree.root.arrival.tb
        for br in branches:
            for inst in sym_vdev_decompose(foi, br, split_max=False):
                ctr.lps += 1
                ctr.tick()
                sol = lpmod.solve(inst)
                if sol.status == lpmod.FAILED:
                    ctr.failed += 1
                if sol.status == lpmod.OPTIMAL and sol.value < bound:
                    bound, point = sol.value, sol.point[:len(lower)]
    if ctr.failed:
        notes.append(f"{ctr.failed} LPs failed numerically; the bound may be loose")
    if bound == INF and not ctr.dead:
        raise lpmod.AllInfeasibleError("all branch LPs are infeasible")
    return AnalysisResult(_round(max(bound, 0.0)), objective, tuple(point), ctr.branches, ctr.lps,
                          tuple(notes))


# Feedforward networks

class _Engine:
    def __init__(self, net: Topology, deadline: float | None = None):
        self.net = net
        self.deadline = deadline
        self.order = {s: i for i, s in enumerate(net.topological_order())}
        self.arrivals: dict[tuple[str, int], tuple[ShapedArrival, object, Shaper | None]] = {}
        self.side_results: dict[tuple[str, int], AnalysisResult] = {}
        self.notes: list[str] = []

    def arrival_at(self, fid: str, k: int):
        """Arrival curve of flow ``fid`` entering the ``k``-th server of its path."""
        key = (fid, k)
        if key in self.arrivals:
            return self.arrivals[key]
        f = self.net.flow(fid)
        if k == 0:
            res = (shape_tb(f.arrival, f.ingress_shaper), ("ingress", fid), None)
        else:
            prefix = self.tandem(fid, 0, k - 1)
            r = tandem_ludbpp(prefix, BACKLOG, deadline=self.deadline)
            self.side_results[key] = r
            self.notes.extend(r.notes)
            if not math.isfinite(r.bound):
                raise AnalysisError(f"flow {fid} has an unbounded backlog before {f.path[k]}")
            out = TokenBucket(r.bound, f.arrival.r)
            link = (f.path[k - 1], f.path[k])
            sh = self.net.link_shaper(*link)
            res = (shape_tb(out, sh), link, sh)
        self.arrivals[key] = res
        return res

    def tandem(self, fid: str, a: int, b: int) -> Tandem:
        """Tandem of servers ``path[a..b]`` of flow ``fid`` with all interfering flows."""
        f = self.net.flow(fid)
        seg = list(f.path[a:b + 1])
        pos = {s: i for i, s in enumerate(seg)}
        flows = []
        arr, link, sh = self.arrival_at(fid, a)
        flows.append(TandemFlow(fid, 0, len(seg) - 1, arr, link, sh))
        for g in self.net.flows:
            if g.id == fid:
                continue
            runs = []
            for k, s in enumerate(g.path):
                if s not in pos:
                    continue
                if runs and runs[-1][2] == k - 1 and pos[s] == runs[-1][1] + 1:
                    runs[-1][1] = pos[s]
                    runs[-1][2] = k
                else:
                    runs.append([pos[s], pos[s], k, k])
            for j, (lo, hi, _, k0) in enumerate(runs):
                garr, glink, gsh = self.arrival_at(g.id, k0)
                gid = g.id if len(runs) == 1 else f"{g.id}#{j}"
                flows.append(TandemFlow(gid, lo, hi, garr, glink, gsh))
        curves = tuple(as_mslc(self.net.server(s).service) for s in seg)
        return Tandem(tuple(seg), curves, tuple(flows), fid)


def feedforward_analyze(net: Topology, foi: str, objective: str = DELAY,
                        shaping: bool = True, deadline: float | None = None) -> AnalysisResult:
    """Bound for ``foi`` in a feedforward network.

    Crossflows joining the foi's path after other servers get an output
    arrival curve from a backlog analysis of their own upstream tandem, capped
    by the shaper of the link they join on.  With ``shaping=False`` every
    shaper is removed first.
    """
    if not shaping:
        net = net.without_shapers()
    eng = _Engine(net, deadline)
    f = net.flow(foi)
    main = eng.tandem(foi, 0, len(f.path) - 1)
    res = tandem_ludbpp(main, objective, deadline=deadline)
    notes = tuple(dict.fromkeys(eng.notes + list(res.notes)))
    return AnalysisResult(res.bound, res.kind, res.theta_point, res.branch_count, res.lp_count, notes)


def side_outputs(net: Topology, foi: str, shaping: bool = True) -> dict[str, ShapedArrival]:
    """Arrival curves of the foi's crossflows where they join its path."""
    if not shaping:
        net = net.without_shapers()
    eng = _Engine(net)
    f = net.flow(foi)
    main = eng.tandem(foi, 0, len(f.path) - 1)
    return {tf.id: tf.arrival for tf in main.flows if tf.id != foi}
