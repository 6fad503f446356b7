"""
Feedforward topologies: servers with rate-latency service and per-link output
shapers, token-bucket flows with ingress shapers, a validator for the system
model, and generators for the three evaluation families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .curves import INF, NO_SHAPER, TOL, Mslc, RateLatency, Shaper, TokenBucket

FAMILIES = ("one_hop", "sinktree", "tree")


@dataclass(frozen=True)
class Server:
    id: str
    service: RateLatency | Mslc
    out_shapers: Mapping[str, Shaper] = field(default_factory=dict)

    @property
    def rate(self) -> float:
        if isinstance(self.service, RateLatency):
            return self.service.R
        return self.service.min_rate

    @property
    def peak_rate(self) -> float:
        if isinstance(self.service, RateLatency):
            return self.service.R
        return self.service.max_finite_rate

    def shaper_to(self, nxt: str) -> Shaper:
        return self.out_shapers.get(nxt, NO_SHAPER)


@dataclass(frozen=True)
class Flow:
    id: str
    path: tuple[str, ...]
    arrival: TokenBucket
    ingress_shaper: Shaper = NO_SHAPER

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(self.path))


@dataclass(frozen=True)
class Topology:
    servers: tuple[Server, ...]
    flows: tuple[Flow, ...]
    links: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "servers", tuple(self.servers))
        object.__setattr__(self, "flows", tuple(self.flows))
        links = list(dict.fromkeys(tuple(l) for l in self.links))
        if not links:
            for f in self.flows:
                for a, b in zip(f.path, f.path[1:]):
                    if (a, b) not in links:
                        links.append((a, b))
        object.__setattr__(self, "links", tuple(links))

    def server(self, sid: str) -> Server:
        for s in self.servers:
            if s.id == sid:
                return s
        raise KeyError(f"unknown server {sid!r}")

    def flow(self, fid: str) -> Flow:
        for f in self.flows:
            if f.id == fid:
                return f
        raise KeyError(f"unknown flow {fid!r}")

    def link_shaper(self, a: str, b: str) -> Shaper:
        return self.server(a).shaper_to(b)

    def topological_order(self) -> list[str]:
        """Server ids in link order; raises ValueError on a cycle."""
        ids = [s.id for s in self.servers]
        indeg = {s: 0 for s in ids}
        succ: dict[str, list[str]] = {s: [] for s in ids}
        for a, b in self.links:
            if a in succ and b in indeg:
                succ[a].append(b)
                indeg[b] += 1
        ready = [s for s in ids if indeg[s] == 0]
        order = []
        while ready:
            s = ready.pop(0)
            order.append(s)
            for t in succ[s]:
                indeg[t] -= 1
                if indeg[t] == 0:
                    ready.append(t)
        if len(order) != len(ids):
            raise ValueError("the link graph has a cycle")
        return order

    def without_shapers(self) -> "Topology":
        servers = tuple(Server(s.id, s.service, {k: NO_SHAPER for k in s.out_shapers})
                        for s in self.servers)
        flows = tuple(Flow(f.id, f.path, f.arrival, NO_SHAPER) for f in self.flows)
        return Topology(servers, flows, self.links)


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __str__(self) -> str:
        lines = [f"error: {e}" for e in self.errors] + [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines) if lines else "ok"


def validate(t: Topology, allow_full: bool = False) -> ValidationReport:
    """Check the system model; every violation is listed, nothing is raised.

    Stability needs the sum of flow rates strictly below each server rate.
    With ``allow_full`` equality is admitted and reported as a warning, for
    the 100 % utilization corner case.
    """
    rep = ValidationReport()
    ids = [s.id for s in t.servers]
    if len(set(ids)) != len(ids):
        rep.errors.append("duplicate server ids")
    fids = [f.id for f in t.flows]
    if len(set(fids)) != len(fids):
        rep.errors.append("duplicate flow ids")
    known = set(ids)
    for a, b in t.links:
        if a not in known or b not in known:
            rep.errors.append(f"link {a}->{b} refers to an unknown server")
    links = set(t.links)
    for s in t.servers:
        for nxt in s.out_shapers:
            if (s.id, nxt) not in links:
                rep.errors.append(f"server {s.id} has a shaper towards {nxt} but no such link")
    try:
        t.topological_order()
    except ValueError:
        rep.errors.append("the network is not feedforward (cyclic links)")
    for f in t.flows:
        if not f.path:
            rep.errors.append(f"flow {f.id} has an empty path")
            continue
        if len(set(f.path)) != len(f.path):
            rep.errors.append(f"flow {f.id} visits a server twice")
        for s in f.path:
            if s not in known:
                rep.errors.append(f"flow {f.id} uses unknown server {s}")
        for a, b in zip(f.path, f.path[1:]):
            if (a, b) not in links:
                rep.errors.append(f"flow {f.id} uses missing link {a}->{b}")
        if f.ingress_shaper.active and f.ingress_shaper.L > f.arrival.b + TOL:
            rep.warnings.append(f"flow {f.id}: ingress shaper burst exceeds the flow burst; shaper ignored")
    if rep.errors:
        return rep
    for s in t.servers:
        load = sum(f.arrival.r for f in t.flows if s.id in f.path)
        if load > s.rate + TOL:
            rep.errors.append(f"server {s.id}: stability violated, sum of rates {load:g} > R={s.rate:g}")
        elif load >= s.rate - TOL and load > 0.0 and not allow_full:
            rep.errors.append(f"server {s.id}: stability needs sum of rates {load:g} < R={s.rate:g}")
        elif load >= s.rate - TOL and load > 0.0:
            rep.warnings.append(
                f"server {s.id}: full utilization, sum of rates {load:g} = R={s.rate:g}; admitted as a corner case")
    for f in t.flows:
        sh = f.ingress_shaper
        if sh.active:
            worst = max(t.server(s).peak_rate for s in f.path)
            if sh.Rp < worst - TOL:
                rep.errors.append(f"flow {f.id}: ingress shaper rate {sh.Rp:g} below a server rate {worst:g} on its path")
        for i, (a, b) in enumerate(zip(f.path, f.path[1:])):
            sh = t.link_shaper(a, b)
            if not sh.active:
                continue
            worst = max(t.server(s).peak_rate for s in f.path[i:])
            if sh.Rp < worst - TOL:
                rep.errors.append(
                    f"shaper {a}->{b}: rate {sh.Rp:g} below server rate {worst:g} downstream on flow {f.id}")
    rep.errors = list(dict.fromkeys(rep.errors))
    return rep


# Generators

def _check_params(N: int, u: float, ratio: float) -> None:
    if int(N) != N or N < 2:
        raise ValueError(f"N must be an integer >= 2, got {N!r}")
    if not 0.0 < u <= 1.0:
        raise ValueError(f"utilization must be in (0, 1], got {u!r}")
    if not ratio > 0.0 or ratio == INF:
        raise ValueError(f"shaper ratio must be a positive number, got {ratio!r}")


B, R_FLOW, T_LAT, L_SHAPER = 1.0, 1.0, 1.0, 0.5


def _build(server_ids: list[str], R: float, ratio: float, paths: dict[str, list[str]]) -> Topology:
    Rp = ratio * R
    sh = Shaper(L_SHAPER, Rp)
    links: list[tuple[str, str]] = []
    for p in paths.values():
        for a, b in zip(p, p[1:]):
            if (a, b) not in links:
                links.append((a, b))
    servers = []
    for sid in server_ids:
        outs = {b: sh for a, b in links if a == sid}
        servers.append(Server(sid, RateLatency(R, T_LAT), outs))
    flows = [Flow(fid, tuple(p), TokenBucket(B, R_FLOW), sh) for fid, p in paths.items()]
    return Topology(tuple(servers), tuple(flows), tuple(links))


def gen_one_hop(N: int, u: float, ratio: float) -> Topology:
    """Foi ``f0`` over ``s1..sN`` and one single-hop crossflow ``x<i>`` per server."""
    _check_params(N, u, ratio)
    R = 2 * R_FLOW / u
    ids = [f"s{i}" for i in range(1, N + 1)]
    paths = {"f0": ids}
    for i, s in enumerate(ids, 1):
        paths[f"x{i}"] = [s]
    return _build(ids, R, ratio, paths)


def gen_sinktree(N: int, u: float, ratio: float) -> Topology:
    """Flow ``f<i>`` enters at ``s<i>`` and leaves at the sink ``sN``; ``f1`` is the foi."""
    _check_params(N, u, ratio)
    R = N * R_FLOW / u
    ids = [f"s{i}" for i in range(1, N + 1)]
    paths = {f"f{i}": ids[i - 1:] for i in range(1, N + 1)}
    return _build(ids, R, ratio, paths)


def gen_tree(N: int, u: float, ratio: float, side_depth: int = 1) -> Topology:
    """Main branch ``s1..sN`` crossed by the foi ``f1``.

    Crossflow ``f<i>`` (``i >= 2``) starts on a side branch of ``side_depth``
    servers ``a<i>_1..`` and joins the main branch at ``s<i>``.  Every side
    server also carries one single-hop flow ``g<i>_<k>``, so the side branch is
    one-hop persistent while the main branch is a sink tree.
    """
    _check_params(N, u, ratio)
    if int(side_depth) != side_depth or side_depth < 1:
        raise ValueError(f"side branch depth must be an integer >= 1, got {side_depth!r}")
    R = N * R_FLOW / u
    main = [f"s{i}" for i in range(1, N + 1)]
    ids = list(main)
    paths = {"f1": main}
    for i in range(2, N + 1):
        side = [f"a{i}" if side_depth == 1 else f"a{i}_{k}" for k in range(1, side_depth + 1)]
        ids.extend(side)
        paths[f"f{i}"] = side + main[i - 1:]
        for k, s in enumerate(side, 1):
            paths[f"g{i}" if side_depth == 1 else f"g{i}_{k}"] = [s]
    return _build(ids, R, ratio, paths)


GENERATORS = {"one_hop": gen_one_hop, "sinktree": gen_sinktree, "tree": gen_tree}


def default_foi(family: str) -> str:
    return "f0" if family == "one_hop" else "f1"


def generate(family: str, N: int, u: float, ratio: float) -> Topology:
    try:
        gen = GENERATORS[family]
    except KeyError:
        raise ValueError(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}") from None
    return gen(N, u, ratio)


# Plain-data form used by the file format

def _num(v: float):
    return "inf" if v == INF else v


def _parse_num(v, what: str) -> float:
    if isinstance(v, str):
        if v.strip().lower() in ("inf", "+inf", "infinity"):
            return INF
        raise ValueError(f"{what}: expected a number or \"inf\", got {v!r}")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"{what}: expected a number, got {v!r}")
    return float(v)


def to_dict(t: Topology) -> dict:
    servers = []
    for s in t.servers:
        if not isinstance(s.service, RateLatency):
            raise ValueError(f"server {s.id}: only rate-latency service can be written out")
        servers.append({"id": s.id, "rate": _num(s.service.R), "latency": s.service.T,
                        "out_shapers": [{"to": k, "L": v.L, "Rp": _num(v.Rp)}
                                        for k, v in s.out_shapers.items()]})
    flows = [{"id": f.id, "path": list(f.path), "b": f.arrival.b, "r": f.arrival.r,
              "ingress": {"L": f.ingress_shaper.L, "Rp": _num(f.ingress_shaper.Rp)}}
             for f in t.flows]
    links = [{"from": a, "to": b} for a, b in t.links]
    return {"servers": servers, "links": links, "flows": flows}


def from_dict(d: Mapping) -> Topology:
    """Inverse of :func:`to_dict`; raises ValueError with the offending field."""
    if not isinstance(d, Mapping):
        raise ValueError("topology document must be an object")
    for key in ("servers", "flows"):
        if not isinstance(d.get(key), list):
            raise ValueError(f"topology document needs a \"{key}\" array")
    servers = []
    for i, s in enumerate(d["servers"]):
        where = f"servers[{i}]"
        try:
            sid = str(s["id"])
            rl = RateLatency(_parse_num(s["rate"], f"{where}.rate"), _parse_num(s["latency"], f"{where}.latency"))
            outs = {}
            for j, o in enumerate(s.get("out_shapers", [])):
                outs[str(o["to"])] = Shaper(_parse_num(o["L"], f"{where}.out_shapers[{j}].L"),
                                            _parse_num(o["Rp"], f"{where}.out_shapers[{j}].Rp"))
        except (KeyError, TypeError) as e:
            raise ValueError(f"{where}: missing or malformed field {e}") from None
        servers.append(Server(sid, rl, outs))
    flows = []
    for i, f in enumerate(d["flows"]):
        where = f"flows[{i}]"
        try:
            ing = f.get("ingress") or {"L": 0.0, "Rp": "inf"}
            sh = Shaper(_parse_num(ing["L"], f"{where}.ingress.L"), _parse_num(ing["Rp"], f"{where}.ingress.Rp"))
            flows.append(Flow(str(f["id"]), tuple(str(p) for p in f["path"]),
                              TokenBucket(_parse_num(f["b"], f"{where}.b"), _parse_num(f["r"], f"{where}.r")),
                              sh if sh.active else NO_SHAPER))
        except (KeyError, TypeError) as e:
            raise ValueError(f"{where}: missing or malformed field {e}") from None
    links = []
    for i, l in enumerate(d.get("links", [])):
        try:
            links.append((str(l["from"]), str(l["to"])))
        except (KeyError, TypeError):
            raise ValueError(f"links[{i}]: needs \"from\" and \"to\"") from None
    return Topology(tuple(servers), tuple(flows), tuple(links))
