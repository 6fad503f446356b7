"""
Command line front end.

    fifobound generate --family one_hop --n 3 --u 0.5 --ratio 2 --out net.json
    fifobound analyze --input net.json --foi f0 --methods ludbpp,ludbff
    fifobound compare --family one_hop,sinktree,tree --n 2-5 --out sweep.csv

Exit codes: 0 ok, 1 usage, 2 invalid input (parse, validation, unknown flow,
I/O), 3 analysis failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Sequence

from . import analysis, lp
from .analysis import BACKLOG, DELAY, DeadlineExceeded, feedforward_analyze
from .baselines import sfa_fifo_delay, tfa_pp_delay
from .network import (FAMILIES, Topology, default_foi, from_dict, generate, to_dict, validate)

log = logging.getLogger("fifobound")

METHODS = ("ludbpp", "ludbff", "sfa_fifo", "tfa_pp")
EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_ANALYSIS = 0, 1, 2, 3
CSV_VERSION = 1
CELL_DEADLINE = 600.0


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# Topology files

def read_topology(path: str) -> Topology:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    try:
        return from_dict(doc)
    except ValueError as e:
        raise InputError(f"{path}: {e}") from None


def dump_topology(t: Topology) -> str:
    return json.dumps(to_dict(t), indent=2) + "\n"


def write_text(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as e:
        raise InputError(f"cannot write {path}: {e.strerror}") from None


# Analyses

def run_method(net: Topology, foi: str, method: str, objective: str = DELAY,
               deadline: float | None = None) -> dict:
    """One method on one flow; returns a plain record."""
    t0 = time.perf_counter()
    rec = {"method": method, "bound": math.nan, "theta": [], "branches": None, "lps": None,
           "notes": []}
    if method in ("ludbpp", "ludbff"):
        r = feedforward_analyze(net, foi, objective, shaping=(method == "ludbpp"), deadline=deadline)
        rec.update(bound=r.bound, theta=list(r.theta_point), branches=r.branch_count,
                   lps=r.lp_count, notes=list(r.notes))
    elif objective != DELAY:
        rec["notes"].append(f"{method} only computes delay bounds")
    elif method == "sfa_fifo":
        rec["bound"] = sfa_fifo_delay(net, foi).bound
    elif method == "tfa_pp":
        rec["bound"] = tfa_pp_delay(net, foi).bound
    else:
        raise UsageError(f"unknown method {method!r}")
    rec["wall_time_s"] = time.perf_counter() - t0
    return rec


def parse_methods(text: str) -> list[str]:
    out = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in out if m not in METHODS]
    if bad or not out:
        raise UsageError(f"methods must be a subset of {','.join(METHODS)}, got {text!r}")
    return list(dict.fromkeys(out))


def parse_int_list(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def parse_util(text: str) -> float:
    """Utilization as a fraction; ``50%`` is accepted too."""
    text = text.strip()
    if text.endswith("%"):
        return float(text[:-1]) / 100.0
    return float(text)


def parse_float_list(text: str) -> list[float]:
    return [parse_util(part) for part in text.split(",")]


def _load_net(args) -> Topology:
    if getattr(args, "input", None):
        return read_topology(args.input)
    if not (args.family and args.n is not None and args.u is not None and args.ratio is not None):
        raise UsageError("give --input or all of --family --n --u --ratio")
    try:
        return generate(args.family, int(args.n), float(args.u), float(args.ratio))
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_generate(args) -> int:
    net = _load_net(args)
    write_text(args.out, dump_topology(net))
    return EXIT_OK


def cmd_analyze(args) -> int:
    net = _load_net(args)
    rep = validate(net, allow_full=True)
    for w in rep.warnings:
        log.warning("%s", w)
    if not rep.ok:
        for e in rep.errors:
            print(f"validation error: {e}", file=sys.stderr)
        return EXIT_INPUT
    foi = args.foi or (default_foi(args.family) if args.family else None)
    if foi is None:
        raise UsageError("--foi is required with --input")
    try:
        net.flow(foi)
    except KeyError:
        raise InputError(f"unknown flow of interest {foi!r}") from None
    results = []
    for m in parse_methods(args.methods):
        try:
            results.append(run_method(net, foi, m, args.objective))
        except (analysis.AnalysisError, lp.AllInfeasibleError, analysis.NestingError, ValueError) as e:
            print(f"analysis failed ({m}): {e}", file=sys.stderr)
            return EXIT_ANALYSIS
    report = {"foi": foi, "objective": args.objective, "warnings": rep.warnings,
              "results": [{**r, "bound": _json_num(r["bound"])} for r in results]}
    write_text(args.out, json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def _json_num(v: float):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else "nan"
    return v


# Sweeps

def run_cell(cell: tuple, methods: Sequence[str], tol: float | None = None,
             cell_deadline: float = CELL_DEADLINE) -> list[dict]:
    """All methods on one (family, N, u, ratio) configuration.

    A method that fails or runs past the cell deadline is recorded as NaN with
    a note; the sweep goes on.
    """
    if tol is not None:
        lp.FEAS_TOL = tol
    family, N, u, ratio = cell
    net = generate(family, N, u, ratio)
    foi = default_foi(family)
    deadline = time.monotonic() + cell_deadline
    out = []
    for m in methods:
        try:
            rec = run_method(net, foi, m, DELAY, deadline=deadline)
            note = "; ".join(rec["notes"])
        except DeadlineExceeded:
            rec = {"method": m, "bound": math.nan, "wall_time_s": cell_deadline}
            note = f"skipped: cell exceeded {cell_deadline:g} s"
        except Exception as e:  # noqa: BLE001 - a failed cell must not stop the sweep
            rec = {"method": m, "bound": math.nan, "wall_time_s": math.nan}
            note = f"error: {type(e).__name__}: {e}"
        out.append({"family": family, "N": N, "u": u, "ratio": ratio, "method": m,
                    "bound": rec["bound"], "note": note, "wall_time_s": rec["wall_time_s"]})
    return out


def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    if math.isinf(v):
        return "inf"
    return f"{v:.9f}"


def relative(bound: float, ref: float) -> float:
    """``(bound - ref) / ref``."""
    if math.isnan(bound) or math.isnan(ref) or ref == 0.0 or math.isinf(ref):
        return math.nan
    return (bound - ref) / ref


def sweep(families: Sequence[str], Ns: Sequence[int], us: Sequence[float], ratios: Sequence[float],
          methods: Sequence[str], workers: int = 1, tol: float | None = None,
          cell_deadline: float = CELL_DEADLINE) -> list[dict]:
    cells = [(f, n, u, r) for f in families for n in Ns for u in us for r in ratios]
    if workers <= 1:
        chunks = [run_cell(c, methods, tol, cell_deadline) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(run_cell, c, tuple(methods), tol, cell_deadline) for c in cells]
            chunks = [f.result() for f in futs]
    return [row for chunk in chunks for row in chunk]


def rows_to_csv(rows: Sequence[dict], reference: str) -> str:
    cols = ["family", "N", "u", "ratio", "method", "bound", f"rel_to_{reference}", "note"]
    lines = [f"# fifobound-compare v{CSV_VERSION} columns={','.join(cols)}", ",".join(cols)]
    refs = {(r["family"], r["N"], r["u"], r["ratio"]): r["bound"] for r in rows
            if r["method"] == reference}
    for r in rows:
        ref = refs.get((r["family"], r["N"], r["u"], r["ratio"]), math.nan)
        note = r["note"].replace(",", ";").replace("\n", " ")
        lines.append(",".join([r["family"], str(r["N"]), f"{r['u']:g}", f"{r['ratio']:g}",
                               r["method"], _fmt(r["bound"]), _fmt(relative(r["bound"], ref)), note]))
    return "\n".join(lines) + "\n"


def rows_to_timings(rows: Sequence[dict]) -> str:
    lines = ["family,N,u,ratio,method,wall_time_s"]
    for r in rows:
        lines.append(f"{r['family']},{r['N']},{r['u']:g},{r['ratio']:g},{r['method']},{_fmt(r['wall_time_s'])}")
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    families = [f.strip() for f in (args.family or ",".join(FAMILIES)).split(",")]
    bad = [f for f in families if f not in FAMILIES]
    if bad:
        raise UsageError(f"unknown family {bad[0]!r}; choose from {', '.join(FAMILIES)}")
    try:
        Ns = parse_int_list(args.n or "2-5")
        us = parse_float_list(args.u or "0.5,0.75,1.0")
        ratios = [float(x) for x in (args.ratio or "1,2,3").split(",")]
    except ValueError as e:
        raise UsageError(f"bad sweep range: {e}") from None
    methods = parse_methods(args.methods)
    if args.reference not in methods:
        raise UsageError(f"reference method {args.reference!r} is not among --methods")
    for f in families:
        for n in Ns:
            for u in us:
                for r in ratios:
                    try:
                        generate(f, n, u, r)
                    except ValueError as e:
                        raise UsageError(str(e)) from None
    rows = sweep(families, Ns, us, ratios, methods, args.workers, args.tol)
    write_text(args.out, rows_to_csv(rows, args.reference))
    if args.out not in (None, "-"):
        write_text(args.out + ".timings.csv", rows_to_timings(rows))
    return EXIT_OK


def _workers(value: str | None) -> int:
    raw = value if value is not None else os.environ.get("NC_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"worker count must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("worker count must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fifobound", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, sweep_form=False):
        sp.add_argument("--family", help="one_hop, sinktree or tree" + (" (comma list)" if sweep_form else ""))
        sp.add_argument("--n", help="number of main servers" + (", e.g. 2-5" if sweep_form else ""))
        sp.add_argument("--u", help="utilization in (0, 1]" + (" (comma list)" if sweep_form else ""))
        sp.add_argument("--ratio", help="shaper rate to service rate ratio R'/R" + (" (comma list)" if sweep_form else ""))
        sp.add_argument("--out", help="output file (default stdout)")
        sp.add_argument("--workers", help="worker processes (default $NC_WORKERS or 1)")
        sp.add_argument("--tol", type=float, help="LP feasibility tolerance (default 1e-7)")

    g = sub.add_parser("generate", help="write a generated topology file")
    common(g)
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("analyze", help="bound one flow of a topology")
    common(a)
    a.add_argument("--input", help="topology file (JSON)")
    a.add_argument("--foi", help="flow of interest id")
    a.add_argument("--methods", default=",".join(METHODS))
    a.add_argument("--objective", choices=(DELAY, BACKLOG), default=DELAY)
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("compare", help="sweep generated topologies and write a CSV")
    common(c, sweep_form=True)
    c.add_argument("--methods", default=",".join(METHODS))
    c.add_argument("--reference", default="ludbff", help="method the relative column is computed against")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        args.workers = _workers(args.workers)
        if args.tol is not None:
            if not args.tol > 0.0:
                raise UsageError("--tol must be positive")
            lp.FEAS_TOL = args.tol
        if getattr(args, "input", None) is None and args.command != "compare":
            if args.n is not None:
                try:
                    args.n = int(args.n)
                except ValueError:
                    raise UsageError(f"--n must be an integer, got {args.n!r}") from None
            for name, conv in (("u", parse_util), ("ratio", float)):
                v = getattr(args, name)
                if v is not None:
                    try:
                        setattr(args, name, conv(v))
                    except ValueError:
                        raise UsageError(f"--{name} must be a number, got {v!r}") from None
        return args.func(args)
    except UsageError as e:
        print(f"fifobound: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as e:
        print(f"fifobound: {e}", file=sys.stderr)
        return EXIT_INPUT
    except DeadlineExceeded as e:
        print(f"fifobound: {e}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
