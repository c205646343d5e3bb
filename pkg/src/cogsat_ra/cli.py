"""Command-line driver: ``cogsat-ra {gen,run,sweep,plot}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

from .algorithms import DEFAULT_ADMM_C, STRATEGIES, run_strategy
from .quantizer import UNQUANTIZED
from .scenario import ScenarioSpec, generate_scenario, load_scenario, save_scenario, spec_from_dict
from .solver import DEFAULT_MAX_ITERS, DEFAULT_TOL, SolverOptions
from .sweep import SweepSpec, format_q, parse_q, render_plots, run_sweep


def parse_seeds(text: str) -> list:
    """``"0-19"``, ``"1,5,9"`` or a mix like ``"0-4,10"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def parse_q_list(text: str) -> list:
    return [parse_q(t) for t in text.split(",") if t.strip()]


def parse_range(text: str) -> tuple:
    lo, hi = text.split(":")
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise argparse.ArgumentTypeError("need LO < HI")
    return lo, hi


def _load_spec(path, seed=None) -> ScenarioSpec:
    if path is None:
        spec = ScenarioSpec()
        return spec if seed is None else dataclasses.replace(spec, seed=seed)
    return spec_from_dict(json.loads(Path(path).read_text()), seed=seed)


def _add_common(p):
    p.add_argument("--scenario", help="scenario file (overrides --spec)")
    p.add_argument("--spec", help="JSON scenario-generation spec (dims, dB means, p_max, ...)")
    p.add_argument("--solver-tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--solver-max-iters", type=int, default=DEFAULT_MAX_ITERS)
    p.add_argument("--q-range-db", type=parse_range, default=(-60.0, 20.0), metavar="LO:HI",
                   help="gain quantizer range in dB; write --q-range-db=-60:20 for negative LO")
    p.add_argument("--iters", type=int, default=5, help="iterations of the iterative strategies")
    p.add_argument("--admm-c", type=float, default=DEFAULT_ADMM_C)


def build_parser():
    parser = argparse.ArgumentParser(prog="cogsat-ra", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a scenario file")
    g.add_argument("--spec")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)

    r = sub.add_parser("run", help="run one strategy on one scenario")
    _add_common(r)
    r.add_argument("--seed", type=int)
    r.add_argument("--algorithm", choices=STRATEGIES, required=True)
    r.add_argument("--q", type=parse_q, default=UNQUANTIZED)
    r.add_argument("--q-level", type=parse_q, help="bits per level report (default: bit-equalized)")
    r.add_argument("--include-interbeam", action=argparse.BooleanOptionalAction, default=True)

    s = sub.add_parser("sweep", help="full experiment over seeds, strategies and q")
    _add_common(s)
    s.add_argument("--algorithm", default=",".join(STRATEGIES),
                   help="comma-separated strategies")
    s.add_argument("--q", type=parse_q_list, default=[4, 8, 12, 16, 20, UNQUANTIZED])
    s.add_argument("--seeds", type=parse_seeds, default=list(range(20)))
    s.add_argument("--out", default="results")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--timing", action="store_true", help="fill wall_ms (breaks byte-identical output)")
    s.add_argument("--plot", action="store_true", help="also render the SVG figures")

    p = sub.add_parser("plot", help="render SVG figures from sweep CSVs")
    p.add_argument("--out", default="results", help="directory holding results.csv/traces.csv")
    p.add_argument("--results")
    p.add_argument("--traces")
    return parser


def cmd_gen(args):
    spec = _load_spec(args.spec, args.seed)
    save_scenario(generate_scenario(spec), args.out)
    print(f"wrote {args.out} (seed {spec.seed})")
    return 0


def cmd_run(args):
    if args.scenario:
        s = load_scenario(args.scenario)
    else:
        s = generate_scenario(_load_spec(args.spec, args.seed))
    options = SolverOptions(args.solver_tol, args.solver_max_iters)
    res = run_strategy(args.algorithm, s, q=args.q, q_level=args.q_level, n_iter=args.iters,
                       admm_c=args.admm_c, options=options, q_range_db=args.q_range_db,
                       include_interbeam=args.include_interbeam)
    bits = res.ledger.total_bits
    out = {
        "strategy": res.strategy,
        "sum_rate": res.sum_rate,
        "sum_rate_with_J": res.sum_rate_with_j,
        "sum_rate_no_J": res.sum_rate_no_j,
        "bits_exchanged": "inf" if bits == math.inf else bits,
        "q": format_q(args.q),
        "q_level": format_q(res.q_level),
        "feasible": res.feasible,
        "trace": res.trace,
        "assignment": res.alloc.a.argmax(axis=1).tolist(),
        "power": res.alloc.p.max(axis=1).tolist(),
    }
    print(json.dumps(out, indent=2))
    return 0 if res.feasible else 1


def cmd_sweep(args):
    strategies = [x.strip() for x in args.algorithm.split(",") if x.strip()]
    spec = SweepSpec(
        strategies=strategies, q_values=args.q, seeds=args.seeds, n_iter=args.iters,
        admm_c=args.admm_c, scenario_spec=_load_spec(args.spec), scenario_path=args.scenario,
        out_dir=args.out, solver=SolverOptions(args.solver_tol, args.solver_max_iters),
        q_range_db=args.q_range_db, record_timing=args.timing, jobs=args.jobs,
    )
    rows = run_sweep(spec)
    bad = [r for r in rows if r["status"] == "ok" and r["feasible"] != "true"]
    errored = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} cells, {len(errored)} errored, {len(bad)} infeasible -> {args.out}/results.csv")
    if args.plot:
        render_plots(Path(args.out) / "results.csv", Path(args.out) / "traces.csv", args.out)
    return 1 if bad else 0


def cmd_plot(args):
    out = Path(args.out)
    results = args.results or out / "results.csv"
    traces = args.traces or out / "traces.csv"
    for path in render_plots(results, traces, out):
        print(f"wrote {path}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"gen": cmd_gen, "run": cmd_run, "sweep": cmd_sweep, "plot": cmd_plot}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
