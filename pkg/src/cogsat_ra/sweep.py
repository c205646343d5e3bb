"""Experiment sweeps over seeds, strategies and quantization levels, with CSV
output and static SVG figures."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics
from .algorithms import DEFAULT_ADMM_C, STRATEGIES, run_strategy
from .quantizer import UNQUANTIZED
from .scenario import ScenarioSpec, generate_scenario, load_scenario
from .solver import SolverOptions

log = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "seed", "strategy", "q", "q_level", "n_iter", "sum_rate_with_J", "sum_rate_no_J",
    "bits_exchanged", "iterations_run", "wall_ms", "feasible", "status",
]
TRACE_COLUMNS = ["seed", "strategy", "q", "q_level", "iteration", "sum_rate", "iterate_sum_rate"]

Q_INDEPENDENT = ("centralized", "equal-split")
ITERATIVE = ("admm", "iter-equal-split")


class SchemaError(ValueError):
    pass


@dataclass
class SweepSpec:
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    q_values: list = field(default_factory=lambda: [4, 8, 12, 16, 20, UNQUANTIZED])
    seeds: list = field(default_factory=lambda: list(range(20)))
    n_iter: int = 5
    admm_c: float = DEFAULT_ADMM_C
    scenario_spec: ScenarioSpec = field(default_factory=ScenarioSpec)
    scenario_path: Optional[str] = None
    out_dir: str = "results"
    solver: SolverOptions = field(default_factory=SolverOptions)
    q_range_db: tuple = (-60.0, 20.0)
    record_timing: bool = False
    jobs: int = 1

    def __post_init__(self):
        if not self.strategies:
            raise ValueError("strategy list is empty")
        if not self.seeds:
            raise ValueError("seed list is empty")
        unknown = [s for s in self.strategies if s not in STRATEGIES]
        if unknown:
            raise ValueError(f"unknown strategies {unknown}")
        if any(s not in Q_INDEPENDENT for s in self.strategies) and not self.q_values:
            raise ValueError("q list is empty")


def format_q(q) -> str:
    if q is None:
        return ""
    return "inf" if q == UNQUANTIZED else str(int(q))


def parse_q(text: str):
    text = text.strip().lower()
    if text in ("inf", "oo", "unquantized", "∞"):
        return UNQUANTIZED
    q = int(text)
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    return q


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isinf(x):
            return "inf"
        return repr(x)
    return str(x)


def _cells(spec: SweepSpec):
    seeds = spec.seeds if spec.scenario_path is None else [None]
    for seed in seeds:
        for strategy in spec.strategies:
            qs = [None] if strategy in Q_INDEPENDENT else spec.q_values
            for q in qs:
                yield seed, strategy, q


def _run_cell(spec: SweepSpec, cell):
    seed, strategy, q = cell
    if spec.scenario_path is not None:
        s = load_scenario(spec.scenario_path)
    else:
        s = generate_scenario(dataclasses.replace(spec.scenario_spec, seed=seed))
    q_run = UNQUANTIZED if q is None else q
    iterative = strategy in ITERATIVE
    q_level = metrics.equalize_bit_budget(s.dims, q_run, spec.n_iter) if iterative else None
    row = {
        "seed": "" if seed is None else seed,
        "strategy": strategy,
        "q": format_q(q),
        "q_level": format_q(q_level),
        "n_iter": spec.n_iter if iterative else "",
    }
    t0 = time.perf_counter()
    try:
        res = run_strategy(strategy, s, q=q_run, q_level=q_level, n_iter=spec.n_iter,
                           admm_c=spec.admm_c, options=spec.solver,
                           q_range_db=spec.q_range_db)
    except Exception as exc:  # recorded in the CSV, sweep continues
        log.exception("cell %s failed", cell)
        row.update({c: "" for c in RESULT_COLUMNS if c not in row})
        row["feasible"] = "false"
        row["status"] = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
        return row, []
    wall_ms = (time.perf_counter() - t0) * 1e3
    row.update({
        "sum_rate_with_J": _fmt(res.sum_rate_with_j),
        "sum_rate_no_J": _fmt(res.sum_rate_no_j),
        "bits_exchanged": _fmt(res.ledger.total_bits),
        "iterations_run": len(res.trace) if iterative else 1,
        "wall_ms": f"{wall_ms:.1f}" if spec.record_timing else "",
        "feasible": "true" if res.feasible else "false",
        "status": "ok",
    })
    traces = []
    if iterative:
        for t, (best, raw) in enumerate(zip(res.trace, res.iterate_trace)):
            traces.append({
                "seed": row["seed"], "strategy": strategy, "q": row["q"],
                "q_level": row["q_level"], "iteration": t,
                "sum_rate": _fmt(float(best)), "iterate_sum_rate": _fmt(float(raw)),
            })
    return row, traces


def _write_csv(path: Path, columns, rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r.get(c, "") for c in columns})
    path.write_text(buf.getvalue(), encoding="utf-8")


def run_sweep(spec: SweepSpec):
    """Run every (seed, strategy, q) cell and write results.csv / traces.csv.

    Returns the list of result rows (dicts of strings).
    """
    cells = list(_cells(spec))
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            outputs = list(pool.map(_run_cell, [spec] * len(cells), cells))
    else:
        outputs = [_run_cell(spec, c) for c in cells]
    rows = [o[0] for o in outputs]
    traces = [t for o in outputs for t in o[1]]
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "results.csv", RESULT_COLUMNS, rows)
    _write_csv(out / "traces.csv", TRACE_COLUMNS, traces)
    return rows


# --- plotting ------------------------------------------------------------------------

def _read_csv(path, required):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column '{col}'")
        rows = list(reader)
    return rows


def _q_key(q):
    return math.inf if q == "inf" else float(q)


def render_plots(results_csv, traces_csv, outdir):
    """Write fig2.svg (sum-rate vs q) and fig3.svg (convergence)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = _read_csv(results_csv, ["strategy", "q", "sum_rate_with_J", "feasible", "status"])
    if not rows:
        raise SchemaError(f"{results_csv}: no result rows")
    traces = _read_csv(traces_csv, ["strategy", "q", "iteration", "sum_rate"])
    ok = [r for r in rows if r["status"] == "ok" and r["feasible"] == "true"]
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    plt.rcParams["svg.hashsalt"] = "cogsat-ra"

    by_key = {}
    for r in ok:
        by_key.setdefault((r["strategy"], r["q"]), []).append(float(r["sum_rate_with_J"]))
    q_labels = sorted({q for (_, q) in by_key if q}, key=_q_key)
    xpos = {q: i for i, q in enumerate(q_labels)}

    fig, ax = plt.subplots(figsize=(6, 4))
    styles = {"channel-share": "o-", "admm": "s-", "iter-equal-split": "^-"}
    for strategy in sorted({k[0] for k in by_key}):
        if strategy in Q_INDEPENDENT:
            vals = by_key.get((strategy, ""), [])
            if vals:
                ls = "--" if strategy == "centralized" else ":"
                ax.axhline(np.mean(vals), ls=ls, color="k" if strategy == "centralized" else "gray",
                           label=strategy)
            continue
        qs = [q for q in q_labels if (strategy, q) in by_key]
        means = [np.mean(by_key[(strategy, q)]) for q in qs]
        errs = [np.std(by_key[(strategy, q)], ddof=1) / np.sqrt(len(by_key[(strategy, q)]))
                if len(by_key[(strategy, q)]) > 1 else 0.0 for q in qs]
        ax.errorbar([xpos[q] for q in qs], means, yerr=errs, fmt=styles.get(strategy, "o-"),
                    capsize=3, label=strategy)
    ax.set_xticks(range(len(q_labels)))
    ax.set_xticklabels(["∞" if q == "inf" else q for q in q_labels])
    ax.set_xlabel("quantization bits q (channel sharing)")
    ax.set_ylabel("sum-rate [bit/s/Hz]")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(outdir / "fig2.svg", format="svg", metadata={"Date": None})
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    iter_rows = [t for t in traces if t["strategy"] in ITERATIVE]
    if iter_rows:
        top_q = max({t["q"] for t in iter_rows}, key=_q_key)
        for strategy in ITERATIVE:
            sel = [t for t in iter_rows if t["strategy"] == strategy and t["q"] == top_q]
            if not sel:
                continue
            its = sorted({int(t["iteration"]) for t in sel})
            mean = [np.mean([float(t["sum_rate"]) for t in sel if int(t["iteration"]) == i])
                    for i in its]
            ax.plot([i + 1 for i in its], mean, "o-", label=f"{strategy} (q={top_q})")
    ax.set_xlabel("iteration")
    ax.set_ylabel("sum-rate [bit/s/Hz]")
    ax.grid(alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(outdir / "fig3.svg", format="svg", metadata={"Date": None})
    plt.close(fig)
    return outdir / "fig2.svg", outdir / "fig3.svg"
