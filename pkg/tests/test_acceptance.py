"""End-to-end acceptance checks.

Each test prints one ``ACCEPTANCE <n>: PASS|FAIL`` line (also collected into
the terminal summary) and then asserts the criterion at its stated tolerance.
"""

import math
import time

import numpy as np
import pytest

from cogsat_ra import cli, metrics
from cogsat_ra.algorithms import (
    operator_interference,
    run_admm,
    run_centralized,
    run_channel_share,
    run_equal_split,
    run_iter_equal_split,
)
from cogsat_ra.metrics import bits_channel_share, bits_level_share, equalize_bit_budget
from cogsat_ra.quantizer import QuantizerConfig, quantize_gain, quantize_level
from cogsat_ra.scenario import Dimensions, ScenarioSpec, generate_scenario
from cogsat_ra.solver import RaProblem, gradient, objective, solve_pipeline

from conftest import ACCEPTANCE_LINES, REFERENCE_DIMS

pytestmark = pytest.mark.slow

SEEDS = list(range(20))
FEASIBILITY_SEEDS = list(range(1000, 1050))
ORACLE_SEEDS = list(range(1000, 1025))


def report(capsys, number, ok, detail):
    line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)


def reference(seed):
    return generate_scenario(ScenarioSpec(dims=REFERENCE_DIMS, seed=seed))


def expected_bits(name, res, n_iter):
    if name == "centralized":
        return math.inf
    if name == "equal-split":
        return 0
    if name.startswith("channel-share"):
        return bits_channel_share(REFERENCE_DIMS, res.q)
    return bits_level_share(REFERENCE_DIMS, res.q_level, n_iter)


def run_suite(s, q, n_iter):
    """Every strategy on one scenario; level-sharing spends the q-bit budget."""
    q_level = equalize_bit_budget(s.dims, q, n_iter)
    return {
        "centralized": run_centralized(s),
        f"channel-share q={q}": run_channel_share(s, q),
        "equal-split": run_equal_split(s),
        "admm": run_admm(s, q_level, n_iter),
        "iter-equal-split": run_iter_equal_split(s, q_level, n_iter),
    }


@pytest.fixture(scope="session")
def fig2_runs():
    """Twenty seeds at the reference dimensions, five iterations."""
    q_level = equalize_bit_budget(REFERENCE_DIMS, 20, 5)
    runs = []
    for seed in SEEDS:
        s = reference(seed)
        runs.append({
            "centralized": run_centralized(s),
            "channel-share q=20": run_channel_share(s, 20),
            "channel-share q=8": run_channel_share(s, 8),
            "equal-split": run_equal_split(s),
            "admm": run_admm(s, q_level, 5),
            "iter-equal-split": run_iter_equal_split(s, q_level, 5),
        })
    return runs


@pytest.fixture(scope="session")
def fig3_runs():
    q_level = equalize_bit_budget(REFERENCE_DIMS, 20, 10)
    return [{"admm": run_admm(reference(seed), q_level, 10),
             "iter-equal-split": run_iter_equal_split(reference(seed), q_level, 10)}
            for seed in SEEDS]


@pytest.fixture(scope="session")
def feasibility_runs():
    t0 = time.perf_counter()
    runs = []
    for i, seed in enumerate(FEASIBILITY_SEEDS):
        s = reference(seed)
        runs.append((s, run_suite(s, q=(4, 8, 12, 16, 20)[i % 5], n_iter=5)))
    return runs, time.perf_counter() - t0


# --- 1 -------------------------------------------------------------------------------------

def test_1_feasibility_suite(feasibility_runs, capsys):
    runs, elapsed = feasibility_runs
    worst_c1, failures = -math.inf, []
    for s, results in runs:
        for name, res in results.items():
            excess = float(np.max(metrics.pu_interference(s, res.alloc) - s.threshold))
            worst_c1 = max(worst_c1, excess)
            structural = metrics.audit(s, res.alloc, tol=math.inf)
            if excess > 1e-8 or structural:
                failures.append((name, excess, structural))
    n_runs = sum(len(r) for _, r in runs)
    ok = not failures and elapsed < 600
    report(capsys, 1, ok, f"{n_runs} runs on {len(runs)} scenarios, worst C1 excess "
                          f"{worst_c1:.2e}, {len(failures)} violations, {elapsed:.0f} s")
    assert not failures
    assert elapsed < 600


# --- 2 -------------------------------------------------------------------------------------

def test_2_oracle_equivalence(capsys):
    worst = 0.0
    for i, seed in enumerate(ORACLE_SEEDS):
        s = generate_scenario(ScenarioSpec(dims=Dimensions(1 + i % 2, 2, 1, 2, 1), seed=seed))
        alloc = solve_pipeline(RaProblem.from_scenario(s))
        ours = metrics.evaluate_sum_rate(s, alloc, include_interbeam=False).total
        ref = metrics.oracle_solve(s, grid_steps=100)[1]
        worst = max(worst, abs(ours - ref) / ref)
    ok = worst <= 0.02
    report(capsys, 2, ok, f"{len(ORACLE_SEEDS)} tiny instances, worst relative gap to the "
                          f"grid oracle {worst:.3%} (limit 2%)")
    assert ok


# --- 3 -------------------------------------------------------------------------------------

def test_3_ordering(fig2_runs, capsys):
    mean = {k: float(np.mean([r[k].sum_rate for r in fig2_runs])) for k in fig2_runs[0]}
    chain = ["centralized", "channel-share q=20", "channel-share q=8", "equal-split"]
    ordered = all(mean[a] >= mean[b] for a, b in zip(chain, chain[1:]))
    gap = (mean["centralized"] - mean["channel-share q=20"]) / mean["centralized"]
    beats = all(mean[k] > mean["equal-split"] for k in ("admm", "iter-equal-split"))
    ok = ordered and gap <= 0.05 and beats
    summary = ", ".join(f"{k} {v:.3f}" for k, v in mean.items())
    report(capsys, 3, ok, f"means over {len(SEEDS)} seeds: {summary}; "
                          f"q=20 gap to centralized {gap:.3%}")
    assert ordered
    assert gap <= 0.05
    assert beats


# --- 4 -------------------------------------------------------------------------------------

def test_4_convergence(fig3_runs, capsys):
    devs = {}
    for name in ("admm", "iter-equal-split"):
        trace = np.mean([r[name].trace for r in fig3_runs], axis=0)
        # index 4 is the fifth iteration; checking from there covers both readings
        devs[name] = float(np.max(np.abs(trace[4:] - trace[9]) / trace[9]))
    raw = np.mean([r["admm"].iterate_trace for r in fig3_runs], axis=0)
    raw_dev = float(np.max(np.abs(raw[4:] - raw[9]) / raw[9]))
    ok = all(d < 0.01 for d in devs.values())
    report(capsys, 4, ok, "max |trace[t]-trace[9]|/trace[9] for t>=4: "
                          + ", ".join(f"{k} {v:.3%}" for k, v in devs.items())
                          + f" (ADMM raw iterates {raw_dev:.3%})")
    assert ok


# --- 5 -------------------------------------------------------------------------------------

def test_5_monotonicity(fig2_runs, fig3_runs, feasibility_runs, capsys):
    traces = [r["iter-equal-split"].trace for r in fig2_runs + fig3_runs]
    traces += [res["iter-equal-split"].trace for _, res in feasibility_runs[0]]
    monotone = all(np.all(np.diff(t) >= 0) for t in traces)
    zero = [r["equal-split"].ledger.total_bits for r in fig2_runs]
    zero += [res["equal-split"].ledger.total_bits for _, res in feasibility_runs[0]]
    ok = monotone and all(b == 0 for b in zero)
    report(capsys, 5, ok, f"{len(traces)} iter-equal-split traces non-decreasing: {monotone}; "
                          f"{len(zero)} equal-split ledgers all 0: {all(b == 0 for b in zero)}")
    assert ok


# --- 6 -------------------------------------------------------------------------------------

def test_6_bit_counts(fig2_runs, fig3_runs, feasibility_runs, capsys):
    mismatches, checked = [], 0
    batches = [(r, 5) for r in fig2_runs] + [(r, 10) for r in fig3_runs]
    batches += [(res, 5) for _, res in feasibility_runs[0]]
    for results, n_iter in batches:
        for name, res in results.items():
            want = expected_bits(name, res, n_iter)
            got = res.ledger.total_bits
            checked += 1
            if got != want or (want != math.inf and not isinstance(got, int)):
                mismatches.append((name, got, want))
    pairs = [(q, n) for q in (4, 8, 12, 16, 20) for n in (1, 5, 10)]
    budget_ok = all(bits_level_share(REFERENCE_DIMS, equalize_bit_budget(REFERENCE_DIMS, q, n), n)
                    <= bits_channel_share(REFERENCE_DIMS, q) for q, n in pairs)
    ok = not mismatches and budget_ok
    report(capsys, 6, ok, f"{checked} ledgers match the closed forms ({len(mismatches)} "
                          f"mismatches); equalized budget within channel budget for "
                          f"{len(pairs)} (q, n_iter) pairs: {budget_ok}")
    assert not mismatches
    assert budget_ok


# --- 7 -------------------------------------------------------------------------------------

def _gradient_error(rng):
    s = reference(0)
    own = s.sus_of_operator(1)
    prob = RaProblem.from_scenario(s, own, linear=-rng.uniform(0, 0.05, (len(own), 2)),
                                   prox_weight=1.0, prox_target=rng.uniform(0, 1, (12, 2)))
    S, M = prob.shape
    worst = 0.0
    for _ in range(100):
        a = rng.uniform(0.05, 0.95, (S, M))
        x = rng.uniform(0.05, 0.95, (S, M)) * prob.p_max * a
        ga, gx = gradient(prob, a, x)
        fd_a, fd_x = np.zeros_like(a), np.zeros_like(x)
        for idx in np.ndindex(S, M):
            for arr, fd, other in ((a, fd_a, x), (x, fd_x, a)):
                h = 1e-6 * max(1.0, arr[idx])
                up, dn = arr.copy(), arr.copy()
                up[idx] += h
                dn[idx] -= h
                if arr is a:
                    fd[idx] = (objective(prob, up, other) - objective(prob, dn, other)) / (2 * h)
                else:
                    fd[idx] = (objective(prob, other, up) - objective(prob, other, dn)) / (2 * h)
        an = np.concatenate([ga.ravel(), gx.ravel()])
        fd = np.concatenate([fd_a.ravel(), fd_x.ravel()])
        worst = max(worst, float(np.max(np.abs(an - fd) / np.maximum(np.abs(an), 1e-3))))
    return worst


def _quantizer_ok(rng):
    ok = True
    for bits, lo, hi in ((1, -10, 10), (4, -60, 20), (8, -60, 20), (16, -30, 10)):
        cfg = QuantizerConfig(bits=bits, lo_db=lo, hi_db=hi)
        x = np.sort(10 ** (rng.uniform(lo - 10, hi + 10, 1000) / 10))
        qx = quantize_gain(x, cfg)
        ok &= bool(np.all(np.diff(qx) >= 0)) and bool(np.array_equal(quantize_gain(qx, cfg), qx))
    for bits, cap in ((1, 1.0), (8, 1.0), (22, 3.0)):
        x = np.sort(rng.uniform(0, cap, 1000))
        qx = quantize_level(x, cap, bits)
        ok &= bool(np.all(np.diff(qx) >= 0)) and bool(np.all(qx >= x))
    return ok


def _additivity_error(fig2_runs):
    worst = 0.0
    for seed, results in zip(SEEDS, fig2_runs):
        s = reference(seed)
        for res in results.values():
            total = sum(operator_interference(s, n, res.alloc) for n in range(s.dims.N))
            worst = max(worst, float(np.max(np.abs(total - metrics.pu_interference(s, res.alloc)))))
    return worst


def test_7_numerical_hygiene(fig2_runs, capsys):
    rng = np.random.default_rng(7)
    grad_err = _gradient_error(rng)
    quant_ok = _quantizer_ok(rng)
    add_err = _additivity_error(fig2_runs)
    ok = grad_err < 1e-4 and quant_ok and add_err <= 1e-12
    report(capsys, 7, ok, f"gradient rel. error {grad_err:.1e} over 100 points (limit 1e-4); "
                          f"quantizer properties hold: {quant_ok}; additivity error "
                          f"{add_err:.1e} (limit 1e-12)")
    assert grad_err < 1e-4
    assert quant_ok
    assert add_err <= 1e-12


# --- 8 -------------------------------------------------------------------------------------

def test_8_determinism(tmp_path, capsys):
    args = ["sweep", "--seeds", "0-1", "--q", "8,20", "--iters", "3"]
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert cli.main(args + ["--out", str(out)]) == 0
        outputs.append([(out / f).read_bytes() for f in ("results.csv", "traces.csv")])
    ok = outputs[0] == outputs[1]
    sizes = ", ".join(f"{len(b)} B" for b in outputs[0])
    report(capsys, 8, ok, f"two identical sweeps (all strategies, 2 seeds, q=8,20) wrote "
                          f"byte-identical CSVs ({sizes})")
    assert ok
