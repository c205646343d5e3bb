"""Coordination strategies for multi-operator resource allocation.

Every value that crosses an operator boundary goes through a
:class:`FusionCenter`, which quantizes it and charges the bits to an
:class:`~cogsat_ra.metrics.ExchangeLedger`.

Strategies
----------
centralized
    One solve over all SUs with exact channels.
channel-share
    Operators upload q-bit channels; the center solves the joint problem,
    turns each operator's interference into its private threshold, and the
    operators re-solve locally with their exact channels.
equal-split
    Each operator gets ``eta / N``; nothing is exchanged.
iter-equal-split
    Equal split, then repeatedly re-split the unused headroom using
    quantized interference reports.
admm
    Tracking ADMM on the interference coupling with a slack variable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import metrics
from .metrics import ExchangeLedger
from .quantizer import UNQUANTIZED, QuantizerConfig, quantize_gain, quantize_level
from .scenario import Scenario
from .solver import Allocation, RaProblem, SolverOptions, solve_pipeline

log = logging.getLogger(__name__)

STRATEGIES = ("centralized", "channel-share", "admm", "equal-split", "iter-equal-split")
DEFAULT_ADMM_C = 1.0


class ProtocolError(RuntimeError):
    """An operator's report is missing at a fusion-center barrier."""


@dataclass
class InterferenceSplit:
    eta_split: np.ndarray  # (N, L, M)

    def is_sound(self, eta, tol=1e-9) -> bool:
        return bool(np.all(self.eta_split.sum(axis=0) <= eta + tol))


@dataclass
class AdmmState:
    lam: np.ndarray  # (L, M)
    Q: np.ndarray  # (L, M)
    D: np.ndarray  # (L, M), kept in [0, eta]
    c: float
    last_alloc: list  # per-operator local Allocation
    last_level: np.ndarray  # (N, L, M) exact contributions of last_alloc
    t: int = 0


@dataclass
class StrategyResult:
    strategy: str
    alloc: Allocation
    sum_rate: float
    sum_rate_with_j: float
    sum_rate_no_j: float
    ledger: ExchangeLedger
    trace: list = field(default_factory=list)
    iterate_trace: list = field(default_factory=list)
    feasible: bool = True
    q: float = UNQUANTIZED
    q_level: Optional[float] = None
    split: Optional[InterferenceSplit] = None


class FusionCenter:
    """Logical coordinator; the only path for inter-operator data."""

    def __init__(self, s: Scenario):
        self.s = s
        self.ledger = ExchangeLedger()

    def collect_channels(self, cfg: QuantizerConfig):
        """Every operator uploads its G_n and F_n at ``cfg.bits`` per entry."""
        s, d = self.s, self.s.dims
        G = np.empty_like(s.gain_to_sat)
        F = np.empty_like(s.gain_to_pu)
        for n in range(d.N):
            own = s.sus_of_operator(n)
            G[own] = quantize_gain(s.gain_to_sat[own], cfg)
            F[own] = quantize_gain(s.gain_to_pu[own], cfg)
        self.ledger.add("uplink F", _bits(cfg.bits, d.N * F[own].size))
        self.ledger.add("uplink G", _bits(cfg.bits, d.N * G[own].size))
        return G, F

    def send_thresholds(self, split: InterferenceSplit, bits):
        d = self.s.dims
        self.ledger.add("downlink thresholds", _bits(bits, d.N * d.L * d.M))
        return [split.eta_split[n].copy() for n in range(d.N)]

    def collect_levels(self, reports, bits, label):
        """Gather one L x M interference report per operator, rounded up on a
        ``bits``-bit grid over ``[0, eta]``."""
        d = self.s.dims
        if len(reports) != d.N or any(r is None for r in reports):
            missing = [n for n in range(d.N) if n >= len(reports) or reports[n] is None]
            raise ProtocolError(f"missing interference report from operators {missing}")
        cap = self.s.threshold
        # a feasible allocation may overshoot its cap by rounding noise only
        reports = [np.where((r > cap) & (r <= cap + metrics.C1_TOL), cap, r) for r in reports]
        out = np.stack([quantize_level(r, cap, bits) for r in reports])
        self.ledger.add(label, _bits(bits, d.N * d.L * d.M))
        return out


def _bits(q, n_values):
    return UNQUANTIZED if q == UNQUANTIZED else int(q) * n_values


# --- helpers -----------------------------------------------------------------------

def operator_interference(s: Scenario, n: int, alloc: Allocation) -> np.ndarray:
    """``I^n[l, m]`` of operator ``n``.  ``alloc`` may be global or local to
    the operator's SUs."""
    own = s.sus_of_operator(n)
    if alloc.a.shape[0] == s.dims.n_sus:
        a, p = alloc.a[own], alloc.p[own]
    else:
        a, p = alloc.a, alloc.p
    return np.einsum("klm,km->lm", s.gain_to_pu[own], a * p)


def assemble(s: Scenario, parts) -> Allocation:
    a = np.zeros((s.dims.n_sus, s.dims.M), dtype=np.int64)
    p = np.zeros((s.dims.n_sus, s.dims.M))
    for n, part in enumerate(parts):
        own = s.sus_of_operator(n)
        a[own] = part.a
        p[own] = part.p
    return Allocation(a, p)


def split_local(s: Scenario, alloc: Allocation):
    return [Allocation(alloc.a[own].copy(), alloc.p[own].copy())
            for own in (s.sus_of_operator(n) for n in range(s.dims.N))]


def solve_operator(s, n, thresholds, incumbent=None, options=None, **terms):
    """Local relax/round/re-solve for operator ``n`` with exact channels."""
    prob = RaProblem.from_scenario(s, s.sus_of_operator(n), thresholds=thresholds,
                                   options=options or SolverOptions(), **terms)
    return solve_pipeline(prob, incumbent=incumbent)


def _rates(s, alloc):
    with_j = metrics.evaluate_sum_rate(s, alloc, include_interbeam=True, check=False).total
    no_j = metrics.evaluate_sum_rate(s, alloc, include_interbeam=False, check=False).total
    return with_j, no_j


def _result(strategy, s, alloc, ledger, trace, include_interbeam, **extra):
    feasible = metrics.is_feasible(s, alloc)
    with_j, no_j = _rates(s, alloc)
    rate = with_j if include_interbeam else no_j
    trace = list(trace) if trace else [rate]
    iterate_trace = list(extra.pop("iterate_trace", trace))
    return StrategyResult(strategy, alloc, rate, with_j, no_j, ledger, trace, iterate_trace,
                          feasible, **extra)


def _metric(s, alloc, include_interbeam):
    return metrics.evaluate_sum_rate(s, alloc, include_interbeam, check=False).total


# --- strategies -----------------------------------------------------------------------

def run_centralized(s: Scenario, options=None, include_interbeam=True) -> StrategyResult:
    center = FusionCenter(s)
    # exact channels: unbounded bit cost, reported only as a reference
    center.ledger.add("uplink F", UNQUANTIZED)
    center.ledger.add("uplink G", UNQUANTIZED)
    prob = RaProblem.from_scenario(s, options=options or SolverOptions())
    alloc = solve_pipeline(prob)
    return _result("centralized", s, alloc, center.ledger, None, include_interbeam)


def run_channel_share(s: Scenario, q=UNQUANTIZED, options=None, q_range_db=(-60.0, 20.0),
                      include_interbeam=True) -> StrategyResult:
    d = s.dims
    options = options or SolverOptions()
    center = FusionCenter(s)
    cfg = QuantizerConfig(bits=q, lo_db=q_range_db[0], hi_db=q_range_db[1])
    Gq, Fq = center.collect_channels(cfg)

    joint = RaProblem.from_scenario(s, gain_to_sat=Gq, gain_to_pu=Fq, options=options)
    alloc_q = solve_pipeline(joint)
    x_q = alloc_q.a * alloc_q.p
    eta_split = np.stack([
        np.einsum("klm,km->lm", Fq[own], x_q[own])
        for own in (s.sus_of_operator(n) for n in range(d.N))
    ])
    split = InterferenceSplit(eta_split)
    thresholds = center.send_thresholds(split, q)

    parts = []
    for n in range(d.N):
        own = s.sus_of_operator(n)
        parts.append(solve_operator(s, n, thresholds[n], incumbent=alloc_q.a[own], options=options))
    alloc = assemble(s, parts)
    return _result("channel-share", s, alloc, center.ledger, None, include_interbeam,
                   q=q, split=split)


def run_equal_split(s: Scenario, options=None, include_interbeam=True) -> StrategyResult:
    d = s.dims
    ledger = ExchangeLedger()
    share = s.threshold / d.N
    parts = [solve_operator(s, n, share, options=options) for n in range(d.N)]
    alloc = assemble(s, parts)
    split = InterferenceSplit(np.repeat(share[None], d.N, axis=0))
    return _result("equal-split", s, alloc, ledger, None, include_interbeam, split=split)


def run_iter_equal_split(s: Scenario, q_level=UNQUANTIZED, n_iter=5, options=None,
                         include_interbeam=True) -> StrategyResult:
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    d = s.dims
    center = FusionCenter(s)
    eta = s.threshold
    thresholds = np.repeat((eta / d.N)[None], d.N, axis=0)

    held = None
    held_rate = -np.inf
    trace, raw = [], []
    for t in range(n_iter):
        incumbents = [None] * d.N if held is None else [part.a for part in held]
        parts = [solve_operator(s, n, thresholds[n], incumbent=incumbents[n], options=options)
                 for n in range(d.N)]
        rate = _metric(s, assemble(s, parts), include_interbeam)
        raw.append(rate)
        if rate >= held_rate:
            held, held_rate = parts, rate
        trace.append(held_rate)

        levels = [operator_interference(s, n, held[n]) for n in range(d.N)]
        reported = center.collect_levels(levels, q_level, f"levels t={t}")
        # the center knows each grant, so a report never needs to exceed it
        reported = np.minimum(reported, thresholds)
        remaining = eta - reported.sum(axis=0)
        thresholds = remaining[None] / d.N + reported

    alloc = assemble(s, held)
    return _result("iter-equal-split", s, alloc, center.ledger, trace, include_interbeam,
                   q_level=q_level, iterate_trace=raw,
                   split=InterferenceSplit(thresholds))


# --- ADMM ----------------------------------------------------------------------------

def init_admm_state(s: Scenario, c=DEFAULT_ADMM_C, options=None) -> AdmmState:
    """lambda = 0, Q = 0, D = eta/2, allocations warm-started from equal split."""
    d = s.dims
    share = s.threshold / d.N
    parts = [solve_operator(s, n, share, options=options) for n in range(d.N)]
    levels = np.stack([operator_interference(s, n, parts[n]) for n in range(d.N)])
    zeros = np.zeros_like(s.threshold)
    return AdmmState(zeros.copy(), zeros.copy(), s.threshold / 2.0, float(c), parts, levels)


def admm_local_step(s: Scenario, n: int, state: AdmmState, options=None) -> Allocation:
    """Operator ``n`` maximizes rate - lambda . I^n - c/2 |I^n - I^n_prev + Q|^2.

    Its own contribution is additionally bounded by ``eta`` (implied by the
    coupling constraint since all contributions are nonnegative), which keeps
    the reports inside the quantizer range.
    """
    own = s.sus_of_operator(n)
    F = s.gain_to_pu[own]
    linear = -np.einsum("klm,lm->km", F, state.lam)
    target = state.last_level[n] - state.Q
    return solve_operator(s, n, s.threshold, incumbent=state.last_alloc[n].a, options=options,
                          linear=linear, prox_weight=state.c, prox_target=target)


def admm_slack_step(state: AdmmState, eta) -> np.ndarray:
    """Minimizer of lambda D + c/2 (D - D_prev + Q)^2 over 0 <= D <= eta."""
    return np.clip(state.D - state.Q - state.lam / state.c, 0.0, eta)


def admm_central_step(state: AdmmState, contributions, D, eta):
    """Tracking update from the (quantized) contributions of all operators."""
    if contributions is None or any(c is None for c in contributions):
        raise ProtocolError("central step needs a contribution from every operator")
    contributions = np.asarray(contributions, dtype=float)
    N = contributions.shape[0]
    Q = (contributions.sum(axis=0) + D - eta) / N
    lam = state.lam + state.c * Q
    return Q, lam


def safeguard(s: Scenario, alloc: Allocation) -> Allocation:
    """Scale all powers by ``min(1, min_lm eta / I)`` so the PU constraint holds."""
    I = metrics.pu_interference(s, alloc)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(I > s.threshold, s.threshold / I, 1.0)
    factor = min(1.0, float(ratio.min()))
    return alloc.scaled(factor) if factor < 1.0 else alloc.copy()


def run_admm(s: Scenario, q_level=UNQUANTIZED, n_iter=5, c=DEFAULT_ADMM_C, options=None,
             include_interbeam=True) -> StrategyResult:
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    d = s.dims
    eta = s.threshold
    center = FusionCenter(s)
    state = init_admm_state(s, c, options)
    warm_start = assemble(s, state.last_alloc)
    warm_rate = _metric(s, warm_start, include_interbeam)

    best, best_rate = None, -np.inf
    trace, raw = [], []
    for t in range(1, n_iter + 1):
        parts = [admm_local_step(s, n, state, options) for n in range(d.N)]
        D = admm_slack_step(state, eta)
        levels = np.stack([operator_interference(s, n, parts[n]) for n in range(d.N)])
        reported = center.collect_levels(list(levels), q_level, f"levels t={t}")
        Q, lam = admm_central_step(state, reported, D, eta)
        state = AdmmState(lam, Q, D, state.c, parts, levels, t)

        candidate = safeguard(s, assemble(s, parts))
        rate = _metric(s, candidate, include_interbeam)
        raw.append(rate)
        if metrics.is_feasible(s, candidate) and rate > best_rate:
            best, best_rate = candidate, rate
        # what the run would return if it stopped here
        trace.append(best_rate if best is not None else warm_rate)

    if best is None:
        # every iterate failed the audit; fall back to the feasible warm start
        log.warning("no feasible ADMM iterate; returning the equal-split warm start")
        best = warm_start
    return _result("admm", s, best, center.ledger, trace, include_interbeam, q_level=q_level,
                   iterate_trace=raw)


def run_strategy(name: str, s: Scenario, *, q=UNQUANTIZED, q_level=None, n_iter=5,
                 admm_c=DEFAULT_ADMM_C, options=None, q_range_db=(-60.0, 20.0),
                 include_interbeam=True) -> StrategyResult:
    """Dispatch by CLI name.  ``q_level`` defaults to the bit-equalized value
    for ``q``."""
    if q_level is None:
        q_level = metrics.equalize_bit_budget(s.dims, q, n_iter)
    if name == "centralized":
        return run_centralized(s, options, include_interbeam)
    if name == "channel-share":
        return run_channel_share(s, q, options, q_range_db, include_interbeam)
    if name == "equal-split":
        return run_equal_split(s, options, include_interbeam)
    if name == "iter-equal-split":
        return run_iter_equal_split(s, q_level, n_iter, options, include_interbeam)
    if name == "admm":
        return run_admm(s, q_level, n_iter, admm_c, options, include_interbeam)
    raise ValueError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")
