"""Sum-rates, interference, feasibility audits, exchanged-bit accounting, and
a brute-force grid oracle for tiny instances."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .quantizer import UNQUANTIZED
from .scenario import Dimensions, Scenario
from .solver import Allocation

C1_TOL = 1e-8


class InfeasibleAllocationError(ValueError):
    def __init__(self, violations):
        super().__init__("infeasible allocation: " + "; ".join(violations))
        self.violations = violations


class InstanceTooLargeError(ValueError):
    pass


@dataclass
class ExchangeLedger:
    """Bits sent between operators and the fusion center, by stage.

    Entries are ints, or ``math.inf`` for unquantized transfers.
    """

    breakdown: list = field(default_factory=list)

    def add(self, label: str, bits):
        if bits != UNQUANTIZED and (int(bits) != bits or bits < 0):
            raise ValueError(f"bit count must be a nonnegative integer, got {bits}")
        self.breakdown.append((label, bits if bits == UNQUANTIZED else int(bits)))

    @property
    def total_bits(self):
        total = 0
        for _, bits in self.breakdown:
            total = total + bits
        return total


@dataclass
class RateReport:
    per_operator: np.ndarray
    total: float
    includes_interbeam: bool


# --- interference and rates ---------------------------------------------------

def pu_interference(s: Scenario, alloc: Allocation, sus=None) -> np.ndarray:
    """``I[l, m] = sum_k a[k,m] F[k,l,m] p[k,m]`` over ``sus`` (default: all)."""
    sus = np.arange(s.dims.n_sus) if sus is None else np.asarray(sus)
    x = alloc.a[sus] * alloc.p[sus]
    return np.einsum("klm,km->lm", s.gain_to_pu[sus], x)


def interbeam_interference(s: Scenario, alloc: Allocation, n: int, k: int, b: int, m: int) -> float:
    """Interference on subband ``m`` at beam ``b`` of operator ``n`` seen by
    SU ``k``: every other SU of operator ``n`` active on ``m``, through its
    gain towards beam ``b``."""
    others = s.sus_of_operator(n)
    others = others[others != k]
    return float(np.sum(alloc.a[others, m] * s.gain_to_sat[others, b, m] * alloc.p[others, m]))


def interbeam_matrix(s: Scenario, alloc: Allocation) -> np.ndarray:
    """``J[k, m]`` for every SU towards its own serving beam."""
    x = alloc.a * alloc.p  # (S, M)
    S = s.dims.n_sus
    J = np.zeros((S, s.dims.M))
    for n in range(s.dims.N):
        members = s.sus_of_operator(n)
        # leak[i, b, m]: power of SU i arriving at beam b
        leak = s.gain_to_sat[members] * x[members, None, :]
        # sum over the other SUs directly; total-minus-own loses digits
        others = 1.0 - np.eye(len(members))
        received = np.einsum("ji,ibm->jbm", others, leak)
        J[members] = received[np.arange(len(members)), s.beam_of[members]]
    return J


def audit(s: Scenario, alloc: Allocation, tol: float = C1_TOL) -> list:
    """Return a list of violated constraints (empty when feasible)."""
    v = []
    a, p = np.asarray(alloc.a), np.asarray(alloc.p)
    S, M = s.dims.n_sus, s.dims.M
    if a.shape != (S, M) or p.shape != (S, M):
        return [f"allocation shape {a.shape}/{p.shape}, expected {(S, M)}"]
    if not np.all((a == 0) | (a == 1)):
        v.append("C2: assignment not binary")
    if np.any(p < 0) or np.any(p > s.p_max):
        v.append(f"C3: power outside [0, {s.p_max}]")
    if np.any(~np.isfinite(p)):
        v.append("C3: non-finite power")
    for n in range(s.dims.N):
        for b in range(s.dims.B):
            cols = a[s.sus_of_beam(n, b)].sum(axis=0)
            if np.any(cols != 1):
                v.append(f"C4: operator {n} beam {b} subband usage {cols.tolist()}")
    rows = a.sum(axis=1)
    if np.any(rows != 1):
        v.append(f"C5: SUs {np.flatnonzero(rows != 1).tolist()} do not hold exactly one subband")
    I = pu_interference(s, alloc)
    excess = I - s.threshold
    if np.any(excess > tol):
        l, m = np.unravel_index(np.argmax(excess), excess.shape)
        v.append(f"C1: PU {l} subband {m} exceeds threshold by {excess[l, m]:.3e}")
    return v


def is_feasible(s: Scenario, alloc: Allocation, tol: float = C1_TOL) -> bool:
    return not audit(s, alloc, tol)


def evaluate_sum_rate(s: Scenario, alloc: Allocation, include_interbeam: bool = True,
                      check: bool = True) -> RateReport:
    if check:
        violations = audit(s, alloc)
        if violations:
            raise InfeasibleAllocationError(violations)
    g = s.own_beam_gain()
    J = interbeam_matrix(s, alloc) if include_interbeam else 0.0
    per_su = np.sum(alloc.a * np.log2(1.0 + g * alloc.p / (1.0 + J)), axis=1)
    per_op = np.bincount(s.operator_of, weights=per_su, minlength=s.dims.N)
    return RateReport(per_op, float(per_op.sum()), include_interbeam)


# --- bit accounting --------------------------------------------------------------

def bits_channel_share(dims: Dimensions, q):
    """Bits for sharing F_n, G_n and the returned split: N q (KLM + KBM + LM)."""
    if q == UNQUANTIZED:
        return UNQUANTIZED
    N, K, B, M, L = dims.N, dims.K, dims.B, dims.M, dims.L
    return N * int(q) * (K * L * M + K * B * M + L * M)


def bits_level_share(dims: Dimensions, q, n_iter: int):
    """Bits for iterative interference-level reports: N q n_iter L M."""
    if q == UNQUANTIZED:
        return UNQUANTIZED
    return dims.N * int(q) * int(n_iter) * dims.L * dims.M


def equalize_bit_budget(dims: Dimensions, q_channel, n_iter: int):
    """Bits per level report that spend (at most) the channel-sharing budget."""
    if q_channel == UNQUANTIZED:
        return UNQUANTIZED
    per_bit = dims.N * n_iter * dims.L * dims.M
    return max(1, bits_channel_share(dims, q_channel) // per_bit)


# --- oracle -----------------------------------------------------------------------

def oracle_solve(s: Scenario, grid_steps: int = 100, chunk: int = 1 << 20):
    """Exhaustive search over assignments and a uniform power grid.

    Uses the kernel's objective (no inter-beam term).  Only for tiny
    instances: at most 4 SUs and 2 subbands.
    """
    d = s.dims
    if d.n_sus > 4 or d.M > 2:
        raise InstanceTooLargeError(f"oracle needs N*K <= 4 and M <= 2, got {d.n_sus}, {d.M}")
    levels = np.linspace(0.0, s.p_max, grid_steps + 1)
    g = s.own_beam_gain()
    groups = [s.sus_of_beam(n, b) for n in range(d.N) for b in range(d.B)]

    best_val, best_alloc = -math.inf, None
    for perms in itertools.product(itertools.permutations(range(d.M)), repeat=len(groups)):
        a = np.zeros((d.n_sus, d.M), dtype=np.int64)
        for grp, perm in zip(groups, perms):
            for k, m in zip(grp, perm):
                a[k, m] = 1
        total = 0.0
        p = np.zeros((d.n_sus, d.M))
        for m in range(d.M):
            active = np.flatnonzero(a[:, m])
            val, pw = _grid_subband(levels, g[active, m], s.gain_to_pu[active, :, m],
                                    s.threshold[:, m], chunk)
            total += val
            p[active, m] = pw
        if total > best_val:
            best_val, best_alloc = total, Allocation(a, p)
    return best_alloc, best_val


def _grid_subband(levels, g, f, eta, chunk):
    """Best grid point for the SUs sharing one subband (they only interact
    through the PU thresholds)."""
    n = len(g)
    n_lv = len(levels)
    rate_lv = np.log2(1.0 + np.outer(levels, g))  # (n_lv, n)
    best, best_p = -math.inf, None
    total = n_lv ** n
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        digits = np.empty((len(idx), n), dtype=np.int64)
        rem = idx
        for j in range(n - 1, -1, -1):
            digits[:, j] = rem % n_lv
            rem = rem // n_lv
        pw = levels[digits]
        ok = np.all(pw @ f <= eta + 1e-12, axis=1)
        if not np.any(ok):
            continue
        rates = rate_lv[digits, np.arange(n)].sum(axis=1)
        rates = np.where(ok, rates, -math.inf)
        i = int(np.argmax(rates))
        if rates[i] > best:
            best, best_p = float(rates[i]), pw[i]
    return best, best_p
