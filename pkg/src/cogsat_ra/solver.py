"""Relaxed subband/power allocation kernel.

The mixed-integer problem over a binary assignment ``A`` and powers ``P`` is
relaxed to ``0 <= A <= 1`` and rewritten in ``X = A * P``; the rate term
``A log2(1 + g P)`` becomes the perspective ``A log2(1 + g X / A)``, which is
jointly concave.  Inter-beam interference is ignored inside the kernel.

Pipeline used by every strategy::

    rs = solve_relaxed(prob)
    a = round_assignment(rs, prob)
    alloc = solve_power_given_assignment(a, prob)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment, lsq_linear, minimize

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
SMOOTHING = 1e-9
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 5000


class ConvergenceError(RuntimeError):
    """The optimizer stopped without converging; ``best`` holds the best
    feasible iterate found (already repaired)."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class SolverOptions:
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS


@dataclass
class RaProblem:
    """Resource-allocation problem over a beam-complete set of SUs.

    Arrays are indexed by local SU position (``0 .. len(scope)-1``).
    ``linear`` adds ``sum(linear * X)`` to the objective; ``prox_weight`` and
    ``prox_target`` subtract ``c/2 * sum_lm (sum_k F[k,l,m] X[k,m] - r[l,m])**2``.
    """

    scope: np.ndarray  # global SU indices
    gain: np.ndarray  # (S, M) own-beam gain
    gain_pu: np.ndarray  # (S, L, M)
    groups: list  # local index arrays, one per (operator, beam)
    p_max: float
    thresholds: Optional[np.ndarray] = None  # (L, M); None drops the PU constraint
    linear: Optional[np.ndarray] = None  # (S, M)
    prox_weight: float = 0.0
    prox_target: Optional[np.ndarray] = None  # (L, M)
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        self.scope = np.asarray(self.scope, dtype=np.int64)
        self.gain = np.asarray(self.gain, dtype=float)
        self.gain_pu = np.asarray(self.gain_pu, dtype=float)
        self.groups = [np.asarray(g, dtype=np.int64) for g in self.groups]
        S, M = self.gain.shape
        if S == 0:
            raise ValueError("empty scope")
        if self.gain_pu.shape[0] != S or self.gain_pu.shape[2] != M:
            raise ValueError("gain_pu shape does not match gain")
        covered = np.sort(np.concatenate(self.groups))
        if not np.array_equal(covered, np.arange(S)):
            raise ValueError("groups must partition the scope")
        if any(len(g) != M for g in self.groups):
            raise ValueError("scope is not beam-complete: every group needs exactly M SUs")
        if self.thresholds is not None:
            self.thresholds = np.asarray(self.thresholds, dtype=float)
            if np.any(self.thresholds < 0):
                raise ValueError("thresholds must be nonnegative")
        if self.prox_weight and self.prox_target is None:
            raise ValueError("prox_weight needs prox_target")

    @classmethod
    def from_scenario(cls, s, scope=None, *, gain_to_sat=None, gain_to_pu=None,
                      thresholds="scenario", **kw):
        """Build a problem for ``scope`` (default: all SUs) of scenario ``s``.

        ``gain_to_sat``/``gain_to_pu`` override the scenario's full-size
        tensors (e.g. with quantized copies).
        """
        scope = np.arange(s.dims.n_sus) if scope is None else np.asarray(scope)
        G = s.gain_to_sat if gain_to_sat is None else np.asarray(gain_to_sat)
        F = s.gain_to_pu if gain_to_pu is None else np.asarray(gain_to_pu)
        gain = G[scope, s.beam_of[scope], :]
        pos = {int(k): i for i, k in enumerate(scope)}
        groups = []
        for n in np.unique(s.operator_of[scope]):
            for b in range(s.dims.B):
                members = s.sus_of_beam(int(n), b)
                if members.size and all(int(k) in pos for k in members):
                    groups.append([pos[int(k)] for k in members])
        if isinstance(thresholds, str):
            thresholds = s.threshold
        return cls(scope, gain, F[scope], groups, s.p_max, thresholds=thresholds, **kw)

    @property
    def shape(self):
        return self.gain.shape


@dataclass
class RelaxedSolution:
    a_frac: np.ndarray
    x: np.ndarray
    objective_value: float


@dataclass
class Allocation:
    a: np.ndarray  # (S, M) in {0, 1}
    p: np.ndarray  # (S, M)

    def copy(self):
        return Allocation(self.a.copy(), self.p.copy())

    def scaled(self, factor):
        return Allocation(self.a.copy(), self.p * factor)


# --- objective ---------------------------------------------------------------

def objective(prob: RaProblem, a, x, eps=SMOOTHING):
    """Smoothed relaxed objective at ``(a, x)``."""
    d = a + eps
    val = float(np.sum(a * np.log1p(prob.gain * x / d)) / LN2)
    if prob.linear is not None:
        val += float(np.sum(prob.linear * x))
    if prob.prox_weight:
        r = np.einsum("klm,km->lm", prob.gain_pu, x) - prob.prox_target
        val -= 0.5 * prob.prox_weight * float(np.sum(r * r))
    return val


def gradient(prob: RaProblem, a, x, eps=SMOOTHING):
    """Analytic gradient of :func:`objective`, returned as ``(d/da, d/dx)``."""
    g = prob.gain
    d = a + eps
    gx = g * x
    ga = (np.log1p(gx / d) - a * gx / (d * (d + gx))) / LN2
    gxx = a * g / ((d + gx) * LN2)
    if prob.linear is not None:
        gxx = gxx + prob.linear
    if prob.prox_weight:
        r = np.einsum("klm,km->lm", prob.gain_pu, x) - prob.prox_target
        gxx = gxx - prob.prox_weight * np.einsum("klm,lm->km", prob.gain_pu, r)
    return ga, gxx


# --- constraint matrices -------------------------------------------------------

def _equality_rows(prob: RaProblem):
    """Row-stochastic and per-beam column constraints on ``a``.

    Within a group the M row sums and M column sums share one redundant
    equation, so the last column of each group is dropped.
    """
    S, M = prob.shape
    n = 2 * S * M
    rows = []
    for k in range(S):
        r = np.zeros(n)
        r[k * M:(k + 1) * M] = 1.0
        rows.append(r)
    for grp in prob.groups:
        for m in range(M - 1):
            r = np.zeros(n)
            r[grp * M + m] = 1.0
            rows.append(r)
    return np.array(rows), np.ones(len(rows))


def _pu_rows(prob: RaProblem):
    """``(C, d)`` with ``F x <= eta`` written as ``d - C x >= 0`` over
    nontrivial (l, m) pairs, in x-only coordinates."""
    S, M = prob.shape
    if prob.thresholds is None:
        return np.zeros((0, S * M)), np.zeros(0), []
    C, d, idx = [], [], []
    L = prob.gain_pu.shape[1]
    for l in range(L):
        for m in range(M):
            col = prob.gain_pu[:, l, m]
            if not np.any(col > 0):
                continue
            r = np.zeros((S, M))
            r[:, m] = col
            C.append(r.ravel())
            d.append(prob.thresholds[l, m])
            idx.append((l, m))
    if not C:
        return np.zeros((0, S * M)), np.zeros(0), []
    return np.array(C), np.array(d), idx


def repair(prob: RaProblem, a, x):
    """Push an approximate solution onto the feasible set.

    Clips ``a`` into [0, 1], ``x`` into [0, p_max * a] and scales ``x`` per
    subband so every PU constraint holds.
    """
    a = np.clip(a, 0.0, 1.0)
    x = np.clip(x, 0.0, prob.p_max * a)
    if prob.thresholds is not None:
        x = x * _pu_scale(prob.gain_pu, x, prob.thresholds)[None, :]
    return a, x


def _pu_scale(gain_pu, x, thresholds):
    """Largest per-subband factor in [0, 1] keeping ``sum_k F x <= eta``."""
    load = np.einsum("klm,km->lm", gain_pu, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(load > thresholds, thresholds / load, 1.0)
    return np.minimum(1.0, ratio.min(axis=0))


# --- relaxed solve -------------------------------------------------------------------

def _run_slsqp(fun, z0, constraints, bounds, opts):
    return minimize(fun, z0, jac=True, method="SLSQP", bounds=bounds,
                    constraints=constraints,
                    options={"maxiter": opts.max_iters, "ftol": opts.tol})


def solve_relaxed(prob: RaProblem) -> RelaxedSolution:
    S, M = prob.shape
    SM = S * M
    Aeq, beq = _equality_rows(prob)
    C, d, _ = _pu_rows(prob)
    # x <= p_max * a
    Cbox = np.hstack([prob.p_max * np.eye(SM), -np.eye(SM)])
    Cin = np.vstack([Cbox, np.hstack([np.zeros((C.shape[0], SM)), -C])])
    din = np.concatenate([np.zeros(SM), d])

    def fun(z):
        a = z[:SM].reshape(S, M)
        x = z[SM:].reshape(S, M)
        a = np.maximum(a, 0.0)
        ga, gx = gradient(prob, a, x)
        return -objective(prob, a, x), -np.concatenate([ga.ravel(), gx.ravel()])

    constraints = [
        {"type": "eq", "fun": lambda z: Aeq @ z - beq, "jac": lambda z: Aeq},
        {"type": "ineq", "fun": lambda z: Cin @ z + din, "jac": lambda z: Cin},
    ]
    bounds = [(0.0, 1.0)] * SM + [(0.0, prob.p_max)] * SM
    starts = [
        np.concatenate([np.full(SM, 1.0 / M), np.zeros(SM)]),
        np.concatenate([np.full(SM, 1.0 / M), np.full(SM, 1e-3 * prob.p_max / M)]),
    ]
    best = None
    for z0 in starts:
        res = _run_slsqp(fun, z0, constraints, bounds, prob.options)
        a, x = repair(prob, res.x[:SM].reshape(S, M), res.x[SM:].reshape(S, M))
        sol = RelaxedSolution(a, x, objective(prob, a, x))
        if best is None or sol.objective_value > best.objective_value:
            best = sol
        # status 8: line search cannot improve further, i.e. precision floor
        if res.status in (0, 8):
            return sol
        log.debug("SLSQP status %s (%s); retrying", res.status, res.message)
    raise ConvergenceError(f"relaxed solve did not converge: {res.message}", best=best)


# --- rounding -------------------------------------------------------------------------

def max_weight_matching(w, tol=1e-9):
    """Maximum-weight perfect matching on a square matrix.

    Returns ``perm`` with row ``i`` matched to column ``perm[i]``; among
    optimal matchings the lexicographically smallest ``perm`` is chosen.
    """
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    rows, cols = linear_sum_assignment(w, maximize=True)
    best = w[rows, cols].sum()
    slack = tol * max(1.0, abs(best))
    perm = np.empty(n, dtype=np.int64)
    free = list(range(n))
    fixed = 0.0
    for i in range(n):
        for j in free:
            rest_cols = [c for c in free if c != j]
            if i + 1 < n:
                sub = w[np.ix_(range(i + 1, n), rest_cols)]
                r, c = linear_sum_assignment(sub, maximize=True)
                rest = sub[r, c].sum()
            else:
                rest = 0.0
            if fixed + w[i, j] + rest >= best - slack:
                perm[i] = j
                fixed += w[i, j]
                free.remove(j)
                break
    return perm


def round_assignment(rs: RelaxedSolution, prob: RaProblem) -> np.ndarray:
    S, M = prob.shape
    a = np.zeros((S, M), dtype=np.int64)
    for grp in prob.groups:
        perm = max_weight_matching(rs.a_frac[grp, :])
        a[grp, perm] = 1
    return a


# --- power-only solve ----------------------------------------------------------------

def solve_power_given_assignment(a, prob: RaProblem) -> Allocation:
    """Optimal powers on the active pairs of a fixed binary assignment."""
    a = np.asarray(a, dtype=np.int64)
    S, M = prob.shape
    if np.any(a.sum(axis=1) != 1):
        raise ValueError("assignment must give every SU exactly one subband")
    for grp in prob.groups:
        if np.any(a[grp].sum(axis=0) != 1):
            raise ValueError("assignment must use every subband once per beam")
    sub = a.argmax(axis=1)
    ks = np.arange(S)
    g = prob.gain[ks, sub]
    # f_act[k, l]: gain of SU k towards PU l on its active subband
    f_act = prob.gain_pu[ks, :, sub]
    lin = prob.linear[ks, sub] if prob.linear is not None else None

    def full_x(p):
        x = np.zeros((S, M))
        x[ks, sub] = p
        return x

    def fun(p):
        gp = g * p
        val = np.sum(np.log1p(gp)) / LN2
        grad = g / ((1.0 + gp) * LN2)
        if lin is not None:
            val += lin @ p
            grad = grad + lin
        if prob.prox_weight:
            r = np.einsum("klm,km->lm", prob.gain_pu, full_x(p)) - prob.prox_target
            val -= 0.5 * prob.prox_weight * np.sum(r * r)
            grad = grad - prob.prox_weight * np.einsum("kl,kl->k", f_act, r[:, sub].T)
        return -val, -grad

    constraints = []
    rows, rhs = [], []
    if prob.thresholds is not None:
        L = prob.gain_pu.shape[1]
        for l in range(L):
            for m in range(M):
                on = sub == m
                coeff = np.where(on, f_act[:, l], 0.0)
                if np.any(coeff > 0):
                    rows.append(coeff)
                    rhs.append(prob.thresholds[l, m])
    if rows:
        Cp, dp = np.array(rows), np.array(rhs)
        constraints.append({"type": "ineq", "fun": lambda p: dp - Cp @ p, "jac": lambda p: -Cp})

    p0 = np.full(S, prob.p_max)
    p0 = full_x(p0)
    if prob.thresholds is not None:
        p0 = p0 * _pu_scale(prob.gain_pu, p0, prob.thresholds)[None, :]
    p0 = p0[ks, sub]
    res = minimize(fun, p0, jac=True, method="SLSQP", bounds=[(0.0, prob.p_max)] * S,
                   constraints=constraints,
                   options={"maxiter": prob.options.max_iters, "ftol": prob.options.tol})
    p = np.clip(res.x, 0.0, prob.p_max)
    x = full_x(p)
    if prob.thresholds is not None:
        x = x * _pu_scale(prob.gain_pu, x, prob.thresholds)[None, :]
    alloc = Allocation(a.copy(), x)
    if res.status not in (0, 8):
        # the starting point is feasible, so never return something worse
        start = Allocation(a.copy(), full_x(p0))
        if allocation_objective(prob, start) > allocation_objective(prob, alloc):
            alloc = start
        raise ConvergenceError(f"power solve did not converge: {res.message}", best=alloc)
    return alloc


def allocation_objective(prob: RaProblem, alloc: Allocation) -> float:
    """Kernel objective of a binary allocation (rate without inter-beam term)."""
    x = alloc.a * alloc.p
    val = float(np.sum(alloc.a * np.log1p(prob.gain * x)) / LN2)
    if prob.linear is not None:
        val += float(np.sum(prob.linear * x))
    if prob.prox_weight:
        r = np.einsum("klm,km->lm", prob.gain_pu, x) - prob.prox_target
        val -= 0.5 * prob.prox_weight * float(np.sum(r * r))
    return val


def solve_pipeline(prob: RaProblem, incumbent=None) -> Allocation:
    """relax -> round -> power re-solve.

    If ``incumbent`` (a binary assignment) is given, its power re-solve is
    also evaluated and the better of the two allocations is returned.
    """
    candidates = []
    try:
        rs = solve_relaxed(prob)
    except ConvergenceError as exc:
        log.warning("%s; using best iterate", exc)
        rs = exc.best
    for a in (round_assignment(rs, prob), incumbent):
        if a is None:
            continue
        try:
            alloc = solve_power_given_assignment(a, prob)
        except ConvergenceError as exc:
            log.warning("%s; using best iterate", exc)
            alloc = exc.best
        candidates.append(alloc)
    # first candidate wins ties so results do not depend on incumbent noise
    best = candidates[0]
    for c in candidates[1:]:
        if allocation_objective(prob, c) > allocation_objective(prob, best) + 1e-12:
            best = c
    return best


# --- diagnostics -------------------------------------------------------------------

def feasibility_residual(prob: RaProblem, a, x) -> float:
    """Largest violation of the relaxed constraints (0 when feasible)."""
    res = [np.max(np.abs(a.sum(axis=1) - 1.0))]
    for grp in prob.groups:
        res.append(np.max(np.abs(a[grp].sum(axis=0) - 1.0)))
    res.append(max(0.0, -a.min()))
    res.append(max(0.0, np.max(x - prob.p_max * a)))
    res.append(max(0.0, -x.min()))
    if prob.thresholds is not None:
        load = np.einsum("klm,km->lm", prob.gain_pu, x)
        res.append(max(0.0, np.max(load - prob.thresholds)))
    return float(max(res))


def kkt_residual(prob: RaProblem, rs: RelaxedSolution, active_tol=1e-7) -> float:
    """Relative stationarity residual of a relaxed solution.

    Multipliers are fitted by bounded least squares (sign-constrained for
    the active inequalities); the residual is ``|grad + J^T mu|_inf``
    normalized by ``max(1, |grad|_inf)``.
    """
    S, M = prob.shape
    SM = S * M
    a, x = rs.a_frac, rs.x
    ga, gx = gradient(prob, a, x)
    grad = np.concatenate([ga.ravel(), gx.ravel()])
    Aeq, _ = _equality_rows(prob)
    cols = [Aeq.T]
    lo = [np.full(Aeq.shape[0], -np.inf)]
    # active inequalities c(z) >= 0, gradients stacked as columns
    box = prob.p_max * a.ravel() - x.ravel()
    for i in np.flatnonzero(box <= active_tol * max(1.0, prob.p_max)):
        col = np.zeros(2 * SM)
        col[i] = prob.p_max
        col[SM + i] = -1.0
        cols.append(col[:, None])
        lo.append([0.0])
    for i in np.flatnonzero(a.ravel() <= active_tol):
        col = np.zeros(2 * SM)
        col[i] = 1.0
        cols.append(col[:, None])
        lo.append([0.0])
    for i in np.flatnonzero(x.ravel() <= active_tol):
        col = np.zeros(2 * SM)
        col[SM + i] = 1.0
        cols.append(col[:, None])
        lo.append([0.0])
    C, d, _ = _pu_rows(prob)
    if C.shape[0]:
        slack = d - C @ x.ravel()
        for i in np.flatnonzero(slack <= active_tol * np.maximum(1.0, d)):
            col = np.zeros(2 * SM)
            col[SM:] = -C[i]
            cols.append(col[:, None])
            lo.append([0.0])
    J = np.hstack(cols)
    lo = np.concatenate([np.asarray(v, dtype=float) for v in lo])
    # solve grad + J mu = 0
    fit = lsq_linear(J, -grad, bounds=(lo, np.full_like(lo, np.inf)), method="bvls",
                     tol=1e-14, max_iter=10000)
    r = grad + J @ fit.x
    return float(np.max(np.abs(r)) / max(1.0, np.max(np.abs(grad))))

