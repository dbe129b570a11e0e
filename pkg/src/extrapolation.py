"""
Explicit extrapolation integrator (Gragg-Bulirsch-Stoer with Euler start and
mid-point steps) in five arithmetic modes:

    double   plain binary64 AXPY / SCAL
    dmoller  binary64 with Møller compensation of every recurrence
    deft     AXPYerror / SCALerror state pairs, f evaluated in DD
    deft2    as deft, but f evaluated in binary64 with e_f = 0
    dd       double-double arithmetic throughout

Also holds the support sequences, the DD extrapolation coefficients, the
acceptance rules, step halving control and the round-off propagation table.
"""
import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np

from src.blas1 import (
    CompScalar,
    CompVector,
    axpy,
    axpy_error,
    moller_update,
    norm_inf,
    scal,
    scal_error,
)
from src.eft import (
    UNIT_ROUNDOFF,
    DoubleDouble,
    dd_add,
    dd_add_accurate,
    dd_div,
    dd_mul,
    dd_mul_d,
    dd_sub,
    dd_sub_accurate,
    two_sum,
)
from src.problems import IvpProblem

log = logging.getLogger(__name__)

# ─────────────────────────────────────────────
# CONSTANTS
# ─────────────────────────────────────────────
MAX_STAGES = 30
PLATEAU_SAFETY = 64.0             # theta in the stage-L failure test
DEFAULT_MAX_HALVINGS = 30
DEFAULT_MIN_STEP = 1e-12

_ONE = DoubleDouble(1.0, 0.0)
_MINUS_ONE = CompScalar(-1.0, 0.0)
_PLUS_ONE = CompScalar(1.0, 0.0)


class StepFailure(RuntimeError):
    """Adaptive stepping could not produce an accepted step."""

    def __init__(self, t: float, H: float, reason: str):
        super().__init__(f"step failure at t={t:.17g} with H={H:.6g}: {reason}")
        self.t = t
        self.H = H


# ─────────────────────────────────────────────
# TYPES
# ─────────────────────────────────────────────

class SequenceKind(str, Enum):
    ROMBERG = "romberg"
    HARMONIC = "harmonic"


class MethodMode(str, Enum):
    DOUBLE = "double"
    DMOLLER = "dmoller"
    DEFT = "deft"
    DEFT2 = "deft2"
    DD = "dd"


@dataclass(frozen=True)
class SupportSequence:
    kind: SequenceKind
    stages: int
    w: tuple[int, ...]


@dataclass(frozen=True)
class SolverConfig:
    sequence: SupportSequence
    mode: MethodMode
    eps_r: float = 0.0
    eps_a: float = 0.0
    adaptive: bool = False
    h0: Optional[float] = None
    steps: Optional[int] = None
    max_halvings: int = DEFAULT_MAX_HALVINGS
    min_step: float = DEFAULT_MIN_STEP

    def __post_init__(self):
        object.__setattr__(self, "mode", MethodMode(self.mode))
        if self.eps_r < 0 or self.eps_a < 0:
            raise ValueError("tolerances must be >= 0")
        if self.adaptive:
            if self.h0 is None or not self.h0 > 0:
                raise ValueError("adaptive stepping needs h0 > 0")
            if self.max_halvings < 1:
                raise ValueError("adaptive stepping needs max_halvings >= 1")
        elif self.steps is None or self.steps < 1:
            raise ValueError("fixed stepping needs steps >= 1")

    @property
    def uses_tolerance(self) -> bool:
        return self.eps_r > 0 or self.eps_a > 0


class StepStats(NamedTuple):
    accepted: bool            # False: stage L taken without passing the test
    stages_used: int
    halvings: int
    corr_at_accept: float
    t_reached: float
    step: CompScalar


@dataclass
class IntegrationStats:
    steps: int = 0
    halvings: int = 0
    unconverged: int = 0
    elapsed_s: float = 0.0
    t_final: float = 0.0
    stage_hist: Counter = field(default_factory=Counter)


class Action(str, Enum):
    CONTINUE = "continue"
    ACCEPT = "accept"
    FAIL = "fail"


class Verdict(NamedTuple):
    action: Action
    stage: int = 0


@dataclass
class PropagationTable:
    kind: SequenceKind
    r: np.ndarray               # L x L, NaN above the diagonal

    @property
    def stages(self) -> int:
        return self.r.shape[0]

    @property
    def max_abs(self) -> float:
        return float(np.nanmax(np.abs(self.r)))


class Tableau:
    """Triangular T_ij table of one step with its correction norms."""

    def __init__(self, c: dict):
        self.c = c
        self.rows: dict[tuple[int, int], CompVector] = {}
        self.corr: dict[tuple[int, int], float] = {}

    def entry(self, i: int, j: int) -> CompVector:
        return self.rows[(i, j)]

    def put(self, i: int, j: int, value: CompVector, corr: Optional[float] = None) -> None:
        self.rows[(i, j)] = value
        if corr is not None:
            self.corr[(i, j)] = corr


# ─────────────────────────────────────────────
# SEQUENCES & COEFFICIENTS
# ─────────────────────────────────────────────

def build_sequence(kind, L: int) -> SupportSequence:
    """Romberg w_i = 2**i, harmonic w_i = 2(i+1), for i = 1..L."""
    kind = SequenceKind(kind)
    if not 1 <= L <= MAX_STAGES:
        raise ValueError(f"stages must lie in [1, {MAX_STAGES}], got {L}")
    if kind is SequenceKind.ROMBERG:
        w = tuple(2 ** i for i in range(1, L + 1))
    else:
        w = tuple(2 * (i + 1) for i in range(1, L + 1))
    return SupportSequence(kind, L, w)


@lru_cache(maxsize=None)
def coefficients(seq: SupportSequence) -> dict[tuple[int, int], CompScalar]:
    """
    c_ij = ((w_i / w_{i-j+1})**2 - 1)**-1 for 2 <= j <= i <= L, evaluated in DD
    and returned as (c, e_c). The dict is shared between callers; do not mutate.
    """
    c = {}
    for i in range(2, seq.stages + 1):
        for j in range(2, i + 1):
            ratio = dd_div(DoubleDouble(float(seq.w[i - 1]), 0.0),
                           DoubleDouble(float(seq.w[i - j]), 0.0))
            den = dd_sub_accurate(dd_mul(ratio, ratio), _ONE)
            c[(i, j)] = CompScalar.from_dd(dd_div(_ONE, den))
    return c


# ─────────────────────────────────────────────
# INITIAL SEQUENCE
# ─────────────────────────────────────────────

def _initial_double(problem, t_old, y, H, w):
    h = H.v / w
    t0 = t_old.value()
    f = problem.rhs_double
    prev = y.v
    cur = axpy(h, f(t0, prev), prev)
    for k in range(1, w):
        prev, cur = cur, axpy(2.0 * h, f(t0 + k * h, cur), prev)
    return CompVector(cur, np.zeros_like(cur))


def _initial_moller(problem, t_old, y, H, w):
    h = H.v / w
    t0 = t_old.value()
    f = problem.rhs_double
    # odd and even chains carry separate residuals
    prev = (y.v, np.zeros_like(y.v))
    cur = moller_update(y.v, np.zeros_like(y.v), scal(h, f(t0, y.v)))
    for k in range(1, w):
        z = scal(2.0 * h, f(t0 + k * h, cur[0]))
        prev, cur = cur, moller_update(prev[0], prev[1], z)
    return CompVector(*cur)


def _rhs_dd_pair(problem, t, y):
    fx = problem.rhs_dd(t, y.as_dd())
    return CompVector(fx.hi, fx.lo)


def _rhs_double_pair(problem, t, y):
    fx = problem.rhs_double(t.hi + t.lo, y.value())
    return CompVector(fx, np.zeros_like(fx))


def _initial_eft(problem, t_old, y, H, w, rhs):
    h_dd = dd_div(H.as_dd(), DoubleDouble(float(w), 0.0))
    h = CompScalar.from_dd(h_dd)
    h2 = CompScalar(2.0 * h.v, 2.0 * h.e)
    t0 = t_old.as_dd()
    prev = y
    cur = axpy_error(h, rhs(problem, t0, y), y)
    for k in range(1, w):
        t_k = dd_add(t0, dd_mul_d(h_dd, float(k)))
        prev, cur = cur, axpy_error(h2, rhs(problem, t_k, cur), prev)
    return cur


def _initial_dd(problem, t_old, y, H, w):
    h = dd_div(H.as_dd(), DoubleDouble(float(w), 0.0))
    h2 = DoubleDouble(2.0 * h.hi, 2.0 * h.lo)
    t0 = t_old.as_dd()
    f = problem.rhs_dd
    prev = DoubleDouble(y.v, y.e)
    cur = dd_add(prev, dd_mul(h, f(t0, prev)))
    for k in range(1, w):
        t_k = dd_add(t0, dd_mul_d(h, float(k)))
        prev, cur = cur, dd_add(prev, dd_mul(h2, f(t_k, cur)))
    return CompVector(cur.hi, cur.lo)


_INITIAL = {
    MethodMode.DOUBLE: _initial_double,
    MethodMode.DMOLLER: _initial_moller,
    MethodMode.DEFT: lambda *a: _initial_eft(*a, rhs=_rhs_dd_pair),
    MethodMode.DEFT2: lambda *a: _initial_eft(*a, rhs=_rhs_double_pair),
    MethodMode.DD: _initial_dd,
}


def initial_approx(problem: IvpProblem, t_old: CompScalar, y: CompVector, H: CompScalar,
                   w_i: int, mode) -> CompVector:
    """T_i1 = y_{w_i}: one Euler step then w_i - 1 mid-point steps of h = H / w_i."""
    if w_i < 2 or w_i % 2:
        raise ValueError(f"substep count must be even and >= 2, got {w_i}")
    return _INITIAL[MethodMode(mode)](problem, t_old, y, H, w_i)


# ─────────────────────────────────────────────
# EXTRAPOLATION
# ─────────────────────────────────────────────

def _extrap_double(newer, older, c):
    R = scal(c.v, axpy(-1.0, older.v, newer.v))
    T = axpy(1.0, R, newer.v)
    return CompVector(T, np.zeros_like(T)), float(np.max(np.abs(R)))


def _extrap_moller(newer, older, c):
    R = scal(c.v, axpy(-1.0, older.v, newer.v))
    S, Rp = moller_update(newer.v, newer.e, R)
    return CompVector(S, Rp), float(np.max(np.abs(R)))


def _extrap_eft(newer, older, c):
    R = axpy_error(_MINUS_ONE, older, newer)
    R = scal_error(c, R)
    T = axpy_error(_PLUS_ONE, R, newer)
    return T, norm_inf(R)


def _extrap_dd(newer, older, c):
    diff = dd_sub(DoubleDouble(newer.v, newer.e), DoubleDouble(older.v, older.e))
    R = dd_mul(DoubleDouble(c.v, c.e), diff)
    T = dd_add(DoubleDouble(newer.v, newer.e), R)
    return CompVector(T.hi, T.lo), float(np.max(np.abs(R.hi + R.lo)))


_EXTRAPOLATE = {
    MethodMode.DOUBLE: _extrap_double,
    MethodMode.DMOLLER: _extrap_moller,
    MethodMode.DEFT: _extrap_eft,
    MethodMode.DEFT2: _extrap_eft,
    MethodMode.DD: _extrap_dd,
}


def extrapolate_row(tab: Tableau, i: int, mode) -> Tableau:
    """Fill T_i2..T_ii from T_i1 and row i-1, recording corr_ij = ||R_ij||."""
    step = _EXTRAPOLATE[MethodMode(mode)]
    for j in range(2, i + 1):
        T, corr = step(tab.entry(i, j - 1), tab.entry(i - 1, j - 1), tab.c[(i, j)])
        tab.put(i, j, T, corr)
    return tab


# ─────────────────────────────────────────────
# ACCEPTANCE
# ─────────────────────────────────────────────

def check_convergence(corr: float, T_prev: CompVector, eps_r: float, eps_a: float) -> bool:
    return corr <= eps_r * norm_inf(T_prev) + eps_a


def round_off_floor(t_norm: float) -> float:
    return PLATEAU_SAFETY * UNIT_ROUNDOFF * t_norm


def plateau_stage(history, t_norm: float) -> Optional[int]:
    """
    Stage of the round-off minimum when the latest diagonal correction rose
    above a previous one that was already at the round-off floor, else None.
    """
    if len(history) < 2:
        return None
    previous, current = history[-2], history[-1]
    if current > previous and previous <= round_off_floor(t_norm):
        return len(history) - 1
    return None


def zero_tol_accept(history, stages: int, t_norm: float) -> Verdict:
    """
    Acceptance with eps_r = eps_a = 0. history[s - 1] is the diagonal
    correction of stage s (stage 1 has none; pass inf). The latest entry
    belongs to the current stage.

    An increase counts as the round-off plateau only once the previous
    correction is within theta * u * t_norm; earlier increases are
    truncation behaviour and the tableau keeps growing.
    """
    i = len(history)
    if i < 2:
        raise ValueError("need the corrections of at least two stages")
    current = history[-1]
    if current == 0.0:
        return Verdict(Action.ACCEPT, i)
    stage = plateau_stage(history, t_norm)
    if stage is not None:
        return Verdict(Action.ACCEPT, stage)
    if i >= stages:
        if current <= round_off_floor(t_norm):
            return Verdict(Action.ACCEPT, i)
        return Verdict(Action.FAIL, i)
    return Verdict(Action.CONTINUE, i)


def _attempt(problem, t_old, y, H, config: SolverConfig, c):
    """One try at a step of size H; returns (T, stage, corr, converged)."""
    seq, mode = config.sequence, config.mode
    L = seq.stages
    tab = Tableau(c)
    history = [math.inf]
    for i in range(1, L + 1):
        tab.put(i, 1, initial_approx(problem, t_old, y, H, seq.w[i - 1], mode))
        if i == 1:
            continue
        extrapolate_row(tab, i, mode)
        history.append(tab.corr[(i, i)])
        t_norm = norm_inf(tab.entry(i, i))
        if config.uses_tolerance:
            for j in range(2, i + 1):
                corr = tab.corr[(i, j)]
                if check_convergence(corr, tab.entry(i, j - 1), config.eps_r, config.eps_a):
                    return tab.entry(i, j), i, corr, True
            # tolerance below what the arithmetic resolves: settle for the plateau
            s = plateau_stage(history, t_norm)
            if s is not None:
                return tab.entry(s, s), s, history[s - 1], True
            continue
        verdict = zero_tol_accept(history, L, t_norm)
        if verdict.action is Action.ACCEPT:
            s = verdict.stage
            return tab.entry(s, s), s, history[s - 1], True
        if verdict.action is Action.FAIL:
            return tab.entry(L, L), L, history[-1], False
    if L == 1:
        return tab.entry(1, 1), 1, math.inf, not config.uses_tolerance
    return tab.entry(L, L), L, tab.corr[(L, L)], False


def _carry_state(T: CompVector, mode: MethodMode) -> CompVector:
    """State handed to the next step; DEFT pairs are renormalized so e stays below ulp(v)."""
    if mode is MethodMode.DOUBLE:
        return CompVector(T.v, np.zeros_like(T.v))
    if mode is MethodMode.DMOLLER:
        return CompVector(T.v + T.e, np.zeros_like(T.v))
    if mode in (MethodMode.DEFT, MethodMode.DEFT2):
        return CompVector(*two_sum(T.v, T.e))
    return T


def advance_step(problem: IvpProblem, t_old: CompScalar, y: CompVector, H: CompScalar,
                 config: SolverConfig) -> tuple[CompVector, StepStats]:
    """
    One extrapolation step from t_old. In adaptive mode a failed attempt is
    retried with exactly H/2; in fixed mode the stage-L value is taken.
    """
    if not H.v > 0:
        raise ValueError(f"step size must be > 0, got {H.v}")
    c = coefficients(config.sequence)
    halvings = 0
    while True:
        T, stage, corr, ok = _attempt(problem, t_old, y, H, config, c)
        if ok or not config.adaptive:
            t_reached = t_old.v + t_old.e + H.v + H.e
            log.debug("  step t=%.6g H=%.3g stage=%d corr=%.2e halvings=%d%s",
                      t_old.value(), H.v, stage, corr, halvings, "" if ok else " (unconverged)")
            return _carry_state(T, config.mode), StepStats(ok, stage, halvings, corr, t_reached, H)
        if halvings >= config.max_halvings:
            raise StepFailure(t_old.value(), H.v, f"{halvings} halvings exhausted")
        H = CompScalar(0.5 * H.v, 0.5 * H.e)
        halvings += 1
        if H.v < config.min_step:
            raise StepFailure(t_old.value(), H.v, f"step below min_step={config.min_step:g}")
        log.debug("  step at t=%.6g rejected, retrying with H=%.3g", t_old.value(), H.v)


# ─────────────────────────────────────────────
# INTEGRATION
# ─────────────────────────────────────────────

def _dd_time(t: float) -> DoubleDouble:
    return DoubleDouble(float(t), 0.0)


def _fixed_steps(problem, config, y, stats):
    N = config.steps
    t_start, t_end = _dd_time(problem.t_start), _dd_time(problem.t_end)
    span = DoubleDouble(*two_sum(problem.t_end, -problem.t_start))
    H_dd = dd_div(span, DoubleDouble(float(N), 0.0))
    H = CompScalar.from_dd(H_dd)
    for k in range(N):
        t_k = dd_add_accurate(t_start, dd_mul_d(H_dd, float(k)))
        step = H
        if k == N - 1:
            step = CompScalar.from_dd(dd_sub_accurate(t_end, t_k))
        y, st = advance_step(problem, CompScalar.from_dd(t_k), y, step, config)
        stats.steps += 1
        stats.unconverged += not st.accepted
        stats.stage_hist[st.stages_used] += 1
    return y


def _adaptive_steps(problem, config, y, stats):
    t = _dd_time(problem.t_start)
    t_end = _dd_time(problem.t_end)
    H0 = CompScalar(float(config.h0), 0.0)
    while True:
        remaining = dd_sub_accurate(t_end, t)
        if not remaining.hi + remaining.lo > 0:
            break
        last = H0.v >= remaining.hi + remaining.lo
        H = CompScalar.from_dd(remaining) if last else H0
        y, st = advance_step(problem, CompScalar.from_dd(t), y, H, config)
        stats.steps += 1
        stats.halvings += st.halvings
        stats.stage_hist[st.stages_used] += 1
        if last and st.halvings == 0:
            t = t_end
        else:
            t = dd_add_accurate(t, st.step.as_dd())
    return y


def integrate(problem: IvpProblem, config: SolverConfig) -> tuple[CompVector, IntegrationStats]:
    """Integrate from t_start to exactly t_end; returns the final state and run statistics."""
    stats = IntegrationStats()
    y = problem.initial_state()
    start = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):
        if config.adaptive:
            y = _adaptive_steps(problem, config, y, stats)
        else:
            y = _fixed_steps(problem, config, y, stats)
    stats.elapsed_s = time.perf_counter() - start
    stats.t_final = problem.t_end
    if not np.all(np.isfinite(y.v)):
        log.warning("Non-finite values in final state of %s (%s).", problem.name, config.mode.value)
    log.debug("Integrated %s in %d steps (%d halvings), stages used: %s",
              problem.name, stats.steps, stats.halvings, dict(sorted(stats.stage_hist.items())))
    return y, stats


# ─────────────────────────────────────────────
# ROUND-OFF PROPAGATION
# ─────────────────────────────────────────────

def propagation_coefficients(seq: SupportSequence) -> PropagationTable:
    """
    Amplification r_ij of an alternating initial error (-1)**(i-1) through the
    tableau: r_ij = r_{i,j-1} + c_ij (r_{i,j-1} - r_{i-1,j-1}).
    """
    c = coefficients(seq)
    L = seq.stages
    r = np.full((L, L), np.nan)
    for i in range(1, L + 1):
        r[i - 1, 0] = (-1.0) ** (i - 1)
        for j in range(2, i + 1):
            prev = r[i - 1, j - 2]
            r[i - 1, j - 1] = prev + c[(i, j)].v * (prev - r[i - 2, j - 2])
    return PropagationTable(seq.kind, r)
