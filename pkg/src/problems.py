"""
Test problems for the extrapolation solvers.

Each problem carries a binary64 right-hand side (used by the Double, DMøller
and DEFT2 modes), a double-double right-hand side (DEFT and DD modes) and an
analytic solution evaluated in double-double, which is what every error is
measured against.
"""
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from src.blas1 import CompVector
from src.eft import (
    DoubleDouble,
    dd_div,
    dd_exp,
    dd_mul,
    dd_mul_d,
    dd_sincos,
    dd_sub_accurate,
)

# ─────────────────────────────────────────────
# CONSTANTS
# ─────────────────────────────────────────────
LINEAR_T_END = 0.25
RESONANCE_T_END = 37.0
DEFAULT_ALPHA = 0.99999999   # taken as the exact binary64 value it rounds to
_SINCOS_CACHE = 1 << 14

_ONE = DoubleDouble(1.0, 0.0)


@dataclass(frozen=True)
class IvpProblem:
    """dy/dt = f(t, y), y(t_start) = y0 on [t_start, t_end]."""
    name: str
    n: int
    t_start: float
    t_end: float
    y0: DoubleDouble
    rhs_double: Callable[[float, np.ndarray], np.ndarray]
    rhs_dd: Callable[[DoubleDouble, DoubleDouble], DoubleDouble]
    analytic: Optional[Callable[[DoubleDouble], DoubleDouble]] = None
    params: dict = field(default_factory=dict)

    def initial_state(self) -> CompVector:
        return CompVector.from_dd(self.y0)

    def reference(self) -> DoubleDouble:
        """Analytic solution at t_end."""
        if self.analytic is None:
            raise ValueError(f"problem {self.name!r} has no analytic solution")
        return self.analytic(DoubleDouble(self.t_end, 0.0))


# ─────────────────────────────────────────────
# LINEAR PROBLEM
# ─────────────────────────────────────────────

def linear_problem(n: int) -> IvpProblem:
    """
    y_k' = -k * y_k, y(0) = 1, t in [0, 1/4]; y_k(t) = exp(-k t).

    The DD right-hand side multiplies the DD state by the exact integer -k,
    so e_f stays faithful to the rounding of k * y_k.
    """
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    rates = np.arange(1, n + 1, dtype=np.float64)
    neg_rates = -rates

    def rhs_double(t, y):
        return neg_rates * y

    def rhs_dd(t, y):
        return dd_mul_d(y, neg_rates)

    def analytic(t):
        t = DoubleDouble(float(t.hi), float(t.lo))
        return dd_exp(dd_mul_d(t, neg_rates))

    return IvpProblem(
        name="linear",
        n=n,
        t_start=0.0,
        t_end=LINEAR_T_END,
        y0=DoubleDouble(np.ones(n), np.zeros(n)),
        rhs_double=rhs_double,
        rhs_dd=rhs_dd,
        analytic=analytic,
        params={"n": n},
    )


# ─────────────────────────────────────────────
# RESONANCE PROBLEM
# ─────────────────────────────────────────────

def resonance_problem(alpha: float = DEFAULT_ALPHA) -> IvpProblem:
    """
    y1' = y2,  y2' = -alpha y1^2 sin t + 2 alpha y1 y2 cos t,
    y(0) = [1, alpha], t in [0, 37].

    Solution: y1 = 1 / (1 - alpha sin t), y2 = alpha cos t / (1 - alpha sin t)^2,
    which peaks at about 1 / (1 - alpha) near t = pi/2 + 2 pi k.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    alpha = float(alpha)

    # the Romberg stages revisit the same time points
    @lru_cache(maxsize=_SINCOS_CACHE)
    def sincos(t_hi: float, t_lo: float):
        return dd_sincos(DoubleDouble(t_hi, t_lo))

    def rhs_double(t, y):
        s, c = math.sin(t), math.cos(t)
        return np.array([y[1], -alpha * y[0] * y[0] * s + 2.0 * alpha * y[0] * y[1] * c])

    def rhs_dd(t, y):
        s, c = sincos(float(t.hi), float(t.lo))
        y1 = DoubleDouble(float(y.hi[0]), float(y.lo[0]))
        y2 = DoubleDouble(float(y.hi[1]), float(y.lo[1]))
        a_y1 = dd_mul_d(y1, alpha)
        damping = dd_mul(dd_mul(a_y1, y1), s)
        forcing = dd_mul(dd_mul(dd_mul_d(a_y1, 2.0), y2), c)
        f2 = dd_sub_accurate(forcing, damping)
        return DoubleDouble(np.array([y2.hi, f2.hi]), np.array([y2.lo, f2.lo]))

    def analytic(t):
        s, c = sincos(float(t.hi), float(t.lo))
        den = dd_sub_accurate(_ONE, dd_mul_d(s, alpha))
        y1 = dd_div(_ONE, den)
        y2 = dd_div(dd_mul_d(c, alpha), dd_mul(den, den))
        return DoubleDouble(np.array([y1.hi, y2.hi]), np.array([y1.lo, y2.lo]))

    return IvpProblem(
        name="resonance",
        n=2,
        t_start=0.0,
        t_end=RESONANCE_T_END,
        y0=DoubleDouble(np.array([1.0, alpha]), np.zeros(2)),
        rhs_double=rhs_double,
        rhs_dd=rhs_dd,
        analytic=analytic,
        params={"alpha": alpha},
    )


# ─────────────────────────────────────────────
# ERROR METRIC
# ─────────────────────────────────────────────

def max_rel_error(approx: CompVector, reference: DoubleDouble) -> float:
    """max_k |(v_k + e_k) - ref_k| / |ref_k|, with the difference taken in DD."""
    ref_hi = np.asarray(reference.hi, dtype=np.float64)
    ref_lo = np.broadcast_to(np.asarray(reference.lo, dtype=np.float64), ref_hi.shape)
    if approx.v.shape != ref_hi.shape:
        raise ValueError(f"dimension mismatch: {approx.v.shape} vs {ref_hi.shape}")
    if np.any(ref_hi == 0.0):
        raise ValueError("relative error undefined for a zero reference component")
    diff = dd_sub_accurate(approx.as_dd(), DoubleDouble(ref_hi, ref_lo))
    return float(np.max(np.abs(diff.hi + diff.lo) / np.abs(ref_hi + ref_lo)))
