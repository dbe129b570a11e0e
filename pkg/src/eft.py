"""
Error-free transformations and a self-contained double-double (DD) kernel.

Every routine is elementwise: arguments may be Python floats or numpy float64
arrays (with broadcasting) and results come back in the same shape. The
exactness of TwoSum / TwoProd / FMAerror relies on IEEE 754 binary64 with
round-to-nearest-even and gradual underflow; `verify_float_environment`
checks both at start-up.

numpy has no fused multiply-add ufunc. When the `pyfma` extension is
installed, `fma` and `two_prod` use its hardware FMA; otherwise `two_prod`
uses Dekker's splitting and `fma` emulates a correctly rounded a*b+c from the
exact product and a round-to-odd addition. Both paths are held to the same
exactness tests.
"""
import logging
import math
from fractions import Fraction
from typing import NamedTuple

import numpy as np

try:
    import pyfma
except ImportError:
    pyfma = None

log = logging.getLogger(__name__)

# ─────────────────────────────────────────────
# CONSTANTS
# ─────────────────────────────────────────────
UNIT_ROUNDOFF = 2.0 ** -53          # u for binary64, round-to-nearest
DD_EPS = 2.0 ** -104                # one "ulp" of a double-double value
SPLITTER = 134217729.0              # 2**27 + 1
_SPLIT_LIMIT = 2.0 ** 996           # above this SPLITTER * a overflows
_SPLIT_SCALE = 2.0 ** 28

TRIG_ARG_LIMIT = 2.0 ** 40
EXP_ARG_MIN = -660.0                # keeps the trailing word a normal number
EXP_ARG_MAX = 709.0

_EXP_SQUARINGS = 9                  # exp(r) = exp(r / 512) ** 512
_EXP_SCALE = 2.0 ** -_EXP_SQUARINGS
_CONST_BITS = 320

# Elementary operations per call when TwoProd runs on a hardware FMA.
# Documentation only: the two ways of getting a + b with its error cost the same.
OPERATION_COUNTS = {
    "fma_error":         {"add_sub": 17, "mul": 1, "fma": 2},
    "sloppy_dd_add_mul": {"add_sub": 16, "mul": 3, "fma": 1},
}


class DomainError(ValueError):
    """Argument outside the range a DD transcendental supports."""


class SumPair(NamedTuple):
    s: float
    e: float


class FmaTriple(NamedTuple):
    s: float
    e1: float
    e2: float


class DoubleDouble(NamedTuple):
    """Unevaluated sum hi + lo. Fields may be floats or equal-shape arrays."""
    hi: float
    lo: float

    @classmethod
    def from_float(cls, x) -> "DoubleDouble":
        if isinstance(x, np.ndarray):
            x = x.astype(np.float64)
            return cls(x, np.zeros_like(x))
        return cls(float(x), 0.0)

    def to_float(self):
        return self.hi + self.lo


# ─────────────────────────────────────────────
# HELPERS
# ─────────────────────────────────────────────

def _any(mask) -> bool:
    if isinstance(mask, np.ndarray):
        return bool(mask.any())
    return bool(mask)


def _unpack(x: DoubleDouble):
    """Split a DD into (hi, lo, is_scalar) with floats or float64 arrays."""
    if np.ndim(x.hi) == 0 and np.ndim(x.lo) == 0:
        return float(x.hi), float(x.lo), True
    hi = np.asarray(x.hi, dtype=np.float64)
    lo = np.broadcast_to(np.asarray(x.lo, dtype=np.float64), hi.shape)
    return hi, lo, False


def verify_float_environment() -> None:
    """
    Raise RuntimeError unless binary64 rounds to nearest-even and keeps
    subnormals, for both Python floats and numpy arrays.
    """
    one = np.array([1.0, 1.0 + 2.0 ** -52])
    ties = one + UNIT_ROUNDOFF
    if 1.0 + UNIT_ROUNDOFF != 1.0 or ties[0] != 1.0 or ties[1] != 1.0 + 2.0 ** -51:
        raise RuntimeError("binary64 arithmetic is not round-to-nearest-even")
    tiny = np.array([2.0 ** -1022]) / 2.0
    if not (2.0 ** -1022 / 2.0 > 0.0 and tiny[0] > 0.0):
        raise RuntimeError("subnormal numbers are flushed to zero")
    log.debug("Float environment OK: round-to-nearest-even, gradual underflow.")


# ─────────────────────────────────────────────
# ERROR-FREE TRANSFORMATIONS
# ─────────────────────────────────────────────

def two_sum(a, b) -> SumPair:
    """s = fl(a + b) and e with s + e == a + b exactly (no ordering needed)."""
    s = a + b
    v = s - a
    e = (a - (s - v)) + (b - v)
    return SumPair(s, e)


def quick_two_sum(a, b) -> SumPair:
    """
    Like `two_sum` but three operations cheaper. Exact only when |a| >= |b|
    (or a == 0); otherwise e is silently inexact.
    """
    s = a + b
    e = b - (s - a)
    return SumPair(s, e)


def _split(a):
    """Dekker split a == hi + lo with both halves on at most 26 bits."""
    big = abs(a) > _SPLIT_LIMIT
    if _any(big):
        scaled = np.where(big, a / _SPLIT_SCALE, a)
        c = SPLITTER * scaled
        hi = c - (c - scaled)
        lo = scaled - hi
        return np.where(big, hi * _SPLIT_SCALE, hi), np.where(big, lo * _SPLIT_SCALE, lo)
    c = SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _scalar_or_array(x):
    if np.ndim(x) == 0:
        return float(x)
    return x


def two_prod(a, b) -> SumPair:
    """s = fl(a * b) and e = a*b - s exactly, barring over/underflow of a*b."""
    p = a * b
    if pyfma is not None:
        return SumPair(p, _scalar_or_array(pyfma.fma(a, b, -p)))
    ahi, alo = _split(a)
    bhi, blo = _split(b)
    e = ((ahi * bhi - p) + ahi * blo + alo * bhi) + alo * blo
    return SumPair(p, e)


def _round_to_odd(v, err):
    """Turn v = RN(x), err = x - v into the round-to-odd value of x."""
    bits = np.asarray(v, dtype=np.float64).view(np.int64)
    nudge = (err != 0) & ((bits & 1) == 0)
    if _any(nudge):
        v = np.where(nudge, np.nextafter(v, np.copysign(np.inf, err)), v)
    return v


def _round_three(th, tl, ul, fallback):
    """
    RN(a + b + c) from (uh, ul) = TwoSum(b, c) and (th, tl) = TwoSum(a, uh).
    The tail tl + ul is rounded to odd before the last addition, so the
    result is rounded once. Non-finite results are replaced by `fallback`.
    """
    v, err = two_sum(tl, ul)
    s = th + _round_to_odd(v, err)
    bad = ~np.isfinite(s)
    if _any(bad):
        s = np.where(bad, fallback, s)
    return _scalar_or_array(s)


def fma(a, b, c):
    """Correctly rounded a*b + c (single rounding)."""
    if pyfma is not None:
        return _scalar_or_array(pyfma.fma(a, b, c))
    uh, ul = two_prod(a, b)
    th, tl = two_sum(c, uh)
    return _round_three(th, tl, ul, uh + c)


def fma_error(a, x, y) -> FmaTriple:
    """
    s = fma(a, x, y) together with e1, e2 such that s + e1 + e2 == a*x + y
    exactly and |e2| <= ulp(e1) / 2.

    Without a hardware FMA, s is rounded from the same two TwoSums that give
    the error terms.
    """
    u1, u2 = two_prod(a, x)
    alpha1, alpha2 = two_sum(y, u2)
    beta1, beta2 = two_sum(u1, alpha1)
    if pyfma is not None:
        s = _scalar_or_array(pyfma.fma(a, x, y))
    else:
        s = _round_three(beta1, beta2, alpha2, u1 + y)
    gamma = (beta1 - s) + beta2
    e1, e2 = quick_two_sum(gamma, alpha2)
    return FmaTriple(s, e1, e2)


# ─────────────────────────────────────────────
# DOUBLE-DOUBLE ARITHMETIC
# ─────────────────────────────────────────────

def dd_neg(a: DoubleDouble) -> DoubleDouble:
    return DoubleDouble(-a.hi, -a.lo)


def dd_add(a: DoubleDouble, b: DoubleDouble) -> DoubleDouble:
    """Sloppy DD addition (the cheap variant DD libraries default to)."""
    s, e = two_sum(a.hi, b.hi)
    e = e + (a.lo + b.lo)
    return DoubleDouble(*quick_two_sum(s, e))


def dd_add_accurate(a: DoubleDouble, b: DoubleDouble) -> DoubleDouble:
    """DD addition that keeps a relative error bound under cancellation."""
    s1, s2 = two_sum(a.hi, b.hi)
    t1, t2 = two_sum(a.lo, b.lo)
    s1, s2 = quick_two_sum(s1, s2 + t1)
    return DoubleDouble(*quick_two_sum(s1, s2 + t2))


def dd_sub(a: DoubleDouble, b: DoubleDouble) -> DoubleDouble:
    return dd_add(a, dd_neg(b))


def dd_sub_accurate(a: DoubleDouble, b: DoubleDouble) -> DoubleDouble:
    return dd_add_accurate(a, dd_neg(b))


def dd_mul(a: DoubleDouble, b: DoubleDouble) -> DoubleDouble:
    p, e = two_prod(a.hi, b.hi)
    e = e + (a.hi * b.lo + a.lo * b.hi)
    return DoubleDouble(*quick_two_sum(p, e))


def dd_mul_d(a: DoubleDouble, b) -> DoubleDouble:
    """DD times a binary64 value (or array)."""
    p, e = two_prod(a.hi, b)
    e = e + a.lo * b
    return DoubleDouble(*quick_two_sum(p, e))


def dd_div(a: DoubleDouble, b: DoubleDouble) -> DoubleDouble:
    """Three-quotient DD division; raises ZeroDivisionError if b == 0."""
    if _any(np.asarray(b.hi) == 0.0):
        raise ZeroDivisionError("double-double division by zero")
    q1 = a.hi / b.hi
    r = dd_sub_accurate(a, dd_mul_d(b, q1))
    q2 = r.hi / b.hi
    r = dd_sub_accurate(r, dd_mul_d(b, q2))
    q3 = r.hi / b.hi
    q1, q2 = quick_two_sum(q1, q2)
    return dd_add_accurate(DoubleDouble(q1, q2), DoubleDouble(q3, 0.0))


# ─────────────────────────────────────────────
# CONSTANTS FROM EXACT INTEGER SERIES
# ─────────────────────────────────────────────

def _arctan_inv(x: int, bits: int, hyperbolic: bool = False) -> int:
    """atan(1/x) (or atanh(1/x)) scaled by 2**bits, truncated series."""
    term = (1 << bits) // x
    total = term
    x2 = x * x
    n = 1
    sign = 1
    while term:
        term //= x2
        n += 2
        if not hyperbolic:
            sign = -sign
        total += sign * (term // n)
    return total


def _expansion(value: Fraction, parts: int) -> tuple[float, ...]:
    """Non-overlapping binary64 expansion of an exact rational."""
    terms = []
    rest = value
    for _ in range(parts):
        f = float(rest)
        terms.append(f)
        rest -= Fraction(f)
    return tuple(terms)


def dd_from_fraction(value: Fraction) -> DoubleDouble:
    return DoubleDouble(*_expansion(value, 2))


_PI_EXACT = Fraction(
    16 * _arctan_inv(5, _CONST_BITS) - 4 * _arctan_inv(239, _CONST_BITS),
    1 << _CONST_BITS,
)
_LN2_EXACT = Fraction(2 * _arctan_inv(3, _CONST_BITS, hyperbolic=True), 1 << _CONST_BITS)

_PIO2 = _expansion(_PI_EXACT / 2, 3)
_LN2 = _expansion(_LN2_EXACT, 3)
DD_PI = dd_from_fraction(_PI_EXACT)
DD_LN2 = dd_from_fraction(_LN2_EXACT)

_ONE = DoubleDouble(1.0, 0.0)
_EXP_COEFFS = tuple(dd_from_fraction(Fraction(1, math.factorial(k + 1))) for k in range(10))
_SIN_COEFFS = tuple(dd_from_fraction(Fraction((-1) ** k, math.factorial(2 * k + 1))) for k in range(15))
_COS_COEFFS = tuple(dd_from_fraction(Fraction((-1) ** k, math.factorial(2 * k))) for k in range(16))


# ─────────────────────────────────────────────
# DD TRANSCENDENTALS
# ─────────────────────────────────────────────

def _nearest_int(x, scalar: bool):
    return float(round(x)) if scalar else np.rint(x)


def _reduce(hi, lo, const: tuple[float, float, float], scalar: bool):
    """
    k = nearest integer to x / C and r = x - k*C as a DD, where C is given as
    a three-term expansion. hi - k*C[0] is exact (Sterbenz) whenever k != 0.
    """
    k = _nearest_int(hi / const[0], scalar)
    p1, e1 = two_prod(k, const[0])
    p2, e2 = two_prod(k, const[1])
    r = DoubleDouble(*two_sum(hi - p1, lo))
    small = dd_add_accurate(DoubleDouble(p2, e2), DoubleDouble(e1, 0.0))
    small = dd_add_accurate(small, DoubleDouble(k * const[2], 0.0))
    return k, dd_sub_accurate(r, small)


def _horner(coeffs, z: DoubleDouble) -> DoubleDouble:
    acc = coeffs[-1]
    for coeff in reversed(coeffs[:-1]):
        acc = dd_add_accurate(dd_mul(acc, z), coeff)
    return acc


def _check_range(hi, lo_limit: float, hi_limit: float, name: str, scalar: bool) -> None:
    ok = (lo_limit <= hi <= hi_limit) if scalar else bool(np.all((hi >= lo_limit) & (hi <= hi_limit)))
    if not ok:
        raise DomainError(f"{name} argument outside [{lo_limit:g}, {hi_limit:g}]")


def _select(q, options: tuple[DoubleDouble, ...], scalar: bool) -> DoubleDouble:
    if scalar:
        return options[int(q)]
    his = [np.broadcast_to(o.hi, q.shape) for o in options]
    los = [np.broadcast_to(o.lo, q.shape) for o in options]
    return DoubleDouble(np.choose(q, his), np.choose(q, los))


def dd_sincos(t: DoubleDouble) -> tuple[DoubleDouble, DoubleDouble]:
    """(sin t, cos t) in DD precision for |t| <= 2**40."""
    hi, lo, scalar = _unpack(t)
    _check_range(hi, -TRIG_ARG_LIMIT, TRIG_ARG_LIMIT, "sin/cos", scalar)
    k, r = _reduce(hi, lo, _PIO2, scalar)
    z = dd_mul(r, r)
    s = dd_mul(_horner(_SIN_COEFFS, z), r)
    c = _horner(_COS_COEFFS, z)
    q = int(k) % 4 if scalar else np.mod(k, 4).astype(np.int64)
    ns, nc = dd_neg(s), dd_neg(c)
    return (
        _select(q, (s, c, ns, nc), scalar),
        _select(q, (c, ns, nc, s), scalar),
    )


def dd_sin(t: DoubleDouble) -> DoubleDouble:
    return dd_sincos(t)[0]


def dd_cos(t: DoubleDouble) -> DoubleDouble:
    return dd_sincos(t)[1]


def _ldexp(x, m, scalar: bool):
    if scalar:
        return math.ldexp(x, int(m))
    return np.ldexp(x, m.astype(np.int64))


def dd_exp(x: DoubleDouble) -> DoubleDouble:
    """
    exp in DD precision for arguments in [EXP_ARG_MIN, EXP_ARG_MAX].

    x = m*ln2 + r, then exp(r) from a Taylor core on r/512 followed by nine
    squarings carried as s -> 2s + s**2 (s = exp(.) - 1) to avoid cancellation.
    """
    hi, lo, scalar = _unpack(x)
    _check_range(hi, EXP_ARG_MIN, EXP_ARG_MAX, "exp", scalar)
    m, r = _reduce(hi, lo, _LN2, scalar)
    r = DoubleDouble(r.hi * _EXP_SCALE, r.lo * _EXP_SCALE)
    s = dd_mul(_horner(_EXP_COEFFS, r), r)
    for _ in range(_EXP_SQUARINGS):
        s = dd_add_accurate(DoubleDouble(2.0 * s.hi, 2.0 * s.lo), dd_mul(s, s))
    s = dd_add_accurate(s, _ONE)
    return DoubleDouble(_ldexp(s.hi, m, scalar), _ldexp(s.lo, m, scalar))
