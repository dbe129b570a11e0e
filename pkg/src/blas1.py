"""
BLAS level-1 kernels: plain AXPY / SCAL, their error-evaluating versions built
on the error-free transformations, and the Møller compensated update.

All vectors are dense, contiguous float64 arrays. Kernels never modify their
arguments; they return fresh arrays.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from src.eft import DoubleDouble, fma_error, quick_two_sum, two_prod, two_sum


# ─────────────────────────────────────────────
# TYPES
# ─────────────────────────────────────────────

class CompScalar(NamedTuple):
    """Scalar principal value v with its accumulated error e."""
    v: float
    e: float = 0.0

    @classmethod
    def from_dd(cls, x: DoubleDouble) -> "CompScalar":
        return cls(float(x.hi), float(x.lo))

    def as_dd(self) -> DoubleDouble:
        return DoubleDouble(*two_sum(self.v, self.e))

    def value(self) -> float:
        return self.v + self.e


@dataclass
class CompVector:
    """
    n-vector of principal values paired with an n-vector of error terms.
    The represented value of component k is v[k] + e[k]; the pair is not kept
    normalized.
    """
    v: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.e = np.asarray(self.e, dtype=np.float64)
        if self.v.ndim != 1 or self.v.shape != self.e.shape:
            raise ValueError(f"v and e must be 1-D of equal length, got {self.v.shape} and {self.e.shape}")
        if self.v.size < 1:
            raise ValueError("CompVector needs at least one component")

    @property
    def n(self) -> int:
        return self.v.size

    @classmethod
    def from_values(cls, v) -> "CompVector":
        v = np.array(v, dtype=np.float64)
        return cls(v, np.zeros_like(v))

    @classmethod
    def from_dd(cls, x: DoubleDouble) -> "CompVector":
        hi = np.array(x.hi, dtype=np.float64, ndmin=1)
        return cls(hi, np.broadcast_to(np.asarray(x.lo, dtype=np.float64), hi.shape).copy())

    def as_dd(self) -> DoubleDouble:
        """Normalized (hi, lo) view of the represented values."""
        return DoubleDouble(*two_sum(self.v, self.e))

    def value(self) -> np.ndarray:
        return self.v + self.e

    def copy(self) -> "CompVector":
        return CompVector(self.v.copy(), self.e.copy())


def _check_dims(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")


# ─────────────────────────────────────────────
# PLAIN BLAS1
# ─────────────────────────────────────────────

def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """y := alpha * x + y"""
    _check_dims(x, y)
    return alpha * x + y


def scal(alpha: float, x: np.ndarray) -> np.ndarray:
    """x := alpha * x"""
    return alpha * x


# ─────────────────────────────────────────────
# BLAS1 WITH ERROR EVALUATION
# ─────────────────────────────────────────────

def axpy_error(alpha: CompScalar, x: CompVector, y: CompVector) -> CompVector:
    """
    (y, e_y) := AXPYerror(alpha, e_alpha, x, e_x, y, e_y).

    The error terms are summed strictly left to right,
    e1 + e2 + alpha*e_x + e_alpha*x + e_y, so results are bit-reproducible.
    """
    _check_dims(x.v, y.v)
    s, e1, e2 = fma_error(alpha.v, x.v, y.v)
    e = e1 + e2 + alpha.v * x.e + alpha.e * x.v + y.e
    return CompVector(s, e)


def scal_error(alpha: CompScalar, x: CompVector) -> CompVector:
    """(x, e_x) := SCALerror(alpha, e_alpha, x, e_x); output is normalized."""
    w1, w2 = two_prod(alpha.v, x.v)
    w2 = alpha.v * x.e + alpha.e * (x.v + x.e) + w2
    return CompVector(*quick_two_sum(w1, w2))


def moller_update(S: np.ndarray, Rp: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    One step of Møller's compensated summation S := S + z, with Rp the
    residual still owed to S. Compensation is exact only while |S| >= |z + Rp|.
    """
    _check_dims(S, z)
    _check_dims(S, Rp)
    s = z + Rp
    S_new, Rp_new = quick_two_sum(S, s)
    return S_new, Rp_new


def norm_inf(x: CompVector) -> float:
    """max_k |v_k + e_k|"""
    return float(np.max(np.abs(x.v + x.e)))
