"""Shared value types, exceptions and input validation helpers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np

SIMPLEX_ATOL = 1e-12


class SteinboundError(ValueError):
    """Base class for all errors raised by this package."""


class PreconditionError(SteinboundError):
    """An argument violates the stated precondition of a bound."""


class AbsoluteContinuityError(SteinboundError):
    """A distribution puts mass where the reference distribution has none."""


class DegenerateSampleError(SteinboundError):
    """A self-normalized quantity has a zero normalizer."""


class EnumerationLimitError(SteinboundError):
    """Exact enumeration would exceed the configured term budget."""


class NumericalOverflowError(SteinboundError, ArithmeticError):
    """An exponential overflowed where saturation would be meaningless."""


@dataclass(frozen=True)
class CategoricalDistribution:
    """Probability vector over ``{0, ..., m-1}``.

    Weights must be nonnegative and sum to one within ``1e-12``.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise PreconditionError("distribution weights must be a nonempty 1-d vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise PreconditionError("distribution weights must be finite and nonnegative")
        if abs(math.fsum(w) - 1.0) > SIMPLEX_ATOL:
            raise PreconditionError(
                f"distribution weights sum to {math.fsum(w)!r}, expected 1 (tol {SIMPLEX_ATOL})"
            )
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_unnormalized(cls, values) -> "CategoricalDistribution":
        v = np.asarray(values, dtype=float)
        total = v.sum()
        if not np.isfinite(total) or total <= 0:
            raise PreconditionError("cannot normalize a vector with nonpositive sum")
        w = v / total
        # push the rounding residue onto the largest entry so the 1e-12 check holds
        w[np.argmax(w)] += 1.0 - math.fsum(w)
        return cls(np.clip(w, 0.0, None))

    @classmethod
    def uniform(cls, m: int) -> "CategoricalDistribution":
        return cls(np.full(m, 1.0 / m)) if _sums_exactly(m) else cls.from_unnormalized(np.ones(m))

    @classmethod
    def point_mass(cls, m: int, j: int) -> "CategoricalDistribution":
        w = np.zeros(m)
        w[j] = 1.0
        return cls(w)

    def __len__(self) -> int:
        return self.weights.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)

    def tolist(self):
        return self.weights.tolist()


def _sums_exactly(m: int) -> bool:
    return abs(math.fsum(np.full(m, 1.0 / m)) - 1.0) <= SIMPLEX_ATOL


def as_distribution(p) -> CategoricalDistribution:
    if isinstance(p, CategoricalDistribution):
        return p
    return CategoricalDistribution(np.asarray(p, dtype=float))


@dataclass(frozen=True)
class ProxyEstimate:
    """A computed variance proxy together with its Monte Carlo error."""

    value: float
    std_error: float
    method: str

    METHODS = ("exact_enumeration", "monte_carlo", "closed_form_bound")

    def __post_init__(self):
        if self.method not in self.METHODS:
            raise PreconditionError(f"unknown proxy method {self.method!r}")
        if not self.value >= 0 or not self.std_error >= 0:
            raise PreconditionError("proxy value and std_error must be nonnegative")
        if self.method == "exact_enumeration" and self.std_error != 0:
            raise PreconditionError("exact enumeration must carry zero std_error")

    def __float__(self) -> float:
        return float(self.value)


@dataclass
class BoundReport:
    """Outcome of a bound computation plus everything needed to audit it.

    ``value`` is a radius for two-sided deviation bounds and a lower bound for
    value bounds (see ``kind``). ``budget`` maps each probabilistic event the
    bound relies on to its share of the failure probability; the reported
    confidence is ``1 - sum(budget.values())`` clipped to ``[0, 1]``.
    """

    value: float
    kind: str
    bound: str
    budget: Dict[str, float]
    proxy: Optional[float] = None
    proxy_mode: Optional[str] = None
    params: Dict[str, Any] = field(default_factory=dict)
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def failure_probability(self) -> float:
        return math.fsum(self.budget.values())

    @property
    def confidence(self) -> float:
        return min(1.0, max(0.0, 1.0 - self.failure_probability))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bound": self.bound,
            "kind": self.kind,
            "value": self.value,
            "confidence": self.confidence,
            "failure_probability": self.failure_probability,
            "budget": dict(self.budget),
            "proxy": self.proxy,
            "proxy_mode": self.proxy_mode,
            "params": dict(self.params),
            "details": dict(self.details),
        }


def check_nonnegative(name: str, value: float) -> float:
    value = float(value)
    if not value >= 0:
        raise PreconditionError(f"{name} must be >= 0, got {value!r}")
    return value


def check_positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0:
        raise PreconditionError(f"{name} must be > 0, got {value!r}")
    return value


def check_x_at_least_two(x: float) -> float:
    x = float(x)
    if not x >= 2:
        raise PreconditionError(f"x ≥ 2 is required for this bound, got x={x!r}")
    return x


def check_vector(name: str, values: Sequence[float], *, nonnegative: bool = False) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise PreconditionError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise PreconditionError(f"{name} must be finite")
    if nonnegative and np.any(arr < 0):
        raise PreconditionError(f"{name} must be nonnegative")
    return arr
