"""Semi-empirical Efron-Stein concentration for a fixed function.

The variance proxy used here is

    V = sum_k E[(f(S) - f(S^(k)))^2 | X_1, ..., X_k],

where ``S^(k)`` replaces the k-th coordinate with an independent copy. It
conditions on the observed prefix only, so it is computable from one sample
whenever the coordinate laws are known.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from ._base import (
    NumericalOverflowError,
    PreconditionError,
    ProxyEstimate,
    check_nonnegative,
    check_positive,
    check_x_at_least_two,
)

# exp() overflows float64 just above this
_EXP_LIMIT = 709.0


@dataclass(frozen=True)
class ReplaceOneFunction:
    """A function of ``n`` independent coordinates that supports replacement.

    Parameters
    ----------
    n : int
        Number of coordinates.
    evaluate : callable
        Maps an array of shape ``(..., n)`` to an array of shape ``(...)``.
        Must be deterministic; it is called on batches of tuples.
    coordinate_sampler : callable
        ``coordinate_sampler(k, size, rng)`` returns ``size`` independent draws
        from the law of coordinate ``k`` (0-based).
    """

    n: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    coordinate_sampler: Callable[[int, int, np.random.Generator], np.ndarray]

    def __post_init__(self):
        if int(self.n) < 1:
            raise PreconditionError("arity n must be a positive integer")

    @classmethod
    def mean_of_iid(cls, n: int, support, probs) -> "ReplaceOneFunction":
        """Mean of ``n`` i.i.d. coordinates with a finite law."""
        support = np.asarray(support, dtype=float)
        probs = np.asarray(probs, dtype=float)

        def sampler(k, size, rng):
            return rng.choice(support, size=size, p=probs)

        return cls(n, lambda s: np.mean(s, axis=-1), sampler)


@dataclass(frozen=True)
class TailParams:
    """Confidence exponent ``x`` and the free scale ``y`` (or a grid of them)."""

    x: float
    y: Optional[float] = None
    y_grid: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        check_nonnegative("x", self.x)
        if self.y is not None:
            check_positive("y", self.y)
        if self.y_grid is not None:
            if len(self.y_grid) == 0:
                raise PreconditionError("y_grid must be nonempty")
            for y in self.y_grid:
                check_positive("y_grid entry", y)

    def resolve_y(self, n: int) -> float:
        return default_y(n) if self.y is None else float(self.y)


def default_y(n: int) -> float:
    """Problem-agnostic scale ``1/n^2``."""
    return 1.0 / float(n) ** 2


def estimate_es_proxy(f: ReplaceOneFunction, sample, inner_reps: int, seed: int) -> ProxyEstimate:
    """Monte Carlo estimate of the semi-empirical Efron-Stein proxy.

    For each coordinate ``k`` the observed prefix ``X_1..X_k`` is held fixed,
    while the tail ``X_{k+1}..X_n`` and the replacement ``X_k'`` are redrawn
    jointly ``inner_reps`` times. The reported standard error combines the
    per-coordinate standard errors in quadrature.
    """
    sample = np.asarray(sample, dtype=float)
    if sample.ndim != 1 or sample.size == 0:
        raise PreconditionError("sample must be a nonempty 1-d tuple")
    n = sample.size
    if n != f.n:
        raise PreconditionError(f"sample has length {n}, function arity is {f.n}")
    inner_reps = int(inner_reps)
    if inner_reps < 1:
        raise PreconditionError("inner_reps must be >= 1")

    rng = np.random.default_rng(seed)
    total = 0.0
    variance = 0.0
    for k in range(n):
        batch = np.broadcast_to(sample, (inner_reps, n)).copy()
        for j in range(k + 1, n):
            batch[:, j] = f.coordinate_sampler(j, inner_reps, rng)
        replaced = batch.copy()
        replaced[:, k] = f.coordinate_sampler(k, inner_reps, rng)
        base = np.asarray(f.evaluate(batch), dtype=float)
        moved = np.asarray(f.evaluate(replaced), dtype=float)
        if not (np.all(np.isfinite(base)) and np.all(np.isfinite(moved))):
            raise PreconditionError(f"evaluate returned a non-finite value at coordinate {k}")
        sq = (base - moved) ** 2
        total += float(sq.mean())
        if inner_reps > 1:
            variance += float(sq.var(ddof=1)) / inner_reps
    return ProxyEstimate(total, math.sqrt(variance), "monte_carlo")


def mean_es_proxy(values, support, probs) -> ProxyEstimate:
    """Exact proxy for the mean of i.i.d. coordinates with a finite law.

    Only coordinate ``k`` changes under replacement, so the tail drops out and
    ``V = n^-2 sum_k E[(X_k - X')^2 | X_k]``.
    """
    values = np.asarray(values, dtype=float)
    support = np.asarray(support, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise PreconditionError("values must be a nonempty 1-d tuple")
    n = values.size
    per_k = ((values[:, None] - support[None, :]) ** 2) @ probs
    return ProxyEstimate(float(per_k.sum()) / n**2, 0.0, "exact_enumeration")


def mean_es_proxy_expectation(n: int, support, probs) -> float:
    """``E[V]`` for :func:`mean_es_proxy`, equal to ``2 Var(X) / n``."""
    support = np.asarray(support, dtype=float)
    probs = np.asarray(probs, dtype=float)
    mean = float(support @ probs)
    return 2.0 * float(((support - mean) ** 2) @ probs) / n


def _logy_radius(v: float, kl: float, x: float, y: float) -> float:
    # shared by the fixed-function and PAC-Bayes radii so that kl=0 agrees bitwise
    return math.sqrt(2.0 * (v + y) * (kl + x * (1.0 + 0.5 * math.log1p(v / y))))


def es_radius_logy(v: float, x: float, y: float) -> float:
    """Radius ``sqrt(2 (v + y) (1 + ln(1 + v/y) / 2) x)``, valid w.p. ``1 - e^-x``.

    Requires ``x >= 2`` and ``y > 0``. An infinite proxy gives an infinite radius.
    """
    v = check_nonnegative("v", v)
    x = check_x_at_least_two(x)
    y = check_positive("y", y)
    if math.isinf(v):
        return math.inf
    return _logy_radius(v, 0.0, x, y)


def es_radius_scale_free(v: float, v_mean: float, x: float) -> float:
    """Radius ``2 sqrt((v + E[v]) x)``, valid w.p. ``1 - sqrt(2) e^-x``."""
    v = check_nonnegative("v", v)
    v_mean = check_nonnegative("v_mean", v_mean)
    x = check_nonnegative("x", x)
    return 2.0 * math.sqrt((v + v_mean) * x)


def select_y(v: float, x: float, y_grid: Sequence[float]) -> Tuple[float, float, float]:
    """Pick the grid scale minimizing :func:`es_radius_logy`.

    Returns ``(y_star, radius, failure_probability)``; the failure probability
    is ``len(y_grid) * e^-x`` since every grid entry, duplicates included,
    costs one union-bound share.
    """
    grid = list(y_grid)
    if not grid:
        raise PreconditionError("y_grid must be nonempty")
    for y in grid:
        check_positive("y_grid entry", y)
    radii = [es_radius_logy(v, x, y) for y in grid]
    best = int(np.argmin(radii))
    return float(grid[best]), radii[best], len(grid) * math.exp(-x)


def canonical_mgf_check(delta_v_samples, lambda_grid) -> Tuple[float, float, float]:
    """Largest sample mean of ``exp(lam * delta - lam^2 * v / 2)`` over the grid.

    ``delta_v_samples`` holds pairs ``(delta, v)`` with ``v`` the variance
    proxy (the square of the second member of the pair). A canonical pair
    keeps every mean at or below one up to Monte Carlo error.

    Returns
    -------
    (max_estimate, max_std_error, argmax_lambda)
    """
    pairs = np.asarray(delta_v_samples, dtype=float)
    lambdas = np.asarray(lambda_grid, dtype=float)
    if pairs.size == 0 or lambdas.size == 0:
        raise PreconditionError("samples and lambda grid must be nonempty")
    pairs = pairs.reshape(-1, 2)
    delta, v = pairs[:, 0], pairs[:, 1]
    if np.any(v < 0):
        raise PreconditionError("variance proxies must be nonnegative")

    best = (-math.inf, 0.0, float(lambdas[0]))
    for lam in lambdas:
        exponent = lam * delta - 0.5 * lam**2 * v
        over = np.flatnonzero(exponent > _EXP_LIMIT)
        if over.size:
            raise NumericalOverflowError(
                f"exp overflow at lambda={float(lam):g}, sample index {int(over[0])}"
            )
        vals = np.exp(exponent)
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        if est > best[0]:
            best = (est, se, float(lam))
    return best


def baseline_radius(kind: str, params: dict, x: float) -> float:
    """Literature radii used for comparison.

    ``self_bounding`` expects ``a, b, mean_f`` and returns
    ``2 sqrt((a mean_f + b) x) + 2 a x``. ``maurer_es`` expects ``a, b, mean_V``
    and returns ``sqrt(2 mean_V x) + (sqrt(2) a + 2 b / 3) x``.
    """
    x = check_nonnegative("x", x)
    a = check_nonnegative("a", params["a"])
    b = check_nonnegative("b", params["b"])
    if kind == "self_bounding":
        mean_f = check_nonnegative("mean_f", params["mean_f"])
        return 2.0 * math.sqrt((a * mean_f + b) * x) + 2.0 * a * x
    if kind == "maurer_es":
        mean_v = check_nonnegative("mean_V", params["mean_V"])
        return math.sqrt(2.0 * mean_v * x) + (math.sqrt(2.0) * a + 2.0 * b / 3.0) * x
    raise PreconditionError(f"unknown baseline kind {kind!r}; expected self_bounding or maurer_es")
