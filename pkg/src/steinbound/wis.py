"""Weighted importance sampling with untruncated weights.

Covers the self-normalized estimator, the exact law of the importance
weights, the weight-sum lower tail ``N_x(n)``, the variance proxy of the
weighted average (exact, Monte Carlo, and two closed-form upper bounds), and
the resulting lower bound on a target policy's value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ._base import (
    AbsoluteContinuityError,
    BoundReport,
    CategoricalDistribution,
    DegenerateSampleError,
    EnumerationLimitError,
    PreconditionError,
    ProxyEstimate,
    as_distribution,
    check_nonnegative,
    check_positive,
    check_vector,
    check_x_at_least_two,
)
from .concentration import default_y

ENUMERATION_LIMIT = 10**7
PROXY_MODES = ("perk", "global", "bruteforce", "mc")


@dataclass(frozen=True)
class LoggedData:
    """Actions in ``[0, K)`` and rewards in ``[0, 1]`` logged by a behavior policy."""

    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        actions = np.asarray(self.actions)
        rewards = check_vector("rewards", self.rewards)
        if actions.ndim != 1 or actions.size != rewards.size:
            raise PreconditionError("actions and rewards must be 1-d with equal lengths")
        if actions.size and not np.issubdtype(actions.dtype, np.integer):
            if not np.all(actions == np.round(actions)):
                raise PreconditionError("actions must be integers")
        actions = actions.astype(np.int64)
        if np.any(actions < 0):
            raise PreconditionError("actions must be nonnegative")
        if np.any((rewards < 0) | (rewards > 1)):
            raise PreconditionError("rewards must lie in [0, 1]")
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "rewards", rewards)

    @property
    def n(self) -> int:
        return self.actions.size

    def check_actions(self, n_actions: int) -> None:
        if self.n and self.actions.max() >= n_actions:
            raise PreconditionError(
                f"action {int(self.actions.max())} out of range for {n_actions} actions"
            )


@dataclass(frozen=True)
class WeightMoments:
    """First and second moment of a single importance weight."""

    m1: float
    m2: float

    def __post_init__(self):
        check_positive("m1", self.m1)
        if not self.m2 >= self.m1**2 * (1 - 1e-12):
            raise PreconditionError(f"m2={self.m2!r} violates m2 >= m1^2={self.m1**2!r}")


@dataclass(frozen=True)
class WeightPmf:
    """Finite law of an importance weight: distinct support values and their probabilities."""

    support: np.ndarray
    probs: CategoricalDistribution

    def __post_init__(self):
        support = check_vector("support", self.support, nonnegative=True)
        probs = as_distribution(self.probs)
        if support.size != len(probs):
            raise PreconditionError("support and probabilities must have equal lengths")
        if np.unique(support).size != support.size:
            raise PreconditionError("support values must be distinct")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    @property
    def size(self) -> int:
        return self.support.size

    def moments(self) -> WeightMoments:
        p = self.probs.weights
        return WeightMoments(float(self.support @ p), float(self.support**2 @ p))


class VwaBound(NamedTuple):
    """Upper bound on the proxy; ``degenerate_k`` is the first 1-based index
    whose denominator vanished (then ``value`` is infinite)."""

    value: float
    degenerate_k: Optional[int]


def _policy_pair(target, behavior):
    target = as_distribution(target)
    behavior = as_distribution(behavior)
    if len(target) != len(behavior):
        raise PreconditionError(
            f"target has {len(target)} actions, behavior has {len(behavior)}"
        )
    return target.weights, behavior.weights


def importance_weights(target, behavior, actions) -> np.ndarray:
    """``W_k = target(A_k) / behavior(A_k)``."""
    pi, pib = _policy_pair(target, behavior)
    actions = np.asarray(actions, dtype=np.int64)
    if actions.size and (actions.min() < 0 or actions.max() >= pib.size):
        raise PreconditionError("logged action out of range")
    denom = pib[actions]
    zero = np.flatnonzero(denom == 0)
    if zero.size:
        raise AbsoluteContinuityError(
            f"behavior probability is 0 at logged action index {int(zero[0])}"
        )
    return pi[actions] / denom


def wis_estimate(weights, rewards) -> float:
    """Self-normalized estimate ``sum W R / sum W``."""
    weights = check_vector("weights", weights, nonnegative=True)
    rewards = check_vector("rewards", rewards)
    if weights.size != rewards.size:
        raise PreconditionError("weights and rewards must have equal lengths")
    total = math.fsum(weights)
    if total == 0:
        raise DegenerateSampleError("importance weights sum to zero")
    return math.fsum(weights * rewards) / total


def weight_moments(target, behavior) -> WeightMoments:
    """Exact ``E[W]`` and ``E[W^2]`` of the importance weight under the behavior policy."""
    pi, pib = _policy_pair(target, behavior)
    bad = np.flatnonzero((pi > 0) & (pib == 0))
    if bad.size:
        raise AbsoluteContinuityError(
            f"target puts mass on action {int(bad[0])} which behavior never plays"
        )
    live = pib > 0
    m2 = math.fsum(pi[live] ** 2 / pib[live])
    return WeightMoments(1.0, max(m2, 1.0))


def weight_pmf(target, behavior) -> WeightPmf:
    """Law of ``target(A) / behavior(A)`` for ``A ~ behavior``, duplicates merged."""
    pi, pib = _policy_pair(target, behavior)
    weight_moments(target, behavior)  # absolute continuity check
    live = pib > 0
    ratios = pi[live] / pib[live]
    support, inverse = np.unique(ratios, return_inverse=True)
    probs = np.zeros(support.size)
    np.add.at(probs, inverse, pib[live])
    return WeightPmf(support, CategoricalDistribution.from_unnormalized(probs))


def effective_n(n: int, x: float, moments: WeightMoments) -> float:
    """``N_x(n) = (n E[W] - sqrt(2 x n E[W^2]))_+``.

    The sum of ``n`` i.i.d. weights exceeds this w.p. at least ``1 - e^-x``.
    """
    x = check_positive("x", x)
    n = int(n)
    if n < 0:
        raise PreconditionError("n must be nonnegative")
    return max(0.0, n * moments.m1 - math.sqrt(2.0 * x * n * moments.m2))


def _check_weights(weights) -> np.ndarray:
    w = check_vector("weights", weights, nonnegative=True)
    if w.size == 0:
        raise PreconditionError("weights must be nonempty")
    return w


def _pmf_arrays(pmf: WeightPmf):
    return pmf.support, pmf.probs.weights


def vwa_bruteforce(weights, pmf: WeightPmf) -> float:
    """Exact proxy of the weighted average by full enumeration.

    For each ``k`` every assignment of the tail ``W_{k+1..n}`` and of the
    replacement ``W_k'`` is enumerated with its product probability. The
    total number of terms, ``sum_k |support|^(n-k+1)``, must stay below
    ``ENUMERATION_LIMIT``.
    """
    w = _check_weights(weights)
    support, probs = _pmf_arrays(pmf)
    n, m = w.size, support.size
    total_terms = sum(m ** (n - k) for k in range(n))
    if total_terms > ENUMERATION_LIMIT:
        raise EnumerationLimitError(
            f"enumeration needs {total_terms} terms, limit is {ENUMERATION_LIMIT}"
        )
    prefix_excl = np.concatenate(([0.0], np.cumsum(w)[:-1]))
    prefix_incl = np.cumsum(w)

    # tail laws built from the back: position n-1 has an empty tail
    tail_sums = np.zeros(1)
    tail_probs = np.ones(1)
    total = 0.0
    for k in range(n - 1, -1, -1):
        denom_w = prefix_incl[k] + tail_sums
        denom_u = support[None, :] + prefix_excl[k] + tail_sums[:, None]
        if np.any(denom_w == 0) or np.any(denom_u == 0):
            raise DegenerateSampleError(
                f"all-zero weight configuration at coordinate {k}; the pmf is degenerate"
            )
        # expectations are normalized by the total mass, reduced the same way,
        # so that ratios identically 1 give exactly 1 despite rounded pmfs
        ratio_sq = (support[None, :] / denom_u) ** 2
        u_cond = (ratio_sq * probs).sum(axis=1) / (np.ones_like(ratio_sq) * probs).sum(axis=1)
        tail_mass = math.fsum(tail_probs)
        w_term = math.fsum(tail_probs * (w[k] / denom_w) ** 2) / tail_mass
        u_term = math.fsum(tail_probs * u_cond) / tail_mass
        total += w_term + u_term
        # extend the tail by coordinate k for the next (smaller) index
        tail_sums = (support[:, None] + tail_sums[None, :]).ravel()
        tail_probs = (probs[:, None] * tail_probs[None, :]).ravel()
    return float(total)


def vwa_mc(weights, pmf: WeightPmf, inner_reps: int, seed: int) -> ProxyEstimate:
    """Monte Carlo version of :func:`vwa_bruteforce`.

    Each replicate draws one fresh weight sequence and one replacement per
    coordinate; the tail of coordinate ``k`` is the suffix after ``k``, so
    every coordinate sees the correct joint law. Tails are shared across
    coordinates within a replicate, hence the standard error is taken from
    the per-replicate totals. A one-point pmf has nothing to sample and is
    computed exactly.
    """
    w = _check_weights(weights)
    inner_reps = int(inner_reps)
    if inner_reps < 1:
        raise PreconditionError("inner_reps must be >= 1")
    support, probs = _pmf_arrays(pmf)
    if support.size == 1:
        return ProxyEstimate(vwa_bruteforce(w, pmf), 0.0, "monte_carlo")

    n = w.size
    rng = np.random.default_rng(seed)
    draws = support[rng.choice(support.size, size=(inner_reps, n), p=probs)]
    repl = support[rng.choice(support.size, size=(inner_reps, n), p=probs)]
    # suffix sums strictly after each coordinate
    tail_sums = np.cumsum(draws[:, ::-1], axis=1)[:, ::-1] - draws
    prefix_incl = np.cumsum(w)
    prefix_excl = prefix_incl - w
    denom_w = prefix_incl + tail_sums
    denom_u = repl + prefix_excl + tail_sums
    bad = np.flatnonzero(np.any(denom_w == 0, axis=0) | np.any(denom_u == 0, axis=0))
    if bad.size:
        raise DegenerateSampleError(
            f"all-zero weight configuration at coordinate {int(bad[0])}; the pmf is degenerate"
        )
    totals = ((w / denom_w) ** 2 + (repl / denom_u) ** 2).sum(axis=1)
    se = float(totals.std(ddof=1)) / math.sqrt(inner_reps) if inner_reps > 1 else 0.0
    return ProxyEstimate(float(totals.mean()), se, "monte_carlo")


def vwa_bound_perk(weights, moments: WeightMoments, x: float) -> VwaBound:
    """Per-coordinate upper bound on the proxy, valid w.p. ``1 - n e^-x``.

    ``sum_k W_k^2 / (sum_{i<=k} W_i + N_x(n-k))^2
    + E[W'^2] / (sum_{i<k} W_i + N_x(n-k+1))^2`` with ``N_x(0) = 0``.
    """
    w = _check_weights(weights)
    x = check_positive("x", x)
    n = w.size
    big_n = np.array([effective_n(j, x, moments) for j in range(n + 1)])
    ks = np.arange(1, n + 1)
    prefix_incl = np.cumsum(w)
    prefix_excl = prefix_incl - w
    d1 = prefix_incl + big_n[n - ks]
    d2 = prefix_excl + big_n[n - ks + 1]
    zero = np.flatnonzero((d1 == 0) | (d2 == 0))
    if zero.size:
        return VwaBound(math.inf, int(zero[0]) + 1)
    return VwaBound(math.fsum(w**2 / d1**2 + moments.m2 / d2**2), None)


def vwa_bound_global(weights, moments: WeightMoments, x: float) -> VwaBound:
    """``N_x(n)^-2 sum_k (W_k^2 + E[W'^2])``, valid w.p. ``1 - n e^-x``."""
    w = _check_weights(weights)
    x = check_positive("x", x)
    big_n = effective_n(w.size, x, moments)
    if big_n == 0:
        return VwaBound(math.inf, 1)
    return VwaBound(math.fsum(w**2 + moments.m2) / big_n**2, None)


def wis_concentration_radius(vwa: float, x: float, y: float) -> float:
    """``sqrt(2 (2V + y) (1 + ln sqrt(1 + 2V/y)) x)``, valid w.p. ``1 - e^-x``.

    The doubled proxy accounts for the weighted average's Efron-Stein proxy
    being at most twice ``V``.
    """
    vwa = check_nonnegative("vwa", vwa)
    x = check_x_at_least_two(x)
    y = check_positive("y", y)
    if math.isinf(vwa):
        return math.inf
    v2 = 2.0 * vwa
    return math.sqrt(2.0 * (v2 + y) * (1.0 + 0.5 * math.log1p(v2 / y)) * x)


def wis_proxy(weights, target, behavior, x: float, proxy_mode: str,
              inner_reps: int = 256, seed: int = 0) -> tuple[float, dict]:
    """Proxy of the weighted average in the requested mode, plus diagnostics."""
    if proxy_mode not in PROXY_MODES:
        raise PreconditionError(f"unknown proxy_mode {proxy_mode!r}; expected one of {PROXY_MODES}")
    if proxy_mode == "perk":
        b = vwa_bound_perk(weights, weight_moments(target, behavior), x)
        return b.value, {"degenerate_k": b.degenerate_k}
    if proxy_mode == "global":
        b = vwa_bound_global(weights, weight_moments(target, behavior), x)
        return b.value, {"degenerate_k": b.degenerate_k}
    pmf = weight_pmf(target, behavior)
    if proxy_mode == "bruteforce":
        return vwa_bruteforce(weights, pmf), {}
    est = vwa_mc(weights, pmf, inner_reps, seed)
    return est.value, {"proxy_std_error": est.std_error, "inner_reps": int(inner_reps)}


def proxy_budget(proxy_mode: str, n: int, x: float) -> dict:
    """Failure-probability shares consumed by the proxy computation itself."""
    if proxy_mode in ("perk", "global"):
        # lower tails of the weight sums for lengths 1..n; the length-n event
        # is the one the bias step of the value bound relies on as well
        return {"weight_sum_lower_tails": n * math.exp(-x)}
    return {"weight_sum_lower_tail": math.exp(-x)}


def opev_lower_bound(data: LoggedData, target, behavior, x: float, y: Optional[float] = None,
                     proxy_mode: str = "global", inner_reps: int = 256, seed: int = 0) -> BoundReport:
    """Lower confidence bound on ``v(target)`` from logged data.

    ``(N_x(n)/n) * (v_wis - radius)_+`` where the radius comes from
    :func:`wis_concentration_radius` on the selected proxy. The failure
    budget is ``(n+1) e^-x`` for the closed-form proxies and ``2 e^-x`` for
    the exact (enumerated or simulated) proxy.
    """
    x = check_x_at_least_two(x)
    n = data.n
    if n == 0:
        raise PreconditionError("logged data is empty")
    y = default_y(n) if y is None else check_positive("y", y)
    pi, pib = _policy_pair(target, behavior)
    data.check_actions(pib.size)
    weights = importance_weights(pi, pib, data.actions)
    v_hat = wis_estimate(weights, data.rewards)
    proxy, diag = wis_proxy(weights, pi, pib, x, proxy_mode, inner_reps, seed)
    radius = wis_concentration_radius(proxy, x, y)
    moments = weight_moments(pi, pib)
    big_n = effective_n(n, x, moments)
    value = big_n / n * max(0.0, v_hat - radius)
    budget = {"wis_concentration": math.exp(-x)}
    budget.update(proxy_budget(proxy_mode, n, x))
    return BoundReport(
        value=value,
        kind="lower_bound",
        bound="wis_off_policy_evaluation",
        budget=budget,
        proxy=proxy,
        proxy_mode=proxy_mode,
        params={"x": x, "y": y, "n": n},
        details={"v_hat": v_hat, "radius": radius, "effective_n": big_n,
                 "m2": moments.m2, **diag},
    )
