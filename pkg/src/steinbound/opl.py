"""PAC-Bayesian off-policy learning over a finite policy class.

Every quantity in the lower bound except the KL term is an average over the
posterior of per-policy statistics, so :func:`policy_statistics` computes
those once and the bound for any posterior is a cheap reassembly. The
optimizer relies on this.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ._base import (
    BoundReport,
    CategoricalDistribution,
    DegenerateSampleError,
    PreconditionError,
    SteinboundError,
    as_distribution,
    check_positive,
    check_x_at_least_two,
)
from .concentration import default_y
from .pac_bayes import kl_categorical, posterior_mean
from .wis import (
    PROXY_MODES,
    LoggedData,
    effective_n,
    importance_weights,
    proxy_budget,
    weight_moments,
    wis_estimate,
    wis_proxy,
)


@dataclass(frozen=True)
class FinitePolicyClass:
    """``m`` target policies over ``K`` actions, stored as an ``(m, K)`` matrix."""

    policies: np.ndarray

    def __post_init__(self):
        rows = [as_distribution(p).weights for p in np.asarray(self.policies, dtype=float)]
        if not rows:
            raise PreconditionError("policy class must be nonempty")
        if len({r.size for r in rows}) != 1:
            raise PreconditionError("all policies must share the action count")
        arr = np.vstack(rows)
        arr.setflags(write=False)
        object.__setattr__(self, "policies", arr)

    @property
    def m(self) -> int:
        return self.policies.shape[0]

    @property
    def n_actions(self) -> int:
        return self.policies.shape[1]

    def __getitem__(self, j: int) -> np.ndarray:
        return self.policies[j]

    def mixture(self, posterior) -> np.ndarray:
        """Action distribution of the Gibbs policy that samples ``theta`` then acts."""
        return as_distribution(posterior).weights @ self.policies


@dataclass
class LearnConfig:
    """Settings for :func:`optimize_posterior`."""

    x: float = 3.0
    y: Optional[float] = None
    step_size: float = 1.0
    max_iters: int = 50
    gradient_epsilon: float = 1e-4
    proxy_mode: str = "global"
    seed: int = 0
    inner_reps: int = 256

    def __post_init__(self):
        check_x_at_least_two(self.x)
        if self.y is not None:
            check_positive("y", self.y)
        check_positive("step_size", self.step_size)
        check_positive("gradient_epsilon", self.gradient_epsilon)
        if int(self.max_iters) < 1:
            raise PreconditionError("max_iters must be a positive integer")
        if self.proxy_mode not in PROXY_MODES:
            raise PreconditionError(f"unknown proxy_mode {self.proxy_mode!r}")


@dataclass
class PosteriorState:
    posterior: CategoricalDistribution
    objective: float
    objective_trace: List[float] = field(default_factory=list)
    posterior_trace: List[np.ndarray] = field(default_factory=list)


@dataclass(frozen=True)
class PolicyStatistics:
    """Per-policy ingredients of the learning bound.

    ``values`` and ``proxies`` may be NaN/inf for policies whose weight sum is
    zero on the data; such policies must get zero posterior mass.
    """

    values: np.ndarray
    bias_ratios: np.ndarray
    proxies: np.ndarray
    effective_ns: np.ndarray
    degenerate: np.ndarray
    n: int
    x: float
    proxy_mode: str


def _check_setup(data: LoggedData, policy_class: FinitePolicyClass, behavior):
    behavior = as_distribution(behavior)
    if len(behavior) != policy_class.n_actions:
        raise PreconditionError("behavior policy and class disagree on the action count")
    data.check_actions(policy_class.n_actions)
    if data.n == 0:
        raise PreconditionError("logged data is empty")
    return behavior


def _policy_seed(seed: int, j: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), j])


def policy_statistics(data: LoggedData, policy_class: FinitePolicyClass, behavior, x: float,
                      proxy_mode: str = "global", seed: int = 0,
                      inner_reps: int = 256) -> PolicyStatistics:
    behavior = _check_setup(data, policy_class, behavior)
    check_positive("x", x)
    m, n = policy_class.m, data.n
    values = np.full(m, np.nan)
    proxies = np.full(m, np.nan)
    ratios = np.empty(m)
    big_ns = np.empty(m)
    degenerate = np.zeros(m, dtype=bool)
    for j in range(m):
        pi = policy_class[j]
        big_ns[j] = effective_n(n, x, weight_moments(pi, behavior))
        ratios[j] = abs(n / big_ns[j] - 1.0) if big_ns[j] > 0 else math.inf
        weights = importance_weights(pi, behavior, data.actions)
        if weights.sum() == 0:
            degenerate[j] = True
            continue
        values[j] = wis_estimate(weights, data.rewards)
        proxies[j], _ = wis_proxy(weights, pi, behavior, x, proxy_mode, inner_reps,
                                  _policy_seed(seed, j))
    return PolicyStatistics(values, ratios, proxies, big_ns, degenerate, n, float(x), proxy_mode)


def _check_support(posterior: CategoricalDistribution, stats: PolicyStatistics):
    bad = np.flatnonzero((posterior.weights > 0) & stats.degenerate)
    if bad.size:
        raise DegenerateSampleError(
            f"policy {int(bad[0])} has zero importance-weight sum but positive posterior mass"
        )


def posterior_value(data: LoggedData, policy_class: FinitePolicyClass, posterior, behavior) -> float:
    """Posterior average of the per-policy WIS estimates."""
    behavior = _check_setup(data, policy_class, behavior)
    posterior = as_distribution(posterior)
    total = []
    for j in np.flatnonzero(posterior.weights > 0):
        weights = importance_weights(policy_class[j], behavior, data.actions)
        try:
            total.append(posterior.weights[j] * wis_estimate(weights, data.rewards))
        except DegenerateSampleError as exc:
            raise DegenerateSampleError(f"policy {int(j)}: {exc}") from None
    return math.fsum(total)


def _bias_from_ratios(posterior: CategoricalDistribution, ratios: np.ndarray) -> float:
    inner = posterior_mean(posterior, ratios)
    return min(1.0, inner)


def posterior_bias(policy_class: FinitePolicyClass, posterior, behavior, n: int, x: float) -> float:
    """``min{1, E[|n / N_{theta,x}(n) - 1| | S]}``; a vanishing ``N`` in the support gives 1."""
    check_positive("x", x)
    posterior = as_distribution(posterior)
    ratios = np.empty(policy_class.m)
    for j in range(policy_class.m):
        big_n = effective_n(n, x, weight_moments(policy_class[j], behavior))
        ratios[j] = abs(n / big_n - 1.0) if big_n > 0 else math.inf
    return _bias_from_ratios(posterior, ratios)


def posterior_proxy(data: LoggedData, policy_class: FinitePolicyClass, posterior, behavior,
                    proxy_mode: str, seed: int = 0, x: float = 2.0, inner_reps: int = 256) -> float:
    """Posterior average of per-policy WIS proxies; ``x`` feeds the closed-form modes."""
    posterior = as_distribution(posterior)
    stats = policy_statistics(data, policy_class, behavior, x, proxy_mode, seed, inner_reps)
    _check_support(posterior, stats)
    return posterior_mean(posterior, stats.proxies)


def learning_budget(proxy_mode: str, n: int, m: int, x: float) -> dict:
    budget = {"pac_bayes_concentration": math.exp(-x), "bias_weight_sum": math.exp(-x)}
    if proxy_mode in ("perk", "global"):
        # proxy bounds must hold for every policy in the class at once
        (key, share), = proxy_budget(proxy_mode, n, x).items()
        budget[key] = m * share
    return budget


def assemble(stats: PolicyStatistics, posterior, prior, y: float) -> dict:
    """Combine cached statistics into the bound; ``pre_clamp`` may be negative."""
    posterior = as_distribution(posterior)
    _check_support(posterior, stats)
    kl = kl_categorical(posterior, prior)
    value = posterior_mean(posterior, stats.values)
    bias = _bias_from_ratios(posterior, stats.bias_ratios)
    proxy = posterior_mean(posterior, stats.proxies)
    x = stats.x
    if math.isinf(proxy):
        capacity = math.inf
        penalty = math.inf
    else:
        capacity = kl + x + 0.5 * x * math.log1p(proxy / y)
        penalty = math.sqrt(2.0 * (y + proxy) * capacity)
    pre_clamp = value - bias - penalty
    return {"value": value, "bias": bias, "proxy": proxy, "kl": kl, "capacity": capacity,
            "penalty": penalty, "pre_clamp": pre_clamp, "bound": max(0.0, pre_clamp)}


def opl_lower_bound(data: LoggedData, policy_class: FinitePolicyClass, posterior, prior, behavior,
                    x: float, y: Optional[float] = None, proxy_mode: str = "global", seed: int = 0,
                    inner_reps: int = 256) -> BoundReport:
    """PAC-Bayes lower bound on the posterior-averaged value of the class.

    ``(E[v_wis|S] - min{1, E[|n/N - 1| |S]} - sqrt(2 (y + E[V|S]) C))_+`` with
    ``C = KL + x + x ln sqrt(1 + E[V|S]/y)``.
    """
    x = check_x_at_least_two(x)
    y = default_y(data.n) if y is None else check_positive("y", y)
    prior = as_distribution(prior)
    if len(prior) != policy_class.m or len(as_distribution(posterior)) != policy_class.m:
        raise PreconditionError("posterior and prior must have one weight per policy")
    stats = policy_statistics(data, policy_class, behavior, x, proxy_mode, seed, inner_reps)
    parts = assemble(stats, posterior, prior, y)
    return _learning_report(parts, stats, x, y, policy_class.m)


def _learning_report(parts: dict, stats: PolicyStatistics, x: float, y: float, m: int) -> BoundReport:
    return BoundReport(
        value=parts["bound"],
        kind="lower_bound",
        bound="pac_bayes_off_policy_learning",
        budget=learning_budget(stats.proxy_mode, stats.n, m, x),
        proxy=parts["proxy"],
        proxy_mode=stats.proxy_mode,
        params={"x": x, "y": y, "n": stats.n, "m": m},
        details={k: parts[k] for k in ("value", "bias", "kl", "capacity", "pre_clamp")},
    )


def _fd_gradient(objective, p: np.ndarray, eps: float) -> np.ndarray:
    grad = np.empty_like(p)
    for j in range(p.size):
        up = p.copy()
        up[j] += eps
        down = p.copy()
        down[j] = max(0.0, p[j] - eps)
        width = up[j] - down[j]
        grad[j] = (objective(up / up.sum()) - objective(down / down.sum())) / width
    return grad


def optimize_posterior(data: LoggedData, policy_class: FinitePolicyClass, prior, behavior,
                       config: LearnConfig) -> PosteriorState:
    """Exponentiated-gradient ascent of the lower bound over the posterior simplex.

    Gradients are central finite differences of the unclamped bound. The
    returned posterior is the best iterate seen, so the result is never worse
    than the uniform starting point.
    """
    prior = as_distribution(prior)
    if len(prior) != policy_class.m:
        raise PreconditionError("prior must have one weight per policy")
    y = default_y(data.n) if config.y is None else float(config.y)
    stats = policy_statistics(data, policy_class, behavior, config.x, config.proxy_mode,
                              config.seed, config.inner_reps)

    def pre_clamp(p):
        return assemble(stats, CategoricalDistribution.from_unnormalized(p), prior, y)["pre_clamp"]

    def clamped(p):
        return assemble(stats, p, prior, y)["bound"]

    usable = ~stats.degenerate
    if not usable.any():
        raise DegenerateSampleError("every policy has a zero importance-weight sum")
    # policies with an infinite proxy pin the bound at zero wherever they carry
    # mass, so the search runs over the finite ones when any exist
    live = usable & np.isfinite(stats.proxies)
    if not live.any():
        live = usable
    p = CategoricalDistribution.from_unnormalized(live.astype(float))
    state = PosteriorState(p, -math.inf)
    best = -math.inf
    for it in range(int(config.max_iters)):
        current = clamped(p)
        state.objective_trace.append(current)
        state.posterior_trace.append(p.weights.copy())
        if current > best:
            best, state.posterior, state.objective = current, p, current
        if live.sum() == 1 or not np.isfinite(stats.proxies[live]).all():
            continue
        if it == config.max_iters - 1:
            break
        grad = np.zeros(policy_class.m)
        grad[live] = _fd_gradient(lambda q: pre_clamp(_embed(q, live)), p.weights[live],
                                  config.gradient_epsilon)
        if not np.all(np.isfinite(grad)):
            raise SteinboundError(f"non-finite gradient at iteration {it}")
        with np.errstate(divide="ignore"):
            logits = np.log(p.weights[live]) + config.step_size * grad[live]
        logits -= logits.max()
        new = np.zeros(policy_class.m)
        new[live] = np.exp(logits)
        p = CategoricalDistribution.from_unnormalized(new)
    return state


def _embed(q: np.ndarray, live: np.ndarray) -> np.ndarray:
    full = np.zeros(live.size)
    full[live] = q
    return full


def learning_report(data: LoggedData, policy_class: FinitePolicyClass, prior, behavior,
                    config: LearnConfig, state: PosteriorState) -> BoundReport:
    """Report for a learned posterior, identical to calling :func:`opl_lower_bound` on it."""
    return opl_lower_bound(data, policy_class, state.posterior, prior, behavior, config.x,
                           config.y, config.proxy_mode, config.seed, config.inner_reps)
