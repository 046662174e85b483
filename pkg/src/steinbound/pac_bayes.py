"""PAC-Bayesian Efron-Stein bounds over a finite parameter set.

Posteriors and priors are categorical, so every posterior expectation and
the KL term are exact finite sums.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple, Union

import numpy as np

from ._base import (
    AbsoluteContinuityError,
    BoundReport,
    CategoricalDistribution,
    NumericalOverflowError,
    PreconditionError,
    as_distribution,
    check_nonnegative,
    check_positive,
    check_x_at_least_two,
)
from .concentration import _EXP_LIMIT, _logy_radius


@dataclass(frozen=True)
class LossTable:
    """Losses ``losses[k, j] = loss(theta_j, X_k)`` for ``n`` points, ``m`` parameters."""

    losses: np.ndarray
    range_flag: str = "unbounded"

    def __post_init__(self):
        arr = np.asarray(self.losses, dtype=float)
        if arr.ndim != 2 or arr.size == 0:
            raise PreconditionError("losses must be a nonempty n x m matrix")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise PreconditionError("losses must be finite and nonnegative")
        if self.range_flag not in ("unbounded", "unit_interval"):
            raise PreconditionError(f"unknown range_flag {self.range_flag!r}")
        if self.range_flag == "unit_interval" and np.any(arr > 1):
            raise PreconditionError("unit_interval losses must lie in [0, 1]")
        object.__setattr__(self, "losses", arr)

    @property
    def n(self) -> int:
        return self.losses.shape[0]

    @property
    def m(self) -> int:
        return self.losses.shape[1]

    def empirical_loss(self) -> np.ndarray:
        return self.losses.mean(axis=0)

    def empirical_second_moment(self) -> np.ndarray:
        return (self.losses**2).mean(axis=0)


SecondMomentOracle = Union[Callable[[int], float], Sequence[float], np.ndarray]


def _oracle_values(oracle: SecondMomentOracle, m: int) -> np.ndarray:
    if callable(oracle):
        vals = np.array([float(oracle(j)) for j in range(m)])
    else:
        vals = np.asarray(oracle, dtype=float)
    if vals.shape != (m,):
        raise PreconditionError(f"second-moment oracle must cover {m} parameters")
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise PreconditionError("second moments must be finite and nonnegative")
    return vals


def kl_categorical(p, q) -> float:
    """``KL(p || q)`` with ``0 ln(0/q) = 0``.

    Raises
    ------
    AbsoluteContinuityError
        If some ``p_j > 0`` while ``q_j = 0``.
    """
    p = as_distribution(p).weights
    q = as_distribution(q).weights
    if p.size != q.size:
        raise PreconditionError(f"length mismatch: {p.size} vs {q.size}")
    support = p > 0
    bad = np.flatnonzero(support & (q == 0))
    if bad.size:
        raise AbsoluteContinuityError(
            f"p is not absolutely continuous w.r.t. q (p[{int(bad[0])}] > 0, q = 0)"
        )
    terms = p[support] * np.log(p[support] / q[support])
    return max(0.0, math.fsum(terms))


def pb_radius_scale_free(ev_marginal: float, ev_conditional: float, kl: float, x: float) -> float:
    """``sqrt(2 (E[V] + E[V|S]) (KL + 2x))``, valid w.p. ``1 - 2 e^-x``."""
    ev_marginal = check_nonnegative("ev_marginal", ev_marginal)
    ev_conditional = check_nonnegative("ev_conditional", ev_conditional)
    kl = check_nonnegative("kl", kl)
    x = check_nonnegative("x", x)
    return math.sqrt(2.0 * (ev_marginal + ev_conditional) * (kl + 2.0 * x))


def pb_radius_logy(ev_conditional: float, kl: float, x: float, y: float) -> float:
    """``sqrt(2 (y + E[V|S]) (KL + x + (x/2) ln(1 + E[V|S]/y)))``, w.p. ``1 - e^-x``.

    With ``kl = 0`` this is bitwise the fixed-function radius.
    """
    v = check_nonnegative("ev_conditional", ev_conditional)
    kl = check_nonnegative("kl", kl)
    x = check_x_at_least_two(x)
    y = check_positive("y", y)
    if math.isinf(v) or math.isinf(kl):
        return math.inf
    return _logy_radius(v, kl, x, y)


def pb_mgf_check(per_trial, y: float) -> Tuple[float, float]:
    """Sample mean and standard error of the mixture statistic.

    Each trial contributes
    ``y / sqrt(y^2 + E[V|S]) * exp(E[D|S]^2 / (2 (y^2 + E[V|S])) - KL)``,
    whose expectation is at most one.
    """
    y = check_positive("y", y)
    rows = np.asarray(per_trial, dtype=float)
    if rows.size == 0:
        raise PreconditionError("per_trial must be nonempty")
    rows = rows.reshape(-1, 3)
    mean_delta, v, kl = rows[:, 0], rows[:, 1], rows[:, 2]
    if np.any(v < 0) or np.any(kl < 0):
        raise PreconditionError("proxies and KL values must be nonnegative")
    scale = y**2 + v
    exponent = mean_delta**2 / (2.0 * scale) - kl
    over = np.flatnonzero(exponent > _EXP_LIMIT)
    if over.size:
        raise NumericalOverflowError(f"exp overflow in trial {int(over[0])}")
    vals = y / np.sqrt(scale) * np.exp(exponent)
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(vals.mean()), se


def _check_pair(losses: LossTable, posterior, prior):
    posterior = as_distribution(posterior)
    prior = as_distribution(prior)
    if len(posterior) != losses.m or len(prior) != losses.m:
        raise PreconditionError(
            f"posterior/prior lengths ({len(posterior)}, {len(prior)}) "
            f"must match the {losses.m} loss-table columns"
        )
    return posterior, prior


def posterior_mean(posterior: CategoricalDistribution, values) -> float:
    """``sum_j p_j values_j`` skipping zero-weight entries (they may be infinite)."""
    w = as_distribution(posterior).weights
    values = np.asarray(values, dtype=float)
    keep = w > 0
    return math.fsum(w[keep] * values[keep])


def gen_bound(losses: LossTable, oracle: SecondMomentOracle, posterior, prior,
              x: float, y: float) -> BoundReport:
    """Semi-empirical PAC-Bayes generalization bound for nonnegative losses.

    The conditional proxy is bounded by
    ``n^-2 sum_k (loss(theta, X_k)^2 + E[loss(theta, X')^2])`` averaged over
    the posterior; the second moments come from ``oracle``.
    """
    posterior, prior = _check_pair(losses, posterior, prior)
    x = check_x_at_least_two(x)
    y = check_positive("y", y)
    second = _oracle_values(oracle, losses.m)
    n = losses.n
    per_theta = ((losses.losses**2).sum(axis=0) + n * second) / n**2
    proxy = posterior_mean(posterior, per_theta)
    kl = kl_categorical(posterior, prior)
    radius = pb_radius_logy(proxy, kl, x, y)
    return BoundReport(
        value=radius,
        kind="radius",
        bound="pac_bayes_generalization",
        budget={"pac_bayes_concentration": math.exp(-x)},
        proxy=proxy,
        proxy_mode="second_moment_oracle",
        params={"x": x, "y": y, "n": n, "m": losses.m},
        details={"kl": kl, "posterior_empirical_loss": posterior_mean(posterior, losses.empirical_loss())},
    )


def bernstein_capacity(kl: float, x: float, n: int) -> float:
    """``KL + x + x ln(sqrt(1 + n))``."""
    return kl + x + 0.5 * x * math.log1p(n)


def empirical_bernstein_bound(losses: LossTable, posterior, prior, x: float) -> BoundReport:
    """Fully empirical PAC-Bayes bound for losses in ``[0, 1]``.

    Uses ``sigma2 = E[n^-1 sum_k loss^2 | S]``, the capacity
    ``C = KL + x + x ln sqrt(1+n)`` and
    ``U = sigma2 + sqrt(2 sigma2 C / n) + (2C + 2^(1/4) sqrt(C) + 1/sqrt(2)) / n``;
    the radius is ``sqrt(2 (1/n^2 + 2U/n) C)`` with confidence ``1 - 2 e^-x``.
    """
    if losses.range_flag != "unit_interval":
        # validate the range even if the caller did not flag it
        if np.any(losses.losses > 1):
            raise PreconditionError("empirical Bernstein bound needs losses in [0, 1]")
    posterior, prior = _check_pair(losses, posterior, prior)
    x = check_x_at_least_two(x)
    n = losses.n
    sigma2 = posterior_mean(posterior, losses.empirical_second_moment())
    kl = kl_categorical(posterior, prior)
    c = bernstein_capacity(kl, x, n)
    u = (sigma2 + math.sqrt(2.0 / n * sigma2 * c)
         + (2.0 * c + 2.0**0.25 * math.sqrt(c) + 1.0 / math.sqrt(2.0)) / n)
    radius = math.sqrt(2.0 * (1.0 / n**2 + 2.0 / n * u) * c)
    return BoundReport(
        value=radius,
        kind="radius",
        bound="pac_bayes_empirical_bernstein",
        budget={"pac_bayes_concentration": math.exp(-x), "second_moment_concentration": math.exp(-x)},
        proxy=sigma2,
        proxy_mode="empirical_second_moment",
        params={"x": x, "n": n, "m": losses.m},
        details={"kl": kl, "capacity": c, "u_s": u,
                 "posterior_empirical_loss": posterior_mean(posterior, losses.empirical_loss())},
    )
