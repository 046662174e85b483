"""Synthetic bandits, exact ground truth, and Monte Carlo coverage runs.

Each trial draws its randomness from ``SeedSequence([seed, trial_index])``,
so results do not depend on how trials are spread over worker threads.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ._base import (
    CategoricalDistribution,
    PreconditionError,
    SteinboundError,
    as_distribution,
)
from .concentration import (
    ReplaceOneFunction,
    default_y,
    es_radius_logy,
    es_radius_scale_free,
    estimate_es_proxy,
    mean_es_proxy,
    mean_es_proxy_expectation,
    select_y,
)
from .opl import (
    FinitePolicyClass,
    LearnConfig,
    assemble,
    learning_budget,
    optimize_posterior,
    policy_statistics,
)
from .pac_bayes import LossTable, empirical_bernstein_bound, gen_bound, kl_categorical
from .wis import (
    LoggedData,
    effective_n,
    importance_weights,
    opev_lower_bound,
    proxy_budget,
    vwa_bound_global,
    vwa_bound_perk,
    vwa_bruteforce,
    vwa_mc,
    weight_moments,
    weight_pmf,
    wis_concentration_radius,
    wis_estimate,
    wis_proxy,
)

REWARD_LAWS = ("bernoulli", "point_mass")
REFERENCE_STREAM = 0xFFFFFFFF


@dataclass(frozen=True)
class BanditEnv:
    """``K`` arms with reward means in ``[0, 1]`` and a per-arm reward law."""

    K: int
    reward_means: np.ndarray
    reward_law: Tuple[str, ...]

    def __post_init__(self):
        means = np.asarray(self.reward_means, dtype=float)
        if int(self.K) < 1 or means.shape != (int(self.K),):
            raise PreconditionError("reward_means must have one entry per action and K >= 1")
        if np.any((means < 0) | (means > 1)):
            raise PreconditionError("reward means must lie in [0, 1]")
        law = self.reward_law
        law = (law,) * int(self.K) if isinstance(law, str) else tuple(law)
        if len(law) != int(self.K) or any(l not in REWARD_LAWS for l in law):
            raise PreconditionError(f"reward_law must be one of {REWARD_LAWS} per action")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "reward_means", means)
        object.__setattr__(self, "reward_law", law)

    @property
    def bernoulli_mask(self) -> np.ndarray:
        return np.array([l == "bernoulli" for l in self.reward_law])

    def reward_pmfs(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Per-arm reward law as ``(support, probs)``."""
        out = []
        for mu, law in zip(self.reward_means, self.reward_law):
            if law == "bernoulli":
                out.append((np.array([0.0, 1.0]), np.array([1.0 - mu, mu])))
            else:
                out.append((np.array([mu]), np.array([1.0])))
        return out

    def reward_marginal(self, behavior) -> Tuple[np.ndarray, np.ndarray]:
        """Law of the logged reward when actions follow ``behavior``."""
        pib = self._policy(behavior)
        table: Dict[float, float] = {}
        for a, (sup, pr) in enumerate(self.reward_pmfs()):
            for s, q in zip(sup, pr):
                table[float(s)] = table.get(float(s), 0.0) + pib[a] * q
        support = np.array(sorted(table))
        return support, np.array([table[s] for s in support])

    def _policy(self, policy) -> np.ndarray:
        w = as_distribution(policy).weights
        if w.size != self.K:
            raise PreconditionError(f"policy has {w.size} entries, environment has {self.K} actions")
        return w


def true_value(env: BanditEnv, policy) -> float:
    """Exact value ``sum_a policy(a) E[R | A = a]``."""
    return math.fsum(env._policy(policy) * env.reward_means)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def draw_logs(env: BanditEnv, behavior, shape, rng: np.random.Generator):
    """Arrays of actions and rewards with the given shape."""
    pib = env._policy(behavior)
    actions = rng.choice(env.K, size=shape, p=pib)
    u = rng.random(size=shape)
    means = env.reward_means[actions]
    rewards = np.where(env.bernoulli_mask[actions], (u < means).astype(float), means)
    return actions, rewards


def generate_logs(env: BanditEnv, behavior, n: int, seed) -> LoggedData:
    """``n`` i.i.d. (action, reward) pairs; identical output for identical seeds."""
    n = int(n)
    if n < 1:
        raise PreconditionError("n must be a positive integer")
    actions, rewards = draw_logs(env, behavior, n, _rng(seed))
    return LoggedData(actions, rewards)


# -- standard environment suite ------------------------------------------

@dataclass(frozen=True)
class Setting:
    env: BanditEnv
    behavior: np.ndarray
    target: np.ndarray
    description: str


def standard_environments() -> Dict[str, Setting]:
    """Three regimes: matched policies, moderate weight variance, heavy weights."""
    return {
        "matched": Setting(
            BanditEnv(2, [0.3, 0.7], "bernoulli"),
            np.array([0.5, 0.5]), np.array([0.5, 0.5]),
            "K=2, target equals behavior (all weights 1)",
        ),
        "mismatched": Setting(
            BanditEnv(5, [0.9, 0.2, 0.4, 0.6, 0.3], "bernoulli"),
            np.full(5, 0.2), np.array([0.765, 0.085, 0.05, 0.05, 0.05]),
            "K=5, uniform behavior, E[W^2] ~= 3, weight support of size 3",
        ),
        "heavy": Setting(
            BanditEnv(3, [0.2, 0.5, 0.8], "bernoulli"),
            np.array([0.9, 0.09, 0.01]), np.full(3, 1.0 / 3.0),
            "K=3, near-deterministic behavior, E[W^2] ~= 12.5",
        ),
        "coin": Setting(
            BanditEnv(1, [0.5], "bernoulli"),
            np.array([1.0]), np.array([1.0]),
            "single fair Bernoulli arm; the mean reward is a mean of fair coins",
        ),
    }


def default_policy_class(K: int, m: int = 5, sharpness: float = 0.6) -> FinitePolicyClass:
    """``m`` full-support policies, each leaning towards a different arm."""
    rows = []
    for j in range(m):
        row = np.full(K, (1.0 - sharpness) / K)
        row[j % K] += sharpness
        rows.append(row / row.sum())
    return FinitePolicyClass(np.array(rows))


# -- coverage -------------------------------------------------------------

BOUND_NAMES = (
    "es_radius_logy", "es_radius_scale_free", "wis_concentration", "opev_lower_bound",
    "opl_lower_bound", "gen_bound", "empirical_bernstein", "effective_n", "vwa_perk", "vwa_global",
)


@dataclass(frozen=True)
class BoundSpec:
    """A registered bound name and its parameters (``x``, ``y``, ``proxy_mode``, ...)."""

    name: str
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in BOUND_NAMES:
            raise PreconditionError(f"unknown bound {self.name!r}; expected one of {BOUND_NAMES}")


@dataclass
class TrialRecord:
    trial_index: int
    bound_value: float
    target_quantity: float
    violated: bool
    error_flag: str = ""
    sub_event_flags: Dict[str, bool] = field(default_factory=dict)


@dataclass
class CoverageResult:
    bound: str
    violation_rate: float
    binomial_3sigma: float
    failure_budget: float
    budget: Dict[str, float]
    trials: int
    n_valid: int
    n_errors: int
    records: List[TrialRecord]
    reference: Dict[str, Any] = field(default_factory=dict)

    @property
    def within_budget(self) -> bool:
        return self.violation_rate <= self.failure_budget + self.binomial_3sigma

    def summary(self) -> Dict[str, Any]:
        flags: Dict[str, int] = {}
        for r in self.records:
            for k, v in r.sub_event_flags.items():
                flags[k] = flags.get(k, 0) + int(bool(v))
        return {
            "bound": self.bound,
            "violation_rate": self.violation_rate,
            "binomial_3sigma": self.binomial_3sigma,
            "failure_budget": self.failure_budget,
            "budget": dict(self.budget),
            "within_budget": self.within_budget,
            "trials": self.trials,
            "n_valid": self.n_valid,
            "n_errors": self.n_errors,
            "sub_event_counts": flags,
            "reference": dict(self.reference),
        }


def worker_count(threads: Optional[int] = None) -> int:
    if threads is None:
        env = os.environ.get("STEINBOUND_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def trial_seed(seed: int, trial_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(trial_index)])


def run_trials(fn: Callable[[int], TrialRecord], trials: int, threads: Optional[int] = None) -> List[TrialRecord]:
    """Evaluate ``fn`` on every trial index; ordering is by index regardless of threads."""
    workers = worker_count(threads)
    if workers == 1 or trials == 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(trials)))


def binomial_3sigma(p: float, trials: int) -> float:
    p = min(1.0, max(0.0, p))
    return 3.0 * math.sqrt(p * (1.0 - p) / max(trials, 1))


def _softmax_posterior(scores: np.ndarray, temperature: float) -> CategoricalDistribution:
    z = scores / temperature
    z = z - z.max()
    return CategoricalDistribution.from_unnormalized(np.exp(z))


def _loss_setup(env: BanditEnv, behavior, scale: float):
    """Loss ``scale * 1{A = j} (1 - R)`` for ``j`` ranging over arms, and its exact moments."""
    pib = env._policy(behavior)
    first, second = [], []
    for a, (sup, pr) in enumerate(env.reward_pmfs()):
        first.append(pib[a] * scale * float((1.0 - sup) @ pr))
        second.append(pib[a] * scale**2 * float((1.0 - sup) ** 2 @ pr))
    return np.array(first), np.array(second)


def loss_table(data: LoggedData, K: int, scale: float = 1.0) -> np.ndarray:
    onehot = data.actions[:, None] == np.arange(K)[None, :]
    return scale * onehot * (1.0 - data.rewards)[:, None]


class _Coverage:
    """Trial factory for one bound spec on one setting."""

    def __init__(self, spec: BoundSpec, env: BanditEnv, behavior, target, policy_class, n: int,
                 seed: int, trials: int):
        self.spec, self.env, self.n, self.seed = spec, env, int(n), int(seed)
        self.behavior = env._policy(behavior)
        self.target = None if target is None else env._policy(target)
        self.policy_class = policy_class
        p = dict(spec.params)
        self.x = float(p.pop("x", 3.0))
        self.y = p.pop("y", None)
        self.y_grid = p.pop("y_grid", None)
        self.proxy_mode = p.pop("proxy_mode", "global")
        self.inner_reps = int(p.pop("inner_reps", 256))
        self.posterior_rule = p.pop("posterior", "prior")
        self.temperature = float(p.pop("temperature", 0.05))
        self.loss_scale = float(p.pop("loss_scale", 1.0))
        self.es_proxy = p.pop("es_proxy", "exact")
        self.learn = p.pop("learn", {})
        self.reference_factor = int(p.pop("reference_factor", 10))
        if p:
            raise PreconditionError(f"unknown parameters for {spec.name}: {sorted(p)}")
        self.trials = int(trials)
        self.reference: Dict[str, Any] = {}
        self.budget: Dict[str, float] = {}
        getattr(self, f"_prepare_{spec.name}", lambda: None)()

    @property
    def y_value(self) -> float:
        return default_y(self.n) if self.y is None else float(self.y)

    def logs(self, t: int) -> LoggedData:
        return generate_logs(self.env, self.behavior, self.n, trial_seed(self.seed, t))

    def __call__(self, t: int) -> TrialRecord:
        try:
            return getattr(self, f"_trial_{self.spec.name}")(t)
        except SteinboundError as exc:
            return TrialRecord(t, math.nan, math.nan, False, type(exc).__name__)

    # fixed-function radii on the mean logged reward

    def _prepare_es_radius_logy(self):
        self.support, self.probs = self.env.reward_marginal(self.behavior)
        self.mean = true_value(self.env, self.behavior)
        if self.y_grid is not None:
            self.budget = {"es_concentration_y_grid": len(self.y_grid) * math.exp(-self.x)}
        else:
            self.budget = {"es_concentration": math.exp(-self.x)}
        self.reference = {"mean": self.mean, "mean_source": "exact"}

    def _prepare_es_radius_scale_free(self):
        self._prepare_es_radius_logy()
        self.v_mean = mean_es_proxy_expectation(self.n, self.support, self.probs)
        self.budget = {"es_concentration_scale_free": math.sqrt(2.0) * math.exp(-self.x)}
        self.reference["expected_proxy"] = self.v_mean
        self.reference["expected_proxy_source"] = "exact (oracle-assisted)"

    def _es_proxy(self, rewards, t) -> float:
        if self.es_proxy == "mc":
            f = ReplaceOneFunction.mean_of_iid(self.n, self.support, self.probs)
            return estimate_es_proxy(f, rewards, self.inner_reps, trial_seed(self.seed, t)).value
        return mean_es_proxy(rewards, self.support, self.probs).value

    def _trial_es_radius_logy(self, t):
        rewards = self.logs(t).rewards
        dev = abs(float(rewards.mean()) - self.mean)
        v = self._es_proxy(rewards, t)
        if self.y_grid is not None:
            _, radius, _ = select_y(v, self.x, self.y_grid)
        else:
            radius = es_radius_logy(v, self.x, self.y_value)
        return TrialRecord(t, radius, dev, dev > radius)

    def _trial_es_radius_scale_free(self, t):
        rewards = self.logs(t).rewards
        dev = abs(float(rewards.mean()) - self.mean)
        radius = es_radius_scale_free(self._es_proxy(rewards, t), self.v_mean, self.x)
        return TrialRecord(t, radius, dev, dev > radius)

    # weighted importance sampling

    def _prepare_wis_concentration(self):
        ss = np.random.SeedSequence([self.seed, REFERENCE_STREAM])
        rng = np.random.default_rng(ss)
        reps = self.reference_factor * self.trials
        estimates = []
        chunk = max(1, 200_000 // self.n)
        done = 0
        while done < reps:
            size = min(chunk, reps - done)
            actions, rewards = draw_logs(self.env, self.behavior, (size, self.n), rng)
            w = self.target[actions] / self.behavior[actions]
            total = w.sum(axis=1)
            ok = total > 0
            estimates.append((w * rewards).sum(axis=1)[ok] / total[ok])
            done += size
        est = np.concatenate(estimates)
        self.mean = float(est.mean())
        self.reference = {
            "expected_wis": self.mean,
            "expected_wis_std_error": float(est.std(ddof=1) / math.sqrt(est.size)),
            "expected_wis_source": f"monte_carlo ({est.size} datasets)",
        }
        self.budget = {"wis_concentration": math.exp(-self.x)}
        if self.proxy_mode in ("perk", "global"):
            self.budget["weight_sum_lower_tails"] = self.n * math.exp(-self.x)

    def _trial_wis_concentration(self, t):
        data = self.logs(t)
        w = importance_weights(self.target, self.behavior, data.actions)
        v_hat = wis_estimate(w, data.rewards)
        proxy, _ = wis_proxy(w, self.target, self.behavior, self.x, self.proxy_mode,
                             self.inner_reps, trial_seed(self.seed, t))
        radius = wis_concentration_radius(proxy, self.x, self.y_value)
        dev = abs(v_hat - self.mean)
        return TrialRecord(t, radius, dev, dev > radius)

    def _prepare_opev_lower_bound(self):
        self.value = true_value(self.env, self.target)
        self.budget = {"wis_concentration": math.exp(-self.x)}
        self.budget.update(proxy_budget(self.proxy_mode, self.n, self.x))
        self.reference = {"true_value": self.value}

    def _trial_opev_lower_bound(self, t):
        data = self.logs(t)
        rep = opev_lower_bound(data, self.target, self.behavior, self.x, self.y, self.proxy_mode,
                               self.inner_reps, trial_seed(self.seed, t))
        flags = {"vacuous": rep.value <= 0.0,
                 "proxy_infinite": math.isinf(rep.proxy),
                 "weight_sum_below_effective_n":
                     float(importance_weights(self.target, self.behavior, data.actions).sum())
                     < rep.details["effective_n"]}
        return TrialRecord(t, rep.value, self.value, self.value < rep.value, "", flags)

    def _prepare_effective_n(self):
        self.moments = weight_moments(self.target, self.behavior)
        self.big_n = effective_n(self.n, self.x, self.moments)
        self.budget = {"weight_sum_lower_tail": math.exp(-self.x)}
        self.reference = {"effective_n": self.big_n, "m2": self.moments.m2}

    def _trial_effective_n(self, t):
        data = self.logs(t)
        total = float(importance_weights(self.target, self.behavior, data.actions).sum())
        return TrialRecord(t, self.big_n, total, total < self.big_n)

    def _prepare_vwa_perk(self):
        self.moments = weight_moments(self.target, self.behavior)
        self.pmf = weight_pmf(self.target, self.behavior)
        self.budget = {"weight_sum_lower_tails": self.n * math.exp(-self.x)}
        self.reference = {"exact_proxy": "bruteforce" if self.proxy_mode != "mc" else "monte_carlo"}

    _prepare_vwa_global = _prepare_vwa_perk

    def _vwa_trial(self, t, bound_fn):
        data = self.logs(t)
        w = importance_weights(self.target, self.behavior, data.actions)
        if self.proxy_mode == "mc":
            exact = vwa_mc(w, self.pmf, self.inner_reps, trial_seed(self.seed, t)).value
        else:
            exact = vwa_bruteforce(w, self.pmf)
        b = bound_fn(w, self.moments, self.x)
        return TrialRecord(t, b.value, exact, b.value < exact, "",
                           {"bound_infinite": math.isinf(b.value)})

    def _trial_vwa_perk(self, t):
        return self._vwa_trial(t, vwa_bound_perk)

    def _trial_vwa_global(self, t):
        return self._vwa_trial(t, vwa_bound_global)

    # PAC-Bayes

    def _prepare_gen_bound(self):
        self.loss_mean, self.loss_second = _loss_setup(self.env, self.behavior, self.loss_scale)
        self.prior = CategoricalDistribution.uniform(self.env.K)
        self.budget = {"pac_bayes_concentration": math.exp(-self.x)}
        self.reference = {"population_loss": self.loss_mean.tolist(),
                          "posterior_rule": self.posterior_rule}

    def _prepare_empirical_bernstein(self):
        if self.loss_scale > 1:
            raise PreconditionError("empirical_bernstein needs loss_scale <= 1")
        self._prepare_gen_bound()
        self.budget = {"pac_bayes_concentration": math.exp(-self.x),
                       "second_moment_concentration": math.exp(-self.x)}

    def _loss_posterior(self, table: LossTable) -> CategoricalDistribution:
        if self.posterior_rule == "prior":
            return self.prior
        if self.posterior_rule == "softmax":
            return _softmax_posterior(-table.empirical_loss(), self.temperature)
        raise PreconditionError(f"unknown posterior rule {self.posterior_rule!r}")

    def _pac_trial(self, t, compute):
        data = self.logs(t)
        flag = "unit_interval" if self.loss_scale <= 1 else "unbounded"
        table = LossTable(loss_table(data, self.env.K, self.loss_scale), flag)
        post = self._loss_posterior(table)
        rep = compute(table, post)
        gap = abs(float(post.weights @ (table.empirical_loss() - self.loss_mean)))
        return TrialRecord(t, rep.value, gap, gap > rep.value)

    def _trial_gen_bound(self, t):
        return self._pac_trial(t, lambda tab, post: gen_bound(
            tab, self.loss_second, post, self.prior, self.x, self.y_value))

    def _trial_empirical_bernstein(self, t):
        return self._pac_trial(t, lambda tab, post: empirical_bernstein_bound(
            tab, post, self.prior, self.x))

    # learning

    def _prepare_opl_lower_bound(self):
        if self.policy_class is None:
            self.policy_class = default_policy_class(self.env.K)
        self.prior = CategoricalDistribution.uniform(self.policy_class.m)
        self.values = np.array([true_value(self.env, p) for p in self.policy_class.policies])
        self.reference = {"policy_values": self.values.tolist(), "posterior_rule": self.posterior_rule}
        self.budget = learning_budget(self.proxy_mode, self.n, self.policy_class.m, self.x)

    def _trial_opl_lower_bound(self, t):
        data = self.logs(t)
        stream_seed = int(trial_seed(self.seed, t).generate_state(1)[0])
        flags = {}
        if self.posterior_rule == "optimizer":
            cfg = LearnConfig(x=self.x, y=self.y, proxy_mode=self.proxy_mode, seed=stream_seed,
                              inner_reps=self.inner_reps, **self.learn)
            state = optimize_posterior(data, self.policy_class, self.prior, self.behavior, cfg)
            post, bound = state.posterior, state.objective
            stats = policy_statistics(data, self.policy_class, self.behavior, self.x,
                                      self.proxy_mode, stream_seed, self.inner_reps)
            uniform = CategoricalDistribution.uniform(self.policy_class.m)
            flags["improved_over_uniform"] = bound >= assemble(stats, uniform, self.prior,
                                                               self.y_value)["bound"]
        elif self.posterior_rule == "prior":
            post = self.prior
            stats = policy_statistics(data, self.policy_class, self.behavior, self.x,
                                      self.proxy_mode, stream_seed, self.inner_reps)
            bound = assemble(stats, post, self.prior, self.y_value)["bound"]
        else:
            raise PreconditionError(f"unknown posterior rule {self.posterior_rule!r}")
        target = float(post.weights @ self.values)
        flags["vacuous"] = bound <= 0.0
        return TrialRecord(t, bound, target, target < bound, "", flags)


def coverage(bound_spec: BoundSpec, env: BanditEnv, behavior, target=None, n: int = 100,
             trials: int = 1000, seed: int = 0, policy_class: Optional[FinitePolicyClass] = None,
             threads: Optional[int] = None) -> CoverageResult:
    """Replicate a bound ``trials`` times and count violations.

    Trials whose bound cannot be computed (degenerate samples) are reported in
    ``n_errors`` and excluded from the violation rate.
    """
    trials = int(trials)
    if trials < 1:
        raise PreconditionError("trials must be >= 1")
    runner = _Coverage(bound_spec, env, behavior, target, policy_class, n, seed, trials)
    records = run_trials(runner, trials, threads)
    valid = [r for r in records if not r.error_flag]
    n_valid = len(valid)
    rate = sum(r.violated for r in valid) / n_valid if n_valid else math.nan
    budget = runner.budget
    fp = math.fsum(budget.values())
    return CoverageResult(
        bound=bound_spec.name,
        violation_rate=rate,
        binomial_3sigma=binomial_3sigma(fp, n_valid),
        failure_budget=fp,
        budget=dict(budget),
        trials=trials,
        n_valid=n_valid,
        n_errors=trials - n_valid,
        records=records,
        reference=runner.reference,
    )


# -- inputs for the moment-generating-function checks --------------------

def canonical_pairs(env: BanditEnv, behavior, n: int, samples: int, seed) -> np.ndarray:
    """``(delta, V)`` pairs for the mean logged reward, ``V`` computed exactly."""
    rng = _rng(seed)
    support, probs = env.reward_marginal(behavior)
    mean = true_value(env, behavior)
    out = np.empty((int(samples), 2))
    chunk = max(1, 500_000 // int(n))
    for start in range(0, int(samples), chunk):
        stop = min(int(samples), start + chunk)
        _, rewards = draw_logs(env, behavior, (stop - start, n), rng)
        out[start:stop, 0] = rewards.mean(axis=1) - mean
        out[start:stop, 1] = (((rewards[..., None] - support) ** 2) @ probs).sum(axis=1) / n**2
    return out


def pac_bayes_mgf_triples(env: BanditEnv, behavior, n: int, trials: int, seed,
                          posterior_rule: str = "prior", temperature: float = 0.05,
                          loss_scale: float = 1.0) -> np.ndarray:
    """``(E[D|S], E[V|S], KL)`` per dataset for the per-arm loss class.

    ``V_theta`` is the exact proxy of the empirical loss:
    ``n^-2 sum_k (l_k^2 - 2 l_k L + E[l'^2])``.
    """
    rng = _rng(seed)
    first, second = _loss_setup(env, behavior, loss_scale)
    prior = CategoricalDistribution.uniform(env.K)
    out = np.empty((int(trials), 3))
    for t in range(int(trials)):
        actions, rewards = draw_logs(env, behavior, n, rng)
        data = LoggedData(actions, rewards)
        losses = loss_table(data, env.K, loss_scale)
        emp = losses.mean(axis=0)
        v = ((losses**2).sum(axis=0) - 2 * losses.sum(axis=0) * first + n * second) / n**2
        if posterior_rule == "prior":
            post = prior
        else:
            post = _softmax_posterior(-emp, temperature)
        out[t] = (post.weights @ (emp - first), post.weights @ v, kl_categorical(post, prior))
    return out
