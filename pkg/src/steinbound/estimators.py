"""scikit-learn style wrappers around the off-policy bounds.

Logged bandit data enters as ``X`` = actions (shape ``(n,)`` or ``(n, 1)``)
and ``y`` = rewards, so the estimators compose with the usual sklearn
tooling (``get_params``, ``clone``, grid search over ``x`` or ``y``).
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from ._base import CategoricalDistribution, PreconditionError
from .opl import FinitePolicyClass, LearnConfig, learning_report, optimize_posterior
from .wis import LoggedData, opev_lower_bound


def check_logged_data(X, y) -> LoggedData:
    """Validate ``(actions, rewards)`` arrays and wrap them as :class:`LoggedData`."""
    X = check_array(X, ensure_2d=False, dtype=None)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise PreconditionError(f"actions must be a single column, got shape {X.shape}")
        X = X[:, 0]
    actions = column_or_1d(X)
    if not np.issubdtype(actions.dtype, np.integer):
        as_int = actions.astype(np.int64)
        if not np.array_equal(as_int, actions):
            raise PreconditionError("actions must be integer arm indices")
        actions = as_int
    rewards = column_or_1d(check_array(y, ensure_2d=False, dtype=float))
    if rewards.shape[0] != actions.shape[0]:
        raise PreconditionError(f"{actions.shape[0]} actions but {rewards.shape[0]} rewards")
    return LoggedData(actions, rewards)


class WISValueLowerBound(BaseEstimator):
    """High-probability lower bound on a target policy's value from logged data.

    Parameters
    ----------
    target, behavior : array-like of shape (K,)
        Action distributions of the evaluated and the logging policy.
    x : float, default=3.0
        Confidence parameter (``x >= 2``).
    y : float or None, default=None
        Free scale of the radius; ``None`` means ``1/n**2``.
    proxy_mode : {"global", "perk", "bruteforce", "mc"}, default="global"
    inner_reps : int, default=256
        Monte Carlo replicates for ``proxy_mode="mc"``.
    random_state : int, default=0

    Attributes
    ----------
    lower_bound_ : float
    report_ : BoundReport
    """

    def __init__(self, target=None, behavior=None, x: float = 3.0, y: Optional[float] = None,
                 proxy_mode: str = "global", inner_reps: int = 256, random_state: int = 0):
        self.target = target
        self.behavior = behavior
        self.x = x
        self.y = y
        self.proxy_mode = proxy_mode
        self.inner_reps = inner_reps
        self.random_state = random_state

    def fit(self, X, y):
        data = check_logged_data(X, y)
        if self.target is None or self.behavior is None:
            raise PreconditionError("target and behavior policies are required")
        self.report_ = opev_lower_bound(data, self.target, self.behavior, self.x, self.y,
                                        self.proxy_mode, self.inner_reps, self.random_state)
        self.lower_bound_ = self.report_.value
        self.value_estimate_ = self.report_.details["v_hat"]
        self.n_samples_ = data.n
        return self

    def transform(self, X=None):
        """Return ``[[v_hat, lower_bound]]`` for the fitted data."""
        check_is_fitted(self, "report_")
        return np.array([[self.value_estimate_, self.lower_bound_]])


class PACBayesPolicyLearner(BaseEstimator):
    """Learn a posterior over a finite policy class by maximizing a value lower bound.

    ``predict_proba`` returns the Gibbs (mixture) policy, which is context-free,
    so every row is the same action distribution.
    """

    def __init__(self, policy_class=None, behavior=None, prior=None, x: float = 3.0,
                 y: Optional[float] = None, step_size: float = 1.0, max_iters: int = 50,
                 gradient_epsilon: float = 1e-4, proxy_mode: str = "global",
                 inner_reps: int = 256, random_state: int = 0):
        self.policy_class = policy_class
        self.behavior = behavior
        self.prior = prior
        self.x = x
        self.y = y
        self.step_size = step_size
        self.max_iters = max_iters
        self.gradient_epsilon = gradient_epsilon
        self.proxy_mode = proxy_mode
        self.inner_reps = inner_reps
        self.random_state = random_state

    def _config(self) -> LearnConfig:
        return LearnConfig(x=self.x, y=self.y, step_size=self.step_size, max_iters=self.max_iters,
                           gradient_epsilon=self.gradient_epsilon, proxy_mode=self.proxy_mode,
                           seed=self.random_state, inner_reps=self.inner_reps)

    def fit(self, X, y):
        data = check_logged_data(X, y)
        if self.policy_class is None or self.behavior is None:
            raise PreconditionError("policy_class and behavior are required")
        cls = self.policy_class
        if not isinstance(cls, FinitePolicyClass):
            cls = FinitePolicyClass(np.asarray(cls, dtype=float))
        prior = (CategoricalDistribution.uniform(cls.m) if self.prior is None
                 else CategoricalDistribution(np.asarray(self.prior, dtype=float)))
        config = self._config()
        state = optimize_posterior(data, cls, prior, self.behavior, config)
        self.policy_class_ = cls
        self.posterior_ = state.posterior
        self.objective_ = state.objective
        self.objective_trace_ = list(state.objective_trace)
        self.report_ = learning_report(data, cls, prior, self.behavior, config, state)
        self.n_actions_ = cls.n_actions
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "posterior_")
        rows = len(X)
        return np.tile(self.policy_class_.mixture(self.posterior_), (rows, 1))

    def predict(self, X) -> np.ndarray:
        """Most likely action under the learned mixture policy."""
        return np.argmax(self.predict_proba(X), axis=1)
