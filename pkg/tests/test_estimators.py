import numpy as np
import pytest
from sklearn.base import clone

from steinbound import PreconditionError
from steinbound.estimators import PACBayesPolicyLearner, WISValueLowerBound, check_logged_data
from steinbound.sim import default_policy_class, generate_logs, standard_environments
from steinbound.wis import opev_lower_bound

SETTING = standard_environments()["mismatched"]
DATA = generate_logs(SETTING.env, SETTING.behavior, 1500, 2)


def test_value_bound_matches_function():
    est = WISValueLowerBound(target=SETTING.target, behavior=SETTING.behavior, x=3, y=0.01)
    est.fit(DATA.actions.reshape(-1, 1), DATA.rewards)
    rep = opev_lower_bound(DATA, SETTING.target, SETTING.behavior, 3, 0.01)
    assert est.lower_bound_ == rep.value
    assert est.transform().shape == (1, 2)


def test_params_and_clone():
    est = WISValueLowerBound(target=SETTING.target, behavior=SETTING.behavior, proxy_mode="mc")
    params = est.get_params()
    assert params["proxy_mode"] == "mc" and params["x"] == 3.0
    twin = clone(est).set_params(x=5)
    assert twin.x == 5 and est.x == 3.0


def test_learner_predicts_mixture():
    cls = default_policy_class(5)
    learner = PACBayesPolicyLearner(policy_class=cls.policies, behavior=SETTING.behavior, x=3, y=0.01,
                                    proxy_mode="mc", inner_reps=16, max_iters=10)
    learner.fit(DATA.actions, DATA.rewards)
    proba = learner.predict_proba(np.zeros((4, 1)))
    assert proba.shape == (4, 5)
    assert np.allclose(proba.sum(axis=1), 1)
    assert learner.objective_ == learner.report_.value
    assert learner.predict(np.zeros((2, 1))).tolist() == [int(np.argmax(proba[0]))] * 2


def test_input_validation():
    with pytest.raises(PreconditionError):
        check_logged_data(np.zeros((3, 2)), [0, 1, 1])
    with pytest.raises(PreconditionError):
        check_logged_data([0.5, 1.0], [0, 1])
    with pytest.raises(PreconditionError):
        check_logged_data([0, 1, 1], [0, 1])
    assert check_logged_data([0.0, 2.0], [1, 0]).actions.tolist() == [0, 2]


def test_unfitted():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        PACBayesPolicyLearner().predict_proba([[0]])
