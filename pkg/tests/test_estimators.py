import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from procattn.errors import ConfigError
from procattn.estimators import SharedAttentionClassifier, SpecialisedAttentionClassifier
from procattn.eventlog import all_prefixes, build_traces
from procattn.synthetic import generate_rule_log

CLASSES = [SharedAttentionClassifier, SpecialisedAttentionClassifier]
SMALL = dict(hidden_size=4, epochs=2, batch_size=32, random_state=3)


@pytest.fixture(scope="module")
def prefixes():
    traces, _ = build_traces(generate_rule_log(50, seed=4))
    return all_prefixes(traces)


@pytest.fixture(scope="module", params=CLASSES, ids=lambda c: c.__name__)
def fitted(request, prefixes):
    return request.param(**SMALL).fit(prefixes)


@pytest.mark.parametrize("cls", CLASSES)
def test_params_and_clone(cls):
    est = cls(hidden_size=7, learning_rate=0.01)
    params = est.get_params()
    assert params["hidden_size"] == 7 and params["learning_rate"] == 0.01
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(epochs=3)
    assert est.epochs == 3


@pytest.mark.parametrize("cls", CLASSES)
def test_not_fitted(cls, prefixes):
    with pytest.raises(NotFittedError):
        cls().predict(prefixes[:2])


def test_predictions(fitted, prefixes):
    proba = fitted.predict_proba(prefixes[:15])
    assert proba.shape == (15, fitted.n_classes_)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    labels = fitted.predict(prefixes[:15])
    assert set(labels) <= set(fitted.classes_)
    np.testing.assert_array_equal(labels, fitted.classes_[proba.argmax(axis=1)])
    assert 0.0 <= fitted.score(prefixes) <= 1.0
    assert len(fitted.history_) >= 1


def test_same_seed_same_model(fitted, prefixes):
    again = clone(fitted).fit(prefixes)
    assert again.artifact_.to_bytes() == fitted.artifact_.to_bytes()


def test_from_artifact(fitted, prefixes):
    wrapped = type(fitted).from_artifact(fitted.artifact_)
    np.testing.assert_array_equal(wrapped.predict_proba(prefixes[:5]),
                                  fitted.predict_proba(prefixes[:5]))
    assert wrapped.hidden_size == 4


def test_from_artifact_wrong_architecture(fitted):
    other = [c for c in CLASSES if c is not type(fitted)][0]
    with pytest.raises(ConfigError):
        other.from_artifact(fitted.artifact_)


def test_explicit_targets(prefixes):
    y = ["same"] * len(prefixes)
    est = SharedAttentionClassifier(**SMALL).fit(prefixes, y)
    assert "same" in est.classes_
    assert est.score(prefixes, y) > 0.9


def test_bad_arguments(prefixes):
    with pytest.raises(ConfigError):
        SharedAttentionClassifier(validation_fraction=1.0, **SMALL).fit(prefixes)
    with pytest.raises(ValueError):
        SharedAttentionClassifier(**SMALL).fit(prefixes, ["a"])
    with pytest.raises(ValueError):
        SharedAttentionClassifier(hidden_size=4, epochs=1, random_state=-1).fit(prefixes)
