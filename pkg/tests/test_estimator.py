import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from focallab.estimator import FeatureViewSelector, FocalMLPClassifier


def blobs(n=300, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.choice(np.array(["a", "b", "c"]), size=n)
    centers = {"a": [3, 0, 0], "b": [0, 3, 0], "c": [0, 0, 3]}
    X = np.array([centers[v] for v in y], dtype=float) + rng.normal(size=(n, 3))
    return X, y


def test_fit_predict_string_labels():
    X, y = blobs()
    clf = FocalMLPClassifier(gamma=2.0, hidden_dim=16, random_state=0).fit(X, y)
    assert list(clf.classes_) == ["a", "b", "c"]
    assert clf.score(X, y) > 0.9
    proba = clf.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)


def test_deterministic_and_clonable():
    X, y = blobs()
    a = FocalMLPClassifier(random_state=3).fit(X, y)
    b = clone(a).fit(X, y)
    np.testing.assert_array_equal(a.decision_function(X), b.decision_function(X))


def test_dfl_needs_bias_proba():
    X, y = blobs()
    with pytest.raises(ValueError, match="bias_proba"):
        FocalMLPClassifier(loss="dfl", gamma=2.0).fit(X, y)
    bias = np.full((len(y), 3), 1 / 3)
    FocalMLPClassifier(loss="dfl", gamma=2.0, max_epochs=1).fit(X, y, bias_proba=bias)


def test_feature_count_checked():
    X, y = blobs()
    clf = FocalMLPClassifier(max_epochs=1).fit(X, y)
    with pytest.raises(ValueError):
        clf.predict(X[:, :2])


def test_view_selector_in_pipeline():
    X, y = blobs()
    X = np.hstack([np.zeros((len(y), 2)), X])
    pipe = make_pipeline(FeatureViewSelector(shortcut_dim=3, view="shortcut_only"),
                         FocalMLPClassifier(max_epochs=2, random_state=0))
    pipe.fit(X, y)
    assert pipe.score(X, y) > 0.9
    assert FeatureViewSelector(shortcut_dim=3).fit(X).transform(X).shape == X.shape
