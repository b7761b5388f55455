import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sgas.estimators import SGASSearch, StandaloneClassifier
from sgas.supernet import Genotype

IDENTITY = Genotype([[(0, "identity"), (1, "linear")]], width=8, cells=1)


def test_get_params_and_clone():
    clf = StandaloneClassifier(IDENTITY, epochs=3, random_state=5)
    params = clf.get_params()
    assert params["epochs"] == 3 and params["random_state"] == 5
    twin = clone(clf)
    assert twin.get_params() == params
    search = SGASSearch(criterion="cri1", epochs=60)
    assert clone(search).get_params()["criterion"] == "cri1"


def test_standalone_fit_predict(tiny_blobs):
    X, y = tiny_blobs.train_full()
    clf = StandaloneClassifier(IDENTITY, epochs=20, batch_size=16).fit(X, y + 10)
    assert set(clf.classes_) == {10, 11, 12}
    Xt, yt = tiny_blobs.part("test")
    assert clf.score(Xt, yt + 10) >= 0.9
    proba = clf.predict_proba(Xt)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert len(clf.loss_curve_) == 20
    assert clf.n_parameters_ == clf.network_.num_parameters()


def test_input_validation(tiny_blobs):
    X, y = tiny_blobs.train_full()
    with pytest.raises(NotFittedError):
        StandaloneClassifier(IDENTITY).predict(X)
    with pytest.raises(ValueError):
        StandaloneClassifier(IDENTITY, epochs=1).fit(X, y[:-1])
    with pytest.raises(ValueError):
        StandaloneClassifier(IDENTITY, epochs=1).fit(X, np.linspace(0, 1, len(y)))
    clf = StandaloneClassifier(IDENTITY, epochs=1).fit(X, y)
    with pytest.raises(ValueError):
        clf.predict(X[:, :3])
    with pytest.raises(ValueError):
        StandaloneClassifier(None).fit(X, y)


def test_genotype_dict_accepted(tiny_blobs):
    X, y = tiny_blobs.train_full()
    clf = StandaloneClassifier(IDENTITY.to_dict(), epochs=1).fit(X, y)
    assert clf.predict(X).shape == y.shape


def test_search_estimator(tiny_spirals):
    X, y = tiny_spirals.train_full()
    est = SGASSearch(epochs=6, warm_up_epochs=1, decision_interval=1, history_window=2, batch_size=16,
                     cells=1, width=8, n_intermediate=2)
    est.fit(X, y)
    assert est.genotype_.n_intermediate == 2
    assert len(est.search_result_.decisions) == 4
    assert est.predict(X).shape == y.shape


def test_search_estimator_explicit_validation(tiny_spirals):
    X, y = tiny_spirals.part("w_train")
    Xv, yv = tiny_spirals.part("alpha_val")
    est = SGASSearch(criterion="darts1", epochs=2, batch_size=16, cells=1, width=8, n_intermediate=2)
    est.fit(X, y, Xv, yv)
    assert est.search_result_.decisions == []
