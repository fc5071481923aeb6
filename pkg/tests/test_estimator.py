import numpy as np
import pytest
from numpy.testing import assert_allclose
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from flowmatch import FlowMatcher


@pytest.fixture
def swap():
    X = np.array([[0.0, 0.0], [1.0, 0.0]])
    return X, X[::-1].copy()


@pytest.mark.parametrize("cls", ["general", "hamiltonian", "divergence_free"])
def test_fit_transform_swap(cls, swap):
    X, y = swap
    est = FlowMatcher(field_class=cls).fit(X, y)
    assert_allclose(est.transform(X), y, atol=1e-6)
    assert est.score(X, y) >= -1e-6
    assert est.n_features_in_ == 2
    assert_allclose(est.fit_transform(X, y), y, atol=1e-6)


def test_inverse_transform(swap):
    X, y = swap
    est = FlowMatcher(field_class="hamiltonian").fit(X, y)
    pts = np.random.default_rng(0).uniform(-0.5, 1.5, (20, 2))
    assert_allclose(est.inverse_transform(est.transform(pts)), pts, atol=1e-7)
    assert_allclose(est.inverse_transform(y), X, atol=1e-6)


def test_contact_on_r3():
    X = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    y = np.array([[0.2, 0.1, -0.1], [0.9, 0.3, 0.2]])
    est = FlowMatcher(field_class="contact").fit(X, y)
    assert est.score(X, y) >= -1e-6
    rep = est.structure_report(n_samples=60)
    assert rep.pass_ and rep.kind == "contact" and rep.lambda_min > 0
    assert rep.composition["anchors"] == 2


def test_torus_wraps_images():
    X = np.array([[0.05, 0.5], [0.5, 0.5]])
    y = np.array([[0.95, 0.5], [0.5, 0.9]])
    est = FlowMatcher(field_class="hamiltonian", manifold="flat_torus").fit(X, y)
    assert est.score(X, y) >= -1e-6
    out = est.transform(np.random.default_rng(1).random((30, 2)))
    assert np.all((out >= 0) & (out < 1))


def test_structure_report_volume(swap):
    X, y = swap
    rep = FlowMatcher(field_class="divergence_free").fit(X, y).structure_report(n_samples=50)
    assert rep.kind == "volume" and rep.samples == 50 and rep.max_defect <= 1e-5


def test_params_and_clone():
    est = FlowMatcher(field_class="hamiltonian", radius_factor=0.2, seed=4)
    params = est.get_params()
    assert params["radius_factor"] == 0.2 and params["seed"] == 4
    c = clone(est)
    assert c.get_params() == params and not hasattr(c, "program_")
    est.set_params(tol=1e-9)
    assert est.tol == 1e-9


def test_deterministic(swap):
    X, y = swap
    a = FlowMatcher(field_class="general", seed=2).fit(X, y)
    b = FlowMatcher(field_class="general", seed=2).fit(X, y)
    assert a.program_.dumps() == b.program_.dumps()


def test_validation(swap):
    X, y = swap
    with pytest.raises(NotFittedError):
        FlowMatcher().transform(X)
    with pytest.raises(ValueError):
        FlowMatcher(field_class="magic").fit(X, y)
    with pytest.raises(ValueError):
        FlowMatcher().fit(X, y[:1])
    with pytest.raises(ValueError):
        FlowMatcher().fit(X, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        FlowMatcher(field_class="contact").fit(X, y)
    est = FlowMatcher().fit(X, y)
    with pytest.raises(ValueError):
        est.transform(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        est.transform([[np.nan, 0.0]])
