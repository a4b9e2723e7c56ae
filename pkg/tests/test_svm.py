import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import svm_primal_optimum
from seppomdp.hmm import InvalidArgumentError
from seppomdp.inventory import BasestockTable
from seppomdp.models import PARTITION_INVENTORY, partition_demo_model
from seppomdp.svm import (
    BasestockClassifier,
    band_structure,
    classify,
    hinge_objective,
    multiclass_hinge_objective,
    partition_report,
    simplex_mesh,
    train_multiclass,
    train_ovr,
)


def _clusters(rng, n=40):
    a = rng.dirichlet([20, 2, 2], size=n)
    b = rng.dirichlet([2, 2, 20], size=n)
    return np.vstack([a, b]), np.array([5] * n + [9] * n)


@pytest.mark.parametrize("trainer", [train_ovr, train_multiclass])
def test_separable_clusters_are_fit_exactly(trainer):
    X, y = _clusters(np.random.default_rng(0))
    clf = trainer(X, y, C=50.0, max_epochs=4000)
    assert np.all(clf.predict(X) == y)


@pytest.mark.parametrize("trainer", [train_ovr, train_multiclass])
def test_single_class_is_constant(trainer):
    X = np.random.default_rng(1).dirichlet(np.ones(3), size=10)
    clf = trainer(X, np.full(10, 7))
    assert clf.classes.tolist() == [7]
    assert classify(clf, [0.1, 0.1, 0.8]) == 7


def test_training_is_deterministic():
    X, y = _clusters(np.random.default_rng(2))
    a = train_multiclass(X, y, C=10.0, max_epochs=500, seed=3)
    b = train_multiclass(X, y, C=10.0, max_epochs=500, seed=3)
    assert a.to_json() == b.to_json()
    c = train_ovr(X, y, C=10.0, max_epochs=500, seed=3)
    d = train_ovr(X, y, C=10.0, max_epochs=500, seed=3)
    assert c.to_json() == d.to_json()


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), C=st.sampled_from([0.5, 5.0, 50.0]))
def test_trainers_reach_the_primal_optimum(seed, C):
    rng = np.random.default_rng(seed)
    X = rng.dirichlet(np.ones(3), size=15)
    y = rng.choice([1, 2, 3], size=15)
    y[:3] = [1, 2, 3]
    Xa = np.hstack([X, np.ones((15, 1))])
    mc = train_multiclass(X, y, C=C, tol=1e-8, max_epochs=200_000)
    W = np.hstack([mc.weights, mc.biases[:, None]])
    yi = np.searchsorted(mc.classes, y)
    best = svm_primal_optimum(Xa, yi, C, n_classes=3)
    assert multiclass_hinge_objective(W, Xa, yi, C) == pytest.approx(best, rel=1e-3, abs=1e-4)
    ovr = train_ovr(X, y, C=C, tol=1e-8, max_epochs=200_000)
    for k, cls in enumerate(ovr.classes):
        t = np.where(y == cls, 1.0, -1.0)
        w = np.append(ovr.weights[k], ovr.biases[k])
        best = svm_primal_optimum(Xa, t, C, binary=True)
        assert hinge_objective(w, Xa, t, C) == pytest.approx(best, rel=1e-3, abs=1e-4)


def test_tie_goes_to_smaller_level():
    clf = BasestockClassifier([3, 8], [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], 1.0)
    assert classify(clf, [0.5, 0.5]) == 3


def test_dimension_mismatch_and_bad_inputs():
    clf = BasestockClassifier([3], [[0.0, 0.0]], [0.0], 1.0)
    with pytest.raises(InvalidArgumentError):
        classify(clf, [0.2, 0.3, 0.5])
    with pytest.raises(InvalidArgumentError):
        train_ovr(np.ones((2, 2)) / 2, [1], C=1.0)
    with pytest.raises(InvalidArgumentError):
        train_ovr(np.ones((2, 2)) / 2, [1, 2], C=0.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 100.0))
def test_prediction_matches_score_scan_and_is_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    W, c = rng.normal(size=(4, 3)), rng.normal(size=4)
    clf = BasestockClassifier([2, 4, 6, 8], W, c, 1.0)
    scaled = BasestockClassifier([2, 4, 6, 8], W * scale, c * scale, 1.0)
    B = rng.dirichlet(np.ones(3), size=20)
    for b in B:
        scores = [W[k] @ b + c[k] for k in range(4)]
        assert classify(clf, b) == [2, 4, 6, 8][int(np.argmax(scores))]
    assert np.array_equal(clf.predict(B), scaled.predict(B))


def test_serialization_roundtrip(tmp_path):
    X, y = _clusters(np.random.default_rng(5))
    clf = train_multiclass(X, y, max_epochs=200)
    clf.save(tmp_path / "c.json")
    back = BasestockClassifier.load(tmp_path / "c.json")
    assert back.to_json() == clf.to_json()


def test_simplex_mesh():
    M = simplex_mesh(3, 4)
    assert M.shape == (15, 3)
    np.testing.assert_allclose(M.sum(axis=1), 1.0)
    assert len({tuple(r) for r in M}) == 15


def test_partition_report_counts():
    clf = BasestockClassifier([4], [[0.0, 0.0, 0.0]], [0.0], 1.0)
    rep = partition_report(clf, 10)
    assert rep.counts == {4: 66}
    with pytest.raises(InvalidArgumentError):
        partition_report(clf, 1)


def test_exact_partition_forms_ordered_bands():
    m = partition_demo_model()
    inv = PARTITION_INVENTORY
    table = BasestockTable(m, inv["tau"], inv["h_tilde"], inv["p_tilde"])
    mesh = simplex_mesh(3, 30)
    bands = band_structure(mesh, table.levels(mesh), 30)
    assert len(bands["levels"]) >= 4
    assert bands["ordered_bands"]


def test_band_structure_detects_disorder():
    mesh = simplex_mesh(2, 4)
    assert band_structure(mesh, [1, 1, 2, 2, 3], 4)["ordered_bands"]
    assert not band_structure(mesh, [1, 2, 1, 2, 3], 4)["ordered_bands"]
    assert band_structure(mesh, [1, 1, 3, 3, 3], 4)["max_rank_jump"] == 1
    assert band_structure(mesh, [1, 2, 2, 3, 1], 4)["max_rank_jump"] == 2
