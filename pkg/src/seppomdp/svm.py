"""Linear soft-margin SVMs mapping belief vectors to base-stock levels.

Both trainers delegate to liblinear (dual coordinate descent) through
scikit-learn's ``LinearSVC``:

* :func:`train_ovr` fits one binary problem per level,
  ``1/2 ||(w, c)||^2 + C sum_i max(0, 1 - y_i (w . b_i + c))``;
* :func:`train_multiclass` fits the joint Crammer-Singer problem.

Prediction is the level with the largest score ``w . b + c``. The bias is
treated as the weight of a constant feature; on the simplex a constant
feature is already spanned by the coordinates, so regularizing it only
changes which of several equivalent separators is preferred.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import LinearSVC

from .hmm import InvalidArgumentError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BasestockClassifier:
    classes: np.ndarray
    weights: np.ndarray
    biases: np.ndarray
    C: float

    def __post_init__(self):
        classes = np.asarray(self.classes, dtype=int).reshape(-1)
        W = np.atleast_2d(np.asarray(self.weights, dtype=float))
        c = np.asarray(self.biases, dtype=float).reshape(-1)
        if classes.size == 0 or np.any(np.diff(classes) <= 0):
            raise InvalidArgumentError("classes must be nonempty and strictly ascending")
        if W.shape[0] != classes.size or c.size != classes.size:
            raise InvalidArgumentError("need one (weight, bias) pair per class")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", c)

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def decision_function(self, beliefs) -> np.ndarray:
        B = np.atleast_2d(np.asarray(beliefs, dtype=float))
        if B.shape[1] != self.n_features:
            raise InvalidArgumentError(f"belief length {B.shape[1]} != classifier dimension {self.n_features}")
        return B @ self.weights.T + self.biases

    def predict(self, beliefs) -> np.ndarray:
        # argmax returns the first maximum, i.e. the smallest level on ties
        return self.classes[np.argmax(self.decision_function(beliefs), axis=1)]

    def to_dict(self) -> dict:
        return {
            "classes": self.classes.tolist(),
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "C": float(self.C),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BasestockClassifier":
        return cls(data["classes"], data["weights"], data["biases"], data["C"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "BasestockClassifier":
        return cls.from_dict(json.loads(Path(path).read_text()))


def classify(classifier: BasestockClassifier, belief) -> int:
    b = np.asarray(belief, dtype=float)
    if b.ndim != 1:
        raise InvalidArgumentError("belief must be 1-d")
    return int(classifier.predict(b[None, :])[0])


def hinge_objective(w: np.ndarray, X: np.ndarray, y: np.ndarray, C: float) -> float:
    """Binary regularized hinge objective for augmented weights ``w`` and features ``X``."""
    return 0.5 * float(w @ w) + C * float(np.maximum(0.0, 1.0 - y * (X @ w)).sum())


def multiclass_hinge_objective(W: np.ndarray, X: np.ndarray, yi: np.ndarray, C: float) -> float:
    """Crammer-Singer objective; ``W`` is ``(n_classes, p)``, ``yi`` holds class indices."""
    S = X @ W.T
    rows = np.arange(X.shape[0])
    M = S + 1.0
    M[rows, yi] -= 1.0
    return 0.5 * float((W * W).sum()) + C * float((M.max(axis=1) - S[rows, yi]).sum())


def _prepare(beliefs, labels, C):
    X = np.atleast_2d(np.asarray(beliefs, dtype=float))
    labels = np.asarray(labels, dtype=int).reshape(-1)
    if X.shape[0] == 0 or X.shape[0] != labels.size:
        raise InvalidArgumentError("need one label per belief and at least one sample")
    if not C > 0:
        raise InvalidArgumentError("C must be positive")
    return X, labels, np.unique(labels)


def _fit(beliefs, labels, C, max_epochs, tol, seed, multi_class):
    X, labels, classes = _prepare(beliefs, labels, C)
    p = X.shape[1]
    if classes.size == 1:
        return BasestockClassifier(classes, np.zeros((1, p)), np.zeros(1), C)
    svc = LinearSVC(
        loss="hinge",
        dual=True,
        C=C,
        multi_class=multi_class,
        fit_intercept=True,
        intercept_scaling=1.0,
        tol=tol,
        max_iter=max_epochs,
        random_state=seed,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        svc.fit(X, labels)
    # liblinear does not report a usable iteration count for crammer_singer,
    # so its convergence warning is only meaningful for one-vs-rest
    if multi_class == "ovr" and any(issubclass(w.category, ConvergenceWarning) for w in caught):
        log.warning("SVM solver hit max_epochs=%d before reaching tol=%g", max_epochs, tol)
    W, c = svc.coef_, svc.intercept_
    if W.shape[0] == 1:
        # binary problems come back as a single (w, c) scoring the larger class
        W, c = np.vstack([-W, W]), np.concatenate([-c, c])
    return BasestockClassifier(classes, W, c, C)


def train_ovr(
    beliefs,
    labels,
    C: float = 50.0,
    max_epochs: int = 20000,
    tol: float = 1e-4,
    seed: int = 0,
) -> BasestockClassifier:
    """Fit one binary soft-margin SVM per base-stock level (one-vs-rest)."""
    return _fit(beliefs, labels, C, max_epochs, tol, seed, "ovr")


def train_multiclass(
    beliefs,
    labels,
    C: float = 50.0,
    max_epochs: int = 20000,
    tol: float = 1e-4,
    seed: int = 0,
) -> BasestockClassifier:
    """Fit a joint (Crammer-Singer) multi-class linear soft-margin SVM.

    Minimizes ``1/2 sum_k ||(w_k, c_k)||^2 + C sum_i max(0, max_{k != y_i}
    (1 + f_k(b_i)) - f_{y_i}(b_i))``. Unlike one-vs-rest, the scores are
    trained jointly, so a middle base-stock band bounded by two hyperplanes
    can win the argmax without being separable from the rest on its own.
    """
    return _fit(beliefs, labels, C, max_epochs, tol, seed, "crammer_singer")


TRAINERS = {"ovr": train_ovr, "crammer_singer": train_multiclass}


def simplex_mesh(n_states: int, resolution: int) -> np.ndarray:
    """All points of the simplex with coordinates in ``{0, 1/r, ..., 1}``, lexicographic order."""
    if resolution < 1 or n_states < 1:
        raise InvalidArgumentError("resolution and n_states must be >= 1")
    rows = []
    for bars in combinations(range(resolution + n_states - 1), n_states - 1):
        edges = (-1,) + bars + (resolution + n_states - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(n_states)])
    return np.array(rows, dtype=float) / resolution


@dataclass
class PartitionReport:
    points: np.ndarray
    labels: np.ndarray
    counts: dict


def partition_report(classifier: BasestockClassifier, resolution: int) -> PartitionReport:
    """Label every point of a barycentric mesh and count points per level."""
    if resolution < 2:
        raise InvalidArgumentError("resolution must be >= 2")
    pts = simplex_mesh(classifier.n_features, resolution)
    labels = classifier.predict(pts)
    counts = {int(c): int((labels == c).sum()) for c in classifier.classes}
    return PartitionReport(pts, labels, counts)


def mesh_neighbors(points: np.ndarray, resolution: int) -> list:
    """Index pairs of mesh points one unit step apart (mass moved between two coordinates)."""
    keys = np.rint(points * resolution).astype(int)
    index = {tuple(k): i for i, k in enumerate(keys)}
    n = keys.shape[1]
    pairs = []
    for i, k in enumerate(keys):
        for a in range(n):
            if k[a] == 0:
                continue
            for b in range(n):
                if b == a:
                    continue
                nb = k.copy()
                nb[a] -= 1
                nb[b] += 1
                j = index.get(tuple(nb))
                if j is not None and i < j:
                    pairs.append((i, j))
    return pairs


def band_structure(points: np.ndarray, labels: np.ndarray, resolution: int) -> dict:
    """Whether mesh labels form ordered bands.

    Reports, per level, whether its mesh region is connected, and the largest
    rank jump between neighbouring mesh points (``1`` means each region only
    borders the next lower and next higher level).
    """
    labels = np.asarray(labels)
    levels = np.unique(labels)
    rank = np.searchsorted(levels, labels)
    pairs = np.array(mesh_neighbors(points, resolution), dtype=int).reshape(-1, 2)
    jump = int(np.abs(rank[pairs[:, 0]] - rank[pairs[:, 1]]).max()) if pairs.size else 0
    parent = np.arange(labels.size)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        if labels[i] == labels[j]:
            parent[find(i)] = find(j)
    connected = {}
    for lev in levels:
        members = np.flatnonzero(labels == lev)
        connected[int(lev)] = len({find(i) for i in members}) == 1
    return {
        "levels": levels.tolist(),
        "connected": connected,
        "max_rank_jump": jump,
        "ordered_bands": all(connected.values()) and jump <= 1,
    }
