"""Comparison classifiers over the prearranged feature representation
(a raw one-hot token block concatenated with z-scored metadata): ZeroR,
k-nearest-neighbors, linear SVM, and logistic regression.

All four are deterministic: weights start at zero, gradient descent uses a
fixed step size, and every tie has a documented winner (smaller label wins
votes, smaller record id wins distance ties).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import BaselineFeatures
from .errors import DomainError, ValidationError

BASELINE_KINDS = ("knn", "svm", "lr", "zeror")


@dataclass(frozen=True)
class BaselineConfig:
    kind: str
    k: int = 5
    l2: float = 1e-3
    learning_rate: float = 0.1
    iterations: int = 500

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise DomainError(f"unknown baseline kind {self.kind!r}")
        if self.k < 1:
            raise DomainError(f"k must be >= 1, got {self.k}")
        if self.l2 < 0 or self.learning_rate <= 0 or self.iterations < 1:
            raise DomainError("l2 >= 0, learning_rate > 0, iterations >= 1 required")


def _as_matrix(features: Sequence[BaselineFeatures] | np.ndarray) -> np.ndarray:
    if len(features) and isinstance(features[0], BaselineFeatures):
        matrix = np.asarray([f.as_array() for f in features], dtype=float)
    else:
        matrix = np.asarray(features, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    if matrix.ndim != 2 or matrix.shape[0] < 1:
        raise DomainError("features must form a nonempty 2-d matrix")
    return matrix


def _as_labels(labels: Sequence[int], n: int) -> np.ndarray:
    arr = np.asarray(labels, dtype=int)
    if arr.shape != (n,):
        raise DomainError(f"expected {n} labels, got shape {arr.shape}")
    if ((arr != 0) & (arr != 1)).any():
        raise DomainError("labels must be 0 or 1")
    return arr


class BaselineModel:
    kind: str = "base"

    def __init__(self):
        self.fitted = False

    def fit(self, features, labels, ids: Sequence | None = None) -> "BaselineModel":
        raise NotImplementedError

    def predict(self, features) -> np.ndarray:
        raise NotImplementedError

    def _require_fitted(self):
        if not self.fitted:
            raise ValidationError(f"{self.kind} model must be fitted before predict")


class ZeroR(BaselineModel):
    """Constant predictor of the training majority label (ties go to 0), so
    its accuracy on any labeled set is exactly that set's majority fraction
    when the class balance matches training."""

    kind = "zeror"

    def fit(self, features, labels, ids=None) -> "ZeroR":
        matrix = _as_matrix(features)
        y = _as_labels(labels, matrix.shape[0])
        counts = np.bincount(y, minlength=2)
        self.majority_label = int(np.argmax(counts))  # argmax breaks ties low
        self.fitted = True
        return self

    def predict(self, features) -> np.ndarray:
        self._require_fitted()
        return np.full(_as_matrix(features).shape[0], self.majority_label, dtype=int)


class Knn(BaselineModel):
    """Majority vote among the k nearest training points by euclidean
    distance.  Training rows are kept sorted by record id; a stable sort on
    distances then guarantees that equal distances resolve to the smaller id,
    and vote ties resolve to the smaller label."""

    kind = "knn"

    def __init__(self, k: int = 5):
        super().__init__()
        if k < 1:
            raise DomainError(f"k must be >= 1, got {k}")
        self.k = k

    def fit(self, features, labels, ids=None) -> "Knn":
        matrix = _as_matrix(features)
        y = _as_labels(labels, matrix.shape[0])
        if ids is None:
            ids = np.arange(matrix.shape[0])
        ids = np.asarray(ids)
        if ids.shape[0] != matrix.shape[0]:
            raise DomainError("ids and features lengths differ")
        order = np.argsort(ids, kind="stable")
        self.train_x = matrix[order]
        self.train_y = y[order]
        self.train_ids = ids[order]
        self.fitted = True
        return self

    def predict(self, features) -> np.ndarray:
        self._require_fitted()
        queries = _as_matrix(features)
        if queries.shape[1] != self.train_x.shape[1]:
            raise DomainError(
                f"feature dimension {queries.shape[1]} does not match "
                f"training dimension {self.train_x.shape[1]}"
            )
        k = min(self.k, self.train_x.shape[0])
        out = np.empty(queries.shape[0], dtype=int)
        for i, q in enumerate(queries):
            sq_dist = np.sum((self.train_x - q) ** 2, axis=1)
            nearest = np.argsort(sq_dist, kind="stable")[:k]
            votes = np.bincount(self.train_y[nearest], minlength=2)
            out[i] = int(np.argmax(votes))
        return out


class _LinearBaseline(BaselineModel):
    """Shared full-batch gradient descent over a linear score s = Xw + b with
    an l2 penalty on w.  Subclasses supply the per-sample loss and its
    derivative with respect to the margin y*s (labels mapped to {-1, +1})."""

    def __init__(self, l2: float = 1e-3, learning_rate: float = 0.1, iterations: int = 500):
        super().__init__()
        self.l2 = l2
        self.learning_rate = learning_rate
        self.iterations = iterations

    def _loss(self, margins: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _dloss_dmargin(self, margins: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def fit(self, features, labels, ids=None) -> "_LinearBaseline":
        x = _as_matrix(features)
        y01 = _as_labels(labels, x.shape[0])
        if len(np.unique(y01)) < 2:
            warnings.warn(
                f"{self.kind} trained on a single-class set; the fit is "
                "degenerate but defined",
                stacklevel=2,
            )
        y = 2.0 * y01 - 1.0
        n = x.shape[0]
        self.weights = np.zeros(x.shape[1])
        self.bias = 0.0
        self.loss_history: list[float] = []
        for _ in range(self.iterations):
            margins = y * (x @ self.weights + self.bias)
            self.loss_history.append(
                float(np.mean(self._loss(margins)) + self.l2 * self.weights @ self.weights)
            )
            dmargin = self._dloss_dmargin(margins) / n
            grad_w = x.T @ (dmargin * y) + 2.0 * self.l2 * self.weights
            grad_b = float(np.sum(dmargin * y))
            self.weights -= self.learning_rate * grad_w
            self.bias -= self.learning_rate * grad_b
        self.fitted = True
        return self

    def score(self, features) -> np.ndarray:
        self._require_fitted()
        return _as_matrix(features) @ self.weights + self.bias

    def predict(self, features) -> np.ndarray:
        return (self.score(features) > 0).astype(int)


class LogisticRegression(_LinearBaseline):
    """Logistic loss log(1 + exp(-y*s)) with l2 penalty."""

    kind = "lr"

    def _loss(self, margins):
        return np.logaddexp(0.0, -margins)

    def _dloss_dmargin(self, margins):
        # d/dm log(1+e^-m) = -sigmoid(-m), written via logaddexp for stability
        return -np.exp(-np.logaddexp(0.0, margins))


class LinearSvm(_LinearBaseline):
    """Hinge loss max(0, 1 - y*s) with l2 penalty, trained by subgradient
    descent."""

    kind = "svm"

    def _loss(self, margins):
        return np.maximum(0.0, 1.0 - margins)

    def _dloss_dmargin(self, margins):
        return np.where(margins < 1.0, -1.0, 0.0)


def make_baseline(cfg: BaselineConfig) -> BaselineModel:
    if cfg.kind == "zeror":
        return ZeroR()
    if cfg.kind == "knn":
        return Knn(k=cfg.k)
    if cfg.kind == "lr":
        return LogisticRegression(cfg.l2, cfg.learning_rate, cfg.iterations)
    return LinearSvm(cfg.l2, cfg.learning_rate, cfg.iterations)
