"""Classical baselines over raw numeric descriptors.

Each model predicts every output parameter independently. Features are the
seven descriptor integers; labels are parameter values. All three are
deterministic given the data order.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError


def _check(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(x) == 0:
        raise EmptyInputError("empty training set")
    if y.ndim == 1:
        y = y[:, None]
    return x, y


def _vote(labels) -> int:
    counts = Counter(int(v) for v in labels)
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)


class KNearestNeighbors:
    """Majority vote among the k nearest training descriptors (z-scored
    Euclidean). Points tied with the k-th distance all vote; equal counts go
    to the smaller value."""

    def __init__(self, k_neighbors: int = 5):
        self.k = k_neighbors

    def fit(self, x, y):
        x, y = _check(x, y)
        self.mean_ = x.mean(axis=0)
        std = x.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        self.x_ = (x - self.mean_) / self.scale_
        self.y_ = y
        return self

    def predict(self, x) -> np.ndarray:
        q = (np.asarray(x, dtype=np.float64) - self.mean_) / self.scale_
        out = np.empty((len(q), self.y_.shape[1]), dtype=self.y_.dtype)
        k = min(self.k, len(self.x_))
        for i, row in enumerate(q):
            d = np.sqrt(((self.x_ - row) ** 2).sum(axis=1))
            order = np.argsort(d, kind="stable")
            cutoff = d[order[k - 1]]
            near = np.nonzero(d <= cutoff + 1e-12)[0]
            for j in range(self.y_.shape[1]):
                out[i, j] = _vote(self.y_[near, j])
        return out


@dataclass
class _Node:
    label: int
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None


def _gini(counts: np.ndarray) -> np.ndarray:
    total = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / total[..., None]
    return np.where(total > 0, 1.0 - (p * p).sum(axis=-1), 0.0)


def best_split(x: np.ndarray, labels: np.ndarray, n_classes: int) -> tuple[int, float, float] | None:
    """Best (feature, threshold, weighted child Gini) by exhaustive midpoint search.

    Ties keep the lowest feature index, then the lowest threshold.
    """
    n = len(labels)
    best = None
    for f in range(x.shape[1]):
        order = np.argsort(x[:, f], kind="stable")
        xs, ys = x[order, f], labels[order]
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), ys] = 1.0
        left = np.cumsum(onehot, axis=0)[:-1]
        right = left[-1] + onehot[-1] - left if n > 1 else left
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        n_left = np.arange(1, n)
        score = (n_left * _gini(left) + (n - n_left) * _gini(right)) / n
        score = np.where(valid, score, np.inf)
        i = int(np.argmin(score))
        if best is None or score[i] < best[2] - 1e-12:
            best = (f, float((xs[i] + xs[i + 1]) / 2.0), float(score[i]))
    return best


class DecisionTree:
    """CART classification tree per output parameter, Gini impurity."""

    def __init__(self, max_depth: int = 12, min_samples_split: int = 2):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split

    def _grow(self, x, labels, n_classes, depth) -> _Node:
        counts = np.bincount(labels, minlength=n_classes)
        top = counts.max()
        node = _Node(label=int(np.nonzero(counts == top)[0][0]))
        if depth >= self.max_depth or len(labels) < self.min_samples_split or top == len(labels):
            return node
        split = best_split(x, labels, n_classes)
        if split is None or split[2] >= _gini(counts.astype(float)) - 1e-12:
            return node
        f, thr, _ = split
        mask = x[:, f] <= thr
        node.feature, node.threshold = f, thr
        node.left = self._grow(x[mask], labels[mask], n_classes, depth + 1)
        node.right = self._grow(x[~mask], labels[~mask], n_classes, depth + 1)
        return node

    def fit(self, x, y):
        x, y = _check(x, y)
        self.classes_ = []
        self.trees_ = []
        for j in range(y.shape[1]):
            classes, labels = np.unique(y[:, j], return_inverse=True)
            self.classes_.append(classes)
            self.trees_.append(self._grow(x, labels, len(classes), 0))
        return self

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.empty((len(x), len(self.trees_)), dtype=np.int64)
        for j, (root, classes) in enumerate(zip(self.trees_, self.classes_)):
            for i, row in enumerate(x):
                node = root
                while node.left is not None:
                    node = node.left if row[node.feature] <= node.threshold else node.right
                out[i, j] = classes[node.label]
        return out


class GaussianNaiveBayes:
    """Per-class independent Gaussians; variances get ``1e-9 * max feature variance`` added."""

    var_smoothing = 1e-9

    def fit(self, x, y):
        x, y = _check(x, y)
        eps = self.var_smoothing * max(float(x.var(axis=0).max()), 1e-300)
        self.models_ = []
        for j in range(y.shape[1]):
            classes = np.unique(y[:, j])
            means, vars_, priors = [], [], []
            for c in classes:
                xc = x[y[:, j] == c]
                means.append(xc.mean(axis=0))
                vars_.append(xc.var(axis=0) + eps)
                priors.append(len(xc) / len(x))
            self.models_.append((classes, np.array(means), np.array(vars_), np.log(priors)))
        return self

    def log_posterior(self, x, j: int = 0) -> np.ndarray:
        classes, means, vars_, log_prior = self.models_[j]
        x = np.asarray(x, dtype=np.float64)
        ll = -0.5 * (np.log(2 * np.pi * vars_)[None] + (x[:, None, :] - means[None]) ** 2 / vars_[None]).sum(axis=2)
        return ll + log_prior[None]

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.empty((len(x), len(self.models_)), dtype=np.int64)
        for j, (classes, *_rest) in enumerate(self.models_):
            out[:, j] = classes[np.argmax(self.log_posterior(x, j), axis=1)]
        return out


BASELINES = {
    "dtree": DecisionTree,
    "gnb": GaussianNaiveBayes,
    "knn": KNearestNeighbors,
}
