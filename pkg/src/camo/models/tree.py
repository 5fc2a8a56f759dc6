"""CART classification trees (Gini, best splitter) and a bagged forest of them."""

from __future__ import annotations

import math

import numpy as np

from camo.errors import DegenerateLabels, DimensionMismatch, EmptyNode


def gini_impurity(label_counts) -> float:
    counts = np.asarray(label_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise EmptyNode("Gini impurity of an empty node")
    return float(1.0 - ((counts / total) ** 2).sum())


def _split_scores(x, yc, n_classes):
    """Weighted child impurity for every threshold of one feature.

    Returns (impurities, thresholds) aligned on sorted positions; positions
    that do not separate distinct values get ``inf``.
    """
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], yc[order]
    n = len(xs)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), ys] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]
    right = left[-1] + onehot[-1] - left
    nl = np.arange(1, n, dtype=np.float64)[:, None]
    nr = n - nl
    gl = 1.0 - ((left / nl) ** 2).sum(1)
    gr = 1.0 - ((right / nr) ** 2).sum(1)
    imp = (nl[:, 0] * gl + nr[:, 0] * gr) / n
    valid = xs[1:] > xs[:-1]
    imp = np.where(valid, imp, np.inf)
    thresholds = (xs[:-1] + xs[1:]) / 2.0
    # midpoint of adjacent floats can round up onto the right value
    thresholds = np.where(thresholds >= xs[1:], xs[:-1], thresholds)
    return imp, thresholds


class DecisionTreeModel:
    """Unlimited-depth CART tree.

    Splits are chosen by weighted Gini over midpoints between consecutive
    distinct values; ties go to the lowest feature index, then the lowest
    threshold. Zero-gain splits are allowed so impure nodes keep splitting
    while any feature still varies.
    """

    kind = "dt"

    def __init__(self, max_depth=None, min_samples_split: int = 2, max_features=None,
                 random_state: int = 30):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.random_state = random_state
        self.classes_ = None

    def fit(self, X, y, rng=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if len(X) == 0 or len(X) != len(y):
            raise DegenerateLabels("tree needs at least one labelled row")
        self.classes_, yc = np.unique(y, return_inverse=True)
        return self._fit_encoded(X, yc, len(self.classes_), rng)

    def _fit_encoded(self, X, yc, n_classes, rng=None):
        self.n_features = X.shape[1]
        n_try = self.n_features if self.max_features is None else self.max_features
        if rng is None and n_try < self.n_features:
            rng = np.random.default_rng(self.random_state)
        feature, threshold, left, right, value = [], [], [], [], []

        def new_node(idx):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(np.bincount(yc[idx], minlength=n_classes))
            return len(feature) - 1

        stack = [(new_node(np.arange(len(X))), np.arange(len(X)), 0)]
        while stack:
            node, idx, depth = stack.pop()
            counts = value[node]
            if (len(idx) < self.min_samples_split or np.count_nonzero(counts) <= 1
                    or (self.max_depth is not None and depth >= self.max_depth)):
                continue
            if n_try < self.n_features:
                perm = rng.permutation(self.n_features)
                batches = [np.sort(perm[:n_try])] + [[f] for f in perm[n_try:]]
            else:
                batches = [range(self.n_features)]
            best = None
            for batch in batches:
                for f in batch:
                    imp, thr = _split_scores(X[idx, f], yc[idx], n_classes)
                    i = int(np.argmin(imp))
                    if imp[i] == np.inf:
                        continue
                    cand = (imp[i], f, thr[i])
                    if best is None or cand[0] < best[0] or (cand[0] == best[0] and f < best[1]):
                        best = cand
                if best is not None:
                    break
            if best is None:
                continue
            _, f, t = best
            mask = X[idx, f] <= t
            li, ri = idx[mask], idx[~mask]
            feature[node], threshold[node] = f, t
            left[node], right[node] = new_node(li), new_node(ri)
            stack.append((right[node], ri, depth + 1))
            stack.append((left[node], li, depth + 1))

        self.feature = np.array(feature, dtype=np.int64)
        self.threshold = np.array(threshold, dtype=np.float64)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.value = np.array(value, dtype=np.float64).reshape(-1, n_classes)
        return self

    @property
    def node_count(self):
        return len(self.feature)

    def apply(self, X):
        """Leaf index reached by each row."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features")
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r, nd = rows[active], node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict_encoded(self, X):
        return self.value[self.apply(X)].argmax(axis=1)

    def predict(self, X):
        return self.classes_[self.predict_encoded(X)]

    def get_state(self):
        hyper = np.array([self.n_features, len(self.classes_)], dtype=np.float64)
        return [hyper, self.classes_.astype(np.float64), self.feature.astype(np.float64),
                self.threshold, self.left.astype(np.float64), self.right.astype(np.float64),
                self.value]

    @classmethod
    def from_state(cls, arrays):
        hyper, classes, feature, threshold, left, right, value = arrays
        model = cls()
        model.n_features = int(hyper[0])
        model.classes_ = classes.astype(np.int64)
        model.feature, model.threshold = feature.astype(np.int64), threshold
        model.left, model.right = left.astype(np.int64), right.astype(np.int64)
        model.value = value.reshape(-1, int(hyper[1]))
        return model


class RandomForestModel:
    """Bootstrap-bagged trees with sqrt(d) candidate features per split; majority vote."""

    kind = "rf"

    def __init__(self, n_estimators: int = 53, random_state: int = 30, max_features="sqrt"):
        self.n_estimators = n_estimators
        self.random_state = random_state
        self.max_features = max_features
        self.trees: list[DecisionTreeModel] = []
        self.classes_ = None

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if len(X) == 0 or len(X) != len(y):
            raise DegenerateLabels("forest needs at least one labelled row")
        self.classes_, yc = np.unique(y, return_inverse=True)
        n, d = X.shape
        m = max(1, int(math.sqrt(d))) if self.max_features == "sqrt" else self.max_features
        rng = np.random.default_rng(self.random_state)
        self.trees = []
        for _ in range(self.n_estimators):
            boot = rng.integers(0, n, n)
            tree = DecisionTreeModel(max_features=m)
            tree.classes_ = self.classes_
            tree._fit_encoded(X[boot], yc[boot], len(self.classes_), rng)
            self.trees.append(tree)
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        votes = np.zeros((len(X), len(self.classes_)), dtype=np.int64)
        rows = np.arange(len(X))
        for tree in self.trees:
            np.add.at(votes, (rows, tree.predict_encoded(X)), 1)
        return self.classes_[votes.argmax(axis=1)]

    def get_state(self):
        state = [np.array([self.n_estimators, self.random_state], dtype=np.float64),
                 self.classes_.astype(np.float64)]
        for tree in self.trees:
            state.extend(tree.get_state())
        return state

    @classmethod
    def from_state(cls, arrays):
        hyper, classes = arrays[:2]
        model = cls(int(hyper[0]), int(hyper[1]))
        model.classes_ = classes.astype(np.int64)
        rest = arrays[2:]
        model.trees = [DecisionTreeModel.from_state(rest[i:i + 7]) for i in range(0, len(rest), 7)]
        return model
