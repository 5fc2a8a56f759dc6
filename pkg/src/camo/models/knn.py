from __future__ import annotations

import numpy as np

from camo.errors import DegenerateLabels, DimensionMismatch


class KnnModel:
    """k-nearest neighbours, Minkowski distance, uniform vote.

    Vote ties go to the smallest class id; distance ties to the earlier
    training row.
    """

    kind = "knn"

    def __init__(self, n_neighbors: int = 5, p: float = 2.0):
        self.n_neighbors = n_neighbors
        self.p = p
        self.X = None
        self.yi = None
        self.classes_ = None

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if len(X) == 0 or len(X) != len(y):
            raise DegenerateLabels("kNN needs at least one labelled row")
        self.classes_, self.yi = np.unique(y, return_inverse=True)
        self.X = X
        return self

    def _distances(self, Q):
        if self.p == 2:
            d = (Q * Q).sum(1)[:, None] + (self.X * self.X).sum(1)[None, :] - 2.0 * Q @ self.X.T
            return np.maximum(d, 0.0)
        return (np.abs(Q[:, None, :] - self.X[None, :, :]) ** self.p).sum(-1)

    def predict(self, X, chunk: int = 512):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.X.shape[1]:
            raise DimensionMismatch(f"expected {self.X.shape[1]} features")
        k = min(self.n_neighbors, len(self.X))
        n_classes = len(self.classes_)
        out = np.empty(len(X), dtype=np.int64)
        for start in range(0, len(X), chunk):
            d = self._distances(X[start:start + chunk])
            nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
            votes = np.zeros((len(d), n_classes), dtype=np.int64)
            np.add.at(votes, (np.arange(len(d))[:, None], self.yi[nearest]), 1)
            out[start:start + chunk] = votes.argmax(axis=1)
        return self.classes_[out]

    def get_state(self):
        return [np.array([self.n_neighbors, self.p], dtype=np.float64), self.X,
                self.classes_.astype(np.float64), self.yi.astype(np.float64)]

    @classmethod
    def from_state(cls, arrays):
        hyper, X, classes, yi = arrays
        model = cls(int(hyper[0]), float(hyper[1]))
        model.X, model.classes_, model.yi = X, classes.astype(np.int64), yi.astype(np.int64)
        return model
