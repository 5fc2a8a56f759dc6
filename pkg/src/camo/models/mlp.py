"""Feed-forward ReLU network with softmax output, trained by Adam on cross-entropy."""

from __future__ import annotations

import copy

import numpy as np

from camo.errors import DegenerateLabels, DimensionMismatch, NumericOverflow, ShapeMismatch


def log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class MlpModel:
    kind = "mlp"

    def __init__(self, hidden=(64, 64, 64), epochs: int = 330, batch_size: int = 32,
                 lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 seed: int = 0):
        self.hidden = tuple(hidden)
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        self.classes_ = None
        self.t = 0
        self.loss_history: list[float] = []

    # -- parameters
    def init_params(self, n_in: int, n_out: int):
        sizes = (n_in, *self.hidden, n_out)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(self.rng.uniform(-limit, limit, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    # -- forward / backward
    def forward(self, X):
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return acts

    def loss_and_grads(self, X, yi):
        """Mean cross-entropy and its gradient for every parameter (params order)."""
        acts = self.forward(X)
        logp = log_softmax(acts[-1])
        n = len(X)
        loss = -logp[np.arange(n), yi].mean()
        delta = np.exp(logp)
        delta[np.arange(n), yi] -= 1.0
        delta /= n
        grads = []
        for i in range(len(self.weights) - 1, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(acts[i].T @ delta)
            if i:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        grads.reverse()
        return float(loss), grads

    def step(self, X, yi, lr=None) -> float:
        """One backprop + Adam update on a batch; returns the batch loss."""
        if len(X) == 0:
            raise ValueError("empty batch")
        lr = self.lr if lr is None else lr
        loss, grads = self.loss_and_grads(X, yi)
        if not np.isfinite(loss):
            raise NumericOverflow(f"non-finite loss {loss} at Adam step {self.t + 1}; "
                                  f"max |w| = {max(np.abs(w).max() for w in self.weights):.3g}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return loss

    # -- training
    def _encode(self, y):
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, len(self.classes_) - 1)
        if not np.array_equal(self.classes_[idx], y):
            raise ShapeMismatch("labels outside the classes the network was built for")
        return idx

    def fit(self, X, y, classes=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if len(X) == 0 or len(X) != len(y):
            raise DegenerateLabels("network needs at least one labelled row")
        self.classes_ = np.unique(y if classes is None else classes)
        self.init_params(X.shape[1], len(self.classes_))
        return self.train_epochs(X, y, self.epochs)

    def train_epochs(self, X, y, epochs: int, lr=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise ShapeMismatch(f"expected {self.n_inputs} features, got {X.shape[-1]}")
        yi = self._encode(np.asarray(y))
        n = len(X)
        for _ in range(epochs):
            order = self.rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                batch = order[start:start + self.batch_size]
                total += self.step(X[batch], yi[batch], lr) * len(batch)
            self.loss_history.append(total / n)
        return self

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise DimensionMismatch(f"expected {self.n_inputs} features")
        return np.exp(log_softmax(self.forward(X)[-1]))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    # -- checkpointing
    def get_state(self):
        hyper = np.array([len(self.hidden), *self.hidden, self.epochs, self.batch_size, self.lr,
                          self.beta1, self.beta2, self.eps, self.seed, self.t], dtype=np.float64)
        return [hyper, self.classes_.astype(np.float64), *self.params, *self.m, *self.v]

    @classmethod
    def from_state(cls, arrays):
        hyper = arrays[0]
        nh = int(hyper[0])
        hidden = tuple(int(h) for h in hyper[1:1 + nh])
        epochs, batch, lr, b1, b2, eps, seed, t = hyper[1 + nh:]
        model = cls(hidden, int(epochs), int(batch), lr, b1, b2, eps, int(seed))
        model.classes_ = arrays[1].astype(np.int64)
        k = 2 * (nh + 1)
        params, m, v = arrays[2:2 + k], arrays[2 + k:2 + 2 * k], arrays[2 + 2 * k:2 + 3 * k]
        model.weights = [np.array(a) for a in params[0::2]]
        model.biases = [np.array(a).reshape(-1) for a in params[1::2]]
        model.m = [np.array(a).reshape(p.shape) for a, p in zip(m, model.params)]
        model.v = [np.array(a).reshape(p.shape) for a, p in zip(v, model.params)]
        model.t = int(t)
        return model


def fine_tune(model: MlpModel, X_obf, y, epochs: int = 50, lr: float = 1e-4) -> MlpModel:
    """Continue training a copy of ``model`` on obfuscated rows at a low learning rate."""
    tuned = copy.deepcopy(model)
    return tuned.train_epochs(X_obf, y, epochs, lr)


def incremental_train(model: MlpModel, X_mixed, y, epochs: int = 50, lr: float = 1e-3) -> MlpModel:
    """Continue training a copy of ``model`` on a mix of original and obfuscated rows."""
    tuned = copy.deepcopy(model)
    return tuned.train_epochs(X_mixed, y, epochs, lr)


def half_and_half(X_a, y_a, X_b, y_b, rng):
    """Equal-size random draws from two sources, shuffled together."""
    n = min(len(y_a), len(y_b))
    ia = rng.choice(len(y_a), n, replace=False)
    ib = rng.choice(len(y_b), n, replace=False)
    X = np.concatenate([X_a[ia], X_b[ib]])
    y = np.concatenate([y_a[ia], y_b[ib]])
    order = rng.permutation(len(y))
    return X[order], y[order]
