from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .. import gradkit as gk
from ..data import Instance
from .base import Batch, Model, glorot, pad_ids, register


@register
class ClassifierModel(Model):
    """Embedding mean-pool -> tanh hidden layer -> softmax over labels."""

    arch = "bow"

    @property
    def support_size(self) -> int:
        return len(self.labels)

    def init_params(self, rng):
        s, V, E, H, K = self.spec, len(self.vocab), self.spec.emb, self.spec.hidden, len(self.labels)
        return {
            "emb": rng.normal(0.0, 0.1 * s.init_scale, size=(V, E)),
            "W1": glorot(rng, E, H, s.init_scale),
            "b1": np.zeros(H),
            "W2": np.zeros((H, K)) if s.zero_output else glorot(rng, H, K, s.init_scale),
            "b2": np.zeros(K),
        }

    def make_batch(self, instances: Sequence[Instance]) -> Batch:
        label_id = {lab: i for i, lab in enumerate(self.labels)}
        src, mask = pad_ids([self.vocab.encode(x.source) or [1] for x in instances])
        gold = np.array([[label_id.get(x.label, 0)] for x in instances], dtype=np.int64)
        return Batch([x.id for x in instances], src, mask, gold, np.ones((len(instances), 1)))

    def log_probs(self, p: Mapping[str, gk.Tensor], batch: Batch) -> gk.Tensor:
        w = batch.src_mask / batch.src_mask.sum(axis=1, keepdims=True)
        e = gk.take_rows(p["emb"], batch.src)
        pooled = gk.sum_(e * w[..., None], axis=1)
        h = gk.tanh(pooled @ p["W1"] + p["b1"])
        logits = h @ p["W2"] + p["b2"]
        lp = gk.log_softmax(logits)
        return lp.reshape(len(batch), 1, self.support_size)

    def predict(self, instances: Sequence[Instance]) -> list:
        lp, _ = self.batch_log_probs(instances)
        return [self.labels[i] for i in lp[:, 0].argmax(axis=-1)]


class FeatureClassifier:
    """Softmax classifier over dense feature vectors (one tanh hidden layer).

    Inputs are standardised with statistics of the training features.
    """

    def __init__(self, n_features: int, n_classes: int = 2, hidden: int = 16, seed: int = 0):
        rng = np.random.default_rng([seed, 0xFEA7])
        self.params = {
            "W1": glorot(rng, n_features, hidden),
            "b1": np.zeros(hidden),
            "W2": glorot(rng, hidden, n_classes),
            "b2": np.zeros(n_classes),
        }
        self.mu = np.zeros(n_features)
        self.sd = np.ones(n_features)
        self.seed = seed

    def _log_probs(self, p, X):
        h = gk.tanh(X @ p["W1"] + p["b1"])
        return gk.log_softmax(h @ p["W2"] + p["b2"])

    def fit(self, X: np.ndarray, y: np.ndarray, epochs: int = 200, lr: float = 1e-2,
            batch_size: int = 64) -> "FeatureClassifier":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.mu = X.mean(axis=0)
        self.sd = X.std(axis=0) + 1e-8
        Z = (X - self.mu) / self.sd
        onehot = np.eye(self.params["b2"].size)[y]
        state = gk.OptimizerState.for_params(self.params, lr=lr)
        order_rng = np.random.default_rng([self.seed, 0xFEA8])
        for _ in range(epochs):
            order = order_rng.permutation(len(Z))
            for lo in range(0, len(Z), batch_size):
                idx = order[lo:lo + batch_size]
                leaves = {k: gk.param(v, name=k) for k, v in self.params.items()}
                loss = -gk.mean(gk.sum_(self._log_probs(leaves, Z[idx]) * onehot[idx], axis=-1))
                grads = gk.backward(loss, params=leaves)
                gk.adam_step(self.params, grads, state)
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.mu) / self.sd
        consts = {k: gk.Tensor(v) for k, v in self.params.items()}
        with gk.no_grad():
            return np.exp(self._log_probs(consts, Z).data)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)
