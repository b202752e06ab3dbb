from __future__ import annotations

import logging
import math
from typing import Callable, Sequence

import numpy as np

from .. import gradkit as gk
from ..data import Corpus, Instance
from .base import Batch, Model, ModelSpec, TrainConfig, build_model
from .vocab import Vocabulary

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; ``last_good`` holds the last finite checkpoint."""

    def __init__(self, msg: str, last_good: Model):
        super().__init__(msg)
        self.last_good = last_good


def cross_entropy(model: Model, p, batch: Batch) -> gk.Tensor:
    """Mean negative log-likelihood over real positions."""
    lp = model.log_probs(p, batch)
    onehot = np.zeros(lp.shape)
    np.put_along_axis(onehot, batch.gold[..., None], 1.0, axis=-1)
    weights = onehot * (batch.mask / batch.mask.sum())[..., None]
    return -gk.sum_(lp * weights)


def clip_grads(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


def make_schedule(cfg: TrainConfig) -> Callable[[int], float]:
    if cfg.schedule == "inverse_sqrt":
        return gk.inverse_sqrt_schedule(cfg.warmup)
    if cfg.schedule == "constant":
        return gk.constant_schedule
    raise ValueError(f"unknown schedule {cfg.schedule!r}")


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo:lo + batch_size]


def fit(model: Model, corpus: Corpus | Sequence[Instance], cfg: TrainConfig, seed: int,
        loss_fn: Callable = cross_entropy) -> Model:
    """Train a copy of ``model`` on ``corpus``; returns the new model."""
    instances = list(corpus)
    if not instances:
        raise ValueError("empty corpus")
    params = gk.tree_copy(model.params)
    state = gk.OptimizerState.for_params(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    schedule = make_schedule(cfg)
    order_rng = np.random.default_rng([seed, 0x0D3E])
    history: list[tuple[int, float]] = []
    last_good = gk.tree_copy(params)
    step = 0
    for _ in range(cfg.epochs):
        for idx in minibatches(len(instances), cfg.batch_size, order_rng):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            batch = model.make_batch([instances[i] for i in idx])
            leaves = {k: gk.param(v, name=k) for k, v in params.items()}
            try:
                loss = loss_fn(model, leaves, batch)
            except gk.NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite loss at step {step}: {exc}",
                                       model.with_params(last_good)) from None
            grads = gk.backward(loss, params=leaves)
            clip_grads(grads, cfg.clip_norm)
            if not gk.adam_step(params, grads, state, schedule):
                raise TrainingDiverged(f"non-finite gradient at step {step}", model.with_params(last_good))
            step += 1
            if step % cfg.log_every == 0:
                history.append((step, float(loss.data)))
            if step % 200 == 0:
                last_good = gk.tree_copy(params)
    out = model.with_params(params)
    out.history = history
    return out


def train_supervised(spec: ModelSpec, corpus: Corpus, cfg: TrainConfig, seed: int,
                     vocab: Vocabulary | None = None, labels: Sequence | None = None) -> Model:
    """Fresh initialisation (seeded) followed by cross-entropy training."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    vocab = vocab or Vocabulary.build([corpus])
    if corpus.kind == "classification":
        labels = labels if labels is not None else corpus.labels()
    model = build_model(spec, vocab, labels, seed)
    log.debug("training %s on %d instances (seed %d)", spec.arch, len(corpus), seed)
    return fit(model, corpus, cfg, seed)


def accuracy(model: Model, corpus: Corpus) -> float:
    """Classification accuracy, or token accuracy under teacher forcing for seq2seq."""
    instances = list(corpus)
    lp, mask = model.batch_log_probs(instances)
    golds = [model.make_batch(instances[lo:lo + 256]).gold for lo in range(0, len(instances), 256)]
    P = lp.shape[1]
    gold = np.concatenate([np.pad(g, ((0, 0), (0, P - g.shape[1]))) for g in golds])
    hit = (lp.argmax(axis=-1) == gold) * mask
    return float(hit.sum() / mask.sum())
