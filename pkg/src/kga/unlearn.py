"""Knowledge-gap-alignment unlearning and the Retrain / SISA / BadTeacher baselines.

Every method works on the shared model contract, so classifiers (one
distribution per instance) and seq2seq models (one distribution per target
position, averaged) go through the same code.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import gradkit as gk
from .data import Corpus, Instance, SplitSet, augment
from .models import Model, ModelSpec, TrainConfig, build_model, pad_stack, train_supervised
from .models.base import Batch

log = logging.getLogger(__name__)


class SupportMismatch(ValueError):
    pass


class UnlearnError(RuntimeError):
    pass


# ---------------------------------------------------------------- KL plumbing


def _check_support(*models) -> None:
    keys = {m.support_key() for m in models}
    if len(keys) != 1:
        raise SupportMismatch("models do not share an output support")


def kl_per_instance(lp_a, lp_b: np.ndarray, mask: np.ndarray):
    """Mean over real positions of KL(a || b) for (B, P, K) log-probs.

    ``lp_a`` may be a Tensor (gradient flows through it) or an array.
    """
    w = mask / mask.sum(axis=1, keepdims=True)
    if isinstance(lp_a, gk.Tensor):
        per_pos = gk.sum_(gk.exp(lp_a) * (lp_a - lp_b), axis=-1)
        return gk.sum_(per_pos * w, axis=1)
    per_pos = (np.exp(lp_a) * (lp_a - lp_b)).sum(axis=-1)
    return (per_pos * w).sum(axis=1)


class FrozenOutputs:
    """Cached inference outputs of a frozen model, addressable by instance id."""

    def __init__(self, model: Model, corpus: Corpus | Sequence[Instance]):
        insts = list(corpus)
        per = model.instance_log_probs(insts) if insts else []
        self.by_id = {x.id: lp for x, lp in zip(insts, per)}

    def stack(self, ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        parts = [self.by_id[i][None] for i in ids]
        masks = [np.ones((1, p.shape[1])) for p in parts]
        return pad_stack(parts, masks)


def instance_distances(model_a: Model, model_b: Model, corpus: Corpus | Sequence[Instance]) -> np.ndarray:
    """KL(model_a || model_b) for every instance (mean over target positions for seq2seq)."""
    _check_support(model_a, model_b)
    insts = list(corpus)
    lp_a, mask = model_a.batch_log_probs(insts)
    lp_b, _ = model_b.batch_log_probs(insts)
    return kl_per_instance(lp_a, lp_b, mask)


def distribution_distance(model_a: Model, model_b: Model, instance: Instance) -> float:
    return float(instance_distances(model_a, model_b, [instance])[0])


def mean_gap(model_a: Model, model_b: Model, corpus: Corpus | Sequence[Instance]) -> float:
    if len(corpus) == 0:
        raise ValueError("mean_gap over an empty corpus")
    return float(instance_distances(model_a, model_b, corpus).mean())


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class UnlearnConfig:
    """Hyper-parameters of the KGA loop (and of BadTeacher, which shares them)."""

    alpha: float = 0.1
    sigma: float = 0.1
    lr: float = 5e-5
    batch_size: int = 16
    max_steps: int = 2000
    inner_steps: int = 1
    valid_steps: int = 10
    seed: int = 0
    augment_fraction: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.sigma < 1.0:
            raise ValueError("sigma must lie strictly between 0 and 1")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if min(self.batch_size, self.max_steps, self.inner_steps, self.valid_steps) < 1:
            raise ValueError("batch size and step limits must be positive")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class KGAReport:
    initial_gap: float
    final_gap: float
    target_kl: float  # mean KL(A_D || A_n) on D_n
    threshold: float  # sigma * initial_gap; gap-met means final_gap <= threshold
    trajectory: list[tuple[int, float]]
    steps: int
    termination: str
    wall_time: float
    helper_time: float = 0.0
    loop_time: float = 0.0
    losses: list[float] = field(default_factory=list)

    @property
    def gap_met(self) -> bool:
        return self.termination == "gap-met"

    def to_json(self) -> dict:
        return {
            "initial_gap": self.initial_gap,
            "final_gap": self.final_gap,
            "target_kl": self.target_kl,
            "threshold": self.threshold,
            "trajectory": [[s, g] for s, g in self.trajectory],
            "steps": self.steps,
            "termination": self.termination,
        }


# ---------------------------------------------------------------- helpers A_f / A_n


def train_helpers(split: SplitSet, model_d: Model, train_cfg: TrainConfig, seeds: tuple[int, int],
                  augment_fraction: float = 0.1) -> tuple[Model, Model]:
    """Train A_f on D_f and A_n on D_n, same architecture and support as A_D.

    Each training set is optionally padded with a random ``augment_fraction``
    of the retain set.
    """
    split.validate()
    retain = split.D_r
    out = []
    for corpus, seed in ((split.D_f, seeds[0]), (split.D_n, seeds[1])):
        data = augment(corpus, retain, augment_fraction, np.random.default_rng([seed, 0xA06]))
        out.append(train_supervised(model_d.spec, data, train_cfg, seed, model_d.vocab, model_d.labels))
    return out[0], out[1]


# ---------------------------------------------------------------- losses


def _alignment_term(a_star: Model, leaves, batch_y: Batch, lp_f: np.ndarray, kl_z: np.ndarray) -> gk.Tensor:
    lp_star = a_star.log_probs(leaves, batch_y)
    kl_y = kl_per_instance(lp_star, lp_f, batch_y.mask)
    return gk.mean(gk.absolute(kl_y - kl_z))


def _retain_term(a_star: Model, leaves, batch_x: Batch, lp_d: np.ndarray) -> gk.Tensor:
    return gk.mean(kl_per_instance(a_star.log_probs(leaves, batch_x), lp_d, batch_x.mask))


def alignment_loss(a_star: Model, a_f: Model, a_d: Model, a_n: Model,
                   pairs: Sequence[tuple[Instance, Instance]]) -> tuple[float, dict[str, np.ndarray]]:
    """Mean over (y, z) pairs of |KL(A*(y) || A_f(y)) - KL(A_D(z) || A_n(z))|.

    y comes from the forget set, z from the extra set.  Only A* receives
    gradients.
    """
    if not pairs:
        raise ValueError("empty batch")
    _check_support(a_star, a_f, a_d, a_n)
    ys = [y for y, _ in pairs]
    zs = [z for _, z in pairs]
    lp_f, _ = a_f.batch_log_probs(ys)
    kl_z = instance_distances(a_d, a_n, zs)
    leaves = a_star.leaves()
    batch_y = a_star.make_batch(ys)
    loss = _alignment_term(a_star, leaves, batch_y, lp_f[:, :batch_y.mask.shape[1]], kl_z)
    return float(loss.data), gk.backward(loss, params=leaves)


def retain_loss(a_star: Model, a_d: Model, batch: Sequence[Instance]) -> tuple[float, dict[str, np.ndarray]]:
    """Mean over the batch of KL(A*(x) || A_D(x)); A_D is frozen."""
    if not batch:
        raise ValueError("empty batch")
    _check_support(a_star, a_d)
    batch = list(batch)
    lp_d, _ = a_d.batch_log_probs(batch)
    leaves = a_star.leaves()
    b = a_star.make_batch(batch)
    loss = _retain_term(a_star, leaves, b, lp_d[:, :b.mask.shape[1]])
    return float(loss.data), gk.backward(loss, params=leaves)


# ---------------------------------------------------------------- KGA


def kga_unlearn(model_d: Model, split: SplitSet, cfg: UnlearnConfig,
                helpers: tuple[Model, Model] | None = None,
                helper_cfg: TrainConfig | None = None) -> tuple[Model, KGAReport]:
    """Knowledge-gap-alignment unlearning.

    Target gap: mean KL(A_D || A_n) on D_n.  Initial gap G is its distance
    to mean KL(A_D || A_f) on D_f; the current gap G* replaces A_D by A* in
    the second term.  Training stops at the first validation step with
    G* <= sigma * G, else after ``max_steps`` with the best validated model.
    """
    t0 = time.perf_counter()
    split.validate()
    if len(split.D_f) == 0:
        raise UnlearnError("forget set is empty")
    if helpers is None:
        if helper_cfg is None:
            raise UnlearnError("either trained helpers or a helper training config is required")
        seeds = (cfg.seed * 2 + 101, cfg.seed * 2 + 102)
        helpers = train_helpers(split, model_d, helper_cfg, seeds, cfg.augment_fraction)
    a_f, a_n = helpers
    _check_support(model_d, a_f, a_n)
    t_helpers = time.perf_counter() - t0

    forget, extra, retain = list(split.D_f), list(split.D_n), list(split.D_r)
    cache_f = FrozenOutputs(a_f, forget)
    kl_n = instance_distances(model_d, a_n, extra)
    target = float(kl_n.mean())

    def current_gap(m: Model) -> float:
        lp, mask = m.batch_log_probs(forget)
        lp_f, _ = cache_f.stack([x.id for x in forget])
        return abs(target - float(kl_per_instance(lp, lp_f[:, :mask.shape[1]], mask).mean()))

    G = current_gap(model_d)
    a_star = model_d.with_params(model_d.params)
    params = a_star.params  # updated in place; validation reads the live values
    state = gk.OptimizerState.for_params(params, lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 0x6A5])
    trajectory: list[tuple[int, float]] = []
    losses: list[float] = []
    best = (G, gk.tree_copy(params))
    termination, G_star, step = "step-cap", G, 0
    bs = cfg.batch_size
    for step in range(1, cfg.max_steps + 1):
        yi = rng.integers(len(forget), size=bs)
        zi = rng.integers(len(extra), size=bs)
        ys = [forget[i] for i in yi]
        leaves = {k: gk.param(v, name=k) for k, v in params.items()}
        batch_y = a_star.make_batch(ys)
        lp_f, _ = cache_f.stack([y.id for y in ys])
        try:
            loss = _alignment_term(a_star, leaves, batch_y, lp_f[:, :batch_y.mask.shape[1]], kl_n[zi])
            if cfg.alpha > 0 and retain:
                r_terms = []
                for _ in range(cfg.inner_steps):
                    xs = [retain[i] for i in rng.integers(len(retain), size=bs)]
                    lp_d, _ = model_d.batch_log_probs(xs)
                    batch_x = a_star.make_batch(xs)
                    r_terms.append(_retain_term(a_star, leaves, batch_x, lp_d[:, :batch_x.mask.shape[1]]))
                r = r_terms[0]
                for t in r_terms[1:]:
                    r = r + t
                loss = loss + r * cfg.alpha
        except gk.NonFiniteError as exc:
            raise UnlearnError(f"non-finite KGA loss at step {step}: {exc}") from None
        grads = gk.backward(loss, params=leaves)
        if not gk.adam_step(params, grads, state):
            raise UnlearnError(f"non-finite gradient at step {step}")
        losses.append(float(loss.data))
        if step % cfg.valid_steps == 0:
            G_star = current_gap(a_star)
            trajectory.append((step, G_star))
            if G_star < best[0]:
                best = (G_star, gk.tree_copy(params))
            if G_star <= cfg.sigma * G:
                termination = "gap-met"
                break
    if termination == "step-cap":
        G_star, final = best[0], best[1]
    else:
        final = params
    out = model_d.with_params(final)
    wall = time.perf_counter() - t0
    report = KGAReport(G, G_star, target, cfg.sigma * G, trajectory, step, termination, wall,
                       helper_time=t_helpers, loop_time=wall - t_helpers, losses=losses)
    log.info("KGA: G=%.4g G*=%.4g after %d steps (%s)", G, G_star, step, termination)
    return out, report


# ---------------------------------------------------------------- Retrain


def retrain(split: SplitSet, spec: ModelSpec, train_cfg: TrainConfig, seed: int, vocab, labels=None) -> Model:
    """Fresh training on D_r only: the exact-unlearning reference."""
    return train_supervised(spec, split.D_r, train_cfg, seed, vocab, labels)


# ---------------------------------------------------------------- SISA


@dataclass
class ShardedModel:
    """Independent per-shard models whose output distributions are averaged."""

    shards: list[Corpus]
    models: list[Model]
    seeds: list[int]
    spec: ModelSpec
    train_cfg: TrainConfig
    retrained: list[int] = field(default_factory=list)

    def __post_init__(self):
        ids = [i for s in self.shards for i in s.ids()]
        if len(ids) != len(set(ids)):
            raise ValueError("shards overlap")

    @property
    def assignment(self) -> dict[str, int]:
        return {i: k for k, s in enumerate(self.shards) for i in s.ids()}

    # the inference half of the model contract
    @property
    def vocab(self):
        return self.models[0].vocab

    @property
    def labels(self):
        return self.models[0].labels

    @property
    def is_seq2seq(self) -> bool:
        return self.models[0].is_seq2seq

    def support_key(self):
        return self.models[0].support_key()

    def make_batch(self, instances):
        return self.models[0].make_batch(instances)

    def batch_log_probs(self, instances, chunk: int = 256):
        outs = [m.batch_log_probs(instances, chunk) for m in self.models]
        probs = np.mean([np.exp(lp) for lp, _ in outs], axis=0)
        return np.log(probs), outs[0][1]

    def instance_log_probs(self, instances, chunk: int = 256):
        lp, mask = self.batch_log_probs(list(instances), chunk)
        n = mask.sum(axis=1).astype(int)
        return [lp[i, :n[i]] for i in range(len(n))]

    def gold_log_probs(self, instances, chunk: int = 256):
        instances = list(instances)
        lp, mask = self.batch_log_probs(instances, chunk)
        out = []
        for i, x in enumerate(instances):
            gold = self.make_batch([x]).gold[0]
            out.append(lp[i, np.arange(len(gold)), gold])
        return out

    def step_log_probs(self, sources, prefixes):
        probs = np.mean([np.exp(m.step_log_probs(sources, prefixes)) for m in self.models], axis=0)
        return np.log(probs)

    def next_log_probs(self, source, prefixes):
        return self.step_log_probs([source] * len(prefixes), prefixes)


def shard_corpus(corpus: Corpus, shard_count: int, seed: int) -> list[Corpus]:
    """Balanced random assignment; shards keep the corpus order internally."""
    order = np.random.default_rng([seed, 0x5A5A]).permutation(len(corpus))
    return [corpus.take(np.sort(part)) for part in np.array_split(order, shard_count)]


def train_shards(shards: Sequence[Corpus], spec: ModelSpec, cfg: TrainConfig, seed: int, vocab,
                 labels=None) -> ShardedModel:
    seeds = [seed + k for k in range(len(shards))]
    models = [train_supervised(spec, s, cfg, sd, vocab, labels) for s, sd in zip(shards, seeds)]
    return ShardedModel(list(shards), models, seeds, spec, cfg)


def sisa_train(corpus: Corpus, spec: ModelSpec, cfg: TrainConfig, shard_count: int, seed: int, vocab,
               labels=None, shards: Sequence[Corpus] | None = None) -> ShardedModel:
    if shard_count < 2:
        raise ValueError("SISA needs at least two shards")
    shards = list(shards) if shards is not None else shard_corpus(corpus, shard_count, seed)
    if len(shards) != shard_count:
        raise ValueError("explicit shard list does not match shard_count")
    return train_shards(shards, spec, cfg, seed, vocab, labels)


def sisa_forget(sharded: ShardedModel, forget_ids: Sequence[str]) -> ShardedModel:
    """Retrain from scratch only the shards that hold a forgotten id."""
    where = sharded.assignment
    unknown = [i for i in forget_ids if i not in where]
    if unknown:
        raise ValueError(f"unknown ids: {unknown[:5]}")
    hit = sorted({where[i] for i in forget_ids})
    shards, models = list(sharded.shards), list(sharded.models)
    for k in hit:
        shards[k] = shards[k].without(forget_ids)
        m = sharded.models[k]
        models[k] = train_supervised(sharded.spec, shards[k], sharded.train_cfg, sharded.seeds[k], m.vocab, m.labels)
    return ShardedModel(shards, models, list(sharded.seeds), sharded.spec, sharded.train_cfg, retrained=hit)


# ---------------------------------------------------------------- BadTeacher


def badt_unlearn(model_d: Model, split: SplitSet, cfg: UnlearnConfig, teacher_seed: int | None = None) -> Model:
    """Push forget-set outputs toward a frozen randomly initialised teacher.

    Objective per step: mean KL(A*(y) || T(y)) over a forget batch plus
    alpha * retain loss.  ``history`` on the result holds (step, mean KL to
    the teacher on D_f) at every validation step.
    """
    split.validate()
    forget, retain = list(split.D_f), list(split.D_r)
    if not forget:
        raise UnlearnError("forget set is empty")
    seed = cfg.seed + 7777 if teacher_seed is None else teacher_seed
    teacher = build_model(model_d.spec, model_d.vocab, model_d.labels, seed)
    cache_t = FrozenOutputs(teacher, forget)
    a_star = model_d.with_params(model_d.params)
    params = a_star.params  # updated in place; validation reads the live values
    state = gk.OptimizerState.for_params(params, lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 0xBAD7])
    history = [(0, mean_gap(a_star, teacher, forget))]
    bs = cfg.batch_size
    for step in range(1, cfg.max_steps + 1):
        ys = [forget[i] for i in rng.integers(len(forget), size=bs)]
        leaves = {k: gk.param(v, name=k) for k, v in params.items()}
        b = a_star.make_batch(ys)
        lp_t, _ = cache_t.stack([y.id for y in ys])
        try:
            loss = gk.mean(kl_per_instance(a_star.log_probs(leaves, b), lp_t[:, :b.mask.shape[1]], b.mask))
            if cfg.alpha > 0 and retain:
                for _ in range(cfg.inner_steps):
                    xs = [retain[i] for i in rng.integers(len(retain), size=bs)]
                    lp_d, _ = model_d.batch_log_probs(xs)
                    bx = a_star.make_batch(xs)
                    loss = loss + _retain_term(a_star, leaves, bx, lp_d[:, :bx.mask.shape[1]]) * cfg.alpha
        except gk.NonFiniteError as exc:
            raise UnlearnError(f"non-finite BadTeacher loss at step {step}: {exc}") from None
        grads = gk.backward(loss, params=leaves)
        if not gk.adam_step(params, grads, state):
            raise UnlearnError(f"non-finite gradient at step {step}")
        if step % cfg.valid_steps == 0:
            history.append((step, mean_gap(a_star, teacher, forget)))
    out = model_d.with_params(params)
    out.history = history
    return out
