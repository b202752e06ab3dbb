from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .. import gradkit as gk
from ..data import Instance
from .vocab import Vocabulary

MAX_POSITIONS = 64


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description shared by A_D, A_f, A_n, A* and baselines.

    arch is ``bow`` (mean-pooled classifier), ``rnn`` (GRU encoder-decoder
    with dot-product attention) or ``transformer`` (one-layer self-attention
    encoder-decoder).
    """

    arch: str = "bow"
    emb: int = 16
    hidden: int = 32
    layers: int = 1
    max_positions: int = MAX_POSITIONS
    zero_output: bool = False
    init_scale: float = 1.0

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Batch:
    """Padded arrays for a list of instances.

    ``gold``/``mask`` are (B, P): the gold class (P = 1) or next target token
    per teacher-forced position; ``mask`` is 1.0 on real positions.
    """

    ids: list[str]
    src: np.ndarray
    src_mask: np.ndarray
    gold: np.ndarray
    mask: np.ndarray
    tgt_in: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def pad_ids(rows: Sequence[Sequence[int]], pad: int = 0) -> tuple[np.ndarray, np.ndarray]:
    width = max(1, max((len(r) for r in rows), default=1))
    out = np.full((len(rows), width), pad, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=np.float64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
        mask[i, :len(r)] = 1.0
    return out, mask


class Model:
    """Common contract: per-instance output distributions as log-probabilities.

    ``log_probs(params, batch)`` returns a (B, P, K) Tensor.  Instances are
    immutable once trained; training works on a copy of ``params``.
    """

    arch = ""
    is_seq2seq = False

    def __init__(self, spec: ModelSpec, vocab: Vocabulary, labels: Sequence | None = None,
                 params: Mapping[str, np.ndarray] | None = None, seed: int = 0):
        self.spec = spec
        self.vocab = vocab
        self.labels = tuple(labels) if labels is not None else None
        self.seed = seed
        self.params: dict[str, np.ndarray] = (
            gk.tree_copy(params) if params is not None
            else self.init_params(np.random.default_rng([seed, 0x1417]))
        )
        self.history: list[tuple[int, float]] = []

    # subclasses implement these
    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def make_batch(self, instances: Sequence[Instance]) -> Batch:
        raise NotImplementedError

    def log_probs(self, p: Mapping[str, gk.Tensor], batch: Batch) -> gk.Tensor:
        raise NotImplementedError

    @property
    def support_size(self) -> int:
        raise NotImplementedError

    def support_key(self) -> tuple:
        """Two models can be compared instance-wise only if these keys match."""
        if self.is_seq2seq:
            return ("tokens", self.vocab.digest())
        return ("labels", self.labels)

    # shared helpers
    def with_params(self, params: Mapping[str, np.ndarray], seed: int | None = None) -> "Model":
        return type(self)(self.spec, self.vocab, self.labels, params, self.seed if seed is None else seed)

    def leaves(self) -> dict[str, gk.Tensor]:
        return {k: gk.param(v, name=k) for k, v in self.params.items()}

    def constants(self) -> dict[str, gk.Tensor]:
        return {k: gk.Tensor(v, name=k) for k, v in self.params.items()}

    def batch_log_probs(self, instances: Sequence[Instance], chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
        """Inference-only (B, P, K) log-probabilities and (B, P) mask, padded to the longest instance."""
        parts, masks = [], []
        consts = self.constants()
        with gk.no_grad():
            for lo in range(0, len(instances), chunk):
                b = self.make_batch(instances[lo:lo + chunk])
                parts.append(self.log_probs(consts, b).data)
                masks.append(b.mask)
        return pad_stack(parts, masks)

    def instance_log_probs(self, instances: Sequence[Instance], chunk: int = 256) -> list[np.ndarray]:
        """Per-instance (P_i, K) log-probability arrays (padding removed)."""
        lp, mask = self.batch_log_probs(instances, chunk)
        n = mask.sum(axis=1).astype(int)
        return [lp[i, :n[i]] for i in range(len(instances))]

    def gold_log_probs(self, instances: Sequence[Instance], chunk: int = 256) -> list[np.ndarray]:
        """Per-instance log-probability of each gold class / token."""
        out = []
        consts = self.constants()
        with gk.no_grad():
            for lo in range(0, len(instances), chunk):
                b = self.make_batch(instances[lo:lo + chunk])
                lp = self.log_probs(consts, b).data
                g = np.take_along_axis(lp, b.gold[..., None], axis=-1)[..., 0]
                n = b.mask.sum(axis=1).astype(int)
                out.extend(g[i, :n[i]] for i in range(len(b)))
        return out


def pad_stack(parts: Sequence[np.ndarray], masks: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate (b, P_j, K) chunks along batch, padding P with uniform log-probs."""
    P = max(p.shape[1] for p in parts)
    K = parts[0].shape[2]
    fill = -np.log(K)
    lp = np.concatenate([
        np.concatenate([p, np.full((p.shape[0], P - p.shape[1], K), fill)], axis=1) if p.shape[1] < P else p
        for p in parts])
    mask = np.concatenate([
        np.concatenate([m, np.zeros((m.shape[0], P - m.shape[1]))], axis=1) if m.shape[1] < P else m
        for m in masks])
    return lp, mask


REGISTRY: dict[str, type[Model]] = {}


def register(cls):
    REGISTRY[cls.arch] = cls
    return cls


def build_model(spec: ModelSpec, vocab: Vocabulary, labels: Sequence | None = None, seed: int = 0,
                params: Mapping[str, np.ndarray] | None = None) -> Model:
    try:
        cls = REGISTRY[spec.arch]
    except KeyError:
        raise ValueError(f"unknown architecture {spec.arch!r}") from None
    return cls(spec, vocab, labels, params, seed)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, scale: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, scale * np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    warmup: int = 100
    max_steps: int | None = None
    weight_decay: float = 0.0
    clip_norm: float | None = 5.0
    schedule: str = "inverse_sqrt"
    log_every: int = 1

    def to_json(self) -> dict:
        return dict(self.__dict__)
