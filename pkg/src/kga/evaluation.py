"""Unlearning metrics (JSD, LPD, PDLP), task metrics and a black-box membership attack."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Corpus, Instance
from .models import FeatureClassifier, ModelSpec, TrainConfig, perplexities, sequence_log_prob, train_supervised
from .models.base import Model

SMOOTH = 1e-9


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------- divergences


def smooth(p: np.ndarray, eps: float = SMOOTH) -> np.ndarray:
    """Mix with the uniform distribution at weight ``eps``."""
    p = np.asarray(p, dtype=np.float64)
    return (1.0 - eps) * p + eps / p.shape[-1]


def kl(p: np.ndarray, q: np.ndarray, eps: float = SMOOTH) -> np.ndarray:
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise MetricError(f"support mismatch: {p.shape} vs {q.shape}")
    p, q = smooth(p, eps), smooth(q, eps)
    return (p * (np.log(p) - np.log(q))).sum(axis=-1)


def jsd(p: np.ndarray, q: np.ndarray, eps: float = SMOOTH) -> np.ndarray:
    """0.5 KL(p||q) + 0.5 KL(q||p): the symmetric-KL form, not the mixture form."""
    return 0.5 * kl(p, q, eps) + 0.5 * kl(q, p, eps)


def instance_jsd(model_a, model_b, corpus: Corpus | Sequence[Instance]) -> np.ndarray:
    """Per-instance JSD between two models' outputs (position-averaged for seq2seq)."""
    if model_a.support_key() != model_b.support_key():
        raise MetricError("models do not share an output support")
    insts = list(corpus)
    lp_a, mask = model_a.batch_log_probs(insts)
    lp_b, _ = model_b.batch_log_probs(insts)
    per_pos = jsd(np.exp(lp_a), np.exp(lp_b))
    return (per_pos * mask).sum(axis=1) / mask.sum(axis=1)


def corpus_jsd(model_a, model_b, corpus) -> float:
    if len(corpus) == 0:
        raise MetricError("empty corpus")
    return float(instance_jsd(model_a, model_b, corpus).mean())


def lpd(x, y) -> np.ndarray | float:
    """|x - y| / y, elementwise; ``y`` is the reference perplexity."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if (y <= 0).any():
        raise MetricError("reference perplexity must be positive")
    out = np.abs(x - y) / y
    return float(out) if out.ndim == 0 else out


def corpus_lpd(model, reference, corpus) -> float:
    """Mean per-instance LPD of ``model`` against ``reference`` perplexities."""
    if len(corpus) == 0:
        raise MetricError("empty corpus")
    return float(np.mean(lpd(perplexities(model, list(corpus)), perplexities(reference, list(corpus)))))


def pdlp(model_after, model_before, corpus) -> float:
    """Percentage of instances whose gold-sequence probability strictly drops."""
    if len(corpus) == 0:
        raise MetricError("empty corpus")
    after = sequence_log_prob(model_after, list(corpus))
    before = sequence_log_prob(model_before, list(corpus))
    return float(100.0 * np.mean(after < before))


# ---------------------------------------------------------------- task metrics


def micro_f1(predictions: Sequence, golds: Sequence) -> float:
    """Micro-averaged F1; each item is a label or a collection of labels."""
    if len(predictions) != len(golds):
        raise MetricError("predictions and golds differ in length")
    tp = fp = fn = 0
    for p, g in zip(predictions, golds):
        ps = set(p) if isinstance(p, (set, frozenset, list, tuple)) else {p}
        gs = set(g) if isinstance(g, (set, frozenset, list, tuple)) else {g}
        tp += len(ps & gs)
        fp += len(ps - gs)
        fn += len(gs - ps)
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def _ngrams(toks: Sequence[str], n: int) -> Counter:
    return Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))


def bleu4(candidates: Sequence[Sequence[str]], references: Sequence) -> float:
    """Corpus BLEU-4 on a 0-100 scale.

    ``references[i]`` is either one token sequence or a list of them.
    Orders 2-4 get add-one smoothing when the corpus has no match of that
    order; brevity penalty uses the closest reference length (shorter wins
    ties).
    """
    if not candidates or len(candidates) != len(references):
        raise MetricError("empty corpus or candidate/reference length mismatch")
    match = [0] * 4
    total = [0] * 4
    cand_len = ref_len = 0
    for cand, refs in zip(candidates, references):
        cand = list(cand)
        if refs and isinstance(refs[0], str):
            refs = [refs]
        refs = [list(r) for r in refs]
        cand_len += len(cand)
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, 5):
            c = _ngrams(cand, n)
            best: Counter = Counter()
            for r in refs:
                best |= _ngrams(r, n)
            match[n - 1] += sum(min(k, best[g]) for g, k in c.items())
            total[n - 1] += max(len(cand) - n + 1, 0)
    if match[0] == 0 or cand_len == 0:
        return 0.0
    logs = []
    for n in range(4):
        m, t = match[n], total[n]
        if n > 0 and m == 0:
            m, t = m + 1, t + 1
        logs.append(math.log(m / t))
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(sum(logs) / 4.0)


# ---------------------------------------------------------------- membership inference


TOPK = 5


def attack_features(model, corpus: Corpus | Sequence[Instance]) -> np.ndarray:
    """Per instance: sorted top-5 probabilities, entropy, gold log-probability.

    For seq2seq the per-position features are averaged over target positions.
    """
    insts = list(corpus)
    lp, mask = model.batch_log_probs(insts)
    p = np.exp(lp)
    K = p.shape[-1]
    top = -np.sort(-p, axis=-1)[..., :TOPK]
    if K < TOPK:
        top = np.concatenate([top, np.zeros(top.shape[:-1] + (TOPK - K,))], axis=-1)
    ent = -(p * lp).sum(axis=-1, keepdims=True)
    gold_lp = np.zeros(mask.shape)
    for i, g in enumerate(model.gold_log_probs(insts)):
        gold_lp[i, :len(g)] = g
    feats = np.concatenate([top, ent, gold_lp[..., None]], axis=-1)
    w = (mask / mask.sum(axis=1, keepdims=True))[..., None]
    return (feats * w).sum(axis=1)


@dataclass(frozen=True)
class MIAConfig:
    shadow_fraction: float = 0.3
    attack_epochs: int = 200
    attack_lr: float = 1e-2
    hidden: int = 16
    seed: int = 0


@dataclass
class Attack:
    shadow: Model
    classifier: FeatureClassifier
    members: list[str] = field(default_factory=list)

    def scores(self, model, corpus) -> np.ndarray:
        return self.classifier.predict_proba(attack_features(model, corpus))[:, 1]

    def evaluate(self, target, member_corpus, nonmember_corpus) -> tuple[float, float]:
        """(F1, false-negative rate) with members as the positive class."""
        if set(member_corpus.ids()) & set(nonmember_corpus.ids()):
            raise MetricError("member and non-member corpora overlap")
        pred = np.concatenate([self.scores(target, member_corpus), self.scores(target, nonmember_corpus)]) > 0.5
        gold = np.concatenate([np.ones(len(member_corpus)), np.zeros(len(nonmember_corpus))]).astype(bool)
        tp = int((pred & gold).sum())
        fp = int((pred & ~gold).sum())
        fn = int((~pred & gold).sum())
        f1 = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
        return f1, fn / max(int(gold.sum()), 1)


def build_attack(shadow_source: Corpus, spec: ModelSpec, train_cfg: TrainConfig, vocab, labels=None,
                 cfg: MIAConfig = MIAConfig(), permute_labels: bool = False) -> Attack:
    """Shadow model on a ``shadow_fraction`` sample of ``shadow_source``; attacker on its outputs.

    Shadow-training instances are labelled 1, an equal-size sample of the
    rest 0.
    """
    rng = np.random.default_rng([cfg.seed, 0x3A1A])
    n = len(shadow_source)
    k = int(round(cfg.shadow_fraction * n))
    order = rng.permutation(n)
    mem = shadow_source.take(np.sort(order[:k]))
    rest = order[k:]
    non = shadow_source.take(np.sort(rng.choice(rest, size=min(k, len(rest)), replace=False)))
    if len(mem) == 0 or len(non) == 0:
        raise MetricError("degenerate attack data: one membership class is empty")
    shadow = train_supervised(spec, mem, train_cfg, cfg.seed + 4242, vocab, labels)
    X = np.concatenate([attack_features(shadow, mem), attack_features(shadow, non)])
    y = np.concatenate([np.ones(len(mem)), np.zeros(len(non))]).astype(np.int64)
    if permute_labels:
        y = rng.permutation(y)
    if len(set(y.tolist())) < 2:
        raise MetricError("degenerate attack data: single class")
    clf = FeatureClassifier(X.shape[1], 2, cfg.hidden, cfg.seed).fit(X, y, cfg.attack_epochs, cfg.attack_lr)
    return Attack(shadow, clf, mem.ids())


def mia_run(target, member_corpus: Corpus, nonmember_corpus: Corpus, shadow_source: Corpus, spec: ModelSpec,
            train_cfg: TrainConfig, cfg: MIAConfig = MIAConfig()) -> tuple[float, float]:
    attack = build_attack(shadow_source, spec, train_cfg, target.vocab, target.labels, cfg)
    return attack.evaluate(target, member_corpus, nonmember_corpus)


# ---------------------------------------------------------------- reports


@dataclass
class MetricsReport:
    """Metric values for one model on one split; serialises to flat JSON."""

    method: str
    split: str
    values: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        v = self.values
        if "pdlp" in v and not 0.0 <= v["pdlp"] <= 100.0:
            raise MetricError("PDLP outside [0, 100]")
        for key in ("jsd", "lpd"):
            if key in v and v[key] < 0:
                raise MetricError(f"{key} must be non-negative")

    def to_json(self) -> dict:
        return {"method": self.method, "split": self.split,
                "values": {k: float(self.values[k]) for k in sorted(self.values)}}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)
