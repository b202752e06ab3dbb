"""Corpora, synthetic generators and the D / D_f / D_n / D_r split."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Instance:
    """One element of the example space.

    Classification instances carry ``source`` tokens and a ``label``;
    seq2seq instances carry ``source`` and ``target`` token tuples.
    """

    id: str
    source: tuple[str, ...]
    target: tuple[str, ...] = ()
    label: object = None

    @property
    def kind(self) -> str:
        return "classification" if self.label is not None else "seq2seq"

    def to_json(self) -> dict:
        if self.kind == "classification":
            return {"id": self.id, "text": " ".join(self.source), "label": self.label}
        return {"id": self.id, "source": " ".join(self.source), "target": " ".join(self.target)}


@dataclass(frozen=True)
class Corpus:
    instances: tuple[Instance, ...]
    kind: str
    note: str = ""

    def __post_init__(self):
        ids = [x.id for x in self.instances]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate instance id in corpus")
        if any(x.kind != self.kind for x in self.instances):
            raise CorpusError("mixed payload kinds in corpus")

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __getitem__(self, i) -> Instance:
        return self.instances[i]

    def ids(self) -> list[str]:
        return [x.id for x in self.instances]

    def id_set(self) -> frozenset[str]:
        return frozenset(x.id for x in self.instances)

    def subset(self, ids: Iterable[str], note: str | None = None) -> "Corpus":
        keep = set(ids)
        return Corpus(tuple(x for x in self.instances if x.id in keep), self.kind,
                      self.note if note is None else note)

    def without(self, ids: Iterable[str], note: str | None = None) -> "Corpus":
        drop = set(ids)
        return Corpus(tuple(x for x in self.instances if x.id not in drop), self.kind,
                      self.note if note is None else note)

    def take(self, idx: Sequence[int], note: str | None = None) -> "Corpus":
        return Corpus(tuple(self.instances[i] for i in idx), self.kind,
                      self.note if note is None else note)

    def labels(self) -> list:
        return sorted({x.label for x in self.instances}, key=str)

    def __add__(self, other: "Corpus") -> "Corpus":
        if len(self) and len(other) and other.kind != self.kind:
            raise CorpusError("cannot join corpora of different kinds")
        return Corpus(self.instances + other.instances, self.kind or other.kind, self.note)


# ---------------------------------------------------------------- JSONL I/O


def _parse_line(obj: dict, lineno: int, schema: str) -> Instance:
    ident = str(obj["id"]) if "id" in obj else str(lineno)
    if schema == "classification":
        text, label = obj["text"], obj["label"]
        if not isinstance(text, str) or label is None:
            raise KeyError("text/label")
        return Instance(ident, tuple(text.split()), label=label)
    src, tgt = obj["source"], obj["target"]
    if not isinstance(src, str) or not isinstance(tgt, str):
        raise KeyError("source/target")
    return Instance(ident, tuple(src.split()), tuple(tgt.split()))


def load_corpus(path: str | os.PathLike, schema: str | None = None) -> Corpus:
    """Load a JSONL corpus.  ``schema`` is inferred from the first line if omitted."""
    instances: list[Instance] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if schema is None:
                    schema = "classification" if "text" in obj else "seq2seq"
                inst = _parse_line(obj, lineno, schema)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed line ({exc})") from None
            if inst.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate id {inst.id!r}")
            seen.add(inst.id)
            instances.append(inst)
    if not instances:
        raise CorpusError("empty corpus")
    return Corpus(tuple(instances), schema, note=str(path))


def save_corpus(corpus: Corpus, path: str | os.PathLike) -> None:
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for inst in corpus:
            fh.write(json.dumps(inst.to_json(), ensure_ascii=False) + "\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------- split set


@dataclass(frozen=True)
class SplitSet:
    D: Corpus
    D_f: Corpus
    D_n: Corpus

    @property
    def D_r(self) -> Corpus:
        return self.D.without(self.D_f.ids(), note="retain")

    def validate(self) -> None:
        d, f, n = self.D.id_set(), self.D_f.id_set(), self.D_n.id_set()
        if not f <= d:
            raise CorpusError("forget set is not a subset of D")
        if n & d:
            raise CorpusError("extra set D_n overlaps D")
        r = self.D_r.id_set()
        assert r | f == d and not (r & f)

    def manifest(self, extra_path: str = "", seed: int = 0, spec: Mapping | None = None) -> dict:
        return {"forget_ids": self.D_f.ids(), "extra_path": extra_path, "seed": seed,
                "spec": dict(spec or {})}


@dataclass(frozen=True)
class ForgetSpec:
    """Which instances of D to forget.

    mode ``ids``: explicit id list; ``random``: ``count`` ids at random;
    ``token``: every instance whose target (or text) contains ``token``;
    ``band``: rank by ``scores`` into ``n_bands`` equal fragments and draw
    ``count`` from fragment ``band`` (0 = lowest score).
    """

    mode: str = "random"
    ids: tuple[str, ...] = ()
    count: int = 100
    token: str = ""
    scores: Mapping[str, float] = field(default_factory=dict)
    band: int = 0
    n_bands: int = 5

    def to_json(self) -> dict:
        out = {"mode": self.mode}
        if self.mode == "ids":
            out["ids"] = list(self.ids)
        if self.mode in ("random", "band"):
            out["count"] = self.count
        if self.mode == "token":
            out["token"] = self.token
        if self.mode == "band":
            out["band"] = self.band
            out["n_bands"] = self.n_bands
        return out


def _contains(inst: Instance, token: str) -> bool:
    return token in (inst.target if inst.kind == "seq2seq" else inst.source)


def band_ids(corpus: Corpus, scores: Mapping[str, float], n_bands: int = 5) -> list[list[str]]:
    """Sort ids by score (ties by id) and cut into ``n_bands`` near-equal fragments."""
    ranked = sorted(corpus.ids(), key=lambda i: (scores[i], i))
    return [list(chunk) for chunk in np.array_split(np.array(ranked, dtype=object), n_bands)]


def select_forget(corpus: Corpus, spec: ForgetSpec, rng: np.random.Generator) -> list[str]:
    if spec.mode == "ids":
        known = corpus.id_set()
        missing = [i for i in spec.ids if i not in known]
        if missing:
            raise CorpusError(f"forget ids not in corpus: {missing[:5]}")
        return list(dict.fromkeys(spec.ids))
    if spec.mode == "random":
        if spec.count > len(corpus):
            raise CorpusError("forget count exceeds corpus size")
        idx = np.sort(rng.choice(len(corpus), size=spec.count, replace=False))
        return [corpus[i].id for i in idx]
    if spec.mode == "token":
        return [x.id for x in corpus if _contains(x, spec.token)]
    if spec.mode == "band":
        bands = band_ids(corpus, spec.scores, spec.n_bands)
        pool = bands[spec.band]
        if spec.count > len(pool):
            raise CorpusError(f"band {spec.band} has only {len(pool)} instances")
        idx = np.sort(rng.choice(len(pool), size=spec.count, replace=False))
        chosen = {pool[i] for i in idx}
        return [i for i in corpus.ids() if i in chosen]
    raise CorpusError(f"unknown forget mode {spec.mode!r}")


def partition(corpus: Corpus, forget_spec: ForgetSpec, extra_source: Corpus, seed: int,
              extra_size: int | None = None, extra_exclude_token: bool = True) -> SplitSet:
    """Build the split set.

    D_n is drawn from ``extra_source`` with ``|D_f|`` instances unless
    ``extra_size`` says otherwise.  For token specs the extra set skips
    instances containing the token when ``extra_exclude_token`` is set.
    """
    rng = np.random.default_rng([seed, 0x5EED])
    if extra_source.id_set() & corpus.id_set():
        raise CorpusError("extra source overlaps D")
    forget = select_forget(corpus, forget_spec, rng)
    if len(forget) >= len(corpus):
        raise CorpusError("forget spec selects every instance of D")
    pool = extra_source
    if forget_spec.mode == "token" and extra_exclude_token:
        pool = extra_source.subset([x.id for x in extra_source if not _contains(x, forget_spec.token)])
    n = len(forget) if extra_size is None else extra_size
    n = min(max(n, 1), len(pool))
    idx = np.sort(rng.choice(len(pool), size=n, replace=False))
    split = SplitSet(corpus, corpus.subset(forget, note="forget"), pool.take(idx, note="extra"))
    split.validate()
    return split


def augment(small: Corpus, retain: Corpus, fraction: float, rng: np.random.Generator) -> Corpus:
    """``small`` plus a random ``fraction`` of ``retain`` (helper-model training data)."""
    k = int(round(fraction * len(retain)))
    if k <= 0:
        return small
    idx = np.sort(rng.choice(len(retain), size=k, replace=False))
    return small + retain.take(idx)


def split_pool(corpus: Corpus, sizes: Sequence[int], seed: int) -> list[Corpus]:
    """Shuffle once and cut consecutive pieces of the given sizes."""
    if sum(sizes) > len(corpus):
        raise CorpusError("requested sizes exceed corpus")
    order = np.random.default_rng([seed, 0x9001]).permutation(len(corpus))
    out, at = [], 0
    for n in sizes:
        out.append(corpus.take(np.sort(order[at:at + n])))
        at += n
    return out


# ---------------------------------------------------------------- synthetic corpora


@dataclass(frozen=True)
class ClassificationSynth:
    labels: int = 4
    per_label: int = 100
    vocab_size: int = 20000
    cluster_size: int = 8
    tokens_per_instance: int = 8
    noise_ratio: float = 0.5
    label_noise: float = 0.0
    id_prefix: str = "c"


def synth_classification(cfg: ClassificationSynth, seed: int) -> Corpus:
    """Label-clustered bag-of-tokens corpus.

    Each label owns ``cluster_size`` tokens.  Every position is drawn from the
    instance's true cluster, or with probability ``noise_ratio`` from the
    remaining noise vocabulary.  ``label_noise`` relabels that fraction of
    instances uniformly at random among the other labels.
    """
    n_noise = cfg.vocab_size - cfg.labels * cfg.cluster_size
    if cfg.labels < 2 or n_noise < 1:
        raise CorpusError("vocab too small for the requested label clusters")
    if not 0.0 <= cfg.noise_ratio <= 1.0:
        raise CorpusError("noise_ratio must lie in [0, 1]")
    rng = np.random.default_rng([seed, 0xC1A5])
    out: list[Instance] = []
    n = cfg.labels * cfg.per_label
    true_labels = np.repeat(np.arange(cfg.labels), cfg.per_label)
    rng.shuffle(true_labels)
    for i, y in enumerate(true_labels):
        is_noise = rng.random(cfg.tokens_per_instance) < cfg.noise_ratio
        cluster = rng.integers(0, cfg.cluster_size, cfg.tokens_per_instance)
        noise = rng.integers(0, n_noise, cfg.tokens_per_instance)
        toks = tuple(f"w{noise[j]}" if is_noise[j] else f"c{y}_{cluster[j]}"
                     for j in range(cfg.tokens_per_instance))
        label = int(y)
        if rng.random() < cfg.label_noise:
            label = int((y + rng.integers(1, cfg.labels)) % cfg.labels)
        out.append(Instance(f"{cfg.id_prefix}{i:06d}", toks, label=f"L{label}"))
    assert len(out) == n
    return Corpus(tuple(out), "classification", note=f"synth-classification seed={seed}")


@dataclass(frozen=True)
class TranslationSynth:
    count: int = 1000
    vocab: int = 30
    min_len: int = 3
    max_len: int = 10
    zipf: float = 0.0
    reorder: bool = True
    ambiguity: float = 0.0
    id_prefix: str = "t"


@dataclass(frozen=True)
class TranslationRule:
    """Per-token relabelling plus a swap of each adjacent pair of positions."""

    mapping: Mapping[str, str]
    alternates: Mapping[str, str]
    reorder: bool

    def apply(self, source: Sequence[str], choices: Sequence[bool] | None = None) -> tuple[str, ...]:
        out = []
        for i, tok in enumerate(source):
            if choices is not None and choices[i] and tok in self.alternates:
                out.append(self.alternates[tok])
            else:
                out.append(self.mapping[tok])
        if self.reorder:
            for i in range(0, len(out) - 1, 2):
                out[i], out[i + 1] = out[i + 1], out[i]
        return tuple(out)

    def source_of(self, target_token: str) -> str:
        for s, t in self.mapping.items():
            if t == target_token:
                return s
        for s, t in self.alternates.items():
            if t == target_token:
                return s
        raise KeyError(target_token)


def translation_rule(cfg: TranslationSynth, seed: int) -> TranslationRule:
    rng = np.random.default_rng([seed, 0x7A11])
    src = [f"s{i}" for i in range(cfg.vocab)]
    perm = rng.permutation(cfg.vocab)
    mapping = {s: f"t{perm[i]}" for i, s in enumerate(src)}
    n_amb = int(round(cfg.ambiguity * cfg.vocab))
    amb = rng.choice(cfg.vocab, size=n_amb, replace=False) if n_amb else []
    alternates = {src[i]: f"t{perm[i]}b" for i in sorted(amb)}
    return TranslationRule(mapping, alternates, cfg.reorder)


def synth_translation(cfg: TranslationSynth, seed: int) -> Corpus:
    """Toy parallel corpus: target = rule(source).

    With ``ambiguity > 0`` that fraction of source tokens has a second
    translation, picked by a fair coin at each occurrence; those coin flips
    are what a model can only memorise, not infer.
    """
    if not (1 <= cfg.min_len <= cfg.max_len) or cfg.vocab < 2:
        raise CorpusError("bad translation synth config")
    rule = translation_rule(cfg, seed)
    rng = np.random.default_rng([seed, 0x7A12])
    weights = 1.0 / np.arange(1, cfg.vocab + 1) ** cfg.zipf
    weights /= weights.sum()
    out = []
    for i in range(cfg.count):
        n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        toks = tuple(f"s{j}" for j in rng.choice(cfg.vocab, size=n, p=weights))
        coins = rng.random(n) < 0.5
        out.append(Instance(f"{cfg.id_prefix}{i:06d}", toks, rule.apply(toks, coins)))
    return Corpus(tuple(out), "seq2seq", note=f"synth-translation seed={seed}")
