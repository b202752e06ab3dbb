"""Per-seed experiment pipeline and the multi-seed report bundle."""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import Corpus, load_corpus, partition, split_pool, synth_classification, synth_translation
from ..evaluation import (MIAConfig, MetricsReport, bleu4, build_attack, corpus_jsd, corpus_lpd, micro_f1,
                          pdlp)
from ..models import Vocabulary, greedy_translate, perplexities, save_model, train_supervised, translate
from ..unlearn import (KGAReport, badt_unlearn, kga_unlearn, retrain, sisa_forget, sisa_train,
                       train_helpers)
from .config import ConfigError, ExperimentConfig, stage_seed

log = logging.getLogger(__name__)

SPLITS = ("forget", "test")


def evaluator_threads() -> int:
    """Evaluator parallelism, capped by ``KGA_THREADS`` (default 1)."""
    raw = os.environ.get("KGA_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"KGA_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def predict_labels(model, instances) -> list:
    lp, _ = model.batch_log_probs(list(instances))
    return [model.labels[i] for i in lp[:, 0].argmax(axis=-1)]


class Pipeline:
    """Stages for one root seed; each stage is computed once and cached."""

    def __init__(self, cfg: ExperimentConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.timings: dict[str, float] = {}
        self._cache: dict[str, object] = {}

    def _once(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def _timed(self, key, fn):
        t0 = time.perf_counter()
        out = fn()
        self.timings[key] = time.perf_counter() - t0
        return out

    # ---------------------------------------------------------------- data
    def corpora(self) -> tuple[Corpus, Corpus, Corpus]:
        """(D, extra pool, test)."""
        return self._once("corpora", self._load_corpora)

    def _load_corpora(self):
        c = self.cfg
        if c.data.source == "files":
            c.check_paths()
            return tuple(load_corpus(getattr(c.data, k)) for k in ("train_path", "extra_path", "test_path"))
        sizes = [c.data.train_size, c.data.extra_size, c.data.test_size]
        syn = c.synth_config()
        syn_seed = stage_seed(self.seed, "data")
        if c.task == "classification":
            per_label = -(-sum(sizes) // syn.labels)
            full = synth_classification(type(syn)(**{**syn.__dict__, "per_label": per_label}), syn_seed)
        else:
            full = synth_translation(type(syn)(**{**syn.__dict__, "count": sum(sizes)}), syn_seed)
        return tuple(split_pool(full, sizes, syn_seed))

    def vocab(self) -> Vocabulary:
        return self._once("vocab", lambda: Vocabulary.build(self.corpora()[:2]))

    def labels(self):
        D = self.corpora()[0]
        return D.labels() if D.kind == "classification" else None

    # ---------------------------------------------------------------- models
    @property
    def train_seed(self) -> int:
        # Original and Retrain share the learning algorithm's randomness; only the data differs.
        return stage_seed(self.seed, "original")

    def original(self):
        return self._once("original", lambda: self._timed("original", lambda: train_supervised(
            self.cfg.model, self.corpora()[0], self.cfg.train, self.train_seed, self.vocab(), self.labels())))

    def split(self):
        return self._once("split", self._split)

    def _split(self):
        D, pool, _ = self.corpora()
        scores = None
        if self.cfg.split.mode == "band":
            scores = self.difficulty_scores()
        extra = self.cfg.split.extra_count or None
        return partition(D, self.cfg.split.forget_spec(scores), pool, stage_seed(self.seed, "partition"),
                         extra_size=extra)

    def difficulty_scores(self) -> dict[str, float]:
        """Per-instance sentence BLEU of the original model on D (greedy decoding)."""
        D = list(self.corpora()[0])
        if D[0].kind != "seq2seq":
            raise ConfigError("difficulty bands need a translation task")
        hyps = greedy_translate(self.original(), [x.source for x in D])
        return {x.id: bleu4([h], [x.target]) if h else 0.0 for x, h in zip(D, hyps)}

    def retrain(self):
        return self._once("retrain", lambda: self._timed("retrain", lambda: retrain(
            self.split(), self.cfg.model, self.cfg.train, self.train_seed, self.vocab(), self.labels())))

    def unlearned(self, method: str):
        if method == "original":
            return self.original()
        if method == "retrain":
            return self.retrain()
        return self._once(method, lambda: getattr(self, "_run_" + method)())

    def _run_kga(self):
        c, split, ad = self.cfg, self.split(), self.original()
        h0 = stage_seed(self.seed, "helpers")
        t0 = time.perf_counter()
        helpers = train_helpers(split, ad, c.helpers, (h0, h0 + 1), c.kga.augment_fraction)
        t1 = time.perf_counter()
        kcfg = _with_seed(c.kga, stage_seed(self.seed, "kga"))
        model, report = kga_unlearn(ad, split, kcfg, helpers=helpers)
        t2 = time.perf_counter()
        self.timings.update({"kga": t2 - t0, "kga_helpers": t1 - t0, "kga_loop": t2 - t1})
        self._cache["kga_report"] = report
        self._cache["kga_helpers"] = helpers
        return model

    def _run_badt(self):
        bcfg = _with_seed(self.cfg.badt, stage_seed(self.seed, "badt"))
        model = self._timed("badt", lambda: badt_unlearn(self.original(), self.split(), bcfg))
        self._cache["badt_history"] = model.history
        return model

    def _run_sisa(self):
        c, split = self.cfg, self.split()
        sharded = self._timed("sisa_train", lambda: sisa_train(
            split.D, c.model, c.train, c.sisa_shards, stage_seed(self.seed, "sisa"), self.vocab(), self.labels()))
        return self._timed("sisa", lambda: sisa_forget(sharded, split.D_f.ids()))

    @property
    def kga_report(self) -> KGAReport | None:
        return self._cache.get("kga_report")

    @property
    def kga_helpers(self):
        """(A_f, A_n) from the last KGA run, or None."""
        return self._cache.get("kga_helpers")

    @property
    def badt_history(self):
        return self._cache.get("badt_history")

    # ---------------------------------------------------------------- evaluation
    def method_names(self) -> list[str]:
        return ["original", "retrain"] + [m for m in self.cfg.methods if m != "retrain"]

    def split_corpus(self, name: str) -> Corpus:
        return self.split().D_f if name == "forget" else self.corpora()[2]

    def metric_values(self, method: str, split_name: str) -> dict[str, float]:
        model = self.unlearned(method)
        data = self.split_corpus(split_name)
        insts = list(data)
        out: dict[str, float] = {}
        if len(insts) == 0:
            return out
        for metric in self.cfg.metrics:
            if metric in ("accuracy", "micro_f1"):
                pred = predict_labels(model, insts)
                gold = [x.label for x in insts]
                out["accuracy"] = 100.0 * float(np.mean([p == g for p, g in zip(pred, gold)]))
                out["micro_f1"] = 100.0 * micro_f1(pred, gold)
            elif metric == "jsd":
                out["jsd"] = corpus_jsd(model, self.retrain(), insts)
            elif metric == "perplexity":
                out["perplexity"] = float(np.mean(perplexities(model, insts)))
            elif metric == "lpd":
                out["lpd"] = corpus_lpd(model, self.retrain(), insts)
            elif metric == "pdlp":
                out["pdlp"] = pdlp(model, self.original(), insts)
            elif metric == "bleu":
                out["bleu"] = bleu4(translate(model, [x.source for x in insts]), [x.target for x in insts])
        return {k: out[k] for k in sorted(out) if k in self.cfg.metrics}

    def mia_values(self) -> dict[str, tuple[float, float]]:
        c, split = self.cfg, self.split()
        mcfg = MIAConfig(c.mia_cfg.shadow_fraction, c.mia_cfg.attack_epochs, c.mia_cfg.attack_lr,
                         c.mia_cfg.hidden, stage_seed(self.seed, "mia"))
        attack = build_attack(split.D_r, c.model, c.train, self.vocab(), self.labels(), mcfg)
        test = self.corpora()[2]
        rng = np.random.default_rng([mcfg.seed, 0x0E7A])
        k = min(len(split.D_f), len(test))
        non = test.take(np.sort(rng.choice(len(test), size=k, replace=False)))
        return {m: attack.evaluate(self.unlearned(m), split.D_f, non) for m in self.method_names()}

    def rows(self) -> list[MetricsReport]:
        methods = self.method_names()
        for m in methods:  # train sequentially so timings are not distorted by evaluator threads
            self.unlearned(m)
        jobs = [(m, s) for m in methods for s in SPLITS]
        with ThreadPoolExecutor(max_workers=evaluator_threads()) as pool:
            values = list(pool.map(lambda ms: self.metric_values(*ms), jobs))
        out = [MetricsReport(m, s, v) for (m, s), v in zip(jobs, values)]
        if self.cfg.mia:
            mia = self.mia_values()
            for r in out:
                if r.split == "forget":
                    f1, fnr = mia[r.method]
                    r.values.update(mia_f1=100.0 * f1, mia_fnr=100.0 * fnr)
        return out

    def save_checkpoints(self, root: Path) -> None:
        d = root / f"seed-{self.seed}"
        d.mkdir(parents=True, exist_ok=True)
        for m in self.method_names():
            model = self.unlearned(m)
            if hasattr(model, "models"):
                for k, sub in enumerate(model.models):
                    save_model(sub, d / f"{m}-shard{k}.ckpt")
            else:
                save_model(model, d / f"{m}.ckpt")


def _with_seed(cfg, seed: int):
    return dataclasses.replace(cfg, seed=seed)


# ---------------------------------------------------------------- bundle


@dataclass
class ReportBundle:
    """Everything one experiment produced.

    ``timings`` is wall-clock and therefore kept out of the canonical JSON;
    ``emit_report`` writes it to its own file.
    """

    config: dict
    rows: list[dict] = field(default_factory=list)
    kga: dict[str, dict] = field(default_factory=dict)
    badt: dict[str, list] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)
    timings: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def seeds(self) -> list[int]:
        return list(self.config["seeds"])

    def to_json(self, with_timings: bool = False) -> dict:
        out = {"config": self.config, "rows": self.rows, "kga": self.kga, "badt": self.badt,
               "failures": self.failures}
        if with_timings:
            out["timings"] = self.timings
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, d: dict) -> "ReportBundle":
        return cls(d["config"], d.get("rows", []), d.get("kga", {}), d.get("badt", {}), d.get("failures", {}),
                   d.get("timings", {}))

    def values(self, method: str, split: str, metric: str) -> dict[int, float]:
        """seed -> metric value."""
        return {r["seed"]: r["values"][metric] for r in self.rows
                if r["method"] == method and r["split"] == split and metric in r["values"]}


def run_experiment(cfg: ExperimentConfig, pipelines: dict[int, Pipeline] | None = None) -> ReportBundle:
    """Run every configured seed; a failing seed is recorded and the rest still run.

    ``pipelines`` (seed -> Pipeline) receives the per-seed pipelines so callers
    can inspect the trained models afterwards.
    """
    bundle = ReportBundle(cfg.to_json())
    for seed in cfg.seeds:
        pipe = Pipeline(cfg, seed)
        if pipelines is not None:
            pipelines[seed] = pipe
        try:
            rows = pipe.rows()
            if cfg.save_checkpoints and cfg.out:
                pipe.save_checkpoints(Path(cfg.out))
        except ConfigError:
            raise
        except Exception as exc:  # recorded per seed; remaining seeds still run
            log.exception("seed %d failed", seed)
            bundle.failures[str(seed)] = f"{type(exc).__name__}: {exc}"
            bundle.timings[str(seed)] = dict(pipe.timings)
            continue
        bundle.rows.extend({"seed": seed, **r.to_json()} for r in rows)
        if pipe.kga_report is not None:
            bundle.kga[str(seed)] = pipe.kga_report.to_json()
        if pipe.badt_history is not None:
            bundle.badt[str(seed)] = [[s, v] for s, v in pipe.badt_history]
        bundle.timings[str(seed)] = dict(pipe.timings)
    return bundle
