"""Named experiment presets for the desk-scale benchmarks and sweeps.

Every preset returns a list of configs (a single-run preset returns a
one-element list) so sweeps and single runs share one calling convention.
"""
from __future__ import annotations

from typing import Callable

from ..evaluation import MIAConfig
from ..models import ModelSpec, TrainConfig
from ..unlearn import UnlearnConfig
from .config import CLASSIFICATION_METRICS, TRANSLATION_METRICS, ConfigError, DataConfig, ExperimentConfig, \
    SplitConfig

REMOVAL_COUNTS = (10, 50, 100, 200)
N_BANDS = 5
BASE_MODELS = ("rnn", "transformer")


def toy_classification(**overrides) -> ExperimentConfig:
    """5k-instance, 4-label bag-of-tokens benchmark with 100 random removals."""
    cfg = ExperimentConfig(
        task="classification",
        label="toy-classification",
        methods=("kga",),
        metrics=CLASSIFICATION_METRICS,
        data=DataConfig(train_size=5000, extra_size=200, test_size=1000),
        synth=dict(labels=4, vocab_size=20000, cluster_size=8, tokens_per_instance=8, noise_ratio=0.5,
                   label_noise=0.1),
        split=SplitConfig(mode="random", count=100),
        model=ModelSpec(arch="bow", emb=16, hidden=32),
        train=TrainConfig(epochs=10, batch_size=32, lr=3e-3, warmup=100, weight_decay=1e-4),
        helpers=TrainConfig(epochs=10, batch_size=32, lr=1e-2, warmup=10, weight_decay=1e-4),
        kga=UnlearnConfig(alpha=0.1, sigma=0.1, lr=3e-4, max_steps=100, inner_steps=4),
        badt=UnlearnConfig(alpha=1.0, lr=1e-2, max_steps=300, inner_steps=4),
        mia_cfg=MIAConfig(),
    )
    return cfg.replace(**overrides)


def toy_translation(**overrides) -> ExperimentConfig:
    """1k-pair synthetic translation benchmark (GRU with attention), 100 random removals."""
    cfg = ExperimentConfig(
        task="translation",
        label="toy-translation",
        methods=("kga",),
        metrics=TRANSLATION_METRICS,
        data=DataConfig(train_size=1000, extra_size=200, test_size=200),
        synth=dict(vocab=30, min_len=3, max_len=8, ambiguity=0.5),
        split=SplitConfig(mode="random", count=100),
        model=ModelSpec(arch="rnn", emb=32, hidden=64),
        train=TrainConfig(epochs=40, batch_size=32, lr=1e-2, warmup=100),
        helpers=TrainConfig(epochs=40, batch_size=32, lr=1e-2, warmup=10),
        kga=UnlearnConfig(alpha=0.1, sigma=0.1, lr=1e-2, max_steps=100, inner_steps=4),
        badt=UnlearnConfig(alpha=1.0, lr=1e-2, max_steps=300, inner_steps=4),
    )
    return cfg.replace(**overrides)


def removal_sweep(**overrides) -> list[ExperimentConfig]:
    """Classification benchmark with |D_f| in ``REMOVAL_COUNTS`` (and |D_n| matching)."""
    base = toy_classification(**overrides)
    return [base.replace(label=f"removal-{n}", split=SplitConfig(mode="random", count=n))
            for n in REMOVAL_COUNTS]


def difficulty_sweep(**overrides) -> list[ExperimentConfig]:
    """Translation benchmark forgetting from each of five BLEU bands (band 0 = lowest BLEU)."""
    base = toy_translation(**overrides)
    count = base.split.count
    return [base.replace(label=f"band-R{b + 1}",
                         split=SplitConfig(mode="band", count=count, band=b, n_bands=N_BANDS))
            for b in range(N_BANDS)]


def lexical_removal(token: str = "", **overrides) -> list[ExperimentConfig]:
    """Translation benchmark forgetting every instance whose target contains ``token``."""
    if not token:
        raise ConfigError("lexical-removal needs a token")
    base = toy_translation(**overrides)
    return [base.replace(label=f"lexical-{token}", split=SplitConfig(mode="token", token=token))]


def basemodel_sweep(**overrides) -> list[ExperimentConfig]:
    """Translation benchmark on the recurrent and the attention-only architecture."""
    base = toy_translation(**overrides)
    return [base.replace(label=f"base-{arch}", model=ModelSpec(arch=arch, emb=base.model.emb,
                                                                hidden=base.model.hidden))
            for arch in BASE_MODELS]


PRESETS: dict[str, Callable[..., list[ExperimentConfig]]] = {
    "toy-classification": lambda **kw: [toy_classification(**kw)],
    "toy-translation": lambda **kw: [toy_translation(**kw)],
    "removal-sweep": removal_sweep,
    "difficulty-sweep": difficulty_sweep,
    "lexical-removal": lexical_removal,
    "basemodel-sweep": basemodel_sweep,
}

# x value of each sweep point, for plot data
SWEEP_AXES = {
    "removal-sweep": lambda cfgs: [c.split.count for c in cfgs],
    "difficulty-sweep": lambda cfgs: [f"R{c.split.band + 1}" for c in cfgs],
    "basemodel-sweep": lambda cfgs: [c.model.arch for c in cfgs],
}


def preset(name: str, **overrides) -> list[ExperimentConfig]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**overrides)
