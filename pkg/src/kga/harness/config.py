"""Experiment configuration: dataclasses plus a sectioned key-value file format."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..data import ClassificationSynth, ForgetSpec, TranslationSynth
from ..evaluation import MIAConfig
from ..models import ModelSpec, TrainConfig
from ..unlearn import UnlearnConfig

METHODS = ("kga", "retrain", "sisa", "badt")
TASKS = ("classification", "translation")
CLASSIFICATION_METRICS = ("accuracy", "micro_f1", "jsd")
TRANSLATION_METRICS = ("perplexity", "lpd", "pdlp", "jsd", "bleu")

# Counter-based stage seeds: each stage owns a fixed slot, so re-running one
# stage never shifts the randomness of another.
STAGES = ("data", "partition", "original", "helpers", "kga", "badt", "sisa", "mia")


class ConfigError(ValueError):
    pass


def stage_seed(root: int, stage: str) -> int:
    """Derive a stage seed from the root seed and the stage's fixed counter slot."""
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    ss = np.random.SeedSequence([int(root), STAGES.index(stage)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class DataConfig:
    """Where corpora come from.

    ``source = synth`` generates D, the extra pool and the test set from the
    task's synthetic generator; ``source = files`` reads JSONL paths.
    """

    source: str = "synth"
    train_path: str = ""
    extra_path: str = ""
    test_path: str = ""
    train_size: int = 5000
    extra_size: int = 200
    test_size: int = 1000


@dataclass(frozen=True)
class SplitConfig:
    mode: str = "random"
    count: int = 100
    token: str = ""
    band: int = 0
    n_bands: int = 5
    extra_count: int = 0  # 0 means |D_n| = |D_f|
    ids: tuple[str, ...] = ()

    def forget_spec(self, scores=None) -> ForgetSpec:
        return ForgetSpec(mode=self.mode, ids=tuple(self.ids), count=self.count, token=self.token, band=self.band,
                          n_bands=self.n_bands, scores=dict(scores or {}))


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "classification"
    label: str = ""
    seeds: tuple[int, ...] = (0,)
    methods: tuple[str, ...] = ("kga",)
    metrics: tuple[str, ...] = CLASSIFICATION_METRICS
    mia: bool = False
    out: str = ""
    save_checkpoints: bool = False
    sisa_shards: int = 5
    data: DataConfig = DataConfig()
    synth: dict = field(default_factory=dict)
    split: SplitConfig = SplitConfig()
    model: ModelSpec = ModelSpec()
    train: TrainConfig = TrainConfig()
    helpers: TrainConfig = TrainConfig()
    kga: UnlearnConfig = UnlearnConfig()
    badt: UnlearnConfig = UnlearnConfig()
    mia_cfg: MIAConfig = MIAConfig()

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown method(s) {bad}")
        known = CLASSIFICATION_METRICS if self.task == "classification" else TRANSLATION_METRICS
        bad = [m for m in self.metrics if m not in known]
        if bad:
            raise ConfigError(f"metric(s) {bad} not available for {self.task}")
        if self.data.source not in ("synth", "files"):
            raise ConfigError(f"unknown data source {self.data.source!r}")
        if self.split.mode not in ("random", "token", "band", "ids"):
            raise ConfigError(f"unknown forget mode {self.split.mode!r}")
        if self.split.mode == "token" and not self.split.token:
            raise ConfigError("token forget mode needs a token")
        if self.sisa_shards < 2 and "sisa" in self.methods:
            raise ConfigError("SISA needs at least two shards")
        try:
            self.synth_config()
        except TypeError as exc:
            raise ConfigError(f"bad synth parameters: {exc}") from None

    def check_paths(self) -> None:
        """Paths must exist at run time (not at construction)."""
        if self.data.source == "files":
            for name in ("train_path", "extra_path", "test_path"):
                p = getattr(self.data, name)
                if not p or not Path(p).is_file():
                    raise ConfigError(f"{name} does not exist: {p!r}")

    def synth_config(self):
        cls = ClassificationSynth if self.task == "classification" else TranslationSynth
        return cls(**self.synth)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


# ---------------------------------------------------------------- file format

# section name -> ExperimentConfig field holding a dataclass
_SECTIONS = {
    "data": "data", "split": "split", "model": "model", "train": "train",
    "helpers": "helpers", "kga": "kga", "badt": "badt", "mia": "mia_cfg",
}


def _coerce(raw: str, like: Any, key: str):
    raw = raw.strip()
    if raw.lower() == "none" and not isinstance(like, str):
        return None
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(like, int) or (like is None and raw.lstrip("-").isdigit()):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            items = [s for s in raw.replace(",", " ").split() if s]
            if like and isinstance(like[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
        if like is None:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def _update(obj, items: dict[str, str], section: str):
    names = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for k, v in items.items():
        if k not in names:
            raise ConfigError(f"unknown key {section}.{k}")
        changes[k] = _coerce(v, getattr(obj, k), f"{section}.{k}")
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _synth_value(raw: str):
    raw = raw.strip()
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    return raw


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse the sectioned key-value format on top of ``base`` (defaults if None)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = base or ExperimentConfig()
    top: dict[str, Any] = {}
    for section in cp.sections():
        items = dict(cp.items(section))
        if section == "experiment":
            scratch = _ExperimentTop(**{f: getattr(cfg, f) for f in _ExperimentTop.__dataclass_fields__})
            top.update(dataclasses.asdict(_update(scratch, items, section)))
        elif section == "synth":
            top["synth"] = {**cfg.synth, **{k: _synth_value(v) for k, v in items.items()}}
        elif section in _SECTIONS:
            name = _SECTIONS[section]
            top[name] = _update(top.get(name, getattr(cfg, name)), items, section)
        else:
            raise ConfigError(f"unknown section [{section}]")
    if "task" in top and top["task"] != cfg.task and "metrics" not in dict(cp.items("experiment")):
        top["metrics"] = CLASSIFICATION_METRICS if top["task"] == "classification" else TRANSLATION_METRICS
    for k in ("seeds", "methods", "metrics"):
        if k in top:
            top[k] = tuple(top[k])
    try:
        return cfg.replace(**top)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), base)


def dump_config(cfg: ExperimentConfig) -> str:
    """Inverse of ``parse_config`` for every field it reads."""
    lines = ["[experiment]"]
    for name in _ExperimentTop.__dataclass_fields__:
        lines.append(f"{name} = {_fmt(getattr(cfg, name))}")
    if cfg.synth:
        lines += ["", "[synth]"] + [f"{k} = {_fmt(v)}" for k, v in sorted(cfg.synth.items())]
    for section, name in _SECTIONS.items():
        obj = getattr(cfg, name)
        lines += ["", f"[{section}]"]
        lines += [f"{f.name} = {_fmt(getattr(obj, f.name))}" for f in dataclasses.fields(obj)
                  if not isinstance(getattr(obj, f.name), dict)]
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return " ".join(str(x) for x in v)
    if v is None:
        return "none"
    return str(v)


@dataclass(frozen=True)
class _ExperimentTop:
    task: str
    label: str
    seeds: tuple
    methods: tuple
    metrics: tuple
    mia: bool
    out: str
    save_checkpoints: bool
    sisa_shards: int
