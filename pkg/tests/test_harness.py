import csv
import io
import json

import pytest
from hypothesis import given, settings, strategies as st

from kga.harness import runner
from kga.harness.cli import main
from kga.harness.config import (METHODS, STAGES, ConfigError, DataConfig, ExperimentConfig, SplitConfig,
                                dump_config, load_config, parse_config, stage_seed)
from kga.harness.presets import N_BANDS, REMOVAL_COUNTS, preset
from kga.harness.report import emit_report, gap_trajectories, load_bundle, to_csv
from kga.harness.runner import ReportBundle, run_experiment
from kga.models import ModelSpec, TrainConfig
from kga.unlearn import UnlearnConfig

TINY = ExperimentConfig(
    task="classification",
    seeds=(0, 1),
    methods=("kga", "badt", "sisa"),
    data=DataConfig(train_size=120, extra_size=20, test_size=30),
    synth=dict(labels=3, vocab_size=120, cluster_size=4, tokens_per_instance=5, noise_ratio=0.3),
    split=SplitConfig(mode="random", count=10),
    model=ModelSpec(arch="bow", emb=8, hidden=8),
    train=TrainConfig(epochs=3, batch_size=16, lr=1e-2, warmup=5),
    helpers=TrainConfig(epochs=3, batch_size=16, lr=1e-2, warmup=5),
    kga=UnlearnConfig(lr=1e-2, batch_size=8, max_steps=10, valid_steps=5),
    badt=UnlearnConfig(alpha=1.0, lr=1e-2, batch_size=8, max_steps=10, valid_steps=5),
    sisa_shards=2,
)


@pytest.fixture(scope="module")
def tiny_bundle():
    return run_experiment(TINY)


# ---------------------------------------------------------------- seeds and config


def test_stage_seeds_are_distinct_and_stable():
    seeds = [stage_seed(3, s) for s in STAGES]
    assert len(set(seeds)) == len(STAGES)
    assert seeds == [stage_seed(3, s) for s in STAGES]
    assert stage_seed(3, "kga") != stage_seed(4, "kga")
    with pytest.raises(ConfigError):
        stage_seed(0, "nope")


@pytest.mark.parametrize("change", [dict(task="vision"), dict(seeds=()), dict(methods=("magic",)),
                                    dict(metrics=("bleu",)), dict(split=SplitConfig(mode="token")),
                                    dict(sisa_shards=1, methods=("sisa",))])
def test_invalid_configs_are_rejected(change):
    with pytest.raises(ConfigError):
        TINY.replace(**change)


@settings(max_examples=30)
@given(st.lists(st.integers(0, 99), min_size=1, max_size=4, unique=True),
       st.lists(st.sampled_from(METHODS), min_size=1, max_size=4, unique=True),
       st.integers(0, 500), st.floats(1e-5, 1e-1), st.booleans())
def test_dump_then_parse_round_trips(seeds, methods, count, lr, mia):
    cfg = TINY.replace(seeds=tuple(seeds), methods=tuple(methods), mia=mia,
                       split=SplitConfig(mode="random", count=count),
                       kga=UnlearnConfig(lr=lr, max_steps=7))
    again = parse_config(dump_config(cfg))
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_unknown_sections_and_keys_are_rejected():
    with pytest.raises(ConfigError, match="section"):
        parse_config("[wat]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("[kga]\nbeta = 1\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_config("[kga]\nmax_steps = many\n")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.ini")


def test_files_source_requires_existing_paths(tmp_path):
    cfg = TINY.replace(data=DataConfig(source="files", train_path=str(tmp_path / "nope.jsonl")))
    with pytest.raises(ConfigError, match="does not exist"):
        cfg.check_paths()


# ---------------------------------------------------------------- presets


def test_removal_sweep_sizes_increase():
    counts = [c.split.count for c in preset("removal-sweep")]
    assert counts == list(REMOVAL_COUNTS) == sorted(counts)


def test_difficulty_sweep_covers_every_band_once():
    cfgs = preset("difficulty-sweep")
    assert [c.split.band for c in cfgs] == list(range(N_BANDS))
    assert {c.split.mode for c in cfgs} == {"band"}


def test_lexical_removal_selects_its_token():
    (cfg,) = preset("lexical-removal", token="t7")
    assert cfg.split.mode == "token" and cfg.split.token == "t7"
    with pytest.raises(ConfigError):
        preset("lexical-removal")


def test_basemodel_sweep_and_unknown_preset():
    assert [c.model.arch for c in preset("basemodel-sweep")] == ["rnn", "transformer"]
    with pytest.raises(ConfigError, match="unknown preset"):
        preset("everything")


def test_difficulty_bands_partition_the_training_set():
    cfg = preset("difficulty-sweep", data=DataConfig(train_size=40, extra_size=10, test_size=10),
                 model=ModelSpec(arch="rnn", emb=8, hidden=8),
                 train=TrainConfig(epochs=1, batch_size=16, lr=1e-2, warmup=5))[0]
    cfg = cfg.replace(split=SplitConfig(mode="band", count=3, band=0, n_bands=N_BANDS))
    pipe = runner.Pipeline(cfg, 0)
    scores = pipe.difficulty_scores()
    assert set(scores) == set(pipe.corpora()[0].ids())
    assert all(0.0 <= v <= 100.0 for v in scores.values())


# ---------------------------------------------------------------- runs and reports


def test_runs_produce_every_method_and_split(tiny_bundle):
    assert not tiny_bundle.failures
    methods = {r["method"] for r in tiny_bundle.rows}
    assert methods == {"original", "retrain", "kga", "badt", "sisa"}
    assert tiny_bundle.seeds == [0, 1]
    assert set(tiny_bundle.kga) == {"0", "1"} and set(tiny_bundle.badt) == {"0", "1"}


def test_runs_are_deterministic(tiny_bundle):
    again = run_experiment(TINY)
    assert again.dumps() == tiny_bundle.dumps()


def test_csv_has_one_row_per_seed_method_split(tiny_bundle):
    rows = list(csv.DictReader(io.StringIO(to_csv(tiny_bundle))))
    splits = {r["split"] for r in rows}
    assert len({(r["seed"], r["method"], r["split"]) for r in rows}) == 2 * 5 * len(splits)


def test_emit_report_is_byte_idempotent(tiny_bundle, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    emit_report(tiny_bundle, a)
    emit_report(load_bundle(a), b)
    for name in ("report.json", "metrics.csv", "plots/gap_trajectory.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_gap_trajectories_have_monotone_steps(tiny_bundle):
    for series in gap_trajectories(tiny_bundle).values():
        assert series["x"] == sorted(series["x"])
        assert len(series["x"]) == len(series["y"])


def test_unwritable_output_is_a_config_error(tiny_bundle, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ConfigError):
        emit_report(tiny_bundle, blocker / "sub")


def test_bundle_json_round_trip(tiny_bundle):
    again = ReportBundle.from_json(json.loads(tiny_bundle.dumps()))
    assert again.dumps() == tiny_bundle.dumps()
    assert set(tiny_bundle.values("kga", "forget", "accuracy")) == {0, 1}


def test_empty_forget_set_skips_unlearning_but_runs_retrain():
    cfg = TINY.replace(seeds=(0,), methods=(), split=SplitConfig(mode="random", count=0))
    pipes = {}
    bundle = run_experiment(cfg, pipes)
    assert not bundle.failures
    orig, re = pipes[0].original(), pipes[0].retrain()
    assert all(orig.params[k].tobytes() == re.params[k].tobytes() for k in orig.params)


def test_a_failing_seed_is_recorded_and_the_rest_still_run(monkeypatch):
    real = runner.Pipeline.rows

    def flaky(self):
        if self.seed == 1:
            raise RuntimeError("boom")
        return real(self)

    monkeypatch.setattr(runner.Pipeline, "rows", flaky)
    bundle = run_experiment(TINY.replace(methods=("kga",)))
    assert bundle.failures == {"1": "RuntimeError: boom"}
    assert {r["seed"] for r in bundle.rows} == {0}


# ---------------------------------------------------------------- CLI


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["preset", "toy-classification", "--print-config"]) == 0
    assert "[experiment]" in capsys.readouterr().out
    assert main(["preset", "no-such-preset"]) == 1
    assert main(["evaluate", "--config", str(tmp_path / "missing.ini")]) == 1
    assert main(["evaluate", "--forget-count", "-1", "--out", str(tmp_path)]) == 1
    assert main(["report", str(tmp_path / "nothing-here")]) == 1


def test_cli_evaluate_writes_a_report(tmp_path):
    ini = tmp_path / "tiny.ini"
    ini.write_text(dump_config(TINY.replace(seeds=(0,), methods=("kga",))))
    out = tmp_path / "out"
    assert main(["evaluate", "--config", str(ini), "--out", str(out), "--format", "json"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert {r["method"] for r in report["rows"]} == {"original", "retrain", "kga"}
    assert load_config(out / "config.ini") == TINY.replace(seeds=(0,), methods=("kga",), out=str(out))
