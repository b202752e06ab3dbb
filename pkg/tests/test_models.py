import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kga.data import Corpus, Instance
from kga.models import (EOS, ModelSpec, TrainConfig, Vocabulary, accuracy, beam_generate, build_model,
                        class_distribution, greedy_generate, greedy_translate, load_model, perplexities,
                        save_model, sequence_perplexity, token_distributions, train_supervised, translate)
from helpers import CLS_SPEC, TINY_TRAIN

ARCHS = ("rnn", "transformer")


@pytest.fixture(scope="module")
def cls_model(tiny_cls):
    D, _, _, vocab, labels = tiny_cls
    return train_supervised(CLS_SPEC, D, TrainConfig(epochs=30, batch_size=16, lr=2e-2, warmup=5), 0, vocab, labels)


@pytest.fixture(scope="module")
def s2s_models(tiny_s2s):
    D, _, _, vocab = tiny_s2s
    return {a: train_supervised(ModelSpec(arch=a, emb=8, hidden=8), D, TINY_TRAIN, 0, vocab) for a in ARCHS}


def copy_corpus(n=300, vocab=20, max_len=8, seed=0):
    rng = np.random.default_rng(seed)
    toks = [f"k{i}" for i in range(vocab)]
    out = []
    for i in range(n):
        s = tuple(str(t) for t in rng.choice(toks, size=int(rng.integers(1, max_len + 1))))
        out.append(Instance(f"p{i}", s, s))
    return Corpus(tuple(out), "seq2seq")


# ---------------------------------------------------------------- vocabulary


def test_vocabulary_is_stable_and_bijective(tiny_s2s):
    D, pool, _, _ = tiny_s2s
    a, b = Vocabulary.build([D, pool]), Vocabulary.build([D, pool])
    assert a.tokens == b.tokens
    assert len(set(a.tokens)) == len(a)
    for tok in a.tokens[4:]:
        assert a.decode([a.id(tok)]) == (tok,)


def test_unknown_tokens_map_to_unknown_id():
    v = Vocabulary.build([Corpus((Instance("a", ("x",), ("y",)),), "seq2seq")])
    assert v.encode(["x", "never-seen"])[1] == 1


# ---------------------------------------------------------------- classifier


def test_zero_output_layer_gives_uniform_labels(tiny_cls):
    D, _, _, vocab, labels = tiny_cls
    m = build_model(ModelSpec(arch="bow", zero_output=True), vocab, labels, seed=3)
    np.testing.assert_allclose(class_distribution(m, D[0]), np.full(3, 1 / 3), atol=1e-15)


def test_class_distributions_sum_to_one(cls_model, tiny_cls):
    lp, _ = cls_model.batch_log_probs(list(tiny_cls[2]))
    np.testing.assert_allclose(np.exp(lp).sum(axis=-1), 1.0, atol=1e-12)


def test_trained_classifier_fits_training_set(cls_model, tiny_cls):
    D = tiny_cls[0]
    pred = cls_model.predict(list(D))
    assert np.mean([p == x.label for p, x in zip(pred, D)]) >= 0.95


def test_separable_two_class_corpus():
    insts = [Instance(f"s{i}", ("pos", f"n{i % 7}") if i % 2 else ("neg", f"n{i % 5}"),
                      label="P" if i % 2 else "N") for i in range(60)]
    c = Corpus(tuple(insts), "classification")
    m = train_supervised(CLS_SPEC, c, TrainConfig(epochs=20, batch_size=8, lr=2e-2, warmup=5), 1)
    assert accuracy(m, c) >= 0.99


def test_zero_training_steps_keep_initialisation(tiny_cls):
    D, _, _, vocab, labels = tiny_cls
    m = train_supervised(CLS_SPEC, D, TrainConfig(epochs=0), 4, vocab, labels)
    init = build_model(CLS_SPEC, vocab, labels, 4)
    assert all(np.array_equal(m.params[k], init.params[k]) for k in m.params)


def test_empty_corpus_is_rejected():
    with pytest.raises(ValueError, match="empty"):
        train_supervised(CLS_SPEC, Corpus((), "classification"), TINY_TRAIN, 0)


def test_training_is_deterministic(tiny_cls):
    D, _, _, vocab, labels = tiny_cls
    a = train_supervised(CLS_SPEC, D, TINY_TRAIN, 9, vocab, labels)
    b = train_supervised(CLS_SPEC, D, TINY_TRAIN, 9, vocab, labels)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
    assert a.history == b.history and len(a.history) > 0


# ---------------------------------------------------------------- seq2seq


@pytest.mark.parametrize("arch", ARCHS)
def test_token_distributions_cover_target_plus_end(s2s_models, tiny_s2s, arch):
    x = tiny_s2s[2][0]
    dists = token_distributions(s2s_models[arch], x)
    assert len(dists) == len(x.target) + 1
    for d in dists:
        assert d.sum() == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("arch", ARCHS)
def test_identical_models_give_identical_distributions(s2s_models, tiny_s2s, arch):
    m = s2s_models[arch]
    twin = m.with_params(m.params)
    x = tiny_s2s[2][1]
    for a, b in zip(token_distributions(m, x), token_distributions(twin, x)):
        assert a.tobytes() == b.tobytes()


def test_position_cap_is_enforced(tiny_s2s):
    vocab = tiny_s2s[3]
    m = build_model(ModelSpec(arch="rnn", emb=4, hidden=4, max_positions=4), vocab, seed=0)
    long = Instance("long", ("s1",), ("t1",) * 4)
    with pytest.raises(ValueError, match="cap"):
        token_distributions(m, long)


@pytest.mark.parametrize("arch", ARCHS)
def test_copy_task_is_learnable(arch):
    c = copy_corpus()
    m = train_supervised(ModelSpec(arch=arch, emb=32, hidden=64), c,
                         TrainConfig(epochs=30, batch_size=32, lr=1e-2, warmup=50), 0)
    assert accuracy(m, c) >= 0.95
    x = c[0]
    gold = m.make_batch([x]).gold[0]
    assert [int(np.argmax(d)) for d in token_distributions(m, x)] == list(gold)


@pytest.mark.parametrize("arch", ARCHS)
def test_uniform_model_perplexity_is_vocab_size(tiny_s2s, arch):
    vocab = tiny_s2s[3]
    m = build_model(ModelSpec(arch=arch, emb=4, hidden=4, zero_output=True), vocab, seed=0)
    assert sequence_perplexity(m, tiny_s2s[0][0]) == pytest.approx(len(vocab), rel=1e-12)


class LatticeModel:
    """Stub decoder whose next-token distribution depends only on the prefix."""

    def __init__(self, table, size=6):
        self.table, self.size = table, size
        self.spec = SimpleNamespace(max_positions=64)
        self.vocab = SimpleNamespace(decode=lambda ids: tuple(map(str, ids)))

    def next_log_probs(self, source, prefixes):
        rows = []
        for p in prefixes:
            probs = np.full(self.size, 1e-12)
            for tok, pr in self.table.get(tuple(p), {EOS: 1.0}).items():
                probs[tok] = pr
            rows.append(np.log(probs / probs.sum()))
        return np.array(rows)

    def step_log_probs(self, sources, prefixes):
        return self.next_log_probs(None, prefixes)


A, B = 4, 5
# greedy takes A (0.6) then ends: 0.6 * 0.5 = 0.30; B then end scores 0.4 * 0.9 = 0.36
LATTICE = {(): {A: 0.6, B: 0.4}, (A,): {EOS: 0.5, A: 0.25, B: 0.25}, (B,): {EOS: 0.9, A: 0.05, B: 0.05}}


def test_beam_beats_greedy_on_hand_lattice():
    m = LatticeModel(LATTICE)
    assert greedy_generate(m, ["s"]) == [A]
    assert beam_generate(m, ["s"], beam_width=1) == [A]
    assert beam_generate(m, ["s"], beam_width=2) == [B]


@given(st.lists(st.integers(4, 5), min_size=0, max_size=5), st.integers(1, 6))
def test_one_hot_model_is_beam_width_independent(path, width):
    table = {tuple(path[:i]): {tok: 1.0} for i, tok in enumerate(path)}
    table[tuple(path)] = {EOS: 1.0}
    assert beam_generate(LatticeModel(table), ["s"], beam_width=width) == path


@pytest.mark.parametrize("arch", ARCHS)
def test_beam_one_equals_greedy_and_batched_greedy(s2s_models, tiny_s2s, arch):
    m = s2s_models[arch]
    srcs = [x.source for x in tiny_s2s[2]]
    greedy = [m.vocab.decode(greedy_generate(m, s)) for s in srcs]
    assert [m.vocab.decode(beam_generate(m, s, 1)) for s in srcs] == greedy
    assert greedy_translate(m, srcs) == greedy
    assert len(translate(m, srcs[:2])) == 2


def test_perplexity_clamps_and_flags():
    stub = SimpleNamespace(gold_log_probs=lambda xs: [np.array([-1000.0, 0.0])])
    with pytest.warns(RuntimeWarning, match="clamped"):
        (ppl,) = perplexities(stub, [None])
    assert ppl == pytest.approx(math.exp(-math.log(1e-300) / 2))


# ---------------------------------------------------------------- checkpoints


@pytest.mark.parametrize("which", ["bow", "rnn", "transformer"])
def test_checkpoint_round_trip_is_bit_identical(tmp_path, which, cls_model, s2s_models, tiny_cls, tiny_s2s):
    m = cls_model if which == "bow" else s2s_models[which]
    data = list(tiny_cls[2] if which == "bow" else tiny_s2s[2])
    path = tmp_path / "m.ckpt"
    save_model(m, path)
    loaded = load_model(path)
    assert path.read_bytes().startswith(b"KGAC1\n")
    assert loaded.batch_log_probs(data)[0].tobytes() == m.batch_log_probs(data)[0].tobytes()
    save_model(loaded, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_corrupt_checkpoint_is_rejected(tmp_path, cls_model):
    path = tmp_path / "m.ckpt"
    save_model(cls_model, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="size"):
        load_model(path)
    (tmp_path / "bad.ckpt").write_bytes(b"nope\n")
    with pytest.raises(ValueError, match="KGAC1"):
        load_model(tmp_path / "bad.ckpt")


@settings(max_examples=10)
@given(st.integers(0, 2**31 - 1))
def test_seed_determines_initialisation(tiny_cls, seed):
    vocab, labels = tiny_cls[3], tiny_cls[4]
    a, b = build_model(CLS_SPEC, vocab, labels, seed), build_model(CLS_SPEC, vocab, labels, seed)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
