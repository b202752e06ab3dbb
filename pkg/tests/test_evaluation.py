import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kga.data import ClassificationSynth, split_pool, synth_classification
from kga.evaluation import (SMOOTH, Attack, MetricError, MetricsReport, MIAConfig, attack_features, bleu4,
                            build_attack, corpus_jsd, corpus_lpd, jsd, kl, lpd, micro_f1, pdlp)
from kga.models import ModelSpec, TrainConfig, Vocabulary, train_supervised
from helpers import CLS_SPEC, TINY_TRAIN


def probs(n):
    return st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n).map(lambda v: np.array(v) / sum(v))


def brute_kl(p, q, eps=SMOOTH):
    k = len(p)
    ps = [(1 - eps) * a + eps / k for a in p]
    qs = [(1 - eps) * b + eps / k for b in q]
    return math.fsum(a * (math.log(a) - math.log(b)) for a, b in zip(ps, qs))


class GoldStub:
    """Model stand-in that returns fixed per-instance gold log-probabilities."""

    def __init__(self, table):
        self.table = table

    def gold_log_probs(self, instances):
        return [np.log(np.array(self.table[x])) for x in instances]


# ---------------------------------------------------------------- divergences


def test_kl_two_label_oracle():
    assert float(kl([0.5, 0.5], [0.25, 0.75], eps=0.0)) == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3),
                                                                        abs=1e-15)
    assert 0.5 * math.log(2) + 0.5 * math.log(2 / 3) == pytest.approx(0.143841, abs=5e-7)


def test_jsd_oracle():
    assert float(jsd([0.9, 0.1], [0.1, 0.9], eps=0.0)) == pytest.approx(0.8 * math.log(9), abs=1e-14)
    assert 0.8 * math.log(9) == pytest.approx(1.75778, abs=5e-6)


@given(probs(4), probs(4))
def test_kl_and_jsd_match_brute_force(p, q):
    assert abs(float(kl(p, q)) - brute_kl(p, q)) <= 1e-9
    assert abs(float(jsd(p, q)) - 0.5 * (brute_kl(p, q) + brute_kl(q, p))) <= 1e-9


@given(probs(5), probs(5))
def test_divergence_properties(p, q):
    assert float(kl(p, q)) >= -1e-15
    assert float(jsd(p, q)) == pytest.approx(float(jsd(q, p)), abs=1e-15)
    assert abs(float(kl(p, p))) <= 1e-12


def test_disjoint_supports_stay_finite():
    assert np.isfinite(jsd([1.0, 0.0], [0.0, 1.0]))


def test_support_mismatch_is_rejected():
    with pytest.raises(MetricError, match="support"):
        kl([0.5, 0.5], [1 / 3] * 3)


def test_lpd_values():
    assert lpd(30.0, 20.0) == 0.5
    assert lpd(7.0, 7.0) == 0.0
    with pytest.raises(MetricError):
        lpd(1.0, 0.0)


@given(st.floats(0.1, 1e3), st.floats(0.1, 1e3), st.floats(0.01, 100))
def test_lpd_is_scale_invariant(x, y, c):
    assert lpd(c * x, c * y) == pytest.approx(lpd(x, y), rel=1e-9, abs=1e-12)


def test_pdlp_oracles():
    before = GoldStub({"a": [0.5, 0.5], "b": [0.9], "c": [0.2, 0.3]})
    after = GoldStub({"a": [0.5, 0.4], "b": [0.9], "c": [0.3, 0.3]})
    assert pdlp(before, before, ["a", "b", "c"]) == 0.0
    assert pdlp(after, before, ["a", "b", "c"]) == pytest.approx(100 / 3, abs=1e-9)
    worse = GoldStub({k: [v[0] / 2] + v[1:] for k, v in before.table.items()})
    assert pdlp(worse, before, ["a", "b", "c"]) == 100.0
    with pytest.raises(MetricError):
        pdlp(before, before, [])


@given(st.lists(st.tuples(st.floats(0.01, 1), st.floats(0.01, 1)), min_size=1, max_size=20))
def test_pdlp_matches_brute_force(pairs):
    before = GoldStub({i: [a] for i, (a, _) in enumerate(pairs)})
    after = GoldStub({i: [b] for i, (_, b) in enumerate(pairs)})
    expected = 100.0 * sum(math.log(b) < math.log(a) for a, b in pairs) / len(pairs)
    assert abs(pdlp(after, before, list(range(len(pairs)))) - expected) <= 1e-9


# ---------------------------------------------------------------- task metrics


def test_micro_f1_hand_cases():
    assert micro_f1(["a", "b", "c"], ["a", "b", "c"]) == 1.0
    assert micro_f1(["a", "b"], ["b", "a"]) == 0.0
    assert micro_f1(["a", "b", "x"], ["a", "b", "c"]) == pytest.approx(2 / 3, abs=1e-15)
    with pytest.raises(MetricError):
        micro_f1(["a"], [])


@given(st.lists(st.tuples(st.sampled_from("abcd"), st.sampled_from("abcd")), min_size=1, max_size=30))
def test_single_label_micro_f1_equals_accuracy(pairs):
    pred, gold = zip(*pairs)
    acc = sum(p == g for p, g in pairs) / len(pairs)
    assert abs(micro_f1(pred, gold) - acc) <= 1e-12


@given(st.lists(st.tuples(st.frozensets(st.sampled_from("abcd")), st.frozensets(st.sampled_from("abcd"), min_size=1)),
                min_size=1, max_size=10))
def test_multi_label_micro_f1_matches_per_label_counts(pairs):
    tp = fp = fn = 0
    for lab in "abcd":
        for p, g in pairs:
            tp += lab in p and lab in g
            fp += lab in p and lab not in g
            fn += lab not in p and lab in g
    expected = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
    assert abs(micro_f1([p for p, _ in pairs], [g for _, g in pairs]) - expected) <= 1e-12


def _toks(s):
    return s.split()


def test_bleu_single_pair_hand_value():
    # modified precisions 4/5, 3/4, 2/3, 1/2; equal lengths so no brevity penalty
    assert bleu4([_toks("a b c d e")], [_toks("a b c d f")]) == pytest.approx(100 * 0.2 ** 0.25, abs=1e-9)
    assert 100 * 0.2 ** 0.25 == pytest.approx(66.874, abs=5e-4)


def test_bleu_five_pair_hand_value():
    cands = ["a b c d", "a b c", "x y z w v", "a a a", "p q"]
    refs = [["a b c d"], ["a b d"], ["x y z w"], ["a b"], ["p q r", "q p"]]
    # clipped matches / totals per order: 13/17, 8/12, 4/7, 2/3
    # candidate length 17 > effective reference length 15, so no brevity penalty
    expected = 100 * (Fraction(13, 17) * Fraction(8, 12) * Fraction(4, 7) * Fraction(2, 3)) ** 0.25
    got = bleu4([_toks(c) for c in cands], [[_toks(r) for r in rs] for rs in refs])
    assert abs(got - float(expected)) <= 1e-6


def test_bleu_brevity_penalty_and_smoothing():
    # p1 = 1/2, p2 = 0/1 -> 1/2 after add-one, p3 = p4 = 1/1 after add-one; BP = exp(1 - 4/2)
    assert bleu4([["a", "b"]], [["a", "c", "d", "e"]]) == pytest.approx(100 * math.exp(-1) * 0.25 ** 0.25, abs=1e-9)


def test_bleu_edge_cases():
    assert bleu4([["a", "b"], ["c"]], [["a", "b"], ["c"]]) == 100.0
    assert bleu4([["x", "y"]], [["a", "b"]]) == 0.0
    with pytest.raises(MetricError):
        bleu4([], [])


sentences = st.lists(st.sampled_from("abcde"), min_size=1, max_size=7)


@given(st.lists(st.tuples(sentences, st.lists(sentences, min_size=1, max_size=3)), min_size=1, max_size=6),
       st.randoms(use_true_random=False))
def test_bleu_permutation_invariances(pairs, rnd):
    cands = [c for c, _ in pairs]
    refs = [r for _, r in pairs]
    base = bleu4(cands, refs)
    assert 0.0 <= base <= 100.0
    order = list(range(len(pairs)))
    rnd.shuffle(order)
    assert bleu4([cands[i] for i in order], [refs[i] for i in order]) == pytest.approx(base, abs=1e-9)
    shuffled = [rnd.sample(r, len(r)) for r in refs]
    # ties in closest reference length resolve to the shorter one, so order cannot matter
    assert bleu4(cands, shuffled) == pytest.approx(base, abs=1e-9)


# ---------------------------------------------------------------- model-level metrics


@pytest.fixture(scope="module")
def tiny_model(tiny_cls):
    D, _, _, vocab, labels = tiny_cls
    return train_supervised(CLS_SPEC, D, TINY_TRAIN, 0, vocab, labels)


def test_corpus_jsd_of_a_model_with_itself_is_zero(tiny_model, tiny_cls):
    assert corpus_jsd(tiny_model, tiny_model, tiny_cls[2]) == pytest.approx(0.0, abs=1e-12)


def test_corpus_lpd_against_itself_is_zero(tiny_s2s):
    D, _, test, vocab = tiny_s2s
    m = train_supervised(ModelSpec(arch="rnn", emb=8, hidden=8), D, TINY_TRAIN, 0, vocab)
    assert corpus_lpd(m, m, test) == 0.0
    assert pdlp(m, m, test) == 0.0


def test_metrics_report_invariants():
    r = MetricsReport("kga", "forget", {"pdlp": 40.0, "jsd": 0.1})
    assert r.dumps() == '{"method": "kga", "split": "forget", "values": {"jsd": 0.1, "pdlp": 40.0}}'
    with pytest.raises(MetricError):
        MetricsReport("kga", "forget", {"pdlp": 101.0})
    with pytest.raises(MetricError):
        MetricsReport("kga", "forget", {"jsd": -0.1})


# ---------------------------------------------------------------- membership inference


@pytest.fixture(scope="module")
def mia_setup():
    full = synth_classification(ClassificationSynth(labels=4, per_label=300, vocab_size=4000, noise_ratio=0.5,
                                                    label_noise=0.1), seed=3)
    D, test = split_pool(full, [1000, 200], seed=3)
    vocab = Vocabulary.build([D])
    labels = sorted(set(D.labels()))
    tc = TrainConfig(epochs=10, batch_size=32, lr=3e-3, warmup=100, weight_decay=1e-4)
    spec = ModelSpec(arch="bow", emb=16, hidden=32)
    return D, test, vocab, labels, spec, tc


def test_attack_features_shape(tiny_model, tiny_cls):
    f = attack_features(tiny_model, tiny_cls[2])
    assert f.shape == (len(tiny_cls[2]), 7)
    assert np.isfinite(f).all()


def _attack_accuracy(attack, members, nonmembers):
    hits = (attack.scores(attack.shadow, members) > 0.5).sum() + (attack.scores(attack.shadow, nonmembers) <= 0.5).sum()
    return hits / (len(members) + len(nonmembers))


def test_attack_detects_the_shadow_models_own_members(mia_setup):
    D, test, vocab, labels, spec, tc = mia_setup
    attack = build_attack(D, spec, tc, vocab, labels, MIAConfig(seed=0))
    members = D.subset(attack.members[:len(test)])
    f1, fnr = attack.evaluate(attack.shadow, members, test)
    assert f1 > 0.6
    assert 0.0 <= fnr <= 1.0
    assert _attack_accuracy(attack, members, test) > 0.6


def test_permuted_membership_labels_give_chance_level(mia_setup):
    # one permuted attacker is a random split of feature space, so average a few
    D, test, vocab, labels, spec, tc = mia_setup
    accs = []
    for seed in range(3):
        attack = build_attack(D, spec, tc, vocab, labels, MIAConfig(seed=seed), permute_labels=True)
        accs.append(_attack_accuracy(attack, D.subset(attack.members[:len(test)]), test))
    assert abs(np.mean(accs) - 0.5) <= 0.1


def test_attack_rejects_overlap_and_degenerate_data(mia_setup, tiny_model, tiny_cls):
    D, test, vocab, labels, spec, tc = mia_setup
    attack = Attack(shadow=None, classifier=None)
    with pytest.raises(MetricError, match="overlap"):
        attack.evaluate(None, D.take([0, 1]), D.take([1, 2]))
    with pytest.raises(MetricError, match="degenerate"):
        build_attack(D.take([0]), spec, tc, vocab, labels, MIAConfig(shadow_fraction=1.0))
