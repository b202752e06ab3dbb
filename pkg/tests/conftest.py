import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kga.data import ClassificationSynth, TranslationSynth, split_pool, synth_classification, synth_translation
from kga.models import Vocabulary

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def tiny_cls():
    """(D, pool, test, vocab, labels) for a small 3-label corpus."""
    full = synth_classification(ClassificationSynth(labels=3, per_label=40, vocab_size=60, cluster_size=4,
                                                    tokens_per_instance=5, noise_ratio=0.3), seed=11)
    D, pool, test = split_pool(full, [80, 20, 20], seed=11)
    vocab = Vocabulary.build([D, pool])
    return D, pool, test, vocab, sorted(set(D.labels()))


@pytest.fixture(scope="session")
def tiny_s2s():
    """(D, pool, test, vocab) for a small synthetic translation corpus."""
    full = synth_translation(TranslationSynth(count=60, vocab=8, min_len=2, max_len=4), seed=5)
    D, pool, test = split_pool(full, [40, 10, 10], seed=5)
    return D, pool, test, Vocabulary.build([full])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, printed after the run whether or not output is captured
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
