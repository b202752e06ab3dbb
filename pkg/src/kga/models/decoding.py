from __future__ import annotations

import math
import warnings
from typing import Sequence

import numpy as np

from ..data import Instance
from .vocab import EOS

PROB_FLOOR = 1e-300


def beam_generate(model, source: Sequence[str], beam_width: int = 5, max_len: int | None = None) -> list[int]:
    """Beam search over ``model.next_log_probs``; returns target ids without the end token.

    Hypotheses are ranked by accumulated log-probability, ties broken by the
    token-id sequence.  Search stops once no live hypothesis can beat the best
    finished one (scores only decrease) or the length cap is hit.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    if max_len is None:
        max_len = min(2 * len(source) + 4, model.spec.max_positions - 1)
    live: list[tuple[float, tuple[int, ...]]] = [(0.0, ())]
    finished: list[tuple[float, tuple[int, ...]]] = []
    for _ in range(max_len):
        lp = model.next_log_probs(source, [h for _, h in live])
        cands = []
        for (score, hyp), row in zip(live, lp):
            top = np.argsort(-row, kind="stable")[:beam_width]
            cands.extend((score + float(row[t]), hyp + (int(t),)) for t in top)
        cands.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for score, hyp in cands[:beam_width]:
            (finished if hyp[-1] == EOS else live).append((score, hyp))
        best_done = max((s for s, _ in finished), default=-math.inf)
        if not live or live[0][0] <= best_done:
            break
    pool = finished or live
    score, hyp = min(pool, key=lambda c: (-c[0], c[1]))
    return [t for t in hyp if t != EOS]


def greedy_generate(model, source: Sequence[str], max_len: int | None = None) -> list[int]:
    if max_len is None:
        max_len = min(2 * len(source) + 4, model.spec.max_positions - 1)
    out: list[int] = []
    for _ in range(max_len):
        t = int(np.argmax(model.next_log_probs(source, [out])[0]))
        if t == EOS:
            break
        out.append(t)
    return out


def greedy_translate(model, sources: Sequence[Sequence[str]], max_len: int | None = None) -> list[tuple[str, ...]]:
    """Greedy decoding of many sources at once (one forward pass per output position)."""
    if not sources:
        return []
    cap = model.spec.max_positions - 1
    limits = [min(2 * len(s) + 4, cap) if max_len is None else min(max_len, cap) for s in sources]
    outs: list[list[int]] = [[] for _ in sources]
    live = list(range(len(sources)))
    while live:
        lp = model.step_log_probs([sources[i] for i in live], [outs[i] for i in live])
        still = []
        for i, row in zip(live, lp):
            t = int(np.argmax(row))
            if t != EOS:
                outs[i].append(t)
                if len(outs[i]) < limits[i]:
                    still.append(i)
        live = still
    return [model.vocab.decode(o) for o in outs]


def translate(model, sources: Sequence[Sequence[str]], beam_width: int = 5) -> list[tuple[str, ...]]:
    return [model.vocab.decode(beam_generate(model, s, beam_width)) for s in sources]


def sequence_log_prob(model, instances: Sequence[Instance]) -> np.ndarray:
    """Teacher-forced log-probability of each gold sequence (end token included)."""
    return np.array([float(g.sum()) for g in model.gold_log_probs(list(instances))])


def perplexities(model, instances: Sequence[Instance]) -> np.ndarray:
    """exp(mean negative gold log-probability) per instance; tiny probabilities are clamped."""
    out = []
    floor = math.log(PROB_FLOOR)
    clamped = 0
    for g in model.gold_log_probs(list(instances)):
        if (g < floor).any():
            clamped += 1
            g = np.maximum(g, floor)
        out.append(math.exp(-float(g.mean())))
    if clamped:
        warnings.warn(f"{clamped} instance(s) had gold probabilities below {PROB_FLOOR}; clamped",
                      RuntimeWarning, stacklevel=2)
    return np.array(out)


def sequence_perplexity(model, instance: Instance) -> float:
    return float(perplexities(model, [instance])[0])


def token_distributions(model, instance: Instance) -> list[np.ndarray]:
    """Teacher-forced next-token distributions, one per target position plus the end token."""
    lp = model.instance_log_probs([instance])[0]
    return [np.exp(row) for row in lp]


def class_distribution(model, instance: Instance) -> np.ndarray:
    return np.exp(model.instance_log_probs([instance])[0][0])
