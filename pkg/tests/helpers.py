"""Shared builders for the test-suite: tiny configs and random smooth graphs."""
import numpy as np

from kga import gradkit as gk
from kga.models import ModelSpec, TrainConfig

CLS_SPEC = ModelSpec(arch="bow", emb=8, hidden=8)
S2S_SPEC = ModelSpec(arch="rnn", emb=8, hidden=8)
TINY_TRAIN = TrainConfig(epochs=3, batch_size=16, lr=1e-2, warmup=5)

SMOOTH_ACTS = ("tanh", "sigmoid", "softplus", "exp_small", "softmax", "square")
HEADS = ("nll", "sum_sq", "softmax_dot", "mean_tanh")


def _act(name, h):
    if name == "tanh":
        return gk.tanh(h)
    if name == "sigmoid":
        return gk.sigmoid(h)
    if name == "softplus":
        return gk.log(gk.exp(h) + 1.0)
    if name == "exp_small":
        return gk.exp(h * 0.3)
    if name == "softmax":
        return gk.softmax(h, axis=-1)
    return h * h


def random_graph(seed: int) -> gk.ComputeGraph:
    """Depth 1-4 MLP-like graph with widths <= 8 and smooth primitives only.

    Each layer is act(h @ W + b); some layers also mix in a skip branch via
    concat + matmul or an elementwise product, so every primitive gets used.
    """
    rng = np.random.default_rng([seed, 77])
    depth = int(rng.integers(1, 5))
    widths = [int(w) for w in rng.integers(1, 9, size=depth + 1)]
    batch = int(rng.integers(1, 5))
    params = {"x": rng.normal(size=(batch, widths[0]))}
    plan = []
    for k in range(depth):
        params[f"W{k}"] = rng.normal(scale=0.7, size=(widths[k], widths[k + 1]))
        params[f"b{k}"] = rng.normal(scale=0.3, size=(widths[k + 1],))
        mix = str(rng.choice(["none", "concat", "product"]))
        if mix == "concat":
            params[f"S{k}"] = rng.normal(scale=0.5, size=(widths[k] + widths[k + 1], widths[k + 1]))
        plan.append((str(rng.choice(SMOOTH_ACTS)), mix))
    head = str(rng.choice(HEADS))
    target = rng.integers(0, widths[-1], size=batch)
    weights = rng.normal(size=(batch, widths[-1]))
    table_ids = rng.integers(0, batch, size=batch)

    def fn(p):
        h = gk.take_rows(p["x"], table_ids) if seed % 3 == 0 else p["x"]
        for k, (act, mix) in enumerate(plan):
            z = h @ p[f"W{k}"] + p[f"b{k}"]
            a = _act(act, z)
            if mix == "concat":
                a = gk.tanh(gk.concat([h, a], axis=-1) @ p[f"S{k}"])
            elif mix == "product":
                a = a * gk.sigmoid(z)
            h = a
        if head == "nll":
            lp = gk.log_softmax(h, axis=-1)
            return -gk.mean(gk.index(lp, (np.arange(batch), target)))
        if head == "sum_sq":
            return gk.sum_(h * h) * 0.5
        if head == "softmax_dot":
            return gk.sum_(gk.softmax(h, axis=-1) * weights)
        return gk.mean(gk.tanh(h))

    return gk.ComputeGraph(fn, params)
