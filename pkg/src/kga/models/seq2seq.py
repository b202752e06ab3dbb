from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .. import gradkit as gk
from ..data import Instance
from .base import Batch, Model, glorot, pad_ids, register
from .vocab import BOS, EOS, PAD

NEG = -1e9


class Seq2SeqModel(Model):
    """Teacher-forced encoder-decoder over a shared source/target vocabulary."""

    is_seq2seq = True

    @property
    def support_size(self) -> int:
        return len(self.vocab)

    def make_batch(self, instances: Sequence[Instance]) -> Batch:
        cap = self.spec.max_positions
        srcs, tin, tout = [], [], []
        for x in instances:
            if not x.target:
                raise ValueError(f"instance {x.id} has an empty target")
            if len(x.target) + 1 > cap or len(x.source) > cap:
                raise ValueError(f"instance {x.id} exceeds the {cap}-position cap")
            t = self.vocab.encode(x.target)
            srcs.append(self.vocab.encode(x.source) or [EOS])
            tin.append([BOS] + t)
            tout.append(t + [EOS])
        src, src_mask = pad_ids(srcs, PAD)
        tgt_in, _ = pad_ids(tin, PAD)
        gold, mask = pad_ids(tout, PAD)
        return Batch([x.id for x in instances], src, src_mask, gold, mask, tgt_in)

    def prefix_batch(self, sources: Sequence[Sequence[str]], prefixes: Sequence[Sequence[int]]) -> Batch:
        """One row per (source, target-id prefix) pair, ready for teacher forcing."""
        srcs = [self.vocab.encode(s) or [EOS] for s in sources]
        src, src_mask = pad_ids(srcs, PAD)
        tgt_in, mask = pad_ids([[BOS] + list(p) for p in prefixes], PAD)
        return Batch([str(i) for i in range(len(srcs))], src, src_mask, np.zeros_like(tgt_in), mask, tgt_in)

    def step_log_probs(self, sources: Sequence[Sequence[str]], prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        """(n, V) next-token log-probabilities for each paired source and prefix."""
        b = self.prefix_batch(sources, prefixes)
        last = b.mask.sum(axis=1).astype(int) - 1
        with gk.no_grad():
            lp = self.log_probs(self.constants(), b).data
        return lp[np.arange(len(prefixes)), last]

    def next_log_probs(self, source: Sequence[str], prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        """(n, V) next-token log-probabilities after each prefix of target ids."""
        return self.step_log_probs([source] * len(prefixes), prefixes)


def _gru(xw: gk.Tensor, U: gk.Tensor, h: gk.Tensor, H: int, mask: np.ndarray | None) -> list[gk.Tensor]:
    """Run a GRU over precomputed input projections xw (B, T, 3H)."""
    xr, xz, xn = xw[:, :, :H], xw[:, :, H:2 * H], xw[:, :, 2 * H:]
    states = []
    for t in range(xw.shape[1]):
        hu = h @ U
        r = gk.sigmoid(xr[:, t] + hu[:, :H])
        z = gk.sigmoid(xz[:, t] + hu[:, H:2 * H])
        n = gk.tanh(xn[:, t] + r * hu[:, 2 * H:])
        new = n + z * (h - n)
        if mask is not None and not mask[:, t].all():
            new = h + mask[:, t:t + 1] * (new - h)
        h = new
        states.append(h)
    return states


@register
class RNNSeq2Seq(Seq2SeqModel):
    """GRU encoder/decoder; decoder states attend over encoder states (dot product)."""

    arch = "rnn"

    def init_params(self, rng):
        V, E, H, s = len(self.vocab), self.spec.emb, self.spec.hidden, self.spec.init_scale
        return {
            "emb": rng.normal(0.0, 0.1 * s, size=(V, E)),
            "enc_Wx": glorot(rng, E, 3 * H, s),
            "enc_U": glorot(rng, H, 3 * H, s),
            "enc_b": np.zeros(3 * H),
            "dec_Wx": glorot(rng, E, 3 * H, s),
            "dec_U": glorot(rng, H, 3 * H, s),
            "dec_b": np.zeros(3 * H),
            "Wc": glorot(rng, 2 * H, H, s),
            "bc": np.zeros(H),
            "Wo": np.zeros((H, V)) if self.spec.zero_output else glorot(rng, H, V, s),
            "bo": np.zeros(V),
        }

    def log_probs(self, p: Mapping[str, gk.Tensor], batch: Batch) -> gk.Tensor:
        H = self.spec.hidden
        B = len(batch)
        src_e = gk.take_rows(p["emb"], batch.src)
        enc = _gru(src_e @ p["enc_Wx"] + p["enc_b"], p["enc_U"], gk.Tensor(np.zeros((B, H))), H, batch.src_mask)
        H_enc = gk.stack(enc, axis=1)
        tgt_e = gk.take_rows(p["emb"], batch.tgt_in)
        dec = _gru(tgt_e @ p["dec_Wx"] + p["dec_b"], p["dec_U"], enc[-1], H, None)
        H_dec = gk.stack(dec, axis=1)
        bias = ((1.0 - batch.src_mask) * NEG)[:, None, :]
        attn = gk.softmax(H_dec @ H_enc.swapaxes(1, 2) + bias)
        ctx = attn @ H_enc
        comb = gk.tanh(gk.concat([H_dec, ctx], axis=-1) @ p["Wc"] + p["bc"])
        return gk.log_softmax(comb @ p["Wo"] + p["bo"])


def _layer_norm(x: gk.Tensor, g: gk.Tensor, b: gk.Tensor) -> gk.Tensor:
    xc = x - gk.mean(x, axis=-1, keepdims=True)
    var = gk.mean(xc * xc, axis=-1, keepdims=True)
    inv = gk.exp(gk.log(var + 1e-5) * -0.5)
    return xc * inv * g + b


def _attend(q_in, kv_in, p, pre: str, bias: np.ndarray) -> gk.Tensor:
    d = q_in.shape[-1]
    q = q_in @ p[pre + "Wq"]
    k = kv_in @ p[pre + "Wk"]
    v = kv_in @ p[pre + "Wv"]
    a = gk.softmax(q @ k.swapaxes(1, 2) * (1.0 / np.sqrt(d)) + bias)
    return (a @ v) @ p[pre + "Wo"]


@register
class TransformerSeq2Seq(Seq2SeqModel):
    """One-layer, single-head encoder-decoder with learned positions and post-norm."""

    arch = "transformer"

    def init_params(self, rng):
        V, D, F, s = len(self.vocab), self.spec.emb, self.spec.hidden, self.spec.init_scale
        p = {"emb": rng.normal(0.0, 0.1 * s, size=(V, D)),
             "pos": rng.normal(0.0, 0.1 * s, size=(self.spec.max_positions + 1, D))}
        for pre in ("enc_self_", "dec_self_", "dec_cross_"):
            for w in ("Wq", "Wk", "Wv", "Wo"):
                p[pre + w] = glorot(rng, D, D, s)
        for pre in ("enc_", "dec_"):
            p[pre + "F1"] = glorot(rng, D, F, s)
            p[pre + "f1"] = np.zeros(F)
            p[pre + "F2"] = glorot(rng, F, D, s)
            p[pre + "f2"] = np.zeros(D)
        for name in ("enc_ln1", "enc_ln2", "dec_ln1", "dec_ln2", "dec_ln3"):
            p[name + "_g"] = np.ones(D)
            p[name + "_b"] = np.zeros(D)
        p["Wout"] = np.zeros((D, V)) if self.spec.zero_output else glorot(rng, D, V, s)
        p["bout"] = np.zeros(V)
        return p

    def _ffn(self, x, p, pre):
        return gk.relu(x @ p[pre + "F1"] + p[pre + "f1"]) @ p[pre + "F2"] + p[pre + "f2"]

    def log_probs(self, p: Mapping[str, gk.Tensor], batch: Batch) -> gk.Tensor:
        S, T = batch.src.shape[1], batch.tgt_in.shape[1]
        src_bias = ((1.0 - batch.src_mask) * NEG)[:, None, :]
        x = gk.take_rows(p["emb"], batch.src) + p["pos"][:S]
        x = _layer_norm(x + _attend(x, x, p, "enc_self_", src_bias), p["enc_ln1_g"], p["enc_ln1_b"])
        x = _layer_norm(x + self._ffn(x, p, "enc_"), p["enc_ln2_g"], p["enc_ln2_b"])
        causal = np.triu(np.full((T, T), NEG), k=1)[None]
        y = gk.take_rows(p["emb"], batch.tgt_in) + p["pos"][:T]
        y = _layer_norm(y + _attend(y, y, p, "dec_self_", causal), p["dec_ln1_g"], p["dec_ln1_b"])
        y = _layer_norm(y + _attend(y, x, p, "dec_cross_", src_bias), p["dec_ln2_g"], p["dec_ln2_b"])
        y = _layer_norm(y + self._ffn(y, p, "dec_"), p["dec_ln3_g"], p["dec_ln3_b"])
        return gk.log_softmax(y @ p["Wout"] + p["bout"])
