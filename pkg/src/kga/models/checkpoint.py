"""Checkpoint files: b"KGAC1\\n", one JSON header line, then little-endian float64 parameters."""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .base import Model, ModelSpec, build_model
from .vocab import Vocabulary

MAGIC = b"KGAC1"
FORMAT_VERSION = 1


def save_model(model: Model, path: str | os.PathLike) -> None:
    names = list(model.params)
    header = {
        "format_version": FORMAT_VERSION,
        "arch": model.arch,
        "spec": model.spec.to_json(),
        "vocab_hash": model.vocab.digest(),
        "vocab": list(model.vocab.tokens),
        "labels": list(model.labels) if model.labels is not None else None,
        "seed": model.seed,
        "params": [[k, list(model.params[k].shape)] for k in names],
    }
    blob = b"".join(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes() for k in names)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob)
    os.replace(tmp, path)


def load_model(path: str | os.PathLike) -> Model:
    with open(path, "rb") as fh:
        if fh.readline().rstrip(b"\n") != MAGIC:
            raise ValueError(f"{path}: not a KGAC1 checkpoint")
        header = json.loads(fh.readline())
        blob = fh.read()
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header.get('format_version')}")
    vocab = Vocabulary(tuple(header["vocab"]))
    if vocab.digest() != header["vocab_hash"]:
        raise ValueError(f"{path}: vocabulary hash mismatch")
    flat = np.frombuffer(blob, dtype="<f8")
    params, at = {}, 0
    for name, shape in header["params"]:
        n = int(np.prod(shape)) if shape else 1
        params[name] = flat[at:at + n].astype(np.float64).reshape(shape)
        at += n
    if at != flat.size:
        raise ValueError(f"{path}: parameter block size mismatch")
    spec = ModelSpec(**header["spec"])
    return build_model(spec, vocab, header["labels"], header["seed"], params)
