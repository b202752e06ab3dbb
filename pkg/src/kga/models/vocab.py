from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..data import Corpus

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<s>", "</s>")


@dataclass(frozen=True)
class Vocabulary:
    """Token <-> id map with four reserved ids (pad, unk, start, end)."""

    tokens: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.tokens[:4] != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        index = {t: i for i, t in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")
        object.__setattr__(self, "_index", index)

    @classmethod
    def build(cls, corpora: Iterable[Corpus], min_freq: int = 1) -> "Vocabulary":
        """Frequency-sorted (ties broken by token) over source and target sides."""
        counts: Counter[str] = Counter()
        for corpus in corpora:
            for inst in corpus:
                counts.update(inst.source)
                counts.update(inst.target)
        kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in RESERVED),
                      key=lambda t: (-counts[t], t))
        return cls(RESERVED + tuple(kept))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, tok: str) -> bool:
        return tok in self._index

    def id(self, tok: str) -> int:
        return self._index.get(tok, UNK)

    def encode(self, toks: Sequence[str]) -> list[int]:
        get = self._index.get
        return [get(t, UNK) for t in toks]

    def decode(self, ids: Sequence[int], strip: bool = True) -> tuple[str, ...]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.tokens[i])
        return tuple(out)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode()).hexdigest()
