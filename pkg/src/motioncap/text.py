"""Caption tokenisation and vocabulary."""

from __future__ import annotations

import re
from collections import Counter
from typing import Iterable, Sequence

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)

_PUNCT = re.compile(r"[^\w\s<>]")


class VocabularyError(KeyError):
    pass


def tokenize(caption: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return _PUNCT.sub(" ", caption.lower()).split()


class Vocab:
    def __init__(self, words: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        seen = set(self.itos)
        for w in words:
            if w not in seen:
                self.itos.append(w)
                seen.add(w)
        self._stoi = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def build(cls, captions: Iterable[Sequence[str]], min_count: int = 1) -> "Vocab":
        counts = Counter(tok for cap in captions for tok in cap)
        # frequency then alphabetical, so ids do not depend on corpus order
        words = sorted((w for w, n in counts.items() if n >= min_count), key=lambda w: (-counts[w], w))
        return cls(words)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word in self._stoi

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    def id(self, word: str) -> int:
        return self._stoi.get(word, self.unk_id)

    def word(self, idx: int) -> str:
        if not 0 <= idx < len(self.itos):
            raise VocabularyError(f"token id {idx} outside vocabulary of size {len(self.itos)}")
        return self.itos[idx]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == self.eos_id:
                break
            w = self.word(i)
            if strip and w in (PAD, BOS):
                continue
            out.append(w)
        return out

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocab":
        if tuple(itos[: len(SPECIALS)]) != SPECIALS:
            raise VocabularyError("vocabulary must start with the special tokens")
        return cls(itos[len(SPECIALS) :])
