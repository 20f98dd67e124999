"""Guidance targets for the adaptive gate and spatial attention.

Gate targets come from a closed word list (dictionary categories plus a
motion-word lexicon); spatial targets come from dictionary categories
that name body parts and are repeated over every frame.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .skeleton import PART_INDEX, PARTS

_VOWELS = frozenset("aeiou")


def _consonant(w: str, i: int) -> bool:
    ch = w[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _consonant(w, i - 1)
    return True


def _measure(w: str) -> int:
    pattern = "".join("c" if _consonant(w, i) else "v" for i in range(len(w)))
    return re.sub(r"(.)\1+", r"\1", pattern).count("vc")


def _ends_cvc(w: str) -> bool:
    return (
        len(w) >= 3
        and _consonant(w, len(w) - 3)
        and not _consonant(w, len(w) - 2)
        and _consonant(w, len(w) - 1)
        and w[-1] not in "wxy"
    )


def stem(word: str) -> str:
    """Suffix-stripping stemmer: ``-ing``, ``-ed``, ``-es``, ``-s`` (residual >= 3).

    Two clean-ups keep inflections of one verb together: a doubled final
    consonant left by ``-ing``/``-ed`` is undoubled (``stepping``), and a
    silent ``e`` is restored or dropped by the usual measure rule so that
    ``wave``/``waves``/``waving`` share one stem.
    """
    w = word.lower()
    for suffix in ("ing", "ed"):
        base = w[: -len(suffix)]
        if w.endswith(suffix) and len(base) >= 3 and any(not _consonant(base, i) for i in range(len(base))):
            if base[-1] == base[-2] and _consonant(base, len(base) - 1) and base[-1] not in "lsz":
                base = base[:-1]
            elif _measure(base) == 1 and _ends_cvc(base):
                base += "e"
            w = base
            break
    else:
        if w.endswith("es") and len(w) - 2 >= 3 and w[:-2].endswith(("s", "x", "z", "ch", "sh")):
            w = w[:-2]
        elif w.endswith("s") and not w.endswith("ss") and len(w) - 1 >= 3:
            w = w[:-1]
    if w.endswith("e") and len(w) > 3:
        base = w[:-1]
        m = _measure(base)
        if m > 1 or (m == 1 and not _ends_cvc(base)):
            w = base
    return w


@dataclass(frozen=True)
class Category:
    name: str
    stems: frozenset
    parts: tuple[str, ...]


class GuidanceDictionary:
    """category -> (word stems, target parts)."""

    def __init__(self, categories: dict[str, dict]):
        self.categories: list[Category] = []
        owner: dict[str, str] = {}
        for name, entry in categories.items():
            parts = tuple(entry.get("parts", ()))
            bad = set(parts) - set(PARTS)
            if bad:
                raise ValueError(f"category {name}: unknown parts {sorted(bad)}")
            stems = frozenset(stem(w) for w in entry["words"])
            for s in stems:
                if s in owner and owner[s] != name:
                    raise ValueError(f"stem {s!r} appears in {owner[s]} and {name}")
                owner[s] = name
            self.categories.append(Category(name, stems, parts))
        self._by_stem = {s: c for c in self.categories for s in c.stems}

    @classmethod
    def load(cls, path=None) -> "GuidanceDictionary":
        return cls(_read_json(path, "dictionary.json"))

    def category(self, token: str) -> Category | None:
        return self._by_stem.get(stem(token))

    def parts_for(self, token: str) -> tuple[str, ...]:
        cat = self.category(token)
        return cat.parts if cat is not None else ()

    def to_dict(self) -> dict:
        return {c.name: {"words": sorted(c.stems), "parts": list(c.parts)} for c in self.categories}


class Lexicon:
    def __init__(self, motion_words: Sequence[str], function_words: Sequence[str]):
        self.motion_stems = frozenset(stem(w) for w in motion_words)
        self.function_stems = frozenset(stem(w) for w in function_words)

    @classmethod
    def load(cls, path=None) -> "Lexicon":
        d = _read_json(path, "lexicon.json")
        return cls(d["motion_words"], d["function_words"])


def _read_json(path, default_name: str) -> dict:
    if path is None:
        text = resources.files("motioncap.data").joinpath(default_name).read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


@dataclass
class SupervisionTargets:
    """Per output step (caption tokens then EOS)."""

    beta: np.ndarray  # (T_y,) 0/1
    alpha_target: np.ndarray  # (T_y, a); rows of unsupervised steps are zero
    supervised_mask: np.ndarray  # (T_y,) bool
    n_y: int


class Supervisor:
    def __init__(self, dictionary: GuidanceDictionary | None = None, lexicon: Lexicon | None = None):
        self.dictionary = dictionary or GuidanceDictionary.load()
        self.lexicon = lexicon or Lexicon.load()

    def is_motion_word(self, token: str) -> bool:
        cat = self.dictionary.category(token)
        if cat is not None:
            return bool(cat.parts)
        s = stem(token)
        return s in self.lexicon.motion_stems and s not in self.lexicon.function_stems

    def build_beta_targets(self, tokens: Sequence[str]) -> np.ndarray:
        """One 0/1 gate target per token plus a trailing 1 for EOS."""
        return np.array([float(self.is_motion_word(t)) for t in tokens] + [1.0])

    def build_spatial_targets(self, tokens: Sequence[str]) -> SupervisionTargets:
        n = len(tokens) + 1
        alpha = np.zeros((n, len(PARTS)))
        mask = np.zeros(n, dtype=bool)
        for t, tok in enumerate(tokens):
            parts = self.dictionary.parts_for(tok)
            if parts:
                alpha[t, [PART_INDEX[p] for p in parts]] = 1.0
                mask[t] = True
        return SupervisionTargets(self.build_beta_targets(tokens), alpha, mask, int(mask.sum()))


_default: Supervisor | None = None


def default_supervisor() -> Supervisor:
    global _default
    if _default is None:
        _default = Supervisor()
    return _default


def build_beta_targets(tokens: Sequence[str]) -> np.ndarray:
    return default_supervisor().build_beta_targets(tokens)


def build_spatial_targets(tokens: Sequence[str]) -> SupervisionTargets:
    return default_supervisor().build_spatial_targets(tokens)
