"""Tokenization, vocabulary construction and bag-of-words features."""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

_TOKEN_RE = re.compile(r"[^\W_]+")


class EmptyVocabularyError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on any non-alphanumeric character."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    word_to_index: Mapping[str, int]
    stop_words: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        indices = sorted(self.word_to_index.values())
        if indices != list(range(len(indices))):
            raise ValueError("vocabulary indices must be a bijection onto 0..V-1")
        clash = self.stop_words.intersection(self.word_to_index)
        if clash:
            raise ValueError(f"stop-words in vocabulary: {sorted(clash)[:5]}")

    @property
    def size(self) -> int:
        return len(self.word_to_index)

    def __len__(self) -> int:
        return len(self.word_to_index)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_index

    def words(self) -> list[str]:
        """Words in index order."""
        out = [""] * self.size
        for w, i in self.word_to_index.items():
            out[i] = w
        return out

    def dumps(self) -> str:
        lines = [f"V={self.size}"]
        lines += [f"{w}\t{i}" for i, w in enumerate(self.words())]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """sha256 of the serialized vocabulary; models reference this."""
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_bytes(self.dumps().encode("utf-8"))

    @classmethod
    def loads(cls, text: str, stop_words: Iterable[str] = ()) -> "Vocabulary":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines or not lines[0].startswith("V="):
            raise ValueError("vocabulary file: missing 'V=<size>' header")
        try:
            size = int(lines[0][2:])
        except ValueError:
            raise ValueError(f"vocabulary file: bad header {lines[0]!r}") from None
        mapping = {}
        for lineno, line in enumerate(lines[1:], start=2):
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"vocabulary file line {lineno}: expected 'word<TAB>index'")
            word, idx = parts
            if word in mapping:
                raise ValueError(f"vocabulary file line {lineno}: duplicate word {word!r}")
            mapping[word] = int(idx)
        if len(mapping) != size:
            raise ValueError(f"vocabulary file: header says V={size}, found {len(mapping)} entries")
        return cls(mapping, frozenset(stop_words))

    @classmethod
    def load(cls, path, stop_words: Iterable[str] = ()) -> "Vocabulary":
        return cls.loads(Path(path).read_bytes().decode("utf-8"), stop_words)


def load_stop_words(path) -> frozenset[str]:
    words = Path(path).read_text(encoding="utf-8").split("\n")
    return frozenset(w.strip().lower() for w in words if w.strip())


def save_stop_words(words: Iterable[str], path) -> None:
    Path(path).write_text("".join(f"{w}\n" for w in sorted(words)), encoding="utf-8")


def build_vocabulary(
    corpus: Sequence[str], stop_words: Iterable[str] = (), max_size: int = 10000
) -> Vocabulary:
    """Keep the ``max_size`` most frequent non-stop-word tokens.

    Index order is descending frequency, ties broken lexicographically.
    """
    if max_size < 1:
        raise ValueError("max_size must be positive")
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    stop = frozenset(w.lower() for w in stop_words)
    counts = Counter(t for text in corpus for t in tokenize(text) if t not in stop)
    if not counts:
        raise EmptyVocabularyError("empty vocabulary: corpus has no non-stop-word tokens")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
    return Vocabulary({w: i for i, (w, _) in enumerate(ranked)}, stop)


@dataclass(frozen=True)
class BowVector:
    """Sparse word counts over a vocabulary of size ``dimension``."""

    dimension: int
    counts: Mapping[int, int]

    def dense(self) -> np.ndarray:
        x = np.zeros(self.dimension)
        for i, c in self.counts.items():
            x[i] = c
        return x

    def __add__(self, other: "BowVector") -> "BowVector":
        if other.dimension != self.dimension:
            raise ValueError("dimension mismatch")
        merged = Counter(self.counts)
        merged.update(other.counts)
        return BowVector(self.dimension, dict(merged))

    def __bool__(self) -> bool:
        return bool(self.counts)


def featurize(text: str, vocab: Vocabulary, binary: bool = False) -> BowVector:
    """Count in-vocabulary tokens; unknown tokens are dropped."""
    if vocab.size == 0:
        raise ValueError("empty vocabulary")
    idx = vocab.word_to_index
    counts = Counter(idx[t] for t in tokenize(text) if t in idx)
    if binary:
        counts = {i: 1 for i in counts}
    return BowVector(vocab.size, dict(sorted(counts.items())))


INPUT_NORMS = ("none", "l1", "l2")


def normalize_rows(X: np.ndarray, norm: str = "none") -> np.ndarray:
    """Scale each non-empty row to unit l1 or l2 norm; empty rows stay zero."""
    if norm == "none":
        return X
    if norm not in INPUT_NORMS:
        raise ValueError(f"unknown input norm {norm!r}; expected one of {INPUT_NORMS}")
    n = np.abs(X).sum(axis=1) if norm == "l1" else np.sqrt((X * X).sum(axis=1))
    return X / np.where(n > 0, n, 1.0)[:, None]


def bow_matrix(texts: Sequence[str], vocab: Vocabulary, binary: bool = False, norm: str = "none") -> np.ndarray:
    """Dense (len(texts), V) matrix of bag-of-words rows, optionally row-normalized."""
    X = np.zeros((len(texts), vocab.size))
    idx = vocab.word_to_index
    for r, text in enumerate(texts):
        for t in tokenize(text):
            j = idx.get(t)
            if j is not None:
                X[r, j] = 1.0 if binary else X[r, j] + 1.0
    return normalize_rows(X, norm)
