"""Fixed-width word splitting, the word dictionary, and batch/epoch planning."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigError, EmptyInputError, ParseError, ValidationError
from .seq_io import reverse_complement

DICT_MAGIC = "LSHALIGN-DICT v1"
_ACGT = frozenset(b"ACGT")


class Dictionary:
    """Bijection between ``w``-mers over ACGT and integer ids.

    Stored words get ids ``0..n-1`` in first-seen order; the unknown word is
    the implicit id ``n`` (so ``V = n + 1``). Growing the dictionary moves
    ``unk_id``, which is why token streams are only stable once frozen.
    """

    def __init__(self, w: int, words=()):
        if w < 1:
            raise ConfigError(f"word size must be >= 1, got {w}")
        self.w = w
        self.id_to_word: list[bytes] = []
        self.word_to_id: dict[bytes, int] = {}
        self.frozen = False
        for word in words:
            self.add(word)

    def __len__(self):
        return len(self.id_to_word) + 1

    @property
    def size(self) -> int:
        return len(self)

    @property
    def unk_id(self) -> int:
        return len(self.id_to_word)

    def __contains__(self, word):
        return bytes(word) in self.word_to_id

    def add(self, word: bytes) -> int:
        word = bytes(word)
        if len(word) != self.w or not _ACGT.issuperset(word):
            raise ValidationError(f"cannot store word {word!r} (need {self.w} chars over ACGT)")
        idx = self.word_to_id.get(word)
        if idx is None:
            if self.frozen:
                raise ConfigError("dictionary is frozen")
            idx = len(self.id_to_word)
            self.word_to_id[word] = idx
            self.id_to_word.append(word)
        return idx

    def freeze(self) -> "Dictionary":
        self.frozen = True
        return self

    def get(self, word: bytes) -> int:
        return self.word_to_id.get(bytes(word), self.unk_id)

    def reverse_complement_ids(self) -> np.ndarray:
        """Id of the reverse-complemented word for every id (UNK maps to UNK)."""
        out = np.full(len(self), self.unk_id, dtype=np.int64)
        for i, word in enumerate(self.id_to_word):
            out[i] = self.get(reverse_complement(word))
        return out

    def __eq__(self, other):
        return isinstance(other, Dictionary) and self.w == other.w and self.id_to_word == other.id_to_word

    def __repr__(self):
        return f"Dictionary(w={self.w}, V={len(self)})"

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as fh:
            fh.write(f"{DICT_MAGIC} w={self.w}\n".encode("ascii"))
            for word in self.id_to_word:
                fh.write(word + b"\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Dictionary":
        with open(path, "rb") as fh:
            lines = fh.read().split(b"\n")
        header = lines[0].decode("ascii", "replace")
        if not header.startswith(DICT_MAGIC + " w="):
            raise ParseError(f"not a dictionary file: {header!r}", 1)
        try:
            w = int(header.rsplit("=", 1)[1])
        except ValueError:
            raise ParseError(f"bad word size in header {header!r}", 1) from None
        d = cls(w)
        for lineno, word in enumerate(lines[1:], 2):
            if not word:
                continue
            try:
                d.add(word)
            except ValidationError as exc:
                raise ParseError(str(exc), lineno) from None
        return d.freeze()


def split_words(seq: bytes, w: int) -> list[bytes]:
    """Non-overlapping windows of width ``w``; a short tail is dropped."""
    return [seq[i:i + w] for i in range(0, len(seq) - w + 1, w)]


def tokenize(seq: bytes, dictionary: Dictionary, w: int | None = None, train: bool = False) -> np.ndarray:
    """Map ``seq`` to word ids; token ``i`` covers characters ``[i*w, (i+1)*w)``.

    In training mode unseen ACGT words are added before any id is emitted, so
    the returned stream is consistent with the final ``unk_id``. Windows
    holding a non-ACGT byte always map to ``unk_id``.
    """
    if w is not None and w != dictionary.w:
        raise ConfigError(f"word size {w} does not match dictionary word size {dictionary.w}")
    words = split_words(bytes(seq), dictionary.w)
    if train:
        if dictionary.frozen:
            raise ConfigError("cannot extend a frozen dictionary")
        for word in words:
            if word not in dictionary.word_to_id and _ACGT.issuperset(word):
                dictionary.add(word)
    unk = dictionary.unk_id
    lookup = dictionary.word_to_id
    return np.fromiter((lookup.get(word, unk) for word in words), dtype=np.int64, count=len(words))


@dataclass(frozen=True)
class Batch:
    """``b`` consecutive runs of ``M`` words each."""

    tokens: np.ndarray
    start: int = 0  # token index of the first word

    @property
    def b(self) -> int:
        return self.tokens.shape[0]

    @property
    def M(self) -> int:
        return self.tokens.shape[1]

    def covered_chars(self, w: int) -> int:
        return self.b * self.M * w


@dataclass
class EpochPlan:
    batches: list[Batch] = field(default_factory=list)

    @property
    def num_batches(self) -> int:
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)

    def __len__(self):
        return len(self.batches)


def build_epoch(tokens, b: int, M: int) -> EpochPlan:
    """Cut ``tokens`` row-major into batches of ``b`` runs of ``M`` words."""
    if b < 1:
        raise ConfigError(f"b must be >= 1, got {b}")
    if M < 2:
        raise ConfigError(f"M must be >= 2, got {M}")
    tokens = np.asarray(tokens, dtype=np.int64)
    per_batch = b * M
    n = len(tokens) // per_batch
    if n == 0:
        raise EmptyInputError(f"{len(tokens)} tokens cannot fill one batch of b*M = {per_batch}")
    body = tokens[: n * per_batch].reshape(n, b, M)
    return EpochPlan([Batch(body[k], k * per_batch) for k in range(n)])


class KmerTokenizer(TransformerMixin, BaseEstimator):
    """Learns a word dictionary from reference sequences and maps sequences to ids."""

    def __init__(self, word_size: int = 10):
        self.word_size = word_size

    def fit(self, X, y=None):
        seqs = [X] if isinstance(X, (bytes, bytearray)) else list(X)
        self.dictionary_ = Dictionary(self.word_size)
        for seq in seqs:
            tokenize(seq, self.dictionary_, train=True)
        self.dictionary_.freeze()
        return self

    def transform(self, X):
        check_is_fitted(self, "dictionary_")
        if isinstance(X, (bytes, bytearray)):
            return tokenize(X, self.dictionary_)
        return [tokenize(seq, self.dictionary_) for seq in X]
