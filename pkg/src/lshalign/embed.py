"""Fixed-length window embeddings and the reference vector store."""
from __future__ import annotations

import logging
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyInputError, ParseError, ValidationError
from .tokenizer import Dictionary, tokenize

logger = logging.getLogger(__name__)

VEC_MAGIC = b"LSHALIGN-VEC"
VEC_VERSION = 1


def embed_windows(params, windows, rc_map, lengths=None, chunk_size=256) -> np.ndarray:
    """Embed (n, M) token windows as ``[h_fwd_final ; h_bwd_final]``.

    ``lengths`` gives the number of real tokens per row; positions past it are
    padding the layers step over without updating state.
    """
    from .lstm import final_states

    windows = np.asarray(windows, dtype=np.int64)
    if windows.ndim == 1:
        windows = windows[None, :]
    if windows.size and (windows.min() < 0 or windows.max() >= params.V):
        raise ValidationError(f"token id outside vocabulary of size {params.V}")
    n = windows.shape[0]
    out = np.zeros((n, 2 * params.H))
    for s in range(0, n, chunk_size):
        sl = slice(s, min(n, s + chunk_size))
        lens = None if lengths is None else np.asarray(lengths)[sl]
        fwd, bwd = final_states(params, windows[sl], rc_map, lens)
        out[sl, : params.H] = fwd.h
        out[sl, params.H:] = bwd.h
    return out


def embed_sequence(params, token_ids, rc_map, M: int | None = None) -> np.ndarray:
    """Embedding of exactly one M-word window; a 2H vector."""
    tokens = np.asarray(token_ids, dtype=np.int64)
    if tokens.ndim != 1 or (M is not None and len(tokens) != M):
        raise ValidationError(f"expected a window of {M} tokens, got shape {tokens.shape}")
    return embed_windows(params, tokens[None, :], rc_map)[0]


def window_count(n_tokens: int, M: int, stride: int) -> int:
    """Number of M-word windows at ``stride`` words over ``n_tokens`` words."""
    if n_tokens < M:
        return 0
    return (n_tokens - M) // stride + 1


@dataclass
class RefVectorStore:
    """Embedded reference windows; offsets are in characters."""

    vectors: np.ndarray  # (count, 2H)
    offsets: np.ndarray  # (count,)
    stride: int  # characters between consecutive windows
    window_len: int  # characters per window

    def __len__(self):
        return len(self.offsets)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as fh:
            fh.write(VEC_MAGIC)
            fh.write(struct.pack("<I4Q", VEC_VERSION, self.dim, len(self), self.stride, self.window_len))
            rec = np.empty(len(self), dtype=[("offset", "<u8"), ("v", "<f4", (self.dim,))])
            rec["offset"] = self.offsets
            rec["v"] = self.vectors
            fh.write(rec.tobytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RefVectorStore":
        with open(path, "rb") as fh:
            data = fh.read()
        if not data.startswith(VEC_MAGIC):
            raise ParseError(f"{path}: not a vector store")
        off = len(VEC_MAGIC)
        version, dim, count, stride, window_len = struct.unpack_from("<I4Q", data, off)
        if version != VEC_VERSION:
            raise ConfigError(f"{path}: unsupported vector store version {version}")
        off += struct.calcsize("<I4Q")
        dt = np.dtype([("offset", "<u8"), ("v", "<f4", (dim,))])
        if len(data) - off != dt.itemsize * count:
            raise ParseError(f"{path}: expected {count} records")
        rec = np.frombuffer(data, dtype=dt, count=count, offset=off)
        return cls(rec["v"].astype(np.float64), rec["offset"].astype(np.int64), stride, window_len)


def build_ref_store(params, tokens, rc_map, M: int, w: int, stride: int | None = None) -> RefVectorStore:
    """Embed every M-word window of the reference stream, ``stride`` words apart."""
    tokens = np.asarray(tokens, dtype=np.int64)
    stride = M if stride is None else stride
    if stride < 1:
        raise ConfigError(f"stride must be >= 1 word, got {stride}")
    count = window_count(len(tokens), M, stride)
    if count == 0:
        raise EmptyInputError(f"reference has {len(tokens)} words, fewer than one window of {M}")
    starts = np.arange(count) * stride
    windows = np.lib.stride_tricks.sliding_window_view(tokens, M)[starts]
    vectors = embed_windows(params, windows, rc_map)
    return RefVectorStore(vectors, starts * w, stride * w, M * w)


@dataclass
class QueryVector:
    query_id: str
    query_offset: int  # characters dropped from the read start before tokenizing
    chunks: np.ndarray  # (num_chunks, 2H)

    @property
    def vector(self) -> np.ndarray:
        return self.chunks.ravel()

    @property
    def num_chunks(self) -> int:
        return self.chunks.shape[0]


def query_chunks(tokens, M: int, pad_id: int):
    """Split a token stream into M-word rows, right-padding the last one."""
    tokens = np.asarray(tokens, dtype=np.int64)
    n = max(1, math.ceil(len(tokens) / M))
    padded = np.full(n * M, pad_id, dtype=np.int64)
    padded[: len(tokens)] = tokens
    lengths = np.full(n, M)
    lengths[-1] = len(tokens) - (n - 1) * M
    return padded.reshape(n, M), lengths


def embed_query(params, seq: bytes, dictionary: Dictionary, rc_map, M: int, query_id: str = "",
                query_offset: int = 0) -> QueryVector | None:
    """Embed a read chunk by chunk; returns None when it is shorter than one word.

    The read is tokenized from ``query_offset`` with the frozen dictionary.
    The last chunk is right-padded with UNK and the padding is skipped by both
    layers, so a short chunk embeds only its real words.
    """
    tail = seq[query_offset:]
    if len(tail) < dictionary.w:
        logger.warning("read %s: %d bases is shorter than one word (w=%d), skipped", query_id, len(tail), dictionary.w)
        return None
    tokens = tokenize(tail, dictionary)
    rows, lengths = query_chunks(tokens, M, dictionary.unk_id)
    chunks = embed_windows(params, rows, rc_map, lengths=lengths)
    return QueryVector(query_id, query_offset, chunks)
