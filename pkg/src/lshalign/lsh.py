"""Random-hyperplane (angular) LSH: signatures, bucket index, sensitivity checks.

A table of ``K`` hyperplanes maps a vector to a ``K``-bit signature, bit
``k`` set when ``dot(plane_k, v) >= offset_k``. Plain random hyperplanes use
zero offsets. ``HyperplaneLSH`` can also learn a centering/whitening of the
stored vectors, which folds into the planes as nonzero offsets.
"""
from __future__ import annotations

import logging
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigError, EmptyInputError, ParseError, ValidationError

logger = logging.getLogger(__name__)

IDX_MAGIC = b"LSHALIGN-IDX"
IDX_VERSION = 1


@dataclass
class HashFamily:
    """``L`` tables of ``K`` hyperplanes each over ``dim``-dimensional vectors."""

    planes: np.ndarray  # (L, K, dim)
    offsets: np.ndarray  # (L, K)
    seed: int = 0

    @property
    def L(self) -> int:
        return self.planes.shape[0]

    @property
    def K(self) -> int:
        return self.planes.shape[1]

    @property
    def dim(self) -> int:
        return self.planes.shape[2]

    @classmethod
    def random(cls, K: int, L: int, dim: int, seed: int = 0, n_blocks: int = 1) -> "HashFamily":
        """Gaussian planes; with ``n_blocks > 1`` table ``l`` only sees block ``l % n_blocks``."""
        if K < 1 or L < 1 or dim < 1:
            raise ConfigError(f"K, L, dim must be positive, got {K}, {L}, {dim}")
        if K > 63:
            raise ConfigError("K must be at most 63 bits")
        if seed < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")
        if dim % n_blocks:
            raise ConfigError(f"dim {dim} does not split into {n_blocks} blocks")
        rng = np.random.default_rng(seed)
        planes = rng.standard_normal((L, K, dim))
        if n_blocks > 1:
            size = dim // n_blocks
            for l in range(L):
                b = l % n_blocks
                keep = np.zeros(dim, dtype=bool)
                keep[b * size:(b + 1) * size] = True
                planes[l][:, ~keep] = 0.0
        return cls(planes, np.zeros((L, K)), seed)


def _check_dim(family: HashFamily, X: np.ndarray) -> None:
    if X.shape[-1] != family.dim:
        raise ConfigError(f"vector dimension {X.shape[-1]} does not match hash family dimension {family.dim}")


def signatures(family: HashFamily, X) -> np.ndarray:
    """(n, L) integer signatures; bit ``k`` of column ``l`` is plane ``k`` of table ``l``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check_dim(family, X)
    proj = np.einsum("lkd,nd->nlk", family.planes, X)
    bits = proj >= family.offsets[None, :, :]
    weights = np.left_shift(np.int64(1), np.arange(family.K, dtype=np.int64))
    return (bits.astype(np.int64) * weights).sum(axis=2)


def signature(family: HashFamily, table: int, v) -> str:
    """K-bit signature of ``v`` in one table as a '0'/'1' string (plane 0 first)."""
    v = np.asarray(v, dtype=np.float64)
    _check_dim(family, v)
    if not np.any(v):
        logger.warning("zero vector hashed; every plane ties")
    bits = family.planes[table] @ v >= family.offsets[table]
    return "".join("1" if b else "0" for b in bits)


@dataclass
class BucketIndex:
    """Per table: signature -> ascending array of stored row indices."""

    tables: list[dict[int, np.ndarray]] = field(default_factory=list)
    count: int = 0

    @property
    def total_entries(self) -> int:
        return sum(len(ix) for t in self.tables for ix in t.values())


def build_index(family: HashFamily, vectors) -> BucketIndex:
    X = np.atleast_2d(np.asarray(getattr(vectors, "vectors", vectors), dtype=np.float64))
    if X.shape[0] == 0:
        raise EmptyInputError("cannot index an empty store")
    sigs = signatures(family, X)
    tables = []
    for l in range(family.L):
        col = sigs[:, l]
        order = np.argsort(col, kind="stable")
        keys, starts = np.unique(col[order], return_index=True)
        bounds = list(starts[1:]) + [len(order)]
        tables.append({int(k): order[s:e] for k, s, e in zip(keys, starts, bounds)})
    return BucketIndex(tables, X.shape[0])


def candidates(index: BucketIndex, family: HashFamily, q) -> np.ndarray:
    """Union over tables of the rows sharing ``q``'s bucket, ascending."""
    sig = signatures(family, q)[0]
    hits = [t.get(int(s)) for t, s in zip(index.tables, sig)]
    hits = [h for h in hits if h is not None]
    if not hits:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(hits))


def collision_probability(theta: float, K: int = 1) -> float:
    """Probability that K random hyperplanes all agree on vectors at angle ``theta``."""
    return (1.0 - theta / math.pi) ** K


def pair_at_angle(rng: np.random.Generator, dim: int, theta: float):
    """A random unit vector and a second unit vector exactly ``theta`` away from it."""
    x = rng.standard_normal(dim)
    x /= np.linalg.norm(x)
    u = rng.standard_normal(dim)
    u -= (u @ x) * x
    u /= np.linalg.norm(u)
    return x, math.cos(theta) * x + math.sin(theta) * u


@dataclass
class SensitivityReport:
    d1: float
    d2: float
    p1_hat: float
    p2_hat: float
    trials: int
    K: int = 1
    dim: int = 0

    @property
    def ok(self) -> bool:
        return self.p1_hat >= self.p2_hat

    def expected(self) -> tuple[float, float]:
        return collision_probability(self.d1, self.K), collision_probability(self.d2, self.K)

    def to_text(self) -> str:
        e1, e2 = self.expected()
        lines = [
            f"d1\t{self.d1:.6f}",
            f"d2\t{self.d2:.6f}",
            f"K\t{self.K}",
            f"dim\t{self.dim}",
            f"trials\t{self.trials}",
            f"p1_hat\t{self.p1_hat:.6f}",
            f"p2_hat\t{self.p2_hat:.6f}",
            f"p1_closed_form\t{e1:.6f}",
            f"p2_closed_form\t{e2:.6f}",
            f"sensitive\t{'yes' if self.ok else 'NO'}",
        ]
        return "\n".join(lines) + "\n"


def empirical_collision_rate(theta: float, K: int, dim: int, trials: int, seed: int = 0) -> float:
    """Fraction of trials where a fresh K-plane table gives two vectors at ``theta`` one bucket."""
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(trials):
        x, y = pair_at_angle(rng, dim, theta)
        planes = rng.standard_normal((K, dim))
        hits += bool(np.all((planes @ x >= 0) == (planes @ y >= 0)))
    return hits / trials


def estimate_sensitivity(K: int, dim: int, d1: float, d2: float, trials: int, seed: int = 0) -> SensitivityReport:
    """Measure single-table collision rates at angular distances ``d1`` and ``d2``."""
    if trials < 1:
        raise ValidationError(f"trials must be >= 1, got {trials}")
    if not (0 <= d1 < d2 <= math.pi):
        raise ValidationError(f"need 0 <= d1 < d2 <= pi, got d1={d1}, d2={d2}")
    p1 = empirical_collision_rate(d1, K, dim, trials, seed)
    p2 = empirical_collision_rate(d2, K, dim, trials, seed + 1)
    return SensitivityReport(d1, d2, p1, p2, trials, K, dim)


def save_index(path: str | os.PathLike, family: HashFamily, index: BucketIndex) -> None:
    with open(path, "wb") as fh:
        fh.write(IDX_MAGIC)
        fh.write(struct.pack("<I3Qq", IDX_VERSION, family.K, family.L, family.dim, family.seed))
        fh.write(struct.pack("<Q", index.count))
        fh.write(np.ascontiguousarray(family.planes, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(family.offsets, dtype="<f8").tobytes())
        for table in index.tables:
            fh.write(struct.pack("<Q", len(table)))
            for key in sorted(table):
                rows = table[key]
                fh.write(struct.pack("<QQ", key, len(rows)))
                fh.write(np.asarray(rows, dtype="<u8").tobytes())


def load_index(path: str | os.PathLike) -> tuple[HashFamily, BucketIndex]:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(IDX_MAGIC):
        raise ParseError(f"{path}: not an LSH index")
    off = len(IDX_MAGIC)
    version, K, L, dim, seed = struct.unpack_from("<I3Qq", data, off)
    if version != IDX_VERSION:
        raise ConfigError(f"{path}: unsupported index version {version}")
    off += struct.calcsize("<I3Qq")
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    planes = np.frombuffer(data, "<f8", L * K * dim, off).reshape(L, K, dim).copy()
    off += 8 * L * K * dim
    offsets = np.frombuffer(data, "<f8", L * K, off).reshape(L, K).copy()
    off += 8 * L * K
    tables = []
    try:
        for _ in range(L):
            (nb,) = struct.unpack_from("<Q", data, off)
            off += 8
            table = {}
            for _ in range(nb):
                key, n = struct.unpack_from("<QQ", data, off)
                off += 16
                table[int(key)] = np.frombuffer(data, "<u8", n, off).astype(np.int64)
                off += 8 * n
            tables.append(table)
    except struct.error:
        raise ParseError(f"{path}: truncated bucket listing") from None
    return HashFamily(planes, offsets, seed), BucketIndex(tables, count)


def _whitening(X: np.ndarray, reg: float):
    mu = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X - mu, rowvar=False)) if len(X) > 1 else np.zeros((X.shape[1], X.shape[1]))
    lam, U = np.linalg.eigh(cov)
    lam = np.clip(lam, 0.0, None)
    scale = lam + reg * max(lam.max(), 1e-12)
    return mu, U / np.sqrt(scale)


class HyperplaneLSH(TransformerMixin, BaseEstimator):
    """Bucket index over stored vectors; ``transform`` gives (n, L) signatures.

    ``n_blocks`` restricts each table to one contiguous block of coordinates
    (table ``l`` uses block ``l % n_blocks``). ``whiten`` centers and
    decorrelates each block on the fitted vectors before the random planes
    are applied, which evens out bucket sizes for low-rank embeddings.
    """

    def __init__(self, n_bits=12, n_tables=8, n_blocks=1, whiten=False, whiten_reg=1e-3, seed=0):
        self.n_bits = n_bits
        self.n_tables = n_tables
        self.n_blocks = n_blocks
        self.whiten = whiten
        self.whiten_reg = whiten_reg
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        dim = X.shape[1]
        family = HashFamily.random(self.n_bits, self.n_tables, dim, self.seed, self.n_blocks)
        if self.whiten:
            size = dim // self.n_blocks
            planes = np.zeros_like(family.planes)
            offsets = np.zeros_like(family.offsets)
            for b in range(self.n_blocks):
                sl = slice(b * size, (b + 1) * size)
                mu, W = _whitening(X[:, sl], self.whiten_reg)
                for l in range(b, self.n_tables, self.n_blocks):
                    raw = family.planes[l][:, sl] @ W.T  # plane in whitened space pulled back
                    planes[l][:, sl] = raw
                    offsets[l] = raw @ mu
            family = HashFamily(planes, offsets, self.seed)
        self.family_ = family
        self.index_ = build_index(family, X)
        return self

    def transform(self, X):
        check_is_fitted(self, "family_")
        return signatures(self.family_, check_array(X, dtype=np.float64))

    def candidates(self, q) -> np.ndarray:
        check_is_fitted(self, "family_")
        return candidates(self.index_, self.family_, q)

    def save(self, path):
        check_is_fitted(self, "family_")
        save_index(path, self.family_, self.index_)

    @classmethod
    def load(cls, path) -> "HyperplaneLSH":
        family, index = load_index(path)
        est = cls(n_bits=family.K, n_tables=family.L, seed=family.seed)
        est.family_ = family
        est.index_ = index
        return est
