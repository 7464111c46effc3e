"""Seeded synthetic genomes and planted reads for self-contained experiments.

Genomes come from a Markov chain over ACGT whose transition rows are drawn
from a Dirichlet; ``order=0`` with a flat prior is plain uniform sequence.
Optional repeat injection copies earlier segments with point mutations.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .seq_io import FORWARD, Read, RefGenome, Record, UNPAIRED

ALPHABET = np.frombuffer(b"ACGT", dtype=np.uint8)


def markov_genome(length: int, order: int = 3, concentration: float = 0.3, seed: int = 0,
                  repeats: int = 0, repeat_len: int = 300, repeat_divergence: float = 0.05) -> bytes:
    if length < 1:
        raise ValidationError("genome length must be positive")
    rng = np.random.default_rng(seed)
    if order == 0 and concentration <= 0:
        seq = rng.integers(0, 4, size=length)
    else:
        table = rng.dirichlet(np.full(4, concentration), size=4 ** order)
        cum = np.cumsum(table, axis=1)
        u = rng.random(length)
        seq = np.empty(length, dtype=np.int64)
        seq[:order] = rng.integers(0, 4, size=min(order, length))
        ctx = 0
        for k in range(min(order, length)):
            ctx = (ctx * 4 + seq[k]) % (4 ** order) if order else 0
        mod = 4 ** order if order else 1
        for k in range(order, length):
            nxt = int(np.searchsorted(cum[ctx], u[k], side="right"))
            nxt = min(nxt, 3)
            seq[k] = nxt
            ctx = (ctx * 4 + nxt) % mod if order else 0
    for _ in range(repeats):
        if length <= 2 * repeat_len:
            break
        src = int(rng.integers(0, length - repeat_len))
        dst = int(rng.integers(0, length - repeat_len))
        piece = seq[src:src + repeat_len].copy()
        hit = rng.random(repeat_len) < repeat_divergence
        piece[hit] = (piece[hit] + rng.integers(1, 4, size=int(hit.sum()))) % 4
        seq[dst:dst + repeat_len] = piece
    return ALPHABET[seq].tobytes()


def make_genome(length: int, seed: int = 0, name: str = "synthetic", **kwargs) -> RefGenome:
    seq = markov_genome(length, seed=seed, **kwargs)
    return RefGenome(name, seq, (Record(name, 0, len(seq)),))


@dataclass(frozen=True)
class PlantedRead:
    read: Read
    true_t: int
    true_r: int = 0


def mutate(seq: bytes, rate: float, rng: np.random.Generator) -> bytes:
    """Uniform substitutions: each base is replaced by a different base w.p. ``rate``."""
    arr = np.frombuffer(seq, dtype=np.uint8).copy()
    hit = rng.random(len(arr)) < rate
    idx = np.searchsorted(ALPHABET, arr[hit])
    arr[hit] = ALPHABET[(idx + rng.integers(1, 4, size=int(hit.sum()))) % 4]
    return arr.tobytes()


def plant_reads(genome: bytes, n: int, length: int, seed: int = 0, mutation_rate: float = 0.0,
                prefix: str = "read") -> list[PlantedRead]:
    """Copy ``n`` reads of ``length`` from uniform offsets, optionally mutated."""
    if length > len(genome):
        raise ValidationError(f"read length {length} exceeds genome length {len(genome)}")
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, len(genome) - length + 1, size=n)
    out = []
    for k, t in enumerate(starts):
        seq = genome[int(t):int(t) + length]
        if mutation_rate > 0:
            seq = mutate(seq, mutation_rate, rng)
        out.append(PlantedRead(Read(f"{prefix}{k}", UNPAIRED, seq), int(t), 0))
    return out


def write_truth(path, planted) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("read_id\ttrue_t\ttrue_r\n")
        for p in planted:
            fh.write(f"{p.read.id}\t{p.true_t}\t{p.true_r}\n")


def load_truth(path) -> dict[str, tuple[int, int]]:
    truth = {}
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if lineno == 1 and parts[0] == "read_id":
                continue
            if len(parts) < 3:
                continue
            truth[parts[0]] = (int(parts[1]), int(parts[2]))
    return truth


def all_kmers(k: int) -> list[bytes]:
    return [bytes(p) for p in itertools.product(b"ACGT", repeat=k)]


__all__ = ["markov_genome", "make_genome", "plant_reads", "mutate", "PlantedRead", "write_truth", "load_truth",
           "FORWARD", "all_kmers"]
