"""FASTA/FASTQ ingestion and nucleotide helpers."""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from typing import Iterable

from .errors import ParseError, ValidationError

BASES = b"ACGTN"
# IUPAC ambiguity codes are accepted on input and collapsed to N.
_IUPAC_AMBIGUOUS = b"RYKMSWBDHVU"
_NORMALIZE = bytearray(256)
for _b in BASES:
    _NORMALIZE[_b] = _b
    _NORMALIZE[ord(chr(_b).lower())] = _b
for _b in _IUPAC_AMBIGUOUS:
    _NORMALIZE[_b] = ord("N")
    _NORMALIZE[ord(chr(_b).lower())] = ord("N")
_NORMALIZE = bytes(_NORMALIZE)

_COMPLEMENT = bytes.maketrans(b"ACGTN", b"TGCAN")
_MATE_RE = re.compile(r"^(.+\.\d+)\.([12])$")

FORWARD, REVERSE, UNPAIRED = "forward", "reverse", "unpaired"


@dataclass(frozen=True)
class Record:
    id: str
    start: int
    length: int


@dataclass(frozen=True)
class RefGenome:
    """A reference genome flattened into one coordinate space.

    Multi-record inputs are concatenated in file order; ``records`` keeps the
    boundaries so a global offset can be mapped back with :meth:`locate`.
    """

    id: str
    seq: bytes
    records: tuple[Record, ...] = ()

    @property
    def length(self) -> int:
        return len(self.seq)

    def __len__(self):
        return len(self.seq)

    def locate(self, offset: int) -> tuple[str, int]:
        """Map a global offset to ``(record id, offset within record)``."""
        if not 0 <= offset < len(self.seq):
            raise ValidationError(f"offset {offset} outside genome of length {len(self.seq)}")
        for rec in self.records or (Record(self.id, 0, len(self.seq)),):
            if rec.start <= offset < rec.start + rec.length:
                return rec.id, offset - rec.start
        raise ValidationError(f"offset {offset} not covered by any record")


@dataclass(frozen=True)
class Read:
    id: str
    mate: str
    seq: bytes

    @property
    def stem(self) -> str:
        m = _MATE_RE.match(self.id)
        return m.group(1) if m else self.id


@dataclass
class QuerySet:
    reads: list[Read] = field(default_factory=list)

    @property
    def total_bases(self) -> int:
        return sum(len(r.seq) for r in self.reads)

    def __len__(self):
        return len(self.reads)

    def __iter__(self):
        return iter(self.reads)

    def pairs(self) -> dict[str, list[Read]]:
        """Group mates by their shared spot id stem."""
        out: dict[str, list[Read]] = {}
        for read in self.reads:
            if read.mate != UNPAIRED:
                out.setdefault(read.stem, []).append(read)
        return out


def normalize_sequence(raw: bytes, offset: int = 0, line: int | None = None) -> bytes:
    """Uppercase and validate ``raw``; ambiguity codes become ``N``."""
    out = raw.translate(_NORMALIZE)
    if 0 in out:
        pos = out.index(0)
        where = f" (line {line})" if line is not None else ""
        raise ValidationError(
            f"illegal character {chr(raw[pos])!r} at offset {offset + pos}{where}"
        )
    return out


def mate_of(read_id: str) -> str:
    m = _MATE_RE.match(read_id)
    if not m:
        return UNPAIRED
    return FORWARD if m.group(2) == "1" else REVERSE


def reverse_complement(seq: bytes) -> bytes:
    """Watson-Crick reverse complement over ``ACGTN``."""
    seq = bytes(seq)
    bad = seq.translate(None, BASES)
    if bad:
        raise ValidationError(f"illegal base {chr(bad[0])!r} at offset {seq.index(bad[0])}")
    return seq.translate(_COMPLEMENT)[::-1]


def _header_id(line: str) -> str:
    parts = line[1:].split()
    return parts[0] if parts else ""


def parse_fasta(lines: Iterable[str]) -> RefGenome:
    records = []
    chunks: list[bytes] = []
    total = 0
    current = None
    start = 0
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if line.startswith(">"):
            rid = _header_id(line)
            if not rid:
                raise ParseError("empty FASTA header", lineno)
            if current is not None:
                records.append(Record(current, start, total - start))
            current, start = rid, total
            continue
        if not line.strip():
            continue
        if current is None:
            raise ParseError("expected '>' header before sequence data", lineno)
        seq = normalize_sequence(line.strip().encode("ascii", "replace"), total, lineno)
        chunks.append(seq)
        total += len(seq)
    if current is None:
        raise ParseError("no FASTA header found", 1)
    records.append(Record(current, start, total - start))
    return RefGenome(id=records[0].id, seq=b"".join(chunks), records=tuple(records))


def load_fasta(path: str | os.PathLike) -> RefGenome:
    with open(path, encoding="ascii", errors="replace") as fh:
        return parse_fasta(fh)


def parse_fastq(lines: Iterable[str]) -> QuerySet:
    reads = []
    it = iter(lines)
    lineno = 0
    while True:
        block = []
        for _ in range(4):
            try:
                line = next(it)
            except StopIteration:
                break
            lineno += 1
            block.append(line.rstrip("\r\n"))
        if not block or (len(block) == 1 and not block[0].strip()):
            break
        first = lineno - len(block) + 1
        if len(block) < 4:
            raise ParseError(f"truncated FASTQ record ({len(block)} of 4 lines)", first)
        header, seq, plus, qual = block
        if not header.startswith("@"):
            raise ParseError("FASTQ header must start with '@'", first)
        if not plus.startswith("+"):
            raise ParseError("FASTQ separator must start with '+'", first + 2)
        if len(seq) != len(qual):
            raise ValidationError(
                f"line {first + 1}: sequence length {len(seq)} != quality length {len(qual)}"
            )
        rid = _header_id(header)
        reads.append(Read(rid, mate_of(rid), normalize_sequence(seq.encode("ascii", "replace"), 0, first + 1)))
    return QuerySet(reads)


def parse_fasta_reads(lines: Iterable[str]) -> QuerySet:
    reads = []
    rid, chunks = None, []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if line.startswith(">"):
            if rid is not None:
                reads.append(Read(rid, mate_of(rid), b"".join(chunks)))
            rid, chunks = _header_id(line), []
        elif line:
            if rid is None:
                raise ParseError("expected '>' header before sequence data", lineno)
            chunks.append(normalize_sequence(line.encode("ascii", "replace"), 0, lineno))
    if rid is not None:
        reads.append(Read(rid, mate_of(rid), b"".join(chunks)))
    return QuerySet(reads)


def load_fastq(path: str | os.PathLike) -> QuerySet:
    with open(path, encoding="ascii", errors="replace") as fh:
        return parse_fastq(fh)


def load_reads(path: str | os.PathLike) -> QuerySet:
    """Load queries from FASTQ or FASTA, sniffing the first character."""
    with open(path, encoding="ascii", errors="replace") as fh:
        head = fh.read(1)
        fh.seek(0)
        if head == ">":
            return parse_fasta_reads(fh)
        return parse_fastq(fh)


def write_fasta(path, genome: RefGenome, width: int = 60) -> None:
    records = genome.records or (Record(genome.id, 0, len(genome.seq)),)
    with open(path, "w", encoding="ascii") as fh:
        for rec in records:
            fh.write(f">{rec.id}\n")
            body = genome.seq[rec.start:rec.start + rec.length].decode("ascii")
            for i in range(0, len(body), width):
                fh.write(body[i:i + width] + "\n")


def write_fastq(path, reads: Iterable[Read]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for read in reads:
            s = read.seq.decode("ascii")
            fh.write(f"@{read.id}\n{s}\n+\n{'I' * len(s)}\n")
