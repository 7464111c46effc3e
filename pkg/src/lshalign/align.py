"""Affine-gap dynamic-programming alignment and candidate rescoring.

The recurrences keep three layers: ``H`` (best score ending at a cell), ``E``
(ending in a gap in the reference, transcript ``I``) and ``F`` (ending in a gap
in the query, transcript ``D``). A gap block pays ``gap_block_open`` for its
first column and ``gap_extend`` for each further column.

Rows are filled one query position at a time with numpy. The horizontal gap
layer is a running maximum: chaining two blocks is never better than
extending one when ``gap_block_open < gap_extend``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

NEG = -np.inf
_N = ord("N")
_PAD = 0
_MAX_TIED_TRACEBACKS = 64


@dataclass(frozen=True)
class ScoringScheme:
    match: float = 2.0
    mismatch: float = -1.0
    gap_block_open: float = -10.0
    gap_extend: float = -1.0
    mode: str = "local"

    def __post_init__(self):
        if self.mode not in ("local", "global"):
            raise ConfigError(f"mode must be 'local' or 'global', got {self.mode!r}")
        if not self.gap_block_open < self.gap_extend < 0 < self.match:
            raise ConfigError(
                "scheme needs gap_block_open < gap_extend < 0 < match, got "
                f"{self.gap_block_open}, {self.gap_extend}, {self.match}"
            )

    def substitution(self, a: int, b: int) -> float:
        return self.match if a == b and a != _N else self.mismatch

    def with_mode(self, mode: str) -> "ScoringScheme":
        return replace(self, mode=mode)


def load_scheme(path: str | os.PathLike) -> ScoringScheme:
    """Parse a ``key=value`` scheme file; unknown keys are an error."""
    fields = {"match": float, "mismatch": float, "gap_block_open": float, "gap_extend": float, "mode": str}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value, got {line!r}", lineno)
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in fields:
                raise ParseError(f"unknown scheme key {key!r}", lineno)
            try:
                values[key] = fields[key](val)
            except ValueError:
                raise ParseError(f"bad value for {key}: {val!r}", lineno) from None
    return ScoringScheme(**values)


def save_scheme(path, scheme: ScoringScheme) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in ("match", "mismatch", "gap_block_open", "gap_extend", "mode"):
            fh.write(f"{key}={getattr(scheme, key)}\n")


@dataclass
class Alignment:
    """One reported alignment; ``r``/``t`` are start offsets in query/reference."""

    r: int
    t: int
    score: float
    transcript: str
    q: int | None = None
    query_id: str = ""
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def length(self) -> int:
        return len(self.transcript)

    @property
    def query_span(self) -> int:
        return sum(1 for c in self.transcript if c in "MXI")

    @property
    def ref_span(self) -> int:
        return sum(1 for c in self.transcript if c in "MXD")


def _as_array(seq) -> np.ndarray:
    arr = np.frombuffer(bytes(seq), dtype=np.uint8)
    return arr


def _check(seq, name):
    seq = bytes(seq)
    if not seq:
        raise ValidationError(f"{name} is empty")
    bad = seq.translate(None, b"ACGTN")
    if bad:
        raise ValidationError(f"{name} has illegal base {chr(bad[0])!r}")
    return seq


def _substitution_matrix(xa, ya, scheme):
    eq = (xa[:, None] == ya[None, :]) & (xa[:, None] != _N)
    return np.where(eq, scheme.match, scheme.mismatch)


def _fill(S, scheme, local):
    """Fill H, E, F over a (n, m) substitution matrix; returns (n+1, m+1) layers."""
    n, m = S.shape
    go, ge = scheme.gap_block_open, scheme.gap_extend
    H = np.empty((n + 1, m + 1))
    E = np.full((n + 1, m + 1), NEG)
    F = np.full((n + 1, m + 1), NEG)
    cols = np.arange(m + 1)
    if local:
        H[0] = 0.0
    else:
        H[0, 0] = 0.0
        H[0, 1:] = go + (cols[1:] - 1) * ge
        F[0, 1:] = H[0, 1:]
    shift = go - (cols + 1) * ge
    jext = cols * ge
    for i in range(1, n + 1):
        E[i] = np.maximum(E[i - 1] + ge, H[i - 1] + go)
        hp = np.empty(m + 1)
        hp[0] = 0.0 if local else E[i, 0]
        np.maximum(H[i - 1, :-1] + S[i - 1], E[i, 1:], out=hp[1:])
        if local:
            np.maximum(hp, 0.0, out=hp)
        run = np.maximum.accumulate(hp + shift)
        F[i, 1:] = jext[1:] + run[:-1]
        H[i] = np.maximum(hp, F[i])
        if not local:
            H[i, 0] = E[i, 0]
    return H, E, F


def _close(a, b):
    return a == b or abs(a - b) <= 1e-9 * max(1.0, abs(a), abs(b))


def _traceback(H, E, F, S, scheme, i, j, local):
    go = scheme.gap_block_open
    ops = []
    state = "H"
    while True:
        if state == "H":
            if local and _close(H[i, j], 0.0):
                break
            if not local and (i == 0 or j == 0):
                ops.append("D" * j if i == 0 else "I" * i)
                i = j = 0
                break
            if i > 0 and j > 0 and _close(H[i, j], H[i - 1, j - 1] + S[i - 1, j - 1]):
                ops.append("M" if S[i - 1, j - 1] == scheme.match else "X")
                i, j = i - 1, j - 1
            elif _close(H[i, j], E[i, j]):
                state = "E"
            elif _close(H[i, j], F[i, j]):
                state = "F"
            else:  # pragma: no cover - would mean the fill is inconsistent
                raise RuntimeError(f"traceback stuck at ({i}, {j})")
        elif state == "E":
            ops.append("I")
            state = "H" if _close(E[i, j], H[i - 1, j] + go) else "E"
            i -= 1
        else:
            ops.append("D")
            state = "H" if _close(F[i, j], H[i, j - 1] + go) else "F"
            j -= 1
    return i, j, "".join(ops)[::-1]


def align(x, y, scheme: ScoringScheme | None = None) -> Alignment | None:
    """Align query ``x`` against reference ``y``.

    Local mode returns None when no cell scores above zero. Among tied local
    maxima the alignment with the smallest ``(t, r)`` wins; traceback prefers
    diagonal, then up (``I``), then left (``D``).
    """
    scheme = scheme or ScoringScheme()
    x = _check(x, "query")
    y = _check(y, "reference")
    local = scheme.mode == "local"
    S = _substitution_matrix(_as_array(x), _as_array(y), scheme)
    H, E, F = _fill(S, scheme, local)
    if not local:
        n, m = S.shape
        r, t, tr = _traceback(H, E, F, S, scheme, n, m, local)
        return Alignment(r, t, float(H[n, m]), tr)
    best = H[1:, 1:].max()
    if best <= 0:
        return None
    ends = np.argwhere(H[1:, 1:] == best) + 1
    order = np.lexsort((ends[:, 0], ends[:, 1]))[:_MAX_TIED_TRACEBACKS]
    found = []
    for i, j in ends[order]:
        r, t, tr = _traceback(H, E, F, S, scheme, int(i), int(j), local)
        found.append((t, r, len(tr), tr))
    t, r, _, tr = min(found)
    return Alignment(r, t, float(best), tr)


def transcript_score(x, y, aln: Alignment, scheme: ScoringScheme) -> float:
    """Recompute a score by replaying the transcript column by column."""
    i, j = aln.r, aln.t
    score = 0.0
    prev = None
    for op in aln.transcript:
        if op in "MX":
            a, b = x[i], y[j]
            s = scheme.substitution(a, b)
            expected = "M" if s == scheme.match else "X"
            if op != expected:
                raise ValidationError(f"transcript says {op} at ({i}, {j}) but bases give {expected}")
            score += s
            i += 1
            j += 1
        elif op in "ID":
            score += scheme.gap_extend if prev == op else scheme.gap_block_open
            if op == "I":
                i += 1
            else:
                j += 1
        else:
            raise ValidationError(f"bad transcript symbol {op!r}")
        prev = op
    if i > len(x) or j > len(y):
        raise ValidationError("transcript runs past the end of a sequence")
    return score


def local_scores(x: bytes, regions, scheme: ScoringScheme | None = None) -> np.ndarray:
    """Best local score of ``x`` against each region, computed in one sweep.

    Gives the same values as ``align(x, region).score`` (0 for no alignment)
    but fills all regions side by side, which is what candidate rescoring needs.
    """
    scheme = scheme or ScoringScheme()
    x = _check(x, "query")
    regions = [bytes(r) for r in regions]
    if not regions:
        return np.zeros(0)
    m = max(len(r) for r in regions)
    Y = np.full((len(regions), m), _PAD, dtype=np.uint8)
    for k, r in enumerate(regions):
        Y[k, : len(r)] = np.frombuffer(r, dtype=np.uint8)
    xa = _as_array(x)
    go, ge = scheme.gap_block_open, scheme.gap_extend
    k = len(regions)
    cols = np.arange(m + 1)
    shift = go - (cols + 1) * ge
    jext = cols[1:] * ge
    pad = Y == _PAD
    rows = {}
    for c in np.unique(xa):
        sub = np.where((Y == c) & (c != _N), scheme.match, scheme.mismatch)
        sub[pad] = -1e18
        rows[c] = sub
    H = np.zeros((k, m + 1))
    E = np.full((k, m + 1), NEG)
    hp = np.zeros((k, m + 1))
    tmp = np.empty((k, m + 1))
    top = np.zeros((k, m + 1))
    for c in xa:
        np.add(E, ge, out=E)
        np.add(H, go, out=tmp)
        np.maximum(E, tmp, out=E)
        np.add(H[:, :-1], rows[c], out=hp[:, 1:])
        np.maximum(hp, E, out=hp)
        hp[:, 0] = 0.0
        np.maximum(hp, 0.0, out=hp)
        np.add(hp, shift, out=tmp)
        np.maximum.accumulate(tmp, axis=1, out=tmp)
        # H[:, 0] stays 0; the horizontal layer only reaches columns >= 1.
        np.add(tmp[:, :-1], jext, out=H[:, 1:])
        np.maximum(H, hp, out=H)
        np.maximum(top, H, out=top)
    best = top.max(axis=1)
    return best


def merge_intervals(intervals) -> list[tuple[int, int]]:
    out: list[list[int]] = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def split_interval(a: int, b: int, cap: int, overlap: int) -> list[tuple[int, int]]:
    """Cut ``[a, b)`` into pieces of at most ``cap`` that overlap by ``overlap``."""
    if b - a <= cap:
        return [(a, b)]
    step = max(1, cap - overlap)
    pieces = []
    s = a
    while True:
        e = min(b, s + cap)
        pieces.append((s, e))
        if e >= b:
            break
        s += step
    return pieces


def best_candidate(read: bytes, genome: bytes, intervals, scheme: ScoringScheme | None = None,
                   cap_factor: int = 4) -> Alignment | None:
    """Local-align ``read`` against each reference interval and keep the best.

    Overlapping intervals are merged, then anything longer than
    ``cap_factor * len(read)`` is split into overlapping pieces. Ties go to
    the smallest reference offset, then the smallest query offset.
    """
    scheme = (scheme or ScoringScheme()).with_mode("local")
    read = _check(read, "read")
    n = len(genome)
    clipped = [(max(0, int(a)), min(n, int(b))) for a, b in intervals]
    clipped = [(a, b) for a, b in clipped if b > a]
    if not clipped:
        return None
    cap = max(cap_factor * len(read), 1)
    overlap = min(cap - 1, 2 * len(read))
    pieces = []
    for a, b in merge_intervals(clipped):
        pieces.extend(split_interval(a, b, cap, overlap))
    regions = [genome[a:b] for a, b in pieces]
    scores = local_scores(read, regions, scheme)
    top = scores.max()
    if top <= 0:
        return None
    found = []
    for k in np.nonzero(scores == top)[0]:
        a, _ = pieces[k]
        aln = align(read, regions[k], scheme)
        if aln is None:  # pragma: no cover - scores and align agree
            continue
        aln.t += a
        found.append(aln)
    return min(found, key=lambda al: (al.t, al.r, al.length))
