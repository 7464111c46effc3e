"""End-to-end orchestration: train, index the reference, align reads, evaluate."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import synth
from .align import Alignment, ScoringScheme, best_candidate, load_scheme, transcript_score
from .embed import RefVectorStore, build_ref_store, embed_windows, query_chunks
from .errors import ConfigError, LshAlignError, ValidationError
from .lsh import HyperplaneLSH, estimate_sensitivity
from .lstm import BiLstmLanguageModel, load_model, save_model
from .seq_io import QuerySet, Read, RefGenome, load_fasta, load_reads, write_fasta, write_fastq
from .tokenizer import Dictionary, tokenize

logger = logging.getLogger(__name__)

TSV_COLUMNS = ("query_id", "q", "r", "t", "length", "score", "transcript")

DEFAULTS = {
    "seed": 0,
    "w": 4,
    "hidden": 64,
    "embed": 64,
    "words_per_seq": 50,
    "batch_seqs": 4,
    "epochs": 20,
    "learning_rate": 1e-3,
    "clip_norm": 5.0,
    "optimizer": "adam",
    "holdout_fraction": 0.05,
    "stride": 1,
    "lsh_bits": 12,
    "lsh_tables": 8,
    "lsh_blocks": 2,
    "whiten": True,
    "margin": None,
    "scheme": None,
    "jobs": 1,
    # gen
    "length": 100_000,
    "order": 4,
    "concentration": 0.5,
    "repeats": 0,
    "n_reads": 200,
    "read_len": 151,
    "mutation_rate": 0.0,
    # eval-lsh
    "d1": 15.0,
    "d2": 75.0,
    "trials": 10_000,
    "dim": 128,
}


def format_float(x: float) -> str:
    return repr(float(x))


def config_header(config: dict) -> list[str]:
    """Effective configuration as ``# key=value`` lines; paths reduced to basenames."""
    lines = []
    for key in config.get("_echo") or sorted(k for k in config if not k.startswith("_")):
        val = config.get(key)
        if val is None:
            continue
        if isinstance(val, (str, os.PathLike)) and (os.sep in str(val) or key in _PATH_KEYS):
            val = os.path.basename(str(val))
        lines.append(f"# {key}={val}")
    return lines


_PATH_KEYS = {"ref", "reads", "model", "dict", "store", "index", "out", "config", "scheme", "truth", "report"}


def read_start_intervals(offset: int, phase: int, window_len: int, read_len: int, margin: int):
    """Reference interval a window hit points to, widened by ``margin`` on both sides."""
    start = offset - phase
    return start - margin, start + max(window_len, read_len) + margin


class LshAligner(BaseEstimator):
    """Index a reference with a trained language model and align reads against it.

    ``fit`` embeds every window of the reference and builds the bucket index;
    ``predict`` returns one :class:`Alignment` (or None) per read.
    """

    def __init__(self, model=None, dictionary=None, stride=1, n_bits=12, n_tables=8, n_blocks=2, whiten=True,
                 margin=None, scheme=None, seed=0, n_jobs=1):
        self.model = model
        self.dictionary = dictionary
        self.stride = stride
        self.n_bits = n_bits
        self.n_tables = n_tables
        self.n_blocks = n_blocks
        self.whiten = whiten
        self.margin = margin
        self.scheme = scheme
        self.seed = seed
        self.n_jobs = n_jobs

    def _check_model(self):
        if self.model is None or self.dictionary is None:
            raise ConfigError("LshAligner needs a fitted model and its dictionary")
        check_is_fitted(self.model, "params_")
        if self.model.params_.V != len(self.dictionary):
            raise ConfigError(
                f"model vocabulary {self.model.params_.V} does not match dictionary size {len(self.dictionary)}"
            )

    def fit(self, X, y=None):
        self._check_model()
        genome = X.seq if isinstance(X, RefGenome) else bytes(X)
        tokens = tokenize(genome, self.dictionary)
        store = build_ref_store(self.model.params_, tokens, self.model.rc_map_, self.model.words_per_seq,
                                self.dictionary.w, self.stride)
        lsh = HyperplaneLSH(self.n_bits, self.n_tables, self.n_blocks, self.whiten, seed=self.seed).fit(store.vectors)
        return self._attach(genome, store, lsh)

    def _attach(self, genome: bytes, store: RefVectorStore, lsh: HyperplaneLSH):
        self.genome_ = genome
        self.store_ = store
        self.lsh_ = lsh
        return self

    @classmethod
    def from_artifacts(cls, model, dictionary, genome, store, lsh, **kwargs):
        est = cls(model=model, dictionary=dictionary, **kwargs)
        est._check_model()
        if lsh.family_.dim != store.dim:
            raise ConfigError(f"index dimension {lsh.family_.dim} does not match store dimension {store.dim}")
        if store.dim != 2 * model.params_.H:
            raise ConfigError(f"store dimension {store.dim} does not match model hidden size {model.params_.H}")
        return est._attach(genome.seq if isinstance(genome, RefGenome) else genome, store, lsh)

    @property
    def margin_(self) -> int:
        if self.margin is not None:
            return int(self.margin)
        return (self.model.words_per_seq * self.dictionary.w) // 2

    def candidate_intervals(self, seq: bytes) -> list[tuple[int, int]] | None:
        """Reference intervals suggested by the index, or None if the read is too short.

        The read is embedded once per tokenization phase (0..w-1 leading bases
        dropped) since its start need not fall on the reference word grid.
        """
        w = self.dictionary.w
        M = self.model.words_per_seq
        phases = [p for p in range(w) if len(seq) - p >= w]
        if not phases:
            return None
        rows, lengths = [], []
        for p in phases:
            toks = tokenize(seq[p:], self.dictionary)
            chunk, lens = query_chunks(toks[:M], M, self.dictionary.unk_id)
            rows.append(chunk[0])
            lengths.append(lens[0])
        vecs = embed_windows(self.model.params_, np.stack(rows), self.model.rc_map_, lengths=np.array(lengths))
        out = []
        for p, v in zip(phases, vecs):
            for k in self.lsh_.candidates(v):
                out.append(read_start_intervals(int(self.store_.offsets[k]), p, self.store_.window_len,
                                                len(seq), self.margin_))
        return out

    def align_read(self, seq: bytes) -> tuple[Alignment | None, bool]:
        """Best alignment of one read and whether it was skipped as too short."""
        intervals = self.candidate_intervals(seq)
        if intervals is None:
            return None, True
        return best_candidate(seq, self.genome_, intervals, self.scheme), False

    def predict(self, X):
        check_is_fitted(self, "lsh_")
        reads = list(X)
        seqs = [r.seq if isinstance(r, Read) else bytes(r) for r in reads]

        def work(seq):
            try:
                return self.align_read(seq)
            except LshAlignError as exc:
                logger.warning("read failed: %s", exc)
                return None, False

        if self.n_jobs and self.n_jobs > 1:
            with ThreadPoolExecutor(self.n_jobs) as pool:
                results = list(pool.map(work, seqs))
        else:
            results = [work(s) for s in seqs]
        self.skipped_ = [skipped for _, skipped in results]
        out = []
        for q, (read, (aln, _)) in enumerate(zip(reads, results)):
            if aln is not None:
                aln.q = q
                aln.query_id = read.id if isinstance(read, Read) else str(q)
            out.append(aln)
        return out


@dataclass
class EvalReport:
    perplexity: list[float] = field(default_factory=list)
    n_reads: int = 0
    aligned: int = 0
    skipped: int = 0
    sensitivity: float | None = None
    accuracy: float | None = None
    accuracy_relaxed: float | None = None
    runtime: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        for key in ("accuracy", "accuracy_relaxed"):
            if d[key] is None:
                d[key] = "n/a"
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def evaluate_alignments(reads, alignments, skipped, truth=None, tolerance=5) -> EvalReport:
    n = len(reads)
    aligned = sum(a is not None for a in alignments)
    rep = EvalReport(n_reads=n, aligned=aligned, skipped=int(sum(skipped)),
                     sensitivity=aligned / n if n else 0.0)
    if truth is not None:
        strict = relaxed = 0
        for read, aln in zip(reads, alignments):
            if aln is None or read.id not in truth:
                continue
            true_t, true_r = truth[read.id]
            strict += aln.t == true_t and aln.r == true_r
            relaxed += abs(aln.t - true_t) <= tolerance and abs(aln.r - true_r) <= tolerance
        rep.accuracy = strict / n if n else 0.0
        rep.accuracy_relaxed = relaxed / n if n else 0.0
    return rep


def write_alignments(path, reads, alignments, header_lines=()) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        fh.write("\t".join(TSV_COLUMNS) + "\n")
        for q, (read, aln) in enumerate(zip(reads, alignments)):
            if aln is None:
                fh.write(f"{read.id}\t{q}\t-1\t-1\t0\t0\t*\n")
            else:
                score = int(aln.score) if float(aln.score).is_integer() else aln.score
                fh.write(f"{read.id}\t{q}\t{aln.r}\t{aln.t}\t{aln.length}\t{score}\t{aln.transcript}\n")


def read_alignments(path) -> list[dict]:
    rows = []
    with open(path, encoding="ascii") as fh:
        header = None
        for line in fh:
            if line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if header is None:
                header = parts
                continue
            rows.append(dict(zip(header, parts)))
    return rows


# ---------------------------------------------------------------- commands


def _require_file(path, what):
    if path is None:
        raise ConfigError(f"missing --{what}")
    if not Path(path).is_file():
        raise ConfigError(f"{what} file not found: {path}")
    return Path(path)


def _scheme(cfg) -> ScoringScheme:
    if cfg.get("scheme"):
        return load_scheme(_require_file(cfg["scheme"], "scheme"))
    return ScoringScheme()


def load_model_pair(cfg):
    params, w, M = load_model(_require_file(cfg.get("model"), "model"))
    dictionary = Dictionary.load(_require_file(cfg.get("dict"), "dict"))
    if dictionary.w != w:
        raise ConfigError(f"dictionary word size {dictionary.w} does not match model word size {w}")
    if len(dictionary) != params.V:
        raise ConfigError(f"dictionary size {len(dictionary)} does not match model vocabulary {params.V}")
    model = BiLstmLanguageModel.from_params(params, M, dictionary.reverse_complement_ids())
    return model, dictionary


def cmd_gen(cfg) -> dict:
    out = cfg.get("out") or "genome.fa"
    genome = synth.make_genome(cfg["length"], seed=cfg["seed"], order=cfg["order"],
                               concentration=cfg["concentration"], repeats=cfg["repeats"])
    write_fasta(out, genome)
    result = {"genome": str(out), "length": genome.length}
    if cfg.get("reads"):
        planted = synth.plant_reads(genome.seq, cfg["n_reads"], cfg["read_len"], seed=cfg["seed"] + 1,
                                    mutation_rate=cfg["mutation_rate"])
        write_fastq(cfg["reads"], [p.read for p in planted])
        result["reads"] = len(planted)
        if cfg.get("truth"):
            synth.write_truth(cfg["truth"], planted)
    return result


def cmd_train(cfg) -> dict:
    t0 = time.perf_counter()
    genome = load_fasta(_require_file(cfg.get("ref"), "ref"))
    dictionary = Dictionary(cfg["w"])
    tokens = tokenize(genome.seq, dictionary, train=True)
    dictionary.freeze()
    model_path = Path(cfg.get("model") or "model.bin")
    dict_path = Path(cfg.get("dict") or model_path.with_suffix(".dict"))
    log_path = Path(cfg.get("out") or model_path.with_suffix(".ppl.tsv"))
    dictionary.save(dict_path)
    est = BiLstmLanguageModel(hidden_size=cfg["hidden"], embed_size=cfg["embed"], words_per_seq=cfg["words_per_seq"],
                              batch_seqs=cfg["batch_seqs"], epochs=cfg["epochs"], learning_rate=cfg["learning_rate"],
                              clip_norm=cfg["clip_norm"], optimizer=cfg["optimizer"],
                              holdout_fraction=cfg["holdout_fraction"], seed=cfg["seed"])
    with open(log_path, "w", encoding="ascii", newline="\n") as log:
        for line in config_header(cfg):
            log.write(line + "\n")
        log.write("epoch\tperplexity\n")
        log.flush()

        def on_epoch(epoch, ppl, params):
            save_model(model_path, params, dictionary.w, cfg["words_per_seq"])
            log.write(f"{epoch}\t{format_float(ppl)}\n")
            log.flush()

        est.fit(tokens, vocab_size=len(dictionary), rc_map=dictionary.reverse_complement_ids(), on_epoch=on_epoch)
    if cfg["epochs"] == 0:
        save_model(model_path, est.params_, dictionary.w, cfg["words_per_seq"])
    report = EvalReport(perplexity=est.perplexity_, runtime={"train": time.perf_counter() - t0})
    if cfg.get("report"):
        Path(cfg["report"]).write_text(report.to_json())
    return {"model": str(model_path), "dict": str(dict_path), "log": str(log_path), "V": len(dictionary),
            "perplexity": est.perplexity_}


def cmd_index(cfg) -> dict:
    t0 = time.perf_counter()
    model, dictionary = load_model_pair(cfg)
    genome = load_fasta(_require_file(cfg.get("ref"), "ref"))
    aligner = LshAligner(model, dictionary, stride=cfg["stride"], n_bits=cfg["lsh_bits"], n_tables=cfg["lsh_tables"],
                         n_blocks=cfg["lsh_blocks"], whiten=cfg["whiten"], seed=cfg["seed"]).fit(genome)
    store_path = Path(cfg.get("store") or "ref.vec")
    index_path = Path(cfg.get("index") or "ref.idx")
    aligner.store_.save(store_path)
    aligner.lsh_.save(index_path)
    return {"store": str(store_path), "index": str(index_path), "windows": len(aligner.store_),
            "entries": aligner.lsh_.index_.total_entries, "seconds": time.perf_counter() - t0}


def cmd_align(cfg) -> dict:
    timings = {}
    t0 = time.perf_counter()
    model, dictionary = load_model_pair(cfg)
    genome = load_fasta(_require_file(cfg.get("ref"), "ref"))
    store = RefVectorStore.load(_require_file(cfg.get("store"), "store"))
    lsh = HyperplaneLSH.load(_require_file(cfg.get("index"), "index"))
    reads = load_reads(_require_file(cfg.get("reads"), "reads"))
    aligner = LshAligner.from_artifacts(model, dictionary, genome, store, lsh, margin=cfg.get("margin"),
                                        scheme=_scheme(cfg), n_jobs=cfg.get("jobs", 1))
    timings["load"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    alignments = aligner.predict(reads.reads)
    timings["align"] = time.perf_counter() - t1
    truth = synth.load_truth(_require_file(cfg["truth"], "truth")) if cfg.get("truth") else None
    report = evaluate_alignments(reads.reads, alignments, aligner.skipped_, truth)
    report.runtime = timings
    out = Path(cfg.get("out") or "alignments.tsv")
    write_alignments(out, reads.reads, alignments, config_header(cfg))
    report_path = Path(cfg.get("report") or str(out) + ".report.json")
    report_path.write_text(report.to_json())
    return {"out": str(out), "report": str(report_path), **asdict(report)}


def cmd_eval_lsh(cfg) -> tuple[dict, bool]:
    d1, d2 = math.radians(cfg["d1"]), math.radians(cfg["d2"])
    if cfg["trials"] < 1:
        raise ValidationError(f"trials must be >= 1, got {cfg['trials']}")
    if not d1 < d2:
        raise ValidationError(f"need d1 < d2, got d1={cfg['d1']} d2={cfg['d2']}")
    rep = estimate_sensitivity(cfg["lsh_bits"], cfg["dim"], d1, d2, cfg["trials"], cfg["seed"])
    out = cfg.get("out")
    if out:
        Path(out).write_text(rep.to_text())
    return {"p1_hat": rep.p1_hat, "p2_hat": rep.p2_hat, "expected": rep.expected(), "sensitive": rep.ok}, rep.ok


def cmd_eval(cfg) -> dict:
    model, dictionary = load_model_pair(cfg)
    genome = load_fasta(_require_file(cfg.get("ref"), "ref"))
    tokens = tokenize(genome.seq, dictionary)
    frac = cfg.get("holdout_fraction")
    if cfg.get("heldout_only") and frac:
        tokens = tokens[len(tokens) - int(round(len(tokens) * frac)):]
    return {"perplexity": model.perplexity(tokens), "tokens": len(tokens)}
