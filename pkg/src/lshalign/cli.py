"""Command-line entry point: ``lshalign <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .errors import LshAlignError

_FLAGS = {
    # flag: (config key, type, help)
    "--ref": ("ref", str, "reference FASTA"),
    "--reads": ("reads", str, "query FASTQ/FASTA (written by gen)"),
    "--model": ("model", str, "model checkpoint"),
    "--dict": ("dict", str, "dictionary file"),
    "--store": ("store", str, "vector store file"),
    "--index": ("index", str, "LSH index file"),
    "--out": ("out", str, "primary output path"),
    "--report": ("report", str, "JSON evaluation report path"),
    "--seed": ("seed", int, "seed for every stochastic step"),
    "--w": ("w", int, "word size in bases"),
    "--hidden": ("hidden", int, "LSTM hidden size H"),
    "--embed": ("embed", int, "word embedding size E"),
    "--words-per-seq": ("words_per_seq", int, "words per sequence M"),
    "--batch-seqs": ("batch_seqs", int, "sequences per batch b"),
    "--epochs": ("epochs", int, "training epochs"),
    "--lr": ("learning_rate", float, "learning rate"),
    "--clip-norm": ("clip_norm", float, "global gradient norm cap"),
    "--optimizer": ("optimizer", str, "adam or sgd"),
    "--stride": ("stride", int, "reference window stride in words"),
    "--lsh-bits": ("lsh_bits", int, "bits per table K"),
    "--lsh-tables": ("lsh_tables", int, "number of tables L"),
    "--lsh-blocks": ("lsh_blocks", int, "coordinate blocks the tables cycle over"),
    "--margin": ("margin", int, "candidate widening in bases (default M*w/2)"),
    "--scheme": ("scheme", str, "key=value scoring scheme file"),
    "--truth": ("truth", str, "planted-read truth TSV"),
    "--jobs": ("jobs", int, "worker threads for align"),
    "--length": ("length", int, "synthetic genome length"),
    "--order": ("order", int, "Markov order of the synthetic genome"),
    "--concentration": ("concentration", float, "Dirichlet concentration of transition rows"),
    "--repeats": ("repeats", int, "number of injected repeat copies"),
    "--n-reads": ("n_reads", int, "planted reads to draw"),
    "--read-len": ("read_len", int, "planted read length"),
    "--mutation-rate": ("mutation_rate", float, "per-base substitution rate for planted reads"),
    "--d1": ("d1", float, "near angle in degrees"),
    "--d2": ("d2", float, "far angle in degrees"),
    "--trials": ("trials", int, "Monte-Carlo trials"),
    "--dim": ("dim", int, "vector dimension for eval-lsh"),
}

_SUBCOMMANDS = {
    "gen": ("synthetic genome and planted reads",
            ["--out", "--reads", "--truth", "--seed", "--length", "--order", "--concentration", "--repeats",
             "--n-reads", "--read-len", "--mutation-rate"]),
    "train": ("train the language model on a reference",
              ["--ref", "--model", "--dict", "--out", "--report", "--seed", "--w", "--hidden", "--embed",
               "--words-per-seq", "--batch-seqs", "--epochs", "--lr", "--clip-norm", "--optimizer"]),
    "index": ("embed reference windows and build the LSH index",
              ["--ref", "--model", "--dict", "--store", "--index", "--seed", "--stride", "--lsh-bits",
               "--lsh-tables", "--lsh-blocks"]),
    "align": ("align reads and write a TSV report",
              ["--ref", "--reads", "--model", "--dict", "--store", "--index", "--out", "--report", "--margin",
               "--scheme", "--truth", "--jobs", "--seed"]),
    "eval-lsh": ("empirical sensitivity of the hash family",
                 ["--out", "--seed", "--lsh-bits", "--d1", "--d2", "--trials", "--dim"]),
    "eval": ("perplexity of a model on a FASTA stream",
             ["--ref", "--model", "--dict"]),
}


# Settings without a flag that still shape a subcommand's output.
_ECHO_EXTRA = {"train": ("holdout_fraction",), "index": ("whiten",), "eval": ("heldout_only",)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lshalign", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (help_text, flags) in _SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file of defaults (overridden by flags)")
        for flag in flags:
            key, typ, hlp = _FLAGS[flag]
            p.add_argument(flag, dest=key, type=typ, default=None, help=hlp)
        if name == "index":
            p.add_argument("--no-whiten", dest="whiten", action="store_false", default=None,
                           help="hash raw embeddings instead of whitened ones")
        if name == "eval":
            p.add_argument("--heldout-only", dest="heldout_only", action="store_true", default=None,
                           help="score only the trailing held-out fraction")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(pipeline.DEFAULTS)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg.update(json.load(fh))
    for key, val in vars(args).items():
        if key in ("command", "verbose", "config") or val is None:
            continue
        cfg[key] = val
    if args.config:
        cfg["config"] = args.config
    flags = _SUBCOMMANDS[args.command][1]
    cfg["_echo"] = sorted({_FLAGS[f][0] for f in flags} | set(_ECHO_EXTRA.get(args.command, ())))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "eval-lsh":
            result, ok = pipeline.cmd_eval_lsh(cfg)
            print(json.dumps(result, indent=2))
            return 0 if ok else 2
        handler = {
            "gen": pipeline.cmd_gen,
            "train": pipeline.cmd_train,
            "index": pipeline.cmd_index,
            "align": pipeline.cmd_align,
            "eval": pipeline.cmd_eval,
        }[args.command]
        result = handler(cfg)
    except LshAlignError as exc:
        print(f"lshalign {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"lshalign {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a runtime failure, not bad input
        logging.getLogger(__name__).debug("unexpected failure", exc_info=True)
        print(f"lshalign {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 2
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
