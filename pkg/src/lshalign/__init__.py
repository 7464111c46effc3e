"""Short-read alignment using bidirectional LSTM window embeddings as a learned LSH."""
from .align import Alignment, ScoringScheme, align, best_candidate
from .embed import RefVectorStore, build_ref_store, embed_query, embed_sequence
from .errors import ConfigError, EmptyInputError, LshAlignError, NumericError, ParseError, ValidationError
from .lsh import HashFamily, HyperplaneLSH, build_index, candidates, estimate_sensitivity, signature
from .lstm import BiLstmLanguageModel, LstmParams, TrainConfig, init_params, loss_and_grads, perplexity
from .pipeline import LshAligner
from .seq_io import QuerySet, Read, RefGenome, load_fasta, load_fastq, reverse_complement
from .tokenizer import Dictionary, KmerTokenizer, build_epoch, tokenize

__version__ = "0.1.0"
