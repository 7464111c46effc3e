"""Bidirectional LSTM language model over word ids, written directly in numpy.

The forward layer reads the window left to right and predicts each next word.
The backward layer reads the reverse-complemented window (words complemented,
order reversed). To predict word ``t+1`` it contributes its state after
consuming words ``M-1 .. t+2``, so the target itself is never visible. Both
layers feed one shared softmax projection.
"""
from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigError, EmptyInputError, NumericError, ParseError, ValidationError
from .tokenizer import build_epoch

logger = logging.getLogger(__name__)

GATES = ("f", "i", "c", "o")
DIRECTIONS = ("fwd", "bwd")
MODEL_MAGIC = b"LSHALIGN-MODEL"
MODEL_VERSION = 1


def param_names() -> list[str]:
    """Parameter tensor names in checkpoint order."""
    names = []
    for d in DIRECTIONS:
        for g in GATES:
            names += [f"{d}.W_{g}h", f"{d}.W_{g}x", f"{d}.b_{g}"]
    return names + ["emb", "W_y", "b_y"]


def param_shapes(V: int, E: int, H: int) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for d in DIRECTIONS:
        for g in GATES:
            shapes[f"{d}.W_{g}h"] = (H, H)
            shapes[f"{d}.W_{g}x"] = (H, E)
            shapes[f"{d}.b_{g}"] = (H,)
    shapes["emb"] = (V, E)
    shapes["W_y"] = (V, 2 * H)
    shapes["b_y"] = (V,)
    return shapes


@dataclass
class LstmParams:
    V: int
    E: int
    H: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = param_shapes(self.V, self.E, self.H)
        if not self.arrays:
            self.arrays = {k: np.zeros(s) for k, s in shapes.items()}
        for name, shape in shapes.items():
            if name not in self.arrays:
                raise ConfigError(f"missing parameter {name}")
            if self.arrays[name].shape != shape:
                raise ConfigError(f"{name} has shape {self.arrays[name].shape}, expected {shape}")

    def __getitem__(self, name):
        return self.arrays[name]

    def __setitem__(self, name, value):
        self.arrays[name] = value

    def items(self):
        return ((k, self.arrays[k]) for k in param_names())

    def copy(self) -> "LstmParams":
        return LstmParams(self.V, self.E, self.H, {k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> "LstmParams":
        return LstmParams(self.V, self.E, self.H, {k: np.zeros_like(v) for k, v in self.arrays.items()})

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(v * v)) for v in self.arrays.values())))

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())

    def stacked(self, d: str):
        """Gate weights of one direction stacked in f, i, c, o order."""
        a = self.arrays
        Wh = np.concatenate([a[f"{d}.W_{g}h"] for g in GATES], axis=0)
        Wx = np.concatenate([a[f"{d}.W_{g}x"] for g in GATES], axis=0)
        b = np.concatenate([a[f"{d}.b_{g}"] for g in GATES])
        return Wh, Wx, b


def init_params(V: int, E: int, H: int, seed: int = 0) -> LstmParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero biases, forget bias 1."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(H)
    arrays = {}
    for name, shape in param_shapes(V, E, H).items():
        leaf = name.split(".")[-1]
        if leaf.startswith("b_"):
            arrays[name] = np.ones(shape) if leaf == "b_f" else np.zeros(shape)
        else:
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return LstmParams(V, E, H, arrays)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


def cell_step(params: LstmParams, direction: str, x, prev: LstmState):
    """One gated update of a single direction.

    Returns the new state and a dict of gate activations ``f, i, c_tilde, o``.
    Works for a single vector or a batch of rows.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.E or prev.h.shape[-1] != params.H or prev.c.shape != prev.h.shape:
        raise ConfigError(
            f"cell_step shapes x={x.shape}, h={prev.h.shape}, c={prev.c.shape} "
            f"do not fit E={params.E}, H={params.H}"
        )
    a = params.arrays
    gates = {}
    for g in GATES:
        z = prev.h @ a[f"{direction}.W_{g}h"].T + x @ a[f"{direction}.W_{g}x"].T + a[f"{direction}.b_{g}"]
        gates[g] = np.tanh(z) if g == "c" else sigmoid(z)
    c = gates["f"] * prev.c + gates["i"] * gates["c"]
    h = gates["o"] * np.tanh(c)
    for name, val in (("f", gates["f"]), ("i", gates["i"]), ("c_tilde", gates["c"]), ("o", gates["o"]), ("c", c), ("h", h)):
        if not np.isfinite(val).all():
            raise NumericError(f"non-finite value in gate {name}")
    cache = {"f": gates["f"], "i": gates["i"], "c_tilde": gates["c"], "o": gates["o"]}
    return LstmState(h, c), cache


def _run(params: LstmParams, d: str, X: np.ndarray, keep_cache: bool = True, mask=None):
    """Unroll one direction over ``X`` of shape (T, B, E).

    With ``mask`` (T, B) false entries leave the state untouched; used to skip
    right padding at inference time. Training never passes a mask.
    """
    T, B, _ = X.shape
    H = params.H
    Wh, Wx, bias = params.stacked(d)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.zeros((T, B, H))
    cache = []
    Zx = X @ Wx.T + bias
    for t in range(T):
        z = Zx[t] + h @ Wh.T
        f = sigmoid(z[:, :H])
        i = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        if keep_cache:
            cache.append((f, i, g, o, c, tc, h))
        if mask is not None:
            m = mask[t][:, None]
            h_new = np.where(m, h_new, h)
            c_new = np.where(m, c_new, c)
        h, c = h_new, c_new
        hs[t] = h
    return hs, (h, c), cache


def _bptt(params: LstmParams, d: str, X, cache, dH):
    """Backpropagate ``dH`` (T, B, H) through one direction; returns dX and grads."""
    H = params.H
    Wh, Wx, _ = params.stacked(d)
    T, B, _ = dH.shape
    dWh = np.zeros_like(Wh)
    dWx = np.zeros_like(Wx)
    db = np.zeros(4 * H)
    dX = np.zeros_like(X)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        f, i, g, o, c_prev, tc, h_prev = cache[t]
        dh = dH[t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [dc * c_prev * f * (1.0 - f), dc * g * i * (1.0 - i), dc * i * (1.0 - g * g), do * o * (1.0 - o)],
            axis=1,
        )
        dc_next = dc * f
        dWh += dz.T @ h_prev
        dWx += dz.T @ X[t]
        db += dz.sum(axis=0)
        dh_next = dz @ Wh
        dX[t] = dz @ Wx
    return dX, dWh, dWx, db


def _unstack_into(grads: LstmParams, d: str, dWh, dWx, db):
    H = grads.H
    for k, g in enumerate(GATES):
        sl = slice(k * H, (k + 1) * H)
        grads[f"{d}.W_{g}h"] += dWh[sl]
        grads[f"{d}.W_{g}x"] += dWx[sl]
        grads[f"{d}.b_{g}"] += db[sl]


def _check_tokens(tokens, V):
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= V):
        bad = tokens[(tokens < 0) | (tokens >= V)][0]
        raise ValidationError(f"token id {bad} outside vocabulary of size {V}")
    return tokens


def _identity_rc(V):
    return np.arange(V, dtype=np.int64)


def _features(params: LstmParams, tokens: np.ndarray, rc_map, keep_cache=True):
    """Run both layers for next-word prediction on a (B, M) token block."""
    B, M = tokens.shape
    H = params.H
    emb = params["emb"]
    Xf = emb[tokens[:, : M - 1].T]  # (M-1, B, E)
    hf, _, cf = _run(params, "fwd", Xf, keep_cache)
    rc_tokens = rc_map[tokens[:, ::-1]]  # rc word of token M-1-k at column k
    if M >= 3:
        Xb = emb[rc_tokens[:, : M - 2].T]  # (M-2, B, E)
        hb, _, cb = _run(params, "bwd", Xb, keep_cache)
        hb_aligned = np.concatenate([hb[::-1], np.zeros((1, B, H))], axis=0)
    else:
        Xb, hb, cb = np.zeros((0, B, params.E)), np.zeros((0, B, H)), []
        hb_aligned = np.zeros((1, B, H))
    feats = np.concatenate([hf, hb_aligned], axis=2)  # (M-1, B, 2H)
    return feats, (Xf, cf, rc_tokens, Xb, cb)


def forward_sequence(params: LstmParams, token_ids, rc_map=None):
    """Next-word probabilities for one window.

    Returns ``(probs, (fwd_state, bwd_state))`` where ``probs`` has shape
    (M-1, V) and row ``t`` is the distribution over word ``t+1``. The final
    states are taken after each layer has consumed the whole window.
    """
    tokens = _check_tokens(token_ids, params.V)
    if tokens.ndim != 1 or len(tokens) < 2:
        raise ValidationError("forward_sequence needs a 1-D window of at least 2 tokens")
    rc_map = _identity_rc(params.V) if rc_map is None else np.asarray(rc_map)
    feats, _ = _features(params, tokens[None, :], rc_map, keep_cache=False)
    logits = feats[:, 0, :] @ params["W_y"].T + params["b_y"]
    probs = softmax(logits)
    fwd, bwd = final_states(params, tokens[None, :], rc_map)
    return probs, (fwd, bwd)


def final_states(params: LstmParams, tokens, rc_map, lengths=None):
    """Final (h, c) of both layers over full windows; ``lengths`` masks right padding."""
    tokens = np.asarray(tokens, dtype=np.int64)
    B, M = tokens.shape
    emb = params["emb"]
    mask = None
    if lengths is not None:
        lengths = np.asarray(lengths)
        mask = np.arange(M)[:, None] < lengths[None, :]  # (M, B)
    _, fwd, _ = _run(params, "fwd", emb[tokens.T], keep_cache=False, mask=mask)
    # Backward layer reads the reverse complement: padding moves to the front.
    rc_tokens = np.asarray(rc_map)[tokens[:, ::-1]]
    bmask = None if mask is None else mask[::-1]
    _, bwd, _ = _run(params, "bwd", emb[rc_tokens.T], keep_cache=False, mask=bmask)
    return LstmState(*fwd), LstmState(*bwd)


def negative_log_likelihood(params: LstmParams, tokens, rc_map) -> tuple[float, int]:
    """Summed next-word NLL over a (B, M) block and the number of predictions."""
    tokens = _check_tokens(tokens, params.V)
    feats, _ = _features(params, tokens, np.asarray(rc_map), keep_cache=False)
    logits = feats @ params["W_y"].T + params["b_y"]
    logp = log_softmax(logits)
    targets = tokens[:, 1:].T  # (M-1, B)
    picked = np.take_along_axis(logp, targets[..., None], axis=2)[..., 0]
    return float(-picked.sum()), picked.size


def loss_and_grads(params: LstmParams, batch, rc_map=None):
    """Mean next-word cross-entropy over a batch and its exact BPTT gradient."""
    tokens = batch.tokens if hasattr(batch, "tokens") else np.asarray(batch)
    tokens = _check_tokens(tokens, params.V)
    if tokens.ndim != 2 or tokens.shape[1] < 2:
        raise ValidationError(f"batch must be (b, M>=2), got {tokens.shape}")
    rc_map = _identity_rc(params.V) if rc_map is None else np.asarray(rc_map)
    B, M = tokens.shape
    H = params.H
    feats, (Xf, cf, rc_tokens, Xb, cb) = _features(params, tokens, rc_map)
    W_y = params["W_y"]
    logits = feats @ W_y.T + params["b_y"]
    logp = log_softmax(logits)
    targets = tokens[:, 1:].T
    n = targets.size
    loss = -float(np.take_along_axis(logp, targets[..., None], axis=2).sum()) / n
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")

    grads = params.zeros_like()
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, targets[..., None], np.take_along_axis(dlogits, targets[..., None], axis=2) - 1.0, axis=2)
    dlogits /= n
    grads["W_y"] += np.einsum("tbv,tbk->vk", dlogits, feats)
    grads["b_y"] += dlogits.sum(axis=(0, 1))
    dfeats = dlogits @ W_y  # (M-1, B, 2H)

    emb_grad = grads["emb"]
    dXf, dWh, dWx, db = _bptt(params, "fwd", Xf, cf, dfeats[:, :, :H])
    _unstack_into(grads, "fwd", dWh, dWx, db)
    np.add.at(emb_grad, tokens[:, : M - 1].T, dXf)
    if M >= 3:
        dHb = dfeats[: M - 2, :, H:][::-1]
        dXb, dWh, dWx, db = _bptt(params, "bwd", Xb, cb, dHb)
        _unstack_into(grads, "bwd", dWh, dWx, db)
        np.add.at(emb_grad, rc_tokens[:, : M - 2].T, dXb)
    return loss, grads


def clip_gradients(grads: LstmParams, clip_norm: float) -> tuple[LstmParams, float]:
    """Rescale so the global norm is at most ``clip_norm``."""
    norm = grads.global_norm()
    if not np.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    if norm <= clip_norm:
        return grads, norm
    scale = clip_norm / norm
    return LstmParams(grads.V, grads.E, grads.H, {k: v * scale for k, v in grads.arrays.items()}), norm


class Sgd:
    def __init__(self, learning_rate=1e-3):
        self.learning_rate = learning_rate

    def step(self, params: LstmParams, grads: LstmParams) -> LstmParams:
        lr = self.learning_rate
        return LstmParams(params.V, params.E, params.H, {k: v - lr * grads[k] for k, v in params.arrays.items()})


class Adam:
    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: LstmParams, grads: LstmParams) -> LstmParams:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.learning_rate * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        out = {}
        for k, p in params.arrays.items():
            g = grads[k]
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            out[k] = p - lr_t * m / (np.sqrt(v) + self.eps)
        return LstmParams(params.V, params.E, params.H, out)


def make_optimizer(name: str, learning_rate: float):
    if name == "adam":
        return Adam(learning_rate)
    if name == "sgd":
        return Sgd(learning_rate)
    raise ConfigError(f"unknown optimizer {name!r}")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    epochs: int = 20
    seed: int = 0
    optimizer: str = "adam"
    H: int = 64
    E: int = 64
    w: int = 4
    M: int = 50
    b: int = 4

    def __post_init__(self):
        for name in ("learning_rate", "clip_norm", "H", "E", "w", "M", "b"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.M < 2:
            raise ConfigError("M must be >= 2")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


def clip_and_update(params: LstmParams, grads: LstmParams, cfg: TrainConfig, optimizer=None) -> LstmParams:
    """Clip to ``cfg.clip_norm`` and take one optimizer step."""
    if optimizer is None:
        optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate)
    clipped, _ = clip_gradients(grads, cfg.clip_norm)
    new = optimizer.step(params, clipped)
    if not new.is_finite():
        raise NumericError("parameters became non-finite after update")
    return new


def perplexity(params: LstmParams, stream, M: int, rc_map=None) -> float:
    """exp(mean next-word cross-entropy) over ``stream`` cut into M-word windows.

    A trailing window shorter than M still counts if it has at least 2 words.
    """
    stream = _check_tokens(stream, params.V)
    if stream.ndim != 1 or len(stream) < 2:
        raise ValidationError("perplexity needs a stream of at least 2 tokens")
    rc_map = _identity_rc(params.V) if rc_map is None else np.asarray(rc_map)
    n_full = len(stream) // M
    total, count = 0.0, 0
    if n_full:
        s, c = negative_log_likelihood(params, stream[: n_full * M].reshape(n_full, M), rc_map)
        total += s
        count += c
    tail = stream[n_full * M:]
    if len(tail) >= 2:
        s, c = negative_log_likelihood(params, tail[None, :], rc_map)
        total += s
        count += c
    return float(np.exp(total / count))


def save_model(path: str | os.PathLike, params: LstmParams, w: int, M: int) -> None:
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I5Q", MODEL_VERSION, params.V, params.E, params.H, w, M))
        for _, arr in params.items():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path: str | os.PathLike) -> tuple[LstmParams, int, int]:
    """Read a checkpoint; returns ``(params, w, M)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MODEL_MAGIC):
        raise ParseError(f"{path}: not a model checkpoint")
    off = len(MODEL_MAGIC)
    version, V, E, H, w, M = struct.unpack_from("<I5Q", data, off)
    if version != MODEL_VERSION:
        raise ConfigError(f"{path}: unsupported model version {version}")
    off += struct.calcsize("<I5Q")
    shapes = param_shapes(V, E, H)
    arrays = {}
    for name in param_names():
        n = int(np.prod(shapes[name]))
        if off + 8 * n > len(data):
            raise ParseError(f"{path}: truncated at parameter {name}")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shapes[name]).astype(float)
        off += 8 * n
    if off != len(data):
        raise ParseError(f"{path}: {len(data) - off} trailing bytes after parameters")
    return LstmParams(V, E, H, arrays), w, M


class BiLstmLanguageModel(TransformerMixin, BaseEstimator):
    """Next-word language model whose final hidden states embed a window.

    ``fit`` trains on a token stream; ``transform`` maps (n, M) token windows
    to (n, 2H) embeddings; ``perplexity`` scores a held-out stream.
    """

    def __init__(self, hidden_size=64, embed_size=64, words_per_seq=50, batch_seqs=4, epochs=20,
                 learning_rate=1e-3, clip_norm=5.0, optimizer="adam", holdout_fraction=0.05, seed=0):
        self.hidden_size = hidden_size
        self.embed_size = embed_size
        self.words_per_seq = words_per_seq
        self.batch_seqs = batch_seqs
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.optimizer = optimizer
        self.holdout_fraction = holdout_fraction
        self.seed = seed

    def _config(self, w=1):
        return TrainConfig(learning_rate=self.learning_rate, clip_norm=self.clip_norm, epochs=self.epochs,
                           seed=self.seed, optimizer=self.optimizer, H=self.hidden_size, E=self.embed_size,
                           w=w, M=self.words_per_seq, b=self.batch_seqs)

    def fit(self, X, y=None, vocab_size=None, rc_map=None, on_epoch=None):
        """Train on token stream ``X``.

        The trailing ``holdout_fraction`` of the stream is never trained on and
        is scored after every epoch into ``perplexity_``. ``on_epoch(k, ppl,
        params)`` is called after each epoch.
        """
        stream = np.asarray(X, dtype=np.int64).ravel()
        V = int(vocab_size if vocab_size is not None else stream.max() + 1)
        cfg = self._config()
        self.vocab_size_ = V
        self.rc_map_ = _identity_rc(V) if rc_map is None else np.asarray(rc_map, dtype=np.int64)
        n_hold = int(round(len(stream) * self.holdout_fraction))
        train, held = stream[: len(stream) - n_hold], stream[len(stream) - n_hold:]
        plan = build_epoch(train, cfg.b, cfg.M)
        self.heldout_ = held
        self.params_ = init_params(V, cfg.E, cfg.H, cfg.seed)
        self.perplexity_ = []
        self.train_loss_ = []
        if cfg.epochs == 0:
            logger.warning("epochs=0: returning the initialized model")
        opt = make_optimizer(cfg.optimizer, cfg.learning_rate)
        for epoch in range(1, cfg.epochs + 1):
            losses = []
            for batch in plan:
                loss, grads = loss_and_grads(self.params_, batch, self.rc_map_)
                self.params_ = clip_and_update(self.params_, grads, cfg, opt)
                losses.append(loss)
            self.train_loss_.append(float(np.mean(losses)))
            ppl = self.perplexity(held) if len(held) >= 2 else float("nan")
            self.perplexity_.append(ppl)
            logger.info("epoch %d train_loss %.4f heldout_ppl %.4f", epoch, self.train_loss_[-1], ppl)
            if on_epoch is not None:
                on_epoch(epoch, ppl, self.params_)
        return self

    @classmethod
    def from_params(cls, params: LstmParams, M: int, rc_map=None, **kwargs):
        model = cls(hidden_size=params.H, embed_size=params.E, words_per_seq=M, **kwargs)
        model.params_ = params
        model.vocab_size_ = params.V
        model.rc_map_ = _identity_rc(params.V) if rc_map is None else np.asarray(rc_map, dtype=np.int64)
        model.perplexity_ = []
        return model

    def perplexity(self, stream) -> float:
        check_is_fitted(self, "params_")
        return perplexity(self.params_, stream, self.words_per_seq, self.rc_map_)

    def score(self, X, y=None) -> float:
        """Mean per-word log-likelihood (higher is better)."""
        return -float(np.log(self.perplexity(X)))

    def transform(self, X, lengths=None):
        check_is_fitted(self, "params_")
        from .embed import embed_windows

        return embed_windows(self.params_, X, self.rc_map_, lengths=lengths)
