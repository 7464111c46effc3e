import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lshalign import lstm
from lshalign.errors import ConfigError, NumericError, ValidationError
from lshalign.lstm import (Adam, BiLstmLanguageModel, LstmParams, LstmState, Sgd, TrainConfig, cell_step,
                           clip_and_update, clip_gradients, forward_sequence, init_params, loss_and_grads,
                           perplexity)

from oracles import scalar_cell, scalar_log_probs


def zero_model(V, E=3, H=2):
    return LstmParams(V, E, H)


def test_zero_weights_cell():
    p = zero_model(4)
    st_, gates = cell_step(p, "fwd", np.ones(3), LstmState(np.zeros(2), np.zeros(2)))
    for g in ("f", "i", "o"):
        assert np.allclose(gates[g], 0.5)
    assert np.all(gates["c_tilde"] == 0) and np.all(st_.c == 0) and np.all(st_.h == 0)


def test_cell_matches_scalar_oracle():
    p = init_params(5, 2, 2, seed=0)
    rng = np.random.default_rng(0)
    x, h, c = rng.normal(size=2), rng.uniform(-1, 1, 2), rng.normal(size=2)
    for d in ("fwd", "bwd"):
        got, gates = cell_step(p, d, x, LstmState(h, c))
        h_ref, c_ref, g_ref = scalar_cell(p, d, list(x), list(h), list(c))
        assert np.max(np.abs(got.h - h_ref)) < 1e-12
        assert np.max(np.abs(got.c - c_ref)) < 1e-12
        for g in g_ref:
            assert np.max(np.abs(gates[g] - g_ref[g])) < 1e-12


def test_cell_shape_mismatch():
    p = zero_model(4)
    with pytest.raises(ConfigError):
        cell_step(p, "fwd", np.ones(5), LstmState(np.zeros(2), np.zeros(2)))


def test_cell_non_finite_names_gate():
    p = zero_model(4)
    with pytest.raises(NumericError, match="gate"):
        cell_step(p, "fwd", np.array([np.nan, 0, 0]), LstmState(np.zeros(2), np.zeros(2)))


def test_saturated_gates_preserve_memory():
    p = init_params(4, 3, 5, seed=1)
    p["fwd.b_f"] = np.full(5, 50.0)
    p["fwd.b_i"] = np.full(5, -50.0)
    c0 = np.random.default_rng(2).uniform(-1, 1, 5)
    state = LstmState(np.zeros(5), c0)
    rng = np.random.default_rng(3)
    for _ in range(100):
        state, _ = cell_step(p, "fwd", rng.normal(size=3) * 0.1, state)
    assert np.max(np.abs(state.c - c0)) < 1e-8


def test_gate_ranges_and_cell_bound():
    p = init_params(6, 4, 8, seed=4)
    for name, arr in p.items():
        p[name] = arr * 5.0  # push gates toward saturation
    rng = np.random.default_rng(5)
    state = LstmState(np.zeros(8), np.zeros(8))
    for t in range(1, 40):
        state, g = cell_step(p, "fwd", rng.normal(size=4), state)
        assert np.all((g["f"] > 0) & (g["f"] < 1)) and np.all((g["o"] > 0) & (g["o"] < 1))
        assert np.all(np.abs(g["c_tilde"]) <= 1) and np.all(np.abs(state.h) < 1)
        assert np.all(np.abs(state.c) <= t)


def test_forward_sequence_zero_projection_is_uniform():
    p = init_params(4, 3, 2, seed=0)
    p["W_y"] = np.zeros((4, 4))
    probs, (fwd, bwd) = forward_sequence(p, [0, 1, 2, 3, 0])
    assert probs.shape == (4, 4) and np.allclose(probs, 0.25)
    assert fwd.h.shape == (1, 2) and bwd.h.shape == (1, 2)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_rows_sum_to_one(seed, M):
    p = init_params(7, 3, 4, seed=seed)
    for name, arr in p.items():
        p[name] = arr * 4
    toks = np.random.default_rng(seed).integers(0, 7, M)
    probs, _ = forward_sequence(p, toks)
    assert np.all(np.abs(probs.sum(axis=1) - 1) <= 1e-9)


def test_forward_sequence_matches_scalar_oracle():
    V = 6
    p = init_params(V, 3, 4, seed=0)
    rc_map = np.array([3, 2, 1, 0, 5, 5])
    toks = [0, 4, 2, 1, 3]
    probs, _ = forward_sequence(p, toks, rc_map)
    ref = np.array(scalar_log_probs(p, toks, rc_map))
    assert np.max(np.abs(np.log(probs) - ref)) < 1e-10


def test_target_never_visible():
    # changing word t+1 must not change the prediction row for it
    p = init_params(8, 3, 4, seed=2)
    rc_map = np.arange(8)[::-1].copy()
    base = np.array([1, 2, 3, 4, 5, 6])
    probs, _ = forward_sequence(p, base, rc_map)
    for t in range(5):
        mod = base.copy()
        mod[t + 1] = 0
        probs2, _ = forward_sequence(p, mod, rc_map)
        assert np.array_equal(probs[t], probs2[t])


def test_id_out_of_range():
    with pytest.raises(ValidationError):
        forward_sequence(init_params(4, 2, 2), [0, 4])


def test_uniform_loss_is_log_v():
    p = zero_model(256)
    toks = np.random.default_rng(0).integers(0, 256, (3, 10))
    loss, _ = loss_and_grads(p, toks)
    assert loss == pytest.approx(math.log(256), abs=1e-12)


def _numeric_grad_check(V, E, H, M, b, seed, eps=1e-4):
    p = init_params(V, E, H, seed)
    rng = np.random.default_rng(seed + 100)
    rc_map = rng.permutation(V)
    toks = rng.integers(0, V, (b, M))
    _, grads = loss_and_grads(p, toks, rc_map)
    worst = 0.0
    for name, arr in p.items():
        g = grads[name]
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            lp, _ = loss_and_grads(p, toks, rc_map)
            arr[idx] = old - eps
            lm, _ = loss_and_grads(p, toks, rc_map)
            arr[idx] = old
            num = (lp - lm) / (2 * eps)
            denom = max(abs(num), abs(g[idx]), 1e-6)
            worst = max(worst, abs(num - g[idx]) / denom)
    return worst


def test_gradient_check_small():
    assert _numeric_grad_check(V=5, E=2, H=3, M=4, b=2, seed=1) < 1e-4


def test_gradient_check_m2():
    # M=2 leaves the backward layer with no input
    assert _numeric_grad_check(V=4, E=2, H=2, M=2, b=3, seed=2) < 1e-4


def test_sgd_step_decreases_batch_loss():
    p = init_params(10, 4, 6, seed=3)
    toks = np.random.default_rng(3).integers(0, 10, (2, 6))
    loss0, grads = loss_and_grads(p, toks)
    cfg = TrainConfig(learning_rate=1e-3, optimizer="sgd", clip_norm=1e9)
    loss1, _ = loss_and_grads(clip_and_update(p, grads, cfg), toks)
    assert loss1 < loss0


def test_clip_halves_norm_ten():
    g = zero_model(4)
    g["b_y"] = np.array([6.0, 8.0, 0.0, 0.0])
    clipped, norm = clip_gradients(g, 5.0)
    assert norm == pytest.approx(10.0)
    assert np.allclose(clipped["b_y"], g["b_y"] / 2)


def test_clip_passthrough_under_cap():
    g = zero_model(4)
    g["b_y"] = np.array([0.6, 0.8, 0.0, 0.0])
    clipped, _ = clip_gradients(g, 5.0)
    assert np.array_equal(clipped["b_y"], g["b_y"])


def test_adam_zero_grads_leave_params():
    p = init_params(5, 3, 2, seed=0)
    opt = Adam(1e-3)
    out = p
    for _ in range(3):
        out = opt.step(out, p.zeros_like())
    assert all(np.array_equal(out[k], p[k]) for k, _ in p.items())


def test_sgd_step_formula():
    p = init_params(5, 3, 2, seed=0)
    g = init_params(5, 3, 2, seed=1)
    out = Sgd(0.1).step(p, g)
    assert np.allclose(out["emb"], p["emb"] - 0.1 * g["emb"])


def test_uniform_perplexity_is_v():
    p = zero_model(256)
    stream = np.random.default_rng(0).integers(0, 256, 1234)
    assert perplexity(p, stream, M=50) == pytest.approx(256, abs=0.01)


def test_perfect_model_perplexity_one():
    # a constant stream and a huge bias on its word
    p = zero_model(5)
    p["b_y"] = np.array([0, 0, 200.0, 0, 0])
    assert perplexity(p, np.full(30, 2), M=7) == pytest.approx(1.0, abs=1e-12)


def test_perplexity_needs_two_tokens():
    with pytest.raises(ValidationError):
        perplexity(zero_model(4), [1], M=5)


def test_trailing_window_counted():
    # 12 tokens, M=5: two full windows (8 predictions) + tail of 2 (1 prediction)
    p = init_params(6, 2, 3, seed=0)
    stream = np.random.default_rng(1).integers(0, 6, 12)
    rc = np.arange(6)
    s1, c1 = lstm.negative_log_likelihood(p, stream[:10].reshape(2, 5), rc)
    s2, c2 = lstm.negative_log_likelihood(p, stream[None, 10:], rc)
    assert c1 + c2 == 9
    assert perplexity(p, stream, 5, rc) == pytest.approx(math.exp((s1 + s2) / 9), rel=1e-14)


def test_loss_deterministic():
    toks = np.random.default_rng(0).integers(0, 9, (2, 7))
    a, _ = loss_and_grads(init_params(9, 3, 4, seed=11), toks)
    b, _ = loss_and_grads(init_params(9, 3, 4, seed=11), toks)
    assert a == b


def test_checkpoint_round_trip(tmp_path):
    p = init_params(9, 3, 4, seed=5)
    path = tmp_path / "m.bin"
    lstm.save_model(path, p, w=2, M=6)
    assert path.read_bytes().startswith(b"LSHALIGN-MODEL")
    q, w, M = lstm.load_model(path)
    assert (w, M) == (2, 6)
    stream = np.random.default_rng(0).integers(0, 9, 40)
    assert perplexity(p, stream, 6) == perplexity(q, stream, 6)


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "m.bin"
    lstm.save_model(path, init_params(4, 2, 2), w=1, M=3)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(Exception, match="truncated"):
        lstm.load_model(path)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ConfigError):
        TrainConfig(M=1)


def test_estimator_fit_and_params():
    rng = np.random.default_rng(0)
    stream = np.tile(rng.integers(0, 6, 12), 40)
    est = BiLstmLanguageModel(hidden_size=6, embed_size=4, words_per_seq=12, batch_seqs=2, epochs=3,
                              learning_rate=1e-2, seed=0)
    assert est.get_params()["hidden_size"] == 6
    est.fit(stream, vocab_size=7)
    assert len(est.perplexity_) == 3
    assert est.perplexity_[-1] < est.perplexity_[0] < 7
    emb = est.transform(stream[:24].reshape(2, 12))
    assert emb.shape == (2, 12)


def test_estimator_zero_epochs(caplog):
    est = BiLstmLanguageModel(hidden_size=2, embed_size=2, words_per_seq=4, batch_seqs=1, epochs=0)
    with caplog.at_level("WARNING"):
        est.fit(np.arange(40) % 5, vocab_size=5)
    assert est.perplexity_ == [] and "epochs=0" in caplog.text
