import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lshalign import lsh
from lshalign.errors import ConfigError, EmptyInputError, ValidationError
from lshalign.lsh import HashFamily, HyperplaneLSH, build_index, candidates, estimate_sensitivity, signature

vectors = st.lists(st.floats(-10, 10, allow_nan=False), min_size=8, max_size=8).map(np.array)


@settings(max_examples=50)
@given(vectors, st.floats(1e-3, 1e3))
def test_scale_invariance(v, c):
    fam = HashFamily.random(12, 3, 8, seed=0)
    for t in range(3):
        assert signature(fam, t, v) == signature(fam, t, c * v)


@settings(max_examples=50)
@given(vectors)
def test_negation_complements(v):
    fam = HashFamily.random(12, 1, 8, seed=1)
    if np.any(fam.planes[0] @ v == 0):
        return
    a, b = signature(fam, 0, v), signature(fam, 0, -v)
    assert all(x != y for x, y in zip(a, b))


def test_zero_vector_all_ones(caplog):
    fam = HashFamily.random(6, 1, 4)
    with caplog.at_level("WARNING"):
        assert signature(fam, 0, np.zeros(4)) == "111111"
    assert "zero vector" in caplog.text


def test_dimension_mismatch():
    with pytest.raises(ConfigError):
        signature(HashFamily.random(4, 1, 4), 0, np.ones(5))


def test_single_window_store():
    fam = HashFamily.random(8, 5, 6, seed=2)
    idx = build_index(fam, np.ones((1, 6)))
    assert all(len(t) == 1 and len(next(iter(t.values()))) == 1 for t in idx.tables)


def test_duplicates_share_buckets():
    fam = HashFamily.random(8, 4, 6, seed=2)
    v = np.random.default_rng(0).normal(size=6)
    sigs = lsh.signatures(fam, np.stack([v, v]))
    assert np.array_equal(sigs[0], sigs[1])


def test_entry_count_and_once_per_table():
    X = np.random.default_rng(0).normal(size=(1000, 32))
    fam = HashFamily.random(16, 8, 32, seed=3)
    idx = build_index(fam, X)
    assert idx.total_entries == 8000
    for table in idx.tables:
        rows = np.sort(np.concatenate(list(table.values())))
        assert np.array_equal(rows, np.arange(1000))


def test_empty_store():
    with pytest.raises(EmptyInputError):
        build_index(HashFamily.random(4, 1, 3), np.zeros((0, 3)))


def test_candidate_soundness_and_order():
    X = np.random.default_rng(1).normal(size=(200, 16))
    fam = HashFamily.random(4, 3, 16, seed=4)
    idx = build_index(fam, X)
    for k in (0, 57, 199):
        c = candidates(idx, fam, X[k])
        assert k in c and np.all(np.diff(c) > 0)


def test_far_query_gets_empty_set():
    # constructed planes: every stored vector has all-positive dots, the query all-negative
    planes = np.eye(3)[None, :, :]
    fam = HashFamily(planes, np.zeros((1, 3)))
    idx = build_index(fam, np.array([[1.0, 2.0, 3.0], [0.5, 0.1, 9.0]]))
    assert candidates(idx, fam, np.array([-1.0, -1.0, -1.0])).size == 0


def test_determinism():
    X = np.random.default_rng(2).normal(size=(50, 10))
    a = HyperplaneLSH(6, 4, seed=9).fit(X)
    b = HyperplaneLSH(6, 4, seed=9).fit(X)
    assert np.array_equal(a.family_.planes, b.family_.planes)
    assert np.array_equal(a.transform(X), b.transform(X))
    assert np.array_equal(a.candidates(X[3]), b.candidates(X[3]))


def test_block_tables_see_one_half():
    fam = HashFamily.random(5, 4, 10, seed=0, n_blocks=2)
    assert not fam.planes[0][:, 5:].any() and not fam.planes[1][:, :5].any()
    assert fam.planes[2][:, :5].any()


def test_whitened_index_is_sound():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 8)) @ rng.normal(size=(8, 8)) + 50.0
    est = HyperplaneLSH(8, 6, n_blocks=2, whiten=True, seed=1).fit(X)
    for k in range(0, 300, 37):
        assert k in est.candidates(X[k])
    # centering spreads rows over many buckets instead of one
    assert len(est.index_.tables[0]) > 20


def test_estimator_params():
    assert HyperplaneLSH().get_params()["n_bits"] == 12


def test_index_file_round_trip(tmp_path):
    X = np.random.default_rng(4).normal(size=(120, 6))
    est = HyperplaneLSH(5, 3, n_blocks=2, whiten=True, seed=7).fit(X)
    path = tmp_path / "i.idx"
    est.save(path)
    assert path.read_bytes().startswith(b"LSHALIGN-IDX")
    back = HyperplaneLSH.load(path)
    assert back.family_.seed == 7
    assert np.array_equal(back.family_.planes, est.family_.planes)
    assert np.array_equal(back.family_.offsets, est.family_.offsets)
    for t1, t2 in zip(est.index_.tables, back.index_.tables):
        assert t1.keys() == t2.keys() and all(np.array_equal(t1[k], t2[k]) for k in t1)


def test_negative_seed_rejected():
    with pytest.raises(ConfigError):
        HashFamily.random(4, 1, 4, seed=-1)


def test_pair_at_angle_exact():
    rng = np.random.default_rng(0)
    for theta in (0.1, 1.0, 3.0):
        x, y = lsh.pair_at_angle(rng, 16, theta)
        assert math.acos(np.clip(x @ y, -1, 1)) == pytest.approx(theta, abs=1e-9)


def test_d1_zero_collides_always():
    rep = estimate_sensitivity(K=3, dim=16, d1=0.0, d2=1.0, trials=500, seed=0)
    assert rep.p1_hat == 1.0 and rep.ok


@pytest.mark.parametrize("d1, d2, trials", [(0.5, 0.5, 10), (0.8, 0.2, 10), (0.1, 0.5, 0), (-0.1, 0.5, 10)])
def test_sensitivity_validation(d1, d2, trials):
    with pytest.raises(ValidationError):
        estimate_sensitivity(1, 8, d1, d2, trials)


def test_sensitivity_report_text():
    rep = estimate_sensitivity(1, 8, math.pi / 12, 5 * math.pi / 12, 2000, seed=0)
    text = rep.to_text()
    assert "sensitive\tyes" in text and "p1_closed_form\t0.916667" in text
