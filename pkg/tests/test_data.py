import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nnkood.data import (_place_means, check_labels, generate_synthetic, is_unit_normalized, l2_normalize,
                         load_embeddings, load_labels, save_embeddings, save_labels)
from nnkood.errors import DataError, FormatError, GenerationError, ShapeError


def test_csv_parse(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,0\n0,1\n1,1\n")
    assert load_embeddings(p).tolist() == [[1, 0], [0, 1], [1, 1]]


def test_csv_header_is_skipped(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1.5,2\n")
    assert load_embeddings(p).tolist() == [[1.5, 2.0]]


def test_csv_arity_mismatch(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2,3\n4,5\n")
    with pytest.raises(FormatError):
        load_embeddings(p)


def test_csv_non_finite(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,nan\n")
    with pytest.raises(DataError, match="row 0"):
        load_embeddings(p)


def test_npy_float32_widened_exactly(tmp_path):
    X = np.random.default_rng(0).standard_normal((5, 4)).astype(np.float32)
    p = tmp_path / "x.npy"
    np.save(p, X)
    Y = load_embeddings(p)
    assert Y.dtype == np.float64 and Y.shape == (5, 4)
    assert np.array_equal(Y, X.astype(np.float64))


def test_npy_rejects_bad_files(tmp_path):
    p = tmp_path / "x.npy"
    np.save(p, np.zeros((2, 3, 4)))
    with pytest.raises(FormatError):
        load_embeddings(p)
    np.save(p, np.zeros((2, 3), dtype=np.int64))
    with pytest.raises(FormatError):
        load_embeddings(p)
    np.save(p, np.zeros((4, 3)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FormatError, match="truncated"):
        load_embeddings(p)
    p.write_bytes(b"not an npy file at all")
    with pytest.raises(FormatError):
        load_embeddings(p)


@pytest.mark.parametrize("ext", ["npy", "csv"])
def test_round_trip_is_exact(tmp_path, ext):
    X = np.random.default_rng(1).standard_normal((7, 3)) * 1e3
    p = tmp_path / f"x.{ext}"
    save_embeddings(p, X)
    assert np.array_equal(load_embeddings(p), X)


def test_labels_round_trip(tmp_path):
    p = tmp_path / "y.csv"
    save_labels(p, [0, 2, 1])
    assert load_labels(p).tolist() == [0, 2, 1]
    p.write_text("label\n1\n0\n")
    assert load_labels(p).tolist() == [1, 0]
    p.write_text("1\nx\n")
    with pytest.raises(FormatError):
        load_labels(p)


def test_check_labels():
    assert check_labels(np.array([0, 1, 2, 1]), 4) == 3
    with pytest.raises(ShapeError):
        check_labels(np.array([0, 1]), 3)
    with pytest.raises(DataError):
        check_labels(np.array([0, 2]), 2)
    with pytest.raises(DataError):
        check_labels(np.array([-1, 0]), 2)


def test_normalize_examples():
    assert l2_normalize([[3.0, 4.0]]).tolist() == [[0.6, 0.8]]
    assert l2_normalize([[1.0, 0.0], [0.0, 2.0]]).tolist() == [[1.0, 0.0], [0.0, 1.0]]
    with pytest.raises(DataError, match="row 1"):
        l2_normalize([[1.0, 0.0], [0.0, 0.0]])


rows = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)),
              elements=st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-3))


@settings(max_examples=150, deadline=None)
@given(rows)
def test_normalize_unit_and_idempotent(X):
    Y = l2_normalize(X)
    assert is_unit_normalized(Y, 1e-12)
    np.testing.assert_allclose(l2_normalize(Y), Y, rtol=0, atol=1e-15)
    # direction is preserved
    np.testing.assert_allclose(Y * np.linalg.norm(X, axis=1, keepdims=True), X, rtol=1e-12)


def test_synthetic_contract():
    ds = generate_synthetic(3, 1, 100, 8, 6.0, 1.0, seed=7)
    assert ds.train_id.shape == (300, 8)
    assert set(ds.train_labels.tolist()) == {0, 1, 2}
    assert ds.test.shape == (400, 8)
    assert np.array_equal(ds.test_is_ood, ds.test_labels == 3)
    assert ds.test_is_ood.sum() == 100
    assert ds.train_logits.shape == (300, 3) and ds.test_logits.shape == (400, 3)


def test_synthetic_sizes_override():
    ds = generate_synthetic(3, 1, 100, 8, 6.0, 1.0, seed=0, n_train=500, n_test_id=300, n_test_ood=300)
    assert ds.train_id.shape[0] == 500
    assert np.bincount(ds.train_labels).tolist() == [167, 167, 166]
    assert (~ds.test_is_ood).sum() == 300 and ds.test_is_ood.sum() == 300


def test_synthetic_deterministic():
    a = generate_synthetic(3, 1, 100, 8, 6.0, 1.0, seed=7)
    b = generate_synthetic(3, 1, 100, 8, 6.0, 1.0, seed=7)
    for f in ("train_id", "test", "test_is_ood", "train_labels", "test_labels", "train_logits", "test_logits"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    c = generate_synthetic(3, 1, 100, 8, 6.0, 1.0, seed=8)
    assert not np.array_equal(a.train_id, c.train_id)


@pytest.mark.parametrize("args", [(1, 1, 50, 2, 6.0, 1.0, 1), (3, 1, 100, 8, 6.0, 1.0, 0), (5, 3, 10, 3, 4.0, 0.5, 2)])
def test_synthetic_separation(args):
    ds = generate_synthetic(*args)
    sep = args[4] * args[5]
    for a, b in itertools.combinations(ds.means, 2):
        assert np.sqrt(np.sum((a - b) ** 2)) >= sep


def test_synthetic_logits_peak_at_own_class():
    ds = generate_synthetic(3, 1, 100, 8, 6.0, 1.0, seed=3)
    assert np.mean(ds.train_logits.argmax(1) == ds.train_labels) > 0.99


def test_mean_placement_gives_up():
    # ten means 5 apart cannot fit when they are sampled with spread 0.1
    rng = np.random.default_rng(0)
    with pytest.raises(GenerationError, match="1000 attempts"):
        _place_means(rng, 10, 2, 5.0, 0.1)


def test_synthetic_rejects_bad_arguments():
    with pytest.raises(ValueError):
        generate_synthetic(0, 1, 10, 2, 6.0, 1.0, seed=0)
    with pytest.raises(ValueError):
        generate_synthetic(2, 1, 10, 2, 6.0, 0.0, seed=0)
