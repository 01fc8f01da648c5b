import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kernelgp.data_io import (
    DataError, Dataset, ScalingParams, largest_remainder, load_csv, scale_apply, scale_fit,
    stratified_folds,
)

from . import oracles


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_bytes(text.encode())
    return path


def test_load_basic(tmp_path):
    data = load_csv(write(tmp_path, "a,b,cls\n1,2,x\n3,4,y\n5,6,x\n"))
    assert (data.d, len(data)) == (2, 3)
    assert data.y.tolist() == [0, 1, 0]
    assert data.label_names == ("x", "y")
    assert data.name == "d"
    assert data.class_counts() == {0: 2, 1: 1}


def test_load_label_first_no_header_crlf(tmp_path):
    data = load_csv(write(tmp_path, "b,1,2\r\na,3,4\r\n"), label_column="first", header=False)
    assert data.X.tolist() == [[1, 2], [3, 4]]
    assert data.label_names == ("b", "a")


def test_load_numeric_labels_keep_appearance_order(tmp_path):
    data = load_csv(write(tmp_path, "f,c\n0.5,4\n0.1,2\n0.2,4\n"))
    assert data.y.tolist() == [0, 1, 0]
    assert data.label_names == ("4", "2")


@pytest.mark.parametrize("text, message", [
    ("a,b,c\n1,2,x\n3,y\n", "row 3"),
    ("a,b,c\n1,2,x\n3,oops,y\n", "row 3, column 2"),
    ("a,b,c\n1,2,x\n3,4,x\n", "2 classes"),
    ("a,b,c\n", "no data"),
    ("a,b,c\n1,inf,x\n2,3,y\n", "non-finite"),
])
def test_load_errors(tmp_path, text, message):
    with pytest.raises(DataError, match=message):
        load_csv(write(tmp_path, text))


def test_load_missing_file(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        load_csv(tmp_path / "absent.csv")


def test_load_bad_flag(tmp_path):
    with pytest.raises(DataError):
        load_csv(write(tmp_path, "1,x\n2,y\n"), label_column="middle")


def test_shipped_datasets():
    shapes = {"bcw": (683, 9, 2), "pid": (768, 8, 2), "bld": (345, 6, 2)}
    for name, (n, d, k) in shapes.items():
        data = load_csv(f"data/{name}.csv")
        assert (len(data), data.d, data.n_classes) == (n, d, k)


def test_scaling_examples():
    params = scale_fit(np.array([[2.0, 7.0], [4.0, 7.0]]))
    out = scale_apply(params, np.array([[3.0, 7.0], [6.0, 1.0], [0.0, 9.0]]))
    assert out.tolist() == [[0.5, 0.0], [2.0, 0.0], [-1.0, 0.0]]


def test_scaling_params_round_trip():
    params = scale_fit(np.array([[1.0, -2.0], [3.0, 5.0]]))
    again = ScalingParams.from_dict(params.to_dict())
    assert again.minimum.tolist() == params.minimum.tolist()
    assert again.maximum.tolist() == params.maximum.tolist()


def test_scaling_empty():
    with pytest.raises(DataError):
        scale_fit(np.zeros((0, 3)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 100), st.floats(-100, 100))
def test_scaling_removes_affine_reparameterization(seed, a, b):
    rng = np.random.default_rng(seed)
    train, query = rng.normal(size=(12, 3)), rng.normal(size=(4, 3))
    y = np.arange(12) % 2
    plain = scale_apply(scale_fit(train), train), scale_apply(scale_fit(train), query)
    moved = a * train + b, a * query + b
    again = scale_apply(scale_fit(moved[0]), moved[0]), scale_apply(scale_fit(moved[0]), moved[1])
    np.testing.assert_allclose(again[0], plain[0], atol=1e-9)
    np.testing.assert_allclose(again[1], plain[1], atol=1e-6)
    rows = list(zip(plain[0].tolist(), y.tolist()))
    rows2 = list(zip(again[0].tolist(), y.tolist()))
    for q, q2 in zip(plain[1].tolist(), again[1].tolist()):
        assert oracles.knn_euclid(rows, q, 1) == oracles.knn_euclid(rows2, q2, 1)


@pytest.mark.parametrize("total, weights, expected", [
    (3, [4, 2], [2, 1]),
    (4, [7, 3], [3, 1]),
    (1, [1, 1], [1, 0]),
    (10, [1, 1, 1], [4, 3, 3]),
])
def test_largest_remainder(total, weights, expected):
    assert largest_remainder(total, weights) == expected


def test_folds_balanced():
    y = np.repeat([0, 1], 50)
    plan = stratified_folds(y, 10, random.Random(0))
    for f in range(10):
        assert np.bincount(y[plan.test(f)]).tolist() == [5, 5]


def test_folds_bcw_shape():
    y = np.array([0] * 444 + [1] * 239)
    plan = stratified_folds(y, 10, random.Random(3))
    for f in range(10):
        test = plan.test(f)
        assert len(test) in (68, 69)
        counts = np.bincount(y[test], minlength=2)
        assert abs(counts[0] - 44.4) <= 1 and abs(counts[1] - 23.9) <= 1


def test_folds_class_too_small():
    with pytest.raises(DataError, match="fewer than"):
        stratified_folds(np.array([0] * 20 + [1] * 3), 5, random.Random(0))
    with pytest.raises(DataError):
        stratified_folds(np.array([0, 1] * 5), 1, random.Random(0))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(10, 60), min_size=2, max_size=4), st.integers(2, 10),
       st.integers(0, 10**6))
def test_folds_partition_and_stratify(counts, k, seed):
    y = np.repeat(np.arange(len(counts)), counts)
    rng = np.random.default_rng(seed)
    y = y[rng.permutation(len(y))]
    plan = stratified_folds(y, k, random.Random(seed))
    every = np.concatenate([plan.test(f) for f in range(k)])
    assert sorted(every.tolist()) == list(range(len(y)))
    sizes = [len(plan.test(f)) for f in range(k)]
    assert max(sizes) - min(sizes) <= 1
    for f in range(k):
        assert sorted(plan.train(f).tolist() + plan.test(f).tolist()) == list(range(len(y)))
        per_class = np.bincount(y[plan.test(f)], minlength=len(counts))
        for c, n_c in enumerate(counts):
            assert abs(per_class[c] - n_c / k) < 1


def test_folds_deterministic():
    y = np.repeat([0, 1, 2], [30, 20, 15])
    a = stratified_folds(y, 5, random.Random(11))
    b = stratified_folds(y, 5, random.Random(11))
    c = stratified_folds(y, 5, random.Random(12))
    assert all(np.array_equal(a.test(f), b.test(f)) for f in range(5))
    assert any(not np.array_equal(a.test(f), c.test(f)) for f in range(5))


def test_dataset_subset_and_examples():
    data = Dataset("t", np.arange(8.0).reshape(4, 2), np.array([0, 1, 0, 1]), ("a", "b"))
    sub = data.subset([3, 1])
    assert sub.X.tolist() == [[6, 7], [2, 3]]
    assert sub.label_names == ("a", "b")
    view = data.examples([2, 0])
    assert view.index.tolist() == [2, 0]
    with pytest.raises(DataError):
        Dataset("bad", np.zeros((3, 2)), np.zeros(2, dtype=int))
