import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamal import data


def test_noise_free_synthetic_is_separated_by_x2():
    X, y, _ = data.synthetic_arrays(2000, 0.0, 1, allow_noise_free=True)
    assert np.all(y == np.where(X[:, 1] >= 0, 0, 1))


def test_group_sizes_for_n1000_alpha02():
    _, _, g = data.synthetic_arrays(1000, 0.2, 0)
    assert np.bincount(g).tolist() == [400, 400, 100, 100]


def test_rejects_invalid_alpha_and_tiny_n():
    for alpha in (0.5, 0.7, -0.1, 0.0):
        with pytest.raises(ValueError, match="alpha"):
            data.generate_synthetic(100, alpha, 0)
    with pytest.raises(ValueError):
        data.generate_synthetic(3, 0.2, 0)


def test_noise_lies_in_the_boxes():
    X, y, g = data.synthetic_arrays(4000, 0.3, 5)
    noise = g >= 2
    assert np.all((X[noise, 0] >= 0) & (X[noise, 0] <= 3))
    assert np.all(np.abs(X[noise, 1]) <= 3)
    # the noise carries the label opposite to its side of x2 = 0
    assert np.all(y[noise] == np.where(X[noise, 1] >= 0, 1, 0))
    # exponential groups are strictly on their side
    assert np.all(X[g == 0, 1] >= 0) and np.all(X[g == 1, 1] <= 0)
    assert np.all(X[g < 2, 0] >= 0)


def test_synthetic_deterministic():
    a = data.generate_synthetic(500, 0.2, 9)
    b = data.generate_synthetic(500, 0.2, 9)
    assert a.checksum() == b.checksum()
    assert a.checksum() != data.generate_synthetic(500, 0.2, 10).checksum()


def test_exponential_marginal_mean():
    X, _, g = data.synthetic_arrays(40000, 0.2, 2)
    # unit exponential has mean 1
    assert abs(X[g == 0, 0].mean() - 1.0) < 0.03


def test_csv_roundtrip(tmp_path):
    ds = data.generate_synthetic(50, 0.2, 1)
    p = tmp_path / "d.csv"
    data.write_csv(ds, p)
    back = data.load_csv(p)
    np.testing.assert_array_equal(back.X, ds.X)
    # labels are remapped by first appearance, so compare through the names
    names = np.array([int(n) for n in back.label_names])
    np.testing.assert_array_equal(names[back.y], ds.y)
    assert back.feature_names == ("x1", "x2")


def test_csv_label_mapping_and_column_choice(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("cls,a,b\ng,1,2\nh,3,4\ng,5,6\n")
    ds = data.load_csv(p, label_column="cls")
    assert ds.label_names == ("g", "h")
    assert ds.y.tolist() == [0, 1, 0]
    assert ds.X.tolist() == [[1, 2], [3, 4], [5, 6]]
    assert data.load_csv(p, label_column=0).label_names == ("g", "h")


def test_csv_errors(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    with pytest.raises(data.DataFormatError, match="empty"):
        data.load_csv(empty)
    bad = tmp_path / "b.csv"
    bad.write_text("a,b,y\n1,2,0\n3,x,1\n")
    with pytest.raises(data.DataParseError) as err:
        data.load_csv(bad)
    assert err.value.row == 2
    ragged = tmp_path / "r.csv"
    ragged.write_text("a,b,y\n1,2,0\n3,1\n")
    with pytest.raises(data.DataFormatError, match="row 2"):
        data.load_csv(ragged)
    with pytest.raises(data.DataFormatError, match="label"):
        data.load_csv(ragged, label_column="nope")


def test_split_sizes_example():
    assert data.split_sizes(1000, data.SplitSpec()) == (50, 750, 100, 100)


def test_split_spec_validation():
    with pytest.raises(ValueError, match="sum"):
        data.SplitSpec(0.1, 0.7, 0.1, 0.2)
    with pytest.raises(ValueError):
        data.SplitSpec(0.0, 0.8, 0.1, 0.1)


@settings(max_examples=40, deadline=None)
@given(st.integers(40, 600), st.integers(0, 2**31))
def test_split_partitions_the_data(n, seed):
    ds = data.generate_synthetic(n, 0.2, seed)
    parts = data.split(ds, data.SplitSpec(), seed)
    sizes = [len(p) for p in parts]
    assert tuple(sizes) == data.split_sizes(n, data.SplitSpec())
    # multiset of rows is preserved: compare sorted rows of all parts
    joined = data.concat(list(parts))
    a = np.lexsort(np.column_stack([ds.X, ds.y]).T)
    b = np.lexsort(np.column_stack([joined.X, joined.y]).T)
    np.testing.assert_array_equal(ds.X[a], joined.X[b])
    np.testing.assert_array_equal(ds.y[a], joined.y[b])
    assert set(parts.initial.y.tolist()) == set(ds.y.tolist())


def test_split_covers_rare_class():
    y = np.zeros(200, dtype=int)
    y[:2] = 1
    ds = data.Dataset(np.arange(200.0)[:, None], y, 2)
    for seed in range(20):
        assert set(data.split(ds, data.SplitSpec(), seed).initial.y.tolist()) == {0, 1}


def test_standardize_uses_source_stats_only():
    ds = data.generate_synthetic(400, 0.2, 4)
    sp = data.split(ds, data.SplitSpec(), 4)
    parts, stats = data.standardize(sp.initial, list(sp))
    np.testing.assert_allclose(parts[0].X.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(parts[0].X.std(axis=0), 1, atol=1e-12)
    np.testing.assert_allclose(parts[1].X, (sp.stream.X - sp.initial.X.mean(0)) / sp.initial.X.std(0))


def test_standardize_constant_feature():
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    ds = data.Dataset(X, np.zeros(10, dtype=int), 1)
    (out,), stats = data.standardize(ds, [ds])
    assert np.all(np.isfinite(out.X))
    assert np.all(out.X[:, 0] == 0)


def test_dataset_is_immutable():
    ds = data.generate_synthetic(20, 0.2, 0)
    with pytest.raises(ValueError):
        ds.X[0, 0] = 1.0


def test_write_csv_header(tmp_path):
    ds = data.generate_synthetic(10, 0.2, 0)
    p = tmp_path / "x.csv"
    data.write_csv(ds, p)
    with p.open() as fh:
        assert next(csv.reader(fh)) == ["x1", "x2", "y"]
