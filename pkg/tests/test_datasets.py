import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mpkm.algebra import encode_differential
from mpkm.arith import FixedArithmetic
from mpkm.datasets import (
    Dataset,
    apply_ranges,
    fit_ranges,
    kfold,
    load_csv,
    load_ranges,
    normalize,
    save_ranges,
    select_stored,
    truncate,
)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoad:
    def test_three_rows(self, tmp_path):
        ds = load_csv(write(tmp_path, "a,b,y\n1,2,1\n3,4,0\n5,6,1\n"))
        assert len(ds) == 3 and ds.dims == 2
        yp, ym = ds.label_pairs
        np.testing.assert_array_equal(yp, [1, 0, 1])
        np.testing.assert_array_equal(ym, [0, 1, 0])

    def test_label_by_name_and_ignore(self, tmp_path):
        p = write(tmp_path, "date,y,t\nmon,0,1.5\ntue,1,2.5\n")
        ds = load_csv(p, "y", ignore_columns=("date",))
        assert ds.columns == ("t",)
        np.testing.assert_array_equal(ds.labels, [0, 1])

    def test_signed_labels(self, tmp_path):
        ds = load_csv(write(tmp_path, "a,y\n1,-1\n2,1\n"))
        np.testing.assert_array_equal(ds.labels, [0, 1])

    def test_missing_value_names_row(self, tmp_path):
        with pytest.raises(ValueError, match="row 3"):
            load_csv(write(tmp_path, "a,b,y\n1,2,1\n3,,0\n"))

    def test_non_numeric_names_row(self, tmp_path):
        with pytest.raises(ValueError, match="row 4"):
            load_csv(write(tmp_path, "a,y\n1,1\n2,0\nx,1\n"))

    def test_non_binary(self, tmp_path):
        with pytest.raises(ValueError, match="binary"):
            load_csv(write(tmp_path, "a,y\n1,0\n2,2\n"))

    def test_unknown_label_column(self, tmp_path):
        with pytest.raises(ValueError, match="label column"):
            load_csv(write(tmp_path, "a,y\n1,0\n"), "z")

    def test_malformed(self, tmp_path):
        with pytest.raises(ValueError):
            load_csv(write(tmp_path, "a,y\n1,0\n2,1,5,6\n"))

    def test_empty(self, tmp_path):
        with pytest.raises(ValueError):
            load_csv(write(tmp_path, "a,y\n"))


class TestNormalize:
    def test_endpoints_and_constant(self):
        ds = Dataset(np.array([[0.0, 3.0], [10.0, 3.0], [5.0, 3.0]]), np.array([0, 1, 0]))
        out = normalize(ds).features
        np.testing.assert_array_equal(out[:, 0], [-1.0, 1.0, 0.0])
        np.testing.assert_array_equal(out[:, 1], 0.0)

    def test_stored_ranges_round_trip(self, tmp_path, rng):
        train = rng.uniform(-5, 5, (20, 3))
        ranges = fit_ranges(train)
        save_ranges(tmp_path / "r.txt", ranges)
        loaded = load_ranges(tmp_path / "r.txt")
        new = rng.uniform(-5, 5, (4, 3))
        np.testing.assert_array_equal(apply_ranges(new, loaded), apply_ranges(new, ranges))

    def test_bad_ranges_file(self, tmp_path):
        with pytest.raises(ValueError):
            load_ranges(write(tmp_path, "nope\n", "r.txt"))

    def test_out_of_range_clipped(self):
        assert apply_ranges(np.array([[20.0]]), (np.array([0.0]), np.array([10.0])))[0, 0] == 1.0

    @given(arrays(np.float64, (6, 2), elements=st.floats(-100, 100)))
    def test_monotone_and_idempotent(self, x):
        y = apply_ranges(x, fit_ranges(x))
        for c in range(2):
            order = np.argsort(x[:, c], kind="stable")
            assert np.all(np.diff(y[order, c]) >= 0)
        np.testing.assert_allclose(apply_ranges(y, fit_ranges(y)), y, atol=1e-12)
        assert np.all(np.abs(y) <= 1.0)
        enc = encode_differential(y, FixedArithmetic())
        enc.check(FixedArithmetic())


class TestSplits:
    def test_four_folds(self):
        spec = kfold(256, 4, seed=0)
        assert len(spec) == 4
        for tr, te in spec:
            assert (len(tr), len(te)) == (192, 64)
        every = np.sort(np.concatenate([te for _, te in spec]))
        np.testing.assert_array_equal(every, np.arange(256))

    def test_deterministic(self):
        a, b = kfold(50, 5, seed=3), kfold(50, 5, seed=3)
        for (ta, sa), (tb, sb) in zip(a, b):
            np.testing.assert_array_equal(ta, tb)
            np.testing.assert_array_equal(sa, sb)

    def test_single_fold_warns(self):
        with pytest.warns(UserWarning):
            spec = kfold(10, 1)
        tr, te = spec.folds[0]
        np.testing.assert_array_equal(tr, te)

    def test_too_many_folds(self):
        with pytest.raises(ValueError):
            kfold(3, 4)

    def test_select_stored(self):
        np.testing.assert_array_equal(select_stored(np.zeros((10, 2)), 4), [0, 1, 2, 3])
        r = select_stored(np.zeros((10, 2)), 4, "random", seed=1)
        assert len(set(r)) == 4
        np.testing.assert_array_equal(r, select_stored(np.zeros((10, 2)), 4, "random", seed=1))
        with pytest.raises(ValueError):
            select_stored(np.zeros((3, 2)), 4)
        with pytest.raises(ValueError):
            select_stored(np.zeros((3, 2)), 2, "best")

    def test_truncate(self, rng):
        ds = Dataset(rng.normal(size=(500, 2)), rng.integers(0, 2, 500))
        t = truncate(ds, 256, seed=0)
        assert len(t) == 256
        np.testing.assert_array_equal(t.features, truncate(ds, 256, seed=0).features)
        assert truncate(ds, 1000) is ds
