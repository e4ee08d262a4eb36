"""Dataset construction, CSV loading, group partitioning, standardization."""

import numpy as np
import pytest

from ppt.dataset import (
    group_index,
    load_dataset,
    make_dataset,
    relabel_groups,
    standardize,
    unstandardize,
)


def small_ds():
    return make_dataset(
        x=np.array([[0.0], [1.0], [2.0], [3.0]]),
        y=np.array([0.5, 1.5, 2.5, 3.5]),
        z=np.array([1, 1, 2, 2]),
    )


class TestMakeDataset:
    def test_shapes_and_properties(self):
        ds = small_ds()
        assert ds.n == 4 and ds.d == 1 and ds.n_groups == 2
        assert ds.x.shape == (4, 1)

    def test_arrays_read_only(self):
        ds = small_ds()
        with pytest.raises(ValueError):
            ds.y[0] = 9.0

    def test_one_dim_x_promoted_to_column(self):
        ds = make_dataset(x=np.arange(3.0), y=np.zeros(3), z=[1, 1, 2])
        assert ds.x.shape == (3, 1)

    def test_zero_label_rejected(self):
        with pytest.raises(ValueError, match="group labels must be ≥ 1"):
            make_dataset(x=np.zeros((2, 1)), y=np.zeros(2), z=[0, 1])

    def test_noncontiguous_labels_rejected(self):
        with pytest.raises(ValueError, match="contiguous"):
            make_dataset(x=np.zeros((2, 1)), y=np.zeros(2), z=[1, 3])

    def test_non_integer_labels_rejected(self):
        with pytest.raises(ValueError, match="integer"):
            make_dataset(x=np.zeros((2, 1)), y=np.zeros(2), z=[1.0, 1.5])

    def test_row_count_mismatch(self):
        with pytest.raises(ValueError, match="row counts disagree"):
            make_dataset(x=np.zeros((3, 1)), y=np.zeros(2), z=[1, 1])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            make_dataset(x=np.array([[np.nan], [0.0]]), y=np.zeros(2), z=[1, 1])
        with pytest.raises(ValueError, match="non-finite"):
            make_dataset(x=np.zeros((2, 1)), y=np.array([np.inf, 0.0]), z=[1, 1])

    def test_too_few_rows(self):
        with pytest.raises(ValueError, match="at least 2"):
            make_dataset(x=np.zeros((1, 1)), y=np.zeros(1), z=[1])


class TestRelabelGroups:
    def test_contiguous_untouched(self):
        z, mapping = relabel_groups(np.array([1, 2, 1]))
        assert mapping is None
        assert np.array_equal(z, [1, 2, 1])

    def test_gaps_closed_and_recorded(self):
        z, mapping = relabel_groups(np.array([3, 5, 3]))
        assert np.array_equal(z, [1, 2, 1])
        assert mapping == ((3, 1), (5, 2))


class TestGroupIndex:
    def test_two_groups(self):
        ds = make_dataset(x=np.zeros((3, 1)), y=np.zeros(3), z=[1, 2, 1])
        gi = group_index(ds)
        # 0-based row positions: label 1 at rows 0 and 2, label 2 at row 1
        assert np.array_equal(gi.indices[0], [0, 2])
        assert np.array_equal(gi.indices[1], [1])
        assert gi.sizes == (2, 1)

    def test_single_group(self):
        ds = make_dataset(x=np.zeros((4, 1)), y=np.zeros(4), z=[1, 1, 1, 1])
        gi = group_index(ds)
        assert len(gi.indices) == 1 and gi.sizes == (4,)

    def test_reversed_labels(self):
        ds = make_dataset(x=np.zeros((2, 1)), y=np.zeros(2), z=[2, 1])
        gi = group_index(ds)
        assert np.array_equal(gi.indices[0], [1])
        assert np.array_equal(gi.indices[1], [0])

    def test_partition_properties(self, rng):
        z = rng.integers(1, 4, size=30)
        z[0:3] = [1, 2, 3]  # keep labels contiguous
        ds = make_dataset(x=np.zeros((30, 1)), y=np.zeros(30), z=z)
        gi = group_index(ds)
        merged = np.concatenate(gi.indices)
        assert np.array_equal(np.sort(merged), np.arange(30))
        for idx in gi.indices:
            assert np.all(np.diff(idx) > 0)


class TestStandardize:
    def test_two_point_response(self):
        ds = make_dataset(x=np.array([[0.0], [2.0]]), y=np.array([1.0, 3.0]),
                          z=[1, 2])
        out, state = standardize(ds)
        assert np.allclose(out.y, [-0.70710678, 0.70710678], atol=1e-8)
        assert np.allclose(out.x[:, 0], [-0.70710678, 0.70710678], atol=1e-8)

    def test_columns_centered_and_scaled(self, rng):
        x = rng.standard_normal((40, 3)) * 5 + 2
        y = rng.standard_normal(40) * 3 - 1
        ds = make_dataset(x=x, y=y, z=np.r_[np.ones(20), 2 * np.ones(20)].astype(int))
        out, _ = standardize(ds)
        assert np.allclose(out.x.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(out.x.std(axis=0, ddof=1), 1.0, atol=1e-12)
        assert abs(out.y.mean()) < 1e-12
        assert abs(out.y.std(ddof=1) - 1.0) < 1e-12

    def test_round_trip(self, rng):
        x = rng.standard_normal((15, 2)) * 4 + 7
        y = rng.standard_normal(15) - 3
        ds = make_dataset(x=x, y=y, z=np.r_[np.ones(8), 2 * np.ones(7)].astype(int))
        out, state = standardize(ds)
        back = unstandardize(out, state)
        assert np.max(np.abs(back.x - ds.x)) < 1e-10
        assert np.max(np.abs(back.y - ds.y)) < 1e-10

    def test_constant_column_named(self):
        ds = make_dataset(
            x=np.column_stack([np.ones(4), np.arange(4.0)]),
            y=np.arange(4.0), z=[1, 1, 2, 2],
        )
        with pytest.raises(ValueError, match="x1"):
            standardize(ds)

    def test_constant_response_rejected(self):
        ds = make_dataset(x=np.arange(4.0)[:, None], y=np.ones(4), z=[1, 1, 2, 2])
        with pytest.raises(ValueError, match="constant"):
            standardize(ds)


class TestLoadDataset:
    def test_basic_csv(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x1,y,z\n0.0,1.0,1\n1.0,2.0,2\n2.0,3.0,1\n")
        ds = load_dataset(str(p))
        assert ds.n == 3 and ds.d == 1
        assert np.array_equal(ds.z, [1, 2, 1])
        assert ds.label_map is None

    def test_no_header(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0.0,1.0,1\n1.0,2.0,2\n")
        ds = load_dataset(str(p), has_header=False)
        assert ds.n == 2

    def test_multicolumn(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x1,x2,y,z\n0,1,2,1\n1,0,3,2\n")
        ds = load_dataset(str(p))
        assert ds.d == 2 and ds.y[1] == 3.0

    def test_labels_relabeled_with_map(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x1,y,z\n0,1,4\n1,2,9\n2,3,4\n")
        ds = load_dataset(str(p))
        assert np.array_equal(ds.z, [1, 2, 1])
        assert ds.label_map == ((4, 1), (9, 2))

    def test_bad_cell_reports_row(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x1,y,z\n0,1,1\n0,oops,2\n")
        with pytest.raises(ValueError, match="row 3"):
            load_dataset(str(p))

    def test_bad_label_reports_row(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x1,y,z\n0,1,1\n0,1,first\n")
        with pytest.raises(ValueError, match="row 3"):
            load_dataset(str(p))

    def test_too_few_columns(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y,z\n1,1\n2,2\n")
        with pytest.raises(ValueError, match="at least 3 columns"):
            load_dataset(str(p))

    def test_empty_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("")
        with pytest.raises(ValueError, match="empty"):
            load_dataset(str(p))

    def test_ragged_row_rejected(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x1,y,z\n0,1,1\n0,1\n")
        with pytest.raises(ValueError, match="row 3"):
            load_dataset(str(p))
