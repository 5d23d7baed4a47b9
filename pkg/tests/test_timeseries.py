
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randcon.errors import DimensionError, FormatError, ParseError
from randcon.timeseries import (
    ConstantRowWarning,
    FcSeries,
    RoiTimeSeries,
    SubjectGroup,
    load_csv,
    load_fc_series,
    save_csv,
    save_fc_series,
    zscore_rows,
)


def write(tmp_path, text, name="in.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_rows_are_rois_shape(tmp_path):
    p = write(tmp_path, "\n".join(",".join(str(i * 5 + j) for j in range(5)) for i in range(3)))
    ts = load_csv(p)
    assert (ts.n_rois, ts.n_timepoints) == (3, 5)
    assert ts.roi_labels == ("roi_0", "roi_1", "roi_2")


def test_rows_are_time_transposes(tmp_path):
    p = write(tmp_path, "\n".join(",".join(str(i * 5 + j) for j in range(5)) for i in range(3)))
    ts = load_csv(p, layout="rows-are-time")
    assert (ts.n_rois, ts.n_timepoints) == (5, 3)
    assert ts.values[4, 2] == 14


def test_non_numeric_cell_names_position(tmp_path):
    p = write(tmp_path, "1,2,3,4,5\n6,7,8,x,10\n11,12,13,14,15\n")
    with pytest.raises(ParseError, match="row 2 column 4"):
        load_csv(p)


def test_header_and_label_column(tmp_path):
    p = write(tmp_path, "roi,t0,t1,t2\nA,1,2,3\nB,4,5,7\n")
    ts = load_csv(p)
    assert ts.roi_labels == ("A", "B")
    np.testing.assert_array_equal(ts.values, [[1, 2, 3], [4, 5, 7]])


def test_ragged_row_rejected(tmp_path):
    with pytest.raises(ParseError, match="row 2"):
        load_csv(write(tmp_path, "1,2,3\n4,5\n"))


def test_invariants_enforced():
    with pytest.raises(DimensionError):
        RoiTimeSeries(np.zeros((1, 5)))
    with pytest.raises(ParseError):
        RoiTimeSeries(np.array([[1.0, np.nan], [1.0, 2.0]]))
    with pytest.raises(ParseError):
        RoiTimeSeries(np.zeros((2, 3)), ("a", "a"))


def test_zscore_definition():
    ts = zscore_rows(RoiTimeSeries([[1.0, 2.0, 3.0], [0.0, 5.0, 1.0]]))
    np.testing.assert_allclose(ts.values.mean(axis=1), 0, atol=1e-15)
    np.testing.assert_allclose(ts.values.std(axis=1), 1, atol=1e-15)


def test_zscore_constant_row_warns():
    with pytest.warns(ConstantRowWarning):
        ts = zscore_rows(RoiTimeSeries([[5.0, 5, 5, 5], [1.0, 2, 3, 4]]))
    np.testing.assert_array_equal(ts.values[0], 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_zscore_idempotent(seed):
    x = np.random.default_rng(seed).normal(size=(4, 20)) * 7 + 3
    once = zscore_rows(RoiTimeSeries(x))
    twice = zscore_rows(once)
    np.testing.assert_allclose(once.values, twice.values, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_csv_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    ts = RoiTimeSeries(rng.normal(size=(3, 7)) * 10.0 ** rng.integers(-5, 5))
    path = tmp_path_factory.mktemp("rt") / "x.csv"
    save_csv(path, ts)
    assert load_csv(path) == ts


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(2, 6), st.integers(0, 4))
def test_subject_group_rejects_mismatch(n, t, which):
    subjects = [RoiTimeSeries(np.ones((n, t)) * i) for i in range(5)]
    subjects[which] = RoiTimeSeries(np.ones((n, t + 1)))
    with pytest.raises(DimensionError):
        SubjectGroup(subjects)


def test_fc_container_round_trip(tmp_path):
    v = np.random.default_rng(0).uniform(-1, 1, size=(6, 4, 4))
    fcs = FcSeries(v, "randcon", {"width": 3, "n_kernels": 40}, 2)
    save_fc_series(tmp_path / "a.rcfc", fcs)
    assert load_fc_series(tmp_path / "a.rcfc") == fcs


def test_truncated_container_is_corruption(tmp_path):
    fcs = FcSeries(np.zeros((3, 2, 2)), "mtd", {})
    path = tmp_path / "a.rcfc"
    save_fc_series(path, fcs)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="truncated|corrupt"):
        load_fc_series(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "a.rcfc"
    save_fc_series(path, FcSeries(np.zeros((3, 2, 2)), "mtd", {}))
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        load_fc_series(path)


def test_empty_series_rejected_at_save(tmp_path):
    with pytest.raises(DimensionError):
        save_fc_series(tmp_path / "e.rcfc", FcSeries(np.zeros((0, 3, 3)), "randcon", {}))
