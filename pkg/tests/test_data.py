import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magnn.data import (
    MtsDataset, default_coupling, fit_scaler, inverse_scale, load_csv, make_windows,
    scale, split_bounds, synth_multiscale, window_count, window_source, write_csv,
)
from magnn.errors import DimensionError, EmptySplitError, IngestionError


def _ds(t_total=100, n=3, seed=0):
    rng = np.random.default_rng(seed)
    return MtsDataset(rng.normal(size=(t_total, n)), tuple(f"v{i}" for i in range(n)))


def test_load_csv_split_100_rows(tmp_path):
    path = tmp_path / "d.csv"
    write_csv(np.random.default_rng(1).normal(size=(100, 3)), path)
    ds = load_csv(path)
    assert ds.split == (60, 80)
    assert ds.values.shape == (100, 3)


def test_load_csv_header_and_delimiter(tmp_path):
    path = tmp_path / "d.txt"
    write_csv(np.arange(36.0).reshape(12, 3), path, delimiter=";", names=["a", "b", "c"])
    ds = load_csv(path, delimiter=";", header=True)
    assert ds.variable_names == ("a", "b", "c")
    assert ds.values[0, 1] == 1.0


def test_constant_column_has_unit_factor():
    vals = np.column_stack([np.full(20, 5.0), np.linspace(-2, 4, 20)])
    ds = MtsDataset(vals, ("c", "x"))
    assert ds.scaler[0] == 1.0
    np.testing.assert_array_equal(ds.scaled[:, 0], vals[:, 0])


def test_max_abs_scaling():
    col = np.concatenate([np.linspace(0, -5, 12), np.linspace(0, 1, 8)])
    ds = MtsDataset(col[:, None], ("x",))
    assert np.abs(ds.scaled[: ds.split[0]]).max() == 1.0


def test_scaler_fit_is_idempotent():
    rows = np.random.default_rng(2).normal(size=(30, 4))
    assert np.array_equal(fit_scaler(rows), fit_scaler(rows))


@pytest.mark.parametrize("text,msg", [
    ("1,2\n3\n" + "1,2\n" * 10, "row 2"),
    ("1,2\n3,x\n" + "1,2\n" * 10, "row 2, column 2"),
    ("1,2\n" * 5, "need at least 10"),
])
def test_load_csv_errors_name_location(tmp_path, text, msg):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(IngestionError, match=msg):
        load_csv(path)


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        load_csv(tmp_path / "nope.csv")


def test_window_count_small_segment():
    assert window_count(10, 3, 2) == 6
    origins = [o for o in range(10) if o + 3 + 2 - 1 < 10]
    assert len(origins) == 6


def test_first_window_rows_and_target():
    vals = np.arange(50.0)[:, None] * np.ones((1, 2))
    ds = MtsDataset(vals, ("a", "b"))
    s = make_windows(ds, "train", 3, 1, scaled=False)[0]
    np.testing.assert_array_equal(s.input[0], [0.0, 1.0, 2.0])
    np.testing.assert_array_equal(s.target, [3.0, 3.0])
    assert s.origin_index == 0


def test_window_horizon_offset():
    vals = np.arange(50.0)[:, None]
    ds = MtsDataset(vals, ("a",))
    s = make_windows(ds, "val", 4, 3, scaled=False)[0]
    assert s.origin_index == ds.split[0]
    assert s.target[0] == s.input[0, -1] + 3


def test_exchange_rate_sized_test_split():
    ds = MtsDataset(np.random.default_rng(0).normal(size=(7588, 1)), ("x",))
    start, stop = ds.segment("test")
    assert stop - start == 1518
    assert len(window_source(ds, "test", 168, 24)) == 1327


def test_segment_too_short():
    with pytest.raises(EmptySplitError, match="window \\+ horizon = 25"):
        window_source(_ds(40), "val", 20, 5)


def test_no_leakage_across_boundaries():
    ds = _ds(300)
    train_end, val_end = ds.split
    for split, (lo, hi) in [("train", (0, train_end)), ("val", (train_end, val_end)), ("test", (val_end, 300))]:
        src = window_source(ds, split, 24, 3)
        assert src.target_rows().max() < hi
        assert src.origins.min() >= lo


@settings(max_examples=60, deadline=None)
@given(st.integers(10, 400), st.integers(1, 40), st.integers(1, 30))
def test_window_count_formula_property(t_total, window, horizon):
    ds = MtsDataset(np.arange(float(t_total))[:, None], ("x",))
    for split in ("train", "val", "test"):
        lo, hi = ds.segment(split)
        seg = hi - lo
        if seg < window + horizon:
            with pytest.raises(EmptySplitError):
                window_source(ds, split, window, horizon)
            continue
        src = window_source(ds, split, window, horizon)
        assert len(src) == seg - window - horizon + 1
        assert np.all(np.diff(src.origins) == 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(10, 10_000))
def test_split_floor_rule(t_total):
    train_end, val_end = split_bounds(t_total)
    assert train_end == int(0.6 * t_total) and val_end == int(0.8 * t_total)
    assert 0 < train_end < val_end < t_total


def test_inverse_scale_examples():
    ds = MtsDataset(np.column_stack([np.linspace(0, 2, 20), np.linspace(0, -4, 20)]), ("a", "b"))
    # training max-abs: rows 0..11
    np.testing.assert_allclose(ds.scaler, [2 * 11 / 19, 4 * 11 / 19])
    np.testing.assert_array_equal(inverse_scale([0.0, 0.0], ds), [0.0, 0.0])
    x = np.array([0.3, -7.0])
    np.testing.assert_allclose(inverse_scale(scale(x, ds), ds), x, atol=1e-12)
    with pytest.raises(DimensionError):
        inverse_scale([1.0], ds)


def test_inverse_scale_factors():
    vals = np.zeros((20, 2))
    vals[0] = [2.0, 4.0]
    vals[1] = [1.0, 1.0]
    ds = MtsDataset(vals, ("a", "b"))
    np.testing.assert_array_equal(inverse_scale([1.0, 1.0], ds), [2.0, 4.0])


def test_dataset_is_read_only():
    ds = _ds()
    with pytest.raises(ValueError):
        ds.values[0, 0] = 1.0
    with pytest.raises(AttributeError):
        ds.split = (1, 2)


def test_synth_exactly_periodic_without_noise():
    ds = synth_multiscale(3, 240, [24], np.eye(3), 0.0, seed=4)
    np.testing.assert_allclose(ds.values[24:], ds.values[:-24], atol=1e-12)


def test_synth_deterministic():
    c = default_coupling(4, 1)
    a = synth_multiscale(4, 500, [24, 168], c, 0.2, seed=9).values
    b = synth_multiscale(4, 500, [24, 168], c, 0.2, seed=9).values
    assert np.array_equal(a, b)


def test_synth_autocorrelation_peaks():
    ds = synth_multiscale(5, 3000, [24, 168], default_coupling(5, 3), 0.1, seed=3)
    for j in range(5):
        x = ds.values[:, j] - ds.values[:, j].mean()

        def ac(lag):
            return float(np.dot(x[:-lag], x[lag:]) / np.dot(x, x))
        assert ac(24) > ac(13)
        assert ac(168) > ac(13)


def test_synth_non_square_coupling():
    with pytest.raises(DimensionError):
        synth_multiscale(3, 100, [24], np.ones((3, 2)), 0.0, seed=0)
