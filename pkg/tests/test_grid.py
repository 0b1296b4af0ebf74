import numpy as np
import pytest

from fence import (
    DataError,
    DatasetSplit,
    GraphSpec,
    InvalidInputError,
    MaskMatrix,
    TrafficGrid,
    chronological_split,
    denormalize,
    load_grid_csv,
    load_mask_csv,
    normalize,
    observed_stats,
    save_grid_csv,
    save_mask_csv,
    sliding_windows,
    zero_fill,
)


def test_grid_is_immutable_float64():
    g = TrafficGrid([[1, 2], [3, 4]])
    assert g.values.dtype == np.float64
    assert g.n_nodes == 2 and g.n_steps == 2
    with pytest.raises(ValueError):
        g.values[0, 0] = 9.0


def test_grid_rejects_bad_shapes_and_nonfinite():
    with pytest.raises(DataError):
        TrafficGrid(np.zeros(3))
    with pytest.raises(DataError):
        TrafficGrid(np.zeros((0, 4)))
    with pytest.raises(DataError):
        TrafficGrid([[1.0, np.nan]])
    with pytest.raises(DataError):
        TrafficGrid([[np.inf, 1.0]])


def test_mask_entries_must_be_binary():
    MaskMatrix([[0, 1], [1, 0]])
    with pytest.raises(DataError):
        MaskMatrix([[0, 2]])
    with pytest.raises(DataError):
        MaskMatrix([[0.5, 1]])


def test_mask_check_matches():
    m = MaskMatrix(np.ones((2, 3)))
    m.check_matches(TrafficGrid(np.zeros((2, 3))))
    with pytest.raises(DataError):
        m.check_matches(TrafficGrid(np.zeros((3, 2))))


def test_graph_spec_validates_communities():
    adj = np.ones((4, 4)) - np.eye(4)
    g = GraphSpec(adj, node_communities=((0, 2), (1, 3)))
    assert g.n_nodes == 4
    with pytest.raises(DataError):
        GraphSpec(adj, node_communities=((0, 1), (1, 2, 3)))
    with pytest.raises(DataError):
        GraphSpec(np.ones((2, 3)))
    with pytest.raises(DataError):
        GraphSpec(-adj)


def test_normalize_denormalize_round_trip():
    g = TrafficGrid(np.arange(12, dtype=float).reshape(3, 4))
    z = normalize(g, 5.0, 2.0)
    back = denormalize(z, 5.0, 2.0)
    np.testing.assert_allclose(back.values, g.values, rtol=1e-12)
    with pytest.raises(InvalidInputError):
        normalize(g, 0.0, 0.0)
    with pytest.raises(InvalidInputError):
        denormalize(g, np.nan, 1.0)


def test_zero_fill_and_observed_stats():
    mask = MaskMatrix([[1, 0], [0, 1]])
    filled = zero_fill(np.array([[2.0, np.nan], [np.nan, 4.0]]), mask)
    np.testing.assert_array_equal(filled.values, [[2.0, 0.0], [0.0, 4.0]])
    mean, std = observed_stats(np.array([[2.0, 99.0], [99.0, 4.0]]), mask)
    assert mean == 3.0 and std == 1.0
    with pytest.raises(DataError):
        observed_stats(np.zeros((2, 2)), MaskMatrix(np.zeros((2, 2))))
    # NaN under an observed position is a data error, not silently zeroed
    with pytest.raises(DataError):
        zero_fill(np.array([[np.nan, 1.0], [1.0, 1.0]]), MaskMatrix(np.ones((2, 2))))


def test_sliding_windows_count_and_content():
    series = np.arange(20, dtype=float).reshape(2, 10)
    wins = sliding_windows(series, window=4, stride=2)
    assert len(wins) == 4
    np.testing.assert_array_equal(wins[1].values, series[:, 2:6])
    assert len(sliding_windows(series, window=10)) == 1
    with pytest.raises(InvalidInputError):
        sliding_windows(series, window=11)
    with pytest.raises(InvalidInputError):
        sliding_windows(series, window=0)


def test_chronological_split_fractions_and_remainder():
    series = np.arange(2 * 10, dtype=float).reshape(2, 10)
    train, val, test = chronological_split(series)
    assert train.shape[1] == 6 and val.shape[1] == 2 and test.shape[1] == 2
    np.testing.assert_array_equal(np.hstack([train, val, test]), series)
    # floor puts the remainder into the test segment
    train, val, test = chronological_split(np.zeros((1, 7)))
    assert (train.shape[1], val.shape[1], test.shape[1]) == (4, 1, 2)
    with pytest.raises(InvalidInputError):
        chronological_split(np.zeros((1, 2)))


def test_dataset_split_validation():
    g = TrafficGrid(np.zeros((2, 3)))
    m = MaskMatrix(np.ones((2, 3)))
    split = DatasetSplit(train=((g, m),), validation=(), test=(),
                         window_length=3, normalization=(0.0, 1.0))
    assert split.normalization == (0.0, 1.0)
    with pytest.raises(InvalidInputError):
        DatasetSplit(train=(), validation=(), test=(), window_length=3,
                     normalization=(0.0, 0.0))
    bad = MaskMatrix(np.ones((3, 3)))
    with pytest.raises(DataError):
        DatasetSplit(train=((g, bad),), validation=(), test=(),
                     window_length=3, normalization=(0.0, 1.0))


def test_grid_csv_round_trip_with_missing(tmp_path):
    values = np.array([[1.5, 2.25], [-3.0, 0.0]])
    mask = MaskMatrix([[1, 0], [1, 1]])
    path = tmp_path / "g.csv"
    save_grid_csv(path, values, mask)
    got, got_mask = load_grid_csv(path)
    np.testing.assert_array_equal(got_mask.entries, mask.entries)
    assert np.isnan(got[0, 1])
    np.testing.assert_array_equal(got[got_mask.entries == 1],
                                  values[mask.entries == 1])


def test_grid_csv_exact_float_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.standard_normal((3, 5))
    path = tmp_path / "g.csv"
    save_grid_csv(path, values)
    got, _ = load_grid_csv(path)
    # repr round-trips float64 bit-exactly
    np.testing.assert_array_equal(got, values)


def test_grid_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        load_grid_csv(path)
    path.write_text("t0,t1\n1\n")
    with pytest.raises(DataError):
        load_grid_csv(path)
    path.write_text("t0,t1\n1,zzz\n")
    with pytest.raises(DataError):
        load_grid_csv(path)
    path.write_text("t0,t1\n")
    with pytest.raises(DataError):
        load_grid_csv(path)


def test_mask_csv_round_trip(tmp_path):
    mask = MaskMatrix([[1, 0, 1], [0, 0, 1]])
    path = tmp_path / "m.csv"
    save_mask_csv(path, mask)
    got = load_mask_csv(path)
    np.testing.assert_array_equal(got.entries, mask.entries)
    path.write_text("t0\n2\n")
    with pytest.raises(DataError):
        load_mask_csv(path)
