from types import SimpleNamespace

import numpy as np
import pytest

import config
from learning.dataset import (ClassBinning, Dataset, FlowNormalizer, dataset_from_runs, discretize_flow,
                              fit_binning, fit_constants, label_with_window, load_constants, load_dataset,
                              make_folds, prepare, save_dataset, temporal_holdout)
from utils.errors import DegenerateBinningError, DimensionMismatchError


# ── Windowing ──

def test_window_drops_the_last_four_points():
    stream = [(np.zeros(3), float(i)) for i in range(24)]
    assert len(label_with_window(stream)) == 20


def test_window_labels_are_flows_one_three_and_four_periods_ahead():
    stream = [(f"x{i}", float(10 * i)) for i in range(9)]
    examples = label_with_window(stream)
    assert len(examples) == 5
    assert examples[0].x == "x0" and examples[0].flows == (10.0, 30.0, 40.0)
    assert examples[-1].flows == (50.0, 70.0, 80.0)


def test_short_stream_gives_no_examples():
    assert label_with_window([(None, 1.0)] * 4) == []


# ── Class binning ──

def test_quartile_thresholds():
    binning = fit_binning(np.arange(1, 101))
    assert binning.thresholds == pytest.approx((25.75, 50.5, 75.25))
    assert (binning.low, binning.high) == (1.0, 100.0)


def test_quartile_classes_are_balanced():
    flows = np.arange(1, 101)
    binning = fit_binning(flows)
    counts = np.bincount([discretize_flow(f, binning) for f in flows], minlength=4)
    np.testing.assert_array_equal(counts, [25, 25, 25, 25])


def test_degenerate_flows_cannot_be_binned():
    with pytest.raises(DegenerateBinningError):
        fit_binning([7.0] * 20)
    with pytest.raises(DegenerateBinningError):
        fit_binning([1, 1, 1, 1, 1, 1, 2, 3])


def test_tied_quartiles_fall_back_to_distinct_values():
    binning = fit_binning([0] * 50 + [1, 2, 3, 4, 5])
    assert all(a < b for a, b in zip(binning.thresholds, binning.thresholds[1:]))


def test_discretize_boundaries():
    binning = ClassBinning((10.0, 20.0, 30.0), 0.0, 40.0)
    assert [discretize_flow(f, binning) for f in (0, 10, 10.5, 30, 31)] == [0, 0, 1, 2, 3]
    np.testing.assert_allclose(binning.midpoints(), [5, 15, 25, 35])


def test_flow_normalizer():
    np.testing.assert_allclose(FlowNormalizer(10.0).transform([5.0, 20.0, -1.0]), [0.5, 1.0, 0.0])
    assert FlowNormalizer.fit(np.zeros(10)).scale == 1.0


# ── Partitions ──

def test_folds_partition_every_repeat():
    folds = make_folds(100, n_folds=5, n_repeats=2, seed=0)
    assert len(folds) == 10
    for repeat in (0, 1):
        vals = [v for r, _, _, v in folds if r == repeat]
        assert all(len(v) == 20 for v in vals)
        assert sorted(np.concatenate(vals).tolist()) == list(range(100))
    for _, _, train_index, val_index in folds:
        assert not set(train_index) & set(val_index)


def test_folds_are_reproducible():
    a, b = make_folds(50, 5, 3, seed=9), make_folds(50, 5, 3, seed=9)
    for (_, _, ta, va), (_, _, tb, vb) in zip(a, b):
        np.testing.assert_array_equal(ta, tb)
        np.testing.assert_array_equal(va, vb)


def test_temporal_holdout_takes_the_end_of_each_run(dataset):
    train, test = temporal_holdout(dataset)
    assert len(train) + len(test) == len(dataset)
    for run in (0, 1):
        tr, te = train[dataset.run[train] == run], test[dataset.run[test] == run]
        assert len(te) == int(np.ceil(30 * config.TEST_FRACTION))
        assert dataset.t[tr].max() < dataset.t[te].min()


# ── Building datasets ──

def stream_sample(interval):
    features = SimpleNamespace(values=np.full(config.FEATURE_DIM, float(interval)))
    truth = SimpleNamespace(values=np.full(config.FEATURE_DIM, -float(interval)))
    return SimpleNamespace(t=300.0 * (interval + 1), interval=interval, features=features, ground_truth=truth,
                           true_flow=float(interval), event="none")


def test_stream_gaps_split_the_windows():
    stream = [stream_sample(k) for k in list(range(3, 13)) + list(range(20, 28))]
    dataset = dataset_from_runs([SimpleNamespace(name="base", stream=stream)])
    assert len(dataset) == 6 + 4
    np.testing.assert_array_equal(dataset.flows[0], [4.0, 6.0, 7.0])
    np.testing.assert_array_equal(dataset.flows[6], [21.0, 23.0, 24.0])
    assert dataset.t[0] == 1200.0
    assert dataset.x[0, 0] == 3.0 and dataset.x_truth[0, 0] == -3.0
    assert set(dataset.scenario) == {"base"}


def test_runs_are_numbered_in_order():
    stream = [stream_sample(k) for k in range(3, 10)]
    dataset = dataset_from_runs([SimpleNamespace(name="a", stream=stream), SimpleNamespace(name="b", stream=stream)])
    assert dataset.run.tolist() == [0, 0, 0, 1, 1, 1]
    assert dataset.scenario.tolist() == ["a", "a", "a", "b", "b", "b"]


def test_dataset_checks_the_feature_width():
    with pytest.raises(DimensionMismatchError):
        Dataset(np.zeros((2, 61)), np.zeros((2, 3)), np.zeros(2), np.array(["a", "a"], dtype=object), np.zeros(2))


def test_prepare_uses_training_constants(dataset):
    train_index, test_index = temporal_holdout(dataset)
    binning, normalizer = fit_constants(dataset.subset(train_index))
    prepared = prepare(dataset.subset(test_index), binning, normalizer)
    assert prepared.classes.shape == (len(test_index), 3)
    for j, task in enumerate(config.TASKS):
        np.testing.assert_array_equal(prepared.targets[task].argmax(axis=1), prepared.classes[:, j])
    assert prepared.x[:, 2:14].max() <= 1.0
    # time and index columns are not rescaled
    np.testing.assert_array_equal(prepared.x[:, :2], dataset.x[test_index, :2])


def test_dataset_file_round_trip(dataset, tmp_path):
    path = tmp_path / "dataset.csv"
    binning, normalizer = fit_constants(dataset)
    save_dataset(dataset, path, binning, normalizer)
    loaded = load_dataset(path)
    np.testing.assert_allclose(loaded.x, dataset.x, rtol=1e-8)
    np.testing.assert_array_equal(loaded.flows, dataset.flows)
    assert loaded.scenario.tolist() == dataset.scenario.tolist()
    assert loaded.x_truth is None
    assert load_constants(path) == (binning, normalizer)
