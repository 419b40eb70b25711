import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.model_selection import RepeatedKFold

import config
from agents.rsu import FLOW_COLUMNS, feature_columns
from utils.errors import DegenerateBinningError, DimensionMismatchError
from utils.helpers import read_json, write_csv, write_json

logger = logging.getLogger(__name__)

LABEL_COLUMNS = tuple(f"y{task[1:]}" for task in config.TASKS)  # y5, y15, y20
TRUE_FLOW_COLUMNS = tuple(f"flow_{task}" for task in config.TASKS)


@dataclass
class LabeledExample:
    """One window: the features now and the true target-segment flows 5, 15 and 20 minutes ahead."""
    x: object
    flows: tuple
    t: float = 0.0
    scenario: str = ""
    run: int = 0

    def labels(self, binning):
        return tuple(discretize_flow(f, binning) for f in self.flows)


def label_with_window(stream):
    """
    :param stream: time-ordered (features, true_flow) pairs, one per 5-minute period
    :return: examples whose labels are the flows 1, 3 and 4 periods ahead; trailing points are dropped
    """
    stream = list(stream)
    offsets = [config.TASK_OFFSETS[task] for task in config.TASKS]
    horizon = max(offsets)
    examples = []
    for i in range(len(stream) - horizon):
        x, _ = stream[i]
        flows = tuple(float(stream[i + o][1]) for o in offsets)
        examples.append(LabeledExample(x=x, flows=flows, t=float(getattr(x, "t", i))))
    return examples


@dataclass(frozen=True)
class ClassBinning:
    """Three ascending thresholds plus the training range, for class midpoints."""
    thresholds: tuple
    low: float
    high: float

    def edges(self):
        return (self.low,) + tuple(self.thresholds) + (self.high,)

    def midpoints(self):
        edges = self.edges()
        return np.array([(edges[k] + edges[k + 1]) / 2.0 for k in range(config.N_CLASSES)])

    def to_dict(self):
        return {"thresholds": list(self.thresholds), "low": self.low, "high": self.high}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(float(v) for v in data["thresholds"]), float(data["low"]), float(data["high"]))


def fit_binning(flows):
    """
    Quartile thresholds of the training flows. With heavy ties the quartiles of the distinct
    values are used instead.
    :raises DegenerateBinningError: fewer than four distinct flow values
    """
    flows = np.asarray(flows, dtype=float)
    if flows.size == 0 or np.all(flows == flows[0]):
        raise DegenerateBinningError("Cannot bin a constant flow series")
    thresholds = np.percentile(flows, [25, 50, 75])
    if not np.all(np.diff(thresholds) > 0):
        unique = np.unique(flows)
        if len(unique) < config.N_CLASSES:
            raise DegenerateBinningError(f"Only {len(unique)} distinct flow values; {config.N_CLASSES} classes needed")
        thresholds = np.percentile(unique, [25, 50, 75])
        logger.warning(f"Tied quartiles; using quartiles of the {len(unique)} distinct values: {thresholds}")
    return ClassBinning(tuple(float(v) for v in thresholds), float(flows.min()), float(flows.max()))


def discretize_flow(flow, bins):
    """Number of thresholds strictly below the flow."""
    return int(np.sum(np.asarray(bins.thresholds) < flow))


@dataclass(frozen=True)
class FlowNormalizer:
    scale: float

    @classmethod
    def fit(cls, flows, percentile=config.FLOW_SCALE_PERCENTILE):
        flows = np.asarray(flows, dtype=float)
        scale = float(np.percentile(flows, percentile)) if flows.size else 1.0
        return cls(scale if scale > 0 else 1.0)

    def transform(self, flows):
        return np.clip(np.asarray(flows, dtype=float) / self.scale, 0.0, 1.0)


@dataclass
class Dataset:
    """
    Labeled examples in column form. `x` holds raw features (flows in vehicles),
    `x_truth` the matching ground-truth features when available.
    """
    x: np.ndarray
    flows: np.ndarray  # (n, 3) true future flows
    t: np.ndarray
    scenario: np.ndarray
    run: np.ndarray
    x_truth: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.x)

    def __post_init__(self):
        if self.x.ndim != 2 or self.x.shape[1] != config.FEATURE_DIM:
            raise DimensionMismatchError(f"Features must be (n, {config.FEATURE_DIM}), got {self.x.shape}")

    def subset(self, index):
        index = np.asarray(index)
        return Dataset(self.x[index], self.flows[index], self.t[index], self.scenario[index], self.run[index],
                       None if self.x_truth is None else self.x_truth[index], dict(self.meta))

    @classmethod
    def from_examples(cls, examples):
        if not examples:
            return cls(np.zeros((0, config.FEATURE_DIM)), np.zeros((0, 3)), np.zeros(0),
                       np.array([], dtype=object), np.zeros(0, dtype=int))
        xs, truths = [], []
        for e in examples:
            x = e.x
            if isinstance(x, tuple):
                x, truth = x
                truths.append(getattr(truth, "values", truth))
            xs.append(getattr(x, "values", x))
        return cls(
            x=np.vstack(xs).astype(float),
            flows=np.array([e.flows for e in examples], dtype=float),
            t=np.array([e.t for e in examples], dtype=float),
            scenario=np.array([e.scenario for e in examples], dtype=object),
            run=np.array([e.run for e in examples], dtype=int),
            x_truth=np.vstack(truths).astype(float) if truths else None,
        )


def _contiguous_chunks(samples):
    chunk = []
    for sample in samples:
        if chunk and sample.interval != chunk[-1].interval + 1:
            yield chunk
            chunk = []
        chunk.append(sample)
    if chunk:
        yield chunk


def dataset_from_runs(results):
    """Windows every run's RSU stream; each example keeps the estimated and the ground-truth features."""
    examples = []
    for run_index, result in enumerate(results):
        for chunk in _contiguous_chunks(result.stream):
            stream = [((s.features, s.ground_truth), s.true_flow) for s in chunk]
            for example, sample in zip(label_with_window(stream), chunk):
                example.t = sample.t
                example.scenario = result.name
                example.run = run_index
                examples.append(example)
    dataset = Dataset.from_examples(examples)
    logger.info(f"Built {len(dataset)} labeled examples from {len(results)} runs")
    return dataset


def temporal_holdout(dataset, fraction=config.TEST_FRACTION):
    """Last `fraction` of every run's timeline is the test partition."""
    train, test = [], []
    for run in np.unique(dataset.run):
        index = np.flatnonzero(dataset.run == run)
        index = index[np.argsort(dataset.t[index], kind="stable")]
        n_test = int(np.ceil(len(index) * fraction))
        train.extend(index[:len(index) - n_test])
        test.extend(index[len(index) - n_test:])
    return np.array(sorted(train), dtype=int), np.array(sorted(test), dtype=int)


def make_folds(n_examples, n_folds=config.N_FOLDS, n_repeats=config.N_REPEATS, seed=config.SEED):
    """(repeat, fold, train_index, validation_index) for every repeat of a shuffled k-fold split."""
    splitter = RepeatedKFold(n_splits=n_folds, n_repeats=n_repeats, random_state=seed)
    folds = []
    for i, (train_index, val_index) in enumerate(splitter.split(np.arange(n_examples))):
        folds.append((i // n_folds, i % n_folds, train_index, val_index))
    return folds


@dataclass
class Prepared:
    """Scaled inputs and one-hot targets for one partition, using constants fitted on training data."""
    x: np.ndarray
    classes: np.ndarray  # (n, 3) class per task
    targets: dict  # task -> (n, 4) one-hot
    flows: np.ndarray
    binning: ClassBinning
    normalizer: FlowNormalizer

    def __len__(self):
        return len(self.x)


def fit_constants(train):
    """Binning and flow scale from a training partition only."""
    binning = fit_binning(train.flows.ravel())
    normalizer = FlowNormalizer.fit(np.concatenate([train.x[:, FLOW_COLUMNS].ravel(), train.flows.ravel()]))
    return binning, normalizer


def scale_features(x, normalizer):
    x = np.array(x, dtype=float, copy=True)
    x[:, FLOW_COLUMNS] = normalizer.transform(x[:, FLOW_COLUMNS])
    return x


def prepare(dataset, binning, normalizer, use_truth=False):
    raw = dataset.x_truth if use_truth else dataset.x
    classes = np.array([[discretize_flow(f, binning) for f in row] for row in dataset.flows], dtype=int)
    classes = classes.reshape(len(dataset), len(config.TASKS))
    eye = np.eye(config.N_CLASSES)
    targets = {task: eye[classes[:, j]] for j, task in enumerate(config.TASKS)}
    return Prepared(scale_features(raw, normalizer), classes, targets, dataset.flows, binning, normalizer)


def save_dataset(dataset, path, binning=None, normalizer=None):
    """CSV of features, future flows and class labels, plus a JSON sidecar with the fitted constants."""
    if binning is None or normalizer is None:
        binning, normalizer = fit_constants(dataset)
    frame = pd.DataFrame(dataset.x, columns=feature_columns())
    for j, column in enumerate(TRUE_FLOW_COLUMNS):
        frame[column] = dataset.flows[:, j]
    for j, column in enumerate(LABEL_COLUMNS):
        frame[column] = [discretize_flow(f, binning) for f in dataset.flows[:, j]]
    frame["scenario"] = dataset.scenario
    frame["run"] = dataset.run
    frame["t_boundary"] = dataset.t
    if dataset.x_truth is not None:
        truth = pd.DataFrame(dataset.x_truth, columns=[f"gt_{c}" for c in feature_columns()])
        frame = pd.concat([frame, truth], axis=1)
    write_csv(frame, path)
    meta = {
        "binning": binning.to_dict(),
        "flow_scale": normalizer.scale,
        "midpoints": [float(m) for m in binning.midpoints() / normalizer.scale],
        "feature_dim": config.FEATURE_DIM,
        "tasks": list(config.TASKS),
        "examples": len(dataset),
    }
    meta.update(dataset.meta)
    write_json(meta, sidecar_path(path))
    logger.info(f"Dataset of {len(dataset)} examples written to {path}")


def sidecar_path(path):
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".meta.json"


def load_dataset(path):
    frame = pd.read_csv(path)
    columns = feature_columns()
    truth_columns = [f"gt_{c}" for c in columns]
    has_truth = all(c in frame.columns for c in truth_columns)
    meta = read_json(sidecar_path(path)) if os.path.exists(sidecar_path(path)) else {}
    return Dataset(
        x=frame[columns].to_numpy(dtype=float),
        flows=frame[list(TRUE_FLOW_COLUMNS)].to_numpy(dtype=float),
        t=frame["t_boundary"].to_numpy(dtype=float),
        scenario=frame["scenario"].astype(str).to_numpy(dtype=object),
        run=frame["run"].to_numpy(dtype=int),
        x_truth=frame[truth_columns].to_numpy(dtype=float) if has_truth else None,
        meta={k: v for k, v in meta.items() if k in ("source", "seed")},
    )


def load_constants(path):
    meta = read_json(sidecar_path(path))
    return ClassBinning.from_dict(meta["binning"]), FlowNormalizer(float(meta["flow_scale"]))
