import logging

import numpy as np

from utils.errors import DimensionMismatchError

logger = logging.getLogger(__name__)


def rmse(predicted, truth):
    """
    Root-mean-square error of two equal-length, nonempty sequences.
    :raises DimensionMismatchError: lengths differ
    :raises ValueError: sequences are empty
    """
    predicted = np.asarray(predicted, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if predicted.shape != truth.shape:
        raise DimensionMismatchError(f"Cannot compare {predicted.size} predictions with {truth.size} truths")
    if predicted.size == 0:
        raise ValueError("rmse of an empty sequence is undefined")
    return float(np.sqrt(np.mean((predicted - truth) ** 2)))


def class_to_value(classes, binning, normalizer):
    """Normalized flow-bin midpoint of each class."""
    midpoints = normalizer.transform(binning.midpoints())
    return midpoints[np.asarray(classes, dtype=int)]


def classifier_rmse(predicted_classes, true_classes, binning, normalizer):
    return rmse(class_to_value(predicted_classes, binning, normalizer),
                class_to_value(true_classes, binning, normalizer))


def flow_rmse(predicted_flows, true_classes, binning, normalizer):
    """Continuous forecasts scaled by the flow normalizer against the true class midpoints."""
    return rmse(normalizer.transform(predicted_flows), class_to_value(true_classes, binning, normalizer))


def paired_win_fraction(better, worse):
    """Share of paired runs where `better` scored strictly lower than `worse`."""
    better = np.asarray(better, dtype=float)
    worse = np.asarray(worse, dtype=float)
    if better.shape != worse.shape or better.size == 0:
        raise DimensionMismatchError("Paired comparison needs two nonempty equal-length score lists")
    return float(np.mean(better < worse))
