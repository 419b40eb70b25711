import logging
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from sklearn.isotonic import IsotonicRegression

import config
from agents.rsu import ADJ_FLOW_SLICE, EVENT_SLICE, FLOW_COLUMNS, PAST_FLOW_SLICE, TIME_SLICE, TTI_SLICE
from experiments.metrics import rmse
from experiments.suite import ScenarioSuite, run_suite
from learning.dataset import Dataset, dataset_from_runs, fit_constants, make_folds, prepare, temporal_holdout
from learning.training import TrainConfig, head_rmse, train, validation_rmse
from simulation.scenario import ConnectedRun, history_frame
from utils.helpers import parallel_map
from vanet.channel import ChannelModel

logger = logging.getLogger(__name__)


# --- Feature ablation ---

def feature_groups():
    """Time, TTindex, past flows, then each adjacent segment's flow and each one's event block."""
    groups = [("time", np.arange(TIME_SLICE.start, TIME_SLICE.stop)),
              ("tt_index", np.arange(TTI_SLICE.start, TTI_SLICE.stop)),
              ("past_flows", np.arange(PAST_FLOW_SLICE.start, PAST_FLOW_SLICE.stop))]
    for a in range(config.ADJACENT_COUNT):
        groups.append((f"adjacent_flow_{a + 1}", np.array([ADJ_FLOW_SLICE.start + a])))
    width = len(config.EVENT_KINDS)
    for a in range(config.ADJACENT_COUNT):
        start = EVENT_SLICE.start + a * width
        groups.append((f"adjacent_event_{a + 1}", np.arange(start, start + width)))
    return groups


def _ablation_job(job):
    dataset, columns, train_config, train_index, val_index = job
    train_part, val_part = dataset.subset(train_index), dataset.subset(val_index)
    binning, normalizer = fit_constants(train_part)
    train_set = prepare(train_part, binning, normalizer)
    val_set = prepare(val_part, binning, normalizer)
    train_set.x[:, columns] = 0.0
    val_set.x[:, columns] = 0.0
    result = train(train_set, train_config, val_set)
    return validation_rmse(result.network, val_set)


def feature_ablation(dataset, train_config=None, n_folds=config.N_FOLDS, seed=config.SEED, workers=config.WORKERS):
    """
    Retrains with one feature group zeroed at a time, then with every feature zeroed.
    :return: DataFrame group, n_features, rmse, delta (against the full feature set)
    """
    train_config = train_config or TrainConfig(seed=seed)
    folds = make_folds(len(dataset), n_folds, 1, seed)
    variants = [("none", np.array([], dtype=int))] + feature_groups() + [("all", np.arange(config.FEATURE_DIM))]
    jobs = [(dataset, columns, train_config, tr, va) for _, columns in variants for _, _, tr, va in folds]
    scores = parallel_map(_ablation_job, jobs, workers)

    rows = []
    for i, (name, columns) in enumerate(variants):
        rows.append({"group": name, "n_features": len(columns),
                     "rmse": float(np.mean(scores[i * len(folds):(i + 1) * len(folds)]))})
    table = pd.DataFrame(rows)
    table["delta"] = table["rmse"] - table.loc[0, "rmse"]
    logger.info(f"Feature ablation over {len(variants) - 2} groups:\n{table}")
    return table


# --- Communication impact ---

DEFAULT_CHANNELS = (
    ("perfect", {"base_loss": 0.0, "collision_coefficient": 0.0}),
    ("calibrated", {}),
    ("loss-0.2", {"base_loss": 0.2}),
    ("loss-0.4", {"base_loss": 0.4}),
)


def substitute_features(dataset, columns):
    """Ground-truth features with `columns` replaced by the connected-vehicle estimates."""
    truth = dataset.x_truth.copy()
    truth[:, columns] = dataset.x[:, columns]
    return Dataset(dataset.x, dataset.flows, dataset.t, dataset.scenario, dataset.run, truth, dict(dataset.meta))


def comm_impact_study(scenario, net, profile, channels=DEFAULT_CHANNELS, replicates=config.SUITE_REPLICATES,
                      train_config=None, task="t15", workers=config.WORKERS):
    """
    Trains on ground-truth features, then scores the test partition with the TTindex or the
    flow features swapped for what the RSU actually estimated under each channel.
    """
    train_config = train_config or TrainConfig(seed=scenario.seed)
    rows = []
    for label, channel in channels:
        suite = ScenarioSuite([replace(scenario, channel=dict(channel))], replicates)
        dataset = dataset_from_runs(run_suite(suite, net, profile, workers=workers))
        train_index, test_index = temporal_holdout(dataset)
        train_part, test_part = dataset.subset(train_index), dataset.subset(test_index)
        binning, normalizer = fit_constants(train_part)
        model = train(prepare(train_part, binning, normalizer, use_truth=True), train_config).network

        def score(part):
            return head_rmse(model, prepare(part, binning, normalizer, use_truth=True))[task]

        tti_columns = np.arange(TTI_SLICE.start, TTI_SLICE.stop)
        row = {
            "channel": label,
            "base_loss": ChannelModel.from_dict(channel).base_loss,
            "collision_coefficient": ChannelModel.from_dict(channel).collision_coefficient,
            "rmse_truth": score(test_part),
            "rmse_tti": score(substitute_features(test_part, tti_columns)),
            "rmse_flow": score(substitute_features(test_part, FLOW_COLUMNS)),
        }
        row["delta_tti"] = row["rmse_tti"] - row["rmse_truth"]
        row["delta_flow"] = row["rmse_flow"] - row["rmse_truth"]
        logger.info(f"Channel {label}: TTindex substitution {row['delta_tti']:+.4f}, "
                    f"flow substitution {row['delta_flow']:+.4f}")
        rows.append(row)
    return pd.DataFrame(rows)


# --- Density and detection accuracy ---

def density_levels(sweep=config.DENSITY_SWEEP, levels=config.DENSITY_LEVELS):
    return np.geomspace(sweep[0], sweep[1], levels)


def density_accuracy_curve(channel, levels=None, segment_length=500.0, lanes=3, trials=50, seed=config.SEED):
    """
    Places n vehicles uniformly on one segment with the RSU at its middle and measures the share
    of single beacons the RSU receives. Requested densities are rounded to whole vehicles and
    repeated levels are merged.
    :return: DataFrame density, vehicles, accuracy
    """
    levels = density_levels() if levels is None else np.asarray(levels, dtype=float)
    area = segment_length * lanes * config.LANE_WIDTH_M
    counts = sorted({max(1, int(round(rho * area))) for rho in levels})
    rng = np.random.default_rng(seed)
    rsu = np.array([segment_length / 2.0, 0.0])
    rows = []
    for n in counts:
        density = n / area
        received = 0
        for _ in range(trials):
            positions = rng.uniform(0.0, segment_length, n)
            lane_offsets = (rng.integers(0, lanes, n) + 0.5) * config.LANE_WIDTH_M
            distance = np.hypot(positions - rsu[0], lane_offsets - rsu[1])
            received += int(channel.draw(channel.reception_probability(distance, density)).sum())
        rows.append({"density": density, "vehicles": n, "accuracy": received / (n * trials)})
    curve = pd.DataFrame(rows)
    logger.info(f"Density sweep over {len(curve)} levels: accuracy {curve['accuracy'].iloc[0]:.3f} "
                f"-> {curve['accuracy'].iloc[-1]:.3f}")
    return curve


def density_curve_from_runs(results, bins=config.DENSITY_LEVELS):
    """Bins the (density, delivered share) samples the RSU logged during connected runs."""
    samples = np.array([s for r in results for s in r.density_samples], dtype=float).reshape(-1, 2)
    if not len(samples):
        return pd.DataFrame(columns=["density", "vehicles", "accuracy"])
    edges = np.unique(np.quantile(samples[:, 0], np.linspace(0, 1, bins + 1)))
    which = np.clip(np.searchsorted(edges, samples[:, 0], side="right") - 1, 0, len(edges) - 2)
    rows = [{"density": samples[which == b, 0].mean(), "vehicles": int((which == b).sum()),
             "accuracy": samples[which == b, 1].mean()} for b in range(len(edges) - 1) if (which == b).any()]
    return pd.DataFrame(rows)


def monotone_residual(curve):
    """RMS distance of the accuracies to their best non-increasing fit."""
    model = IsotonicRegression(increasing=False)
    fitted = model.fit_transform(curve["density"].to_numpy(), curve["accuracy"].to_numpy())
    return rmse(fitted, curve["accuracy"].to_numpy())


# --- Congestion factor ---

def no_event_observations(logs, profile):
    """(segment, observed_tt, tth) for every traversal no event touched."""
    rows = []
    for log in logs:
        for _, seg_id, entry, exit_time in log.traversals:
            touched = any(log.affects(e, seg_id) and e.overlaps(entry, exit_time) for e in log.events)
            if not touched:
                rows.append({"segment": seg_id, "observed_tt": exit_time - entry,
                             "tth": profile.travel_time(seg_id, min(entry, profile.horizon - 1))})
    return pd.DataFrame(rows, columns=["segment", "observed_tt", "tth"])


def travel_time_variability(observations, c):
    """Share of each segment's observations at or below c * TTh."""
    below = observations["observed_tt"] <= c * observations["tth"]
    table = below.groupby(observations["segment"]).agg(["size", "mean"]).reset_index()
    table.columns = ["segment", "observations", "below_fraction"]
    return table


def calibrate_congestion_factor(observations, grid=config.C_FACTOR_GRID, coverage=config.C_FACTOR_COVERAGE,
                                segments=None):
    """Smallest c of the grid keeping `coverage` of every studied segment's observations below c * TTh."""
    if segments is not None:
        observations = observations[observations["segment"].isin(segments)]
    for c in grid:
        if travel_time_variability(observations, c)["below_fraction"].min() >= coverage:
            logger.info(f"Congestion factor calibrated to {c}")
            return c
    logger.warning(f"No congestion factor in {grid[0]}..{grid[-1]} reaches {coverage:.0%} coverage; "
                   f"using {grid[-1]}")
    return grid[-1]


# --- Neighbor weight ---

@dataclass
class AlphaCalibration:
    table: pd.DataFrame  # alpha, rmse, own_rmse, samples
    best_alpha: float
    low_error_region: tuple
    contiguous: bool


def index_errors(histories):
    """RMSE of the blended and of the own-only index against the ground-truth index."""
    frames = [history_frame(h) for h in histories.values() if h]
    if not frames:
        return float("nan"), float("nan"), 0
    rows = pd.concat(frames, ignore_index=True)
    return (rmse(rows["tt_index"], rows["reference_index"]), rmse(rows["own_index"], rows["reference_index"]),
            len(rows))


def _alpha_job(job):
    scenario, net, profile, alpha = job
    result = ConnectedRun(scenario, net, profile, alpha=alpha, keep_histories=True).run()
    blended, own, samples = index_errors(result.histories)
    return {"alpha": alpha, "rmse": blended, "own_rmse": own, "samples": samples}


def calibrate_alpha(scenario, net, profile, alphas=config.ALPHA_GRID, tolerance=0.05, workers=config.WORKERS):
    """
    Reruns the scenario for every alpha and compares each vehicle's blended index with the
    index of a vehicle that had driven the ten nearest segments.
    The low-error region holds the alphas within `tolerance` (relative) of the best error.
    """
    table = pd.DataFrame(parallel_map(_alpha_job, [(scenario, net, profile, a) for a in alphas], workers))
    best = int(table["rmse"].idxmin())
    threshold = table.loc[best, "rmse"] * (1.0 + tolerance)
    region = np.flatnonzero(table["rmse"].to_numpy() <= threshold)
    contiguous = bool(np.all(np.diff(region) == 1))
    best_alpha = float(table.loc[best, "alpha"])
    calibration = AlphaCalibration(table, best_alpha, (float(table.loc[region[0], "alpha"]),
                                                       float(table.loc[region[-1], "alpha"])), contiguous)
    if not contiguous:
        logger.warning(f"Low-error alphas are not contiguous: {table.loc[region, 'alpha'].tolist()}")
    low, high = config.ALPHA_EXPECTED_REGION
    if not low <= best_alpha <= high:
        logger.warning(f"Best alpha {best_alpha} lies outside the expected region [{low}, {high}]")
    logger.info(f"Alpha calibration: best {best_alpha} (RMSE {table.loc[best, 'rmse']:.4f}), "
                f"region {calibration.low_error_region}")
    return calibration


def trajectory_index_trace(result, vehicle_id):
    """Own, blended and ground-truth index of one traced vehicle, one row per traversed segment."""
    history = result.histories.get(vehicle_id)
    if not history:
        raise KeyError(f"Vehicle {vehicle_id} has no recorded history in run '{result.name}'")
    return history_frame(history)[["t", "segment", "own_index", "tt_index", "reference_index"]]
