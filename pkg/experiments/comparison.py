import hashlib
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

import config
from agents.rsu import PAST_FLOW_SLICE
from experiments.metrics import classifier_rmse, flow_rmse, paired_win_fraction
from experiments.suite import scenario_category
from learning.arima import fit_arima, forecast_arima
from learning.dataset import fit_constants, make_folds, prepare, temporal_holdout
from learning.training import TrainConfig, predict_classes, train
from utils.errors import InsufficientHistoryError
from utils.helpers import parallel_map

logger = logging.getLogger(__name__)

MODELS = ("arima", "ann", "mtla", "mtlb", "mtlcv")
SCORE_COLUMNS = ["model", "task", "scenario", "run", "rmse"]
# (better, worse) pairs expected on the 15-minute task
ORDERINGS = (("mtlcv", "ann"), ("ann", "arima"), ("mtlcv", "mtla"), ("mtla", "ann"), ("mtlcv", "mtlb"),
             ("mtlb", "ann"))
HARD_SCENARIOS = ("incident", "workzone")
EASY_SCENARIOS = ("special_event", "recurrent")


@dataclass
class ExperimentReport:
    """Per-run RMSE scores in long format plus the metadata needed to reproduce them."""
    scores: pd.DataFrame
    meta: dict = field(default_factory=dict)

    def summary(self):
        """Mean and standard deviation per (task, model) over all scenarios."""
        overall = self.scores[self.scores["scenario"] == "all"]
        return overall.groupby(["task", "model"])["rmse"].agg(["mean", "std", "count"]).reset_index()

    def results_table(self):
        """Tasks as rows, models as columns; cells a model has no head for stay empty."""
        table = self.summary().pivot(index="task", columns="model", values="mean")
        columns = [m for m in MODELS if m in table.columns]
        return table.reindex(index=[t for t in config.TASKS if t in table.index], columns=columns)


def config_hash(data):
    return hashlib.sha1(json.dumps(data, sort_keys=True, default=str).encode()).hexdigest()[:12]


def _score_rows(model, task, run_id, predicted, true_classes, categories, binning, normalizer, as_flow=False):
    score = flow_rmse if as_flow else classifier_rmse
    rows = [{"model": model, "task": task, "scenario": "all", "run": run_id,
             "rmse": score(predicted, true_classes, binning, normalizer)}]
    for category in sorted(set(categories)):
        mask = categories == category
        rows.append({"model": model, "task": task, "scenario": category, "run": run_id,
                     "rmse": score(predicted[mask], true_classes[mask], binning, normalizer)})
    return rows


def _learner_job(job):
    kind, train_config, dataset, train_index, val_index, test_index, run_id = job
    train_part = dataset.subset(train_index)
    binning, normalizer = fit_constants(train_part)
    result = train(prepare(train_part, binning, normalizer), train_config,
                   prepare(dataset.subset(val_index), binning, normalizer))
    test = prepare(dataset.subset(test_index), binning, normalizer)
    categories = np.array([scenario_category(s) for s in dataset.scenario[test_index]])
    predicted = predict_classes(result.network, test.x)
    rows = []
    for j, task in enumerate(config.TASKS):
        if task in predicted:
            rows.extend(_score_rows(kind, task, run_id, predicted[task], test.classes[:, j], categories, binning,
                                    normalizer))
    return rows


def series_from_dataset(dataset):
    """
    True target-segment flow per 5-minute interval for every run, rebuilt from the labels
    (and the ground-truth past flows when present). Unknown intervals are NaN.
    """
    series = {}
    for run in np.unique(dataset.run):
        index = np.flatnonzero(dataset.run == run)
        ks = (dataset.t[index] // config.FLOW_INTERVAL_S).astype(int) - 1
        offsets = [config.TASK_OFFSETS[task] for task in config.TASKS]
        length = int(ks.max()) + max(offsets) + 1
        values = np.full(length, np.nan)
        if dataset.x_truth is not None:
            past = dataset.x_truth[index][:, PAST_FLOW_SLICE]
            for k, row in zip(ks, past):
                for lag, flow in enumerate(row):
                    if k - lag >= 0:
                        values[k - lag] = flow
        for k, flows in zip(ks, dataset.flows[index]):
            for offset, flow in zip(offsets, flows):
                values[k + offset] = flow
        series[int(run)] = values
    return series


def _known_tail(values):
    """Longest NaN-free suffix."""
    missing = np.flatnonzero(np.isnan(values))
    return values[missing[-1] + 1:] if len(missing) else values


def arima_forecasts(dataset, train_index, test_index, tasks=config.ARIMA_TASKS):
    """
    Fits one ARIMA per run on the flows its training examples cover and forecasts every
    test example recursively from its own interval.
    :return: task -> forecasts aligned with test_index (NaN where no model could be fitted)
    """
    series = series_from_dataset(dataset)
    forecasts = {task: np.full(len(test_index), np.nan) for task in tasks}
    horizon = max(config.TASK_OFFSETS[task] for task in tasks)
    test_k = (dataset.t[test_index] // config.FLOW_INTERVAL_S).astype(int) - 1
    for run, values in series.items():
        in_train = train_index[dataset.run[train_index] == run]
        if not len(in_train):
            continue
        last_k = int(dataset.t[in_train].max() // config.FLOW_INTERVAL_S) - 1
        fit_end = last_k + max(config.TASK_OFFSETS.values()) + 1
        try:
            model = fit_arima(_known_tail(values[:fit_end]))
        except InsufficientHistoryError as e:
            logger.warning(f"No ARIMA for run {run}: {e}")
            continue
        for j in np.flatnonzero(dataset.run[test_index] == run):
            history = _known_tail(values[:test_k[j] + 1])
            path = forecast_arima(model.with_history(history), horizon)
            for task in tasks:
                forecasts[task][j] = path[config.TASK_OFFSETS[task] - 1]
    return forecasts


def run_comparison(dataset, models=MODELS, n_folds=config.N_FOLDS, n_repeats=config.N_REPEATS, seed=config.SEED,
                   workers=config.WORKERS, configs=None, test_fraction=config.TEST_FRACTION):
    """
    Repeated k-fold protocol: the last part of every run is held out for testing, the folds
    split the rest into training and validation. Each (repeat, fold) trains every learner
    once and scores it on the test partition, overall and per scenario category.
    """
    configs = dict(configs or {})
    train_index, test_index = temporal_holdout(dataset, test_fraction)
    folds = make_folds(len(train_index), n_folds, n_repeats, seed)
    learners = [m for m in models if m != "arima"]
    train_configs = {kind: configs.get(kind, TrainConfig.for_variant(kind, seed=seed)) for kind in learners}

    jobs = []
    for repeat, fold, fold_train, fold_val in folds:
        run_id = repeat * n_folds + fold
        for kind in learners:
            cfg = replace(train_configs[kind], seed=train_configs[kind].seed + run_id)
            jobs.append((kind, cfg, dataset, train_index[fold_train], train_index[fold_val], test_index, run_id))
    logger.info(f"Comparison: {len(jobs)} training jobs over {len(folds)} folds, {len(test_index)} test examples")
    rows = [row for job_rows in parallel_map(_learner_job, jobs, workers) for row in job_rows]

    if "arima" in models:
        forecasts = arima_forecasts(dataset, train_index, test_index)
        categories = np.array([scenario_category(s) for s in dataset.scenario[test_index]])
        for repeat, fold, fold_train, _ in folds:
            run_id = repeat * n_folds + fold
            binning, normalizer = fit_constants(dataset.subset(train_index[fold_train]))
            test = prepare(dataset.subset(test_index), binning, normalizer)
            for task, predicted in forecasts.items():
                j = config.TASKS.index(task)
                ok = ~np.isnan(predicted)
                if ok.any():
                    rows.extend(_score_rows("arima", task, run_id, predicted[ok], test.classes[ok, j],
                                            categories[ok], binning, normalizer, as_flow=True))

    scores = pd.DataFrame(rows, columns=SCORE_COLUMNS)
    model_order = {m: i for i, m in enumerate(MODELS)}
    scores = scores.sort_values(["model", "task", "scenario", "run"],
                                key=lambda c: c.map(model_order) if c.name == "model" else c).reset_index(drop=True)
    meta = {
        "seed": seed,
        "n_folds": n_folds,
        "n_repeats": n_repeats,
        "examples": len(dataset),
        "test_examples": int(len(test_index)),
        "configs": {kind: cfg.to_dict() for kind, cfg in train_configs.items()},
    }
    meta["config_hash"] = config_hash(meta)
    report = ExperimentReport(scores, meta)
    logger.info(f"Comparison finished:\n{report.results_table()}")
    return report


def per_scenario_table(report, task="t15"):
    """Scenario categories as rows, models as columns, mean RMSE on one task."""
    scores = report.scores[(report.scores["task"] == task) & (report.scores["scenario"] != "all")]
    table = scores.groupby(["scenario", "model"])["rmse"].mean().unstack("model")
    return table.reindex(columns=[m for m in MODELS if m in table.columns])


def check_orderings(report, task="t15", min_win_fraction=config.PAIRED_WIN_FRACTION):
    """
    Model orderings on the mean and on paired runs, plus the hard-versus-easy scenario ordering
    of the multitask model. Orderings involving an absent model are skipped.
    """
    overall = report.scores[(report.scores["task"] == task) & (report.scores["scenario"] == "all")]
    paired = overall.pivot(index="run", columns="model", values="rmse")
    checks = []
    for better, worse in ORDERINGS:
        if better not in paired.columns or worse not in paired.columns:
            continue
        both = paired[[better, worse]].dropna()
        if both.empty:
            continue
        holds_mean = bool(both[better].mean() < both[worse].mean())
        win = paired_win_fraction(both[better].to_numpy(), both[worse].to_numpy())
        checks.append({"check": f"{better} < {worse}", "holds_mean": holds_mean, "win_fraction": win,
                       "passed": holds_mean and win >= min_win_fraction})

    by_scenario = per_scenario_table(report, task)
    if "mtlcv" in by_scenario.columns:
        column = by_scenario["mtlcv"]
        hard = [column[s] for s in HARD_SCENARIOS if s in column.index]
        easy = [column[s] for s in EASY_SCENARIOS if s in column.index]
        if hard and easy:
            passed = bool(min(hard) > max(easy))
            checks.append({"check": "mtlcv incident/workzone > special_event/recurrent", "holds_mean": passed,
                           "win_fraction": float("nan"), "passed": passed})

    verdict = {"task": task, "checks": checks, "passed": all(c["passed"] for c in checks)}
    for c in checks:
        log = logger.info if c["passed"] else logger.warning
        log(f"Ordering {c['check']}: mean {'holds' if c['holds_mean'] else 'fails'}, "
            f"paired wins {c['win_fraction']:.2f}")
    return verdict
