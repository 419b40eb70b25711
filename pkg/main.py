import argparse
import glob
import logging
import os
import sys
from dataclasses import replace

import pandas as pd

import config
from experiments import comparison, report, studies
from experiments.suite import default_suite, run_suite
from learning.dataset import (ClassBinning, FlowNormalizer, dataset_from_runs, fit_constants, load_dataset,
                              make_folds, prepare, save_dataset, temporal_holdout)
from learning.mtl_network import load_model, make_variant, save_model
from learning.training import (TrainConfig, ann_search_space, export_loss_curve, grid_search, head_rmse,
                               mtl_search_space, sample_space, train)
from network.profiles import save_network
from simulation.scenario import (ConnectedRun, ScenarioConfig, build_base_profile, default_network, export_run,
                                 export_vehicle_trace, load_environment, load_stream, run_mobility_only)
from utils.errors import StpError
from utils.helpers import setup_logging, write_csv, write_json
from vanet.channel import ChannelModel, MessageTrace

logger = logging.getLogger(__name__)


# --- Helpers ---

def _scenario(args):
    scenario = ScenarioConfig.load(args.config) if getattr(args, "config", None) else ScenarioConfig()
    if args.network:
        scenario.network = args.network
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    return scenario


def _seed(args):
    return config.SEED if args.seed is None else args.seed


def _suite(scenario, net, replicates=config.SUITE_REPLICATES):
    return default_suite(net, seed=scenario.seed, horizon=scenario.horizon, replicates=replicates,
                         channel=scenario.channel, target=scenario.target_segment,
                         network_path=scenario.network, demand_rate=scenario.demand_rate)


def _run_dirs(traces):
    return sorted(os.path.dirname(p) for p in glob.glob(os.path.join(traces, "**", "run.json"), recursive=True))


# --- Commands ---

def cmd_network(args):
    """Builds the default grid and its historical profile, then stores both."""
    net = default_network(_seed(args))
    profile = build_base_profile(net, args.profile_runs, args.demand_rate, seed=_seed(args), horizon=args.horizon)
    save_network(args.out, net, profile)
    logger.info(f"Network with {len(net.segments)} segments and profile written to {args.out}")


def cmd_simulate(args):
    scenario = _scenario(args)
    net, profile = load_environment(scenario)
    if args.suite:
        for result in run_suite(_suite(scenario, net, args.replicates), net, profile, workers=args.workers):
            export_run(result, os.path.join(args.out, f"{result.name}-{result.seed}"))
        return

    trace = MessageTrace() if args.message_trace else None
    result = ConnectedRun(scenario, net, profile, trace_vehicle=args.trace_vehicle, message_trace=trace,
                          record_messages=args.message_log).run()
    export_run(result, args.out, trace)
    if args.trace_vehicle is not None:
        export_vehicle_trace(result, args.trace_vehicle, os.path.join(args.out, f"vehicle_{args.trace_vehicle}.csv"))


def cmd_build_dataset(args):
    runs = [load_stream(d) for d in _run_dirs(args.traces)]
    if not runs:
        raise StpError(f"No simulated runs found under {args.traces}")
    dataset = dataset_from_runs(runs)
    dataset.meta["source"] = os.path.abspath(args.traces)
    save_dataset(dataset, args.out)


def cmd_train(args):
    dataset = load_dataset(args.dataset)
    seed = _seed(args)
    train_config = TrainConfig.load(args.config, args.model) if args.config else TrainConfig.for_variant(args.model)
    if args.seed is not None:
        train_config = replace(train_config, seed=seed)
    train_index, _ = temporal_holdout(dataset)
    train_part = dataset.subset(train_index)

    if args.search:
        space = (sample_space(ann_search_space(), args.budget, seed,
                              keep={"hidden_layers": (config.ANN_HIDDEN_UNITS,), "epochs": config.ANN_EPOCHS,
                                    "learning_rate": config.LEARNING_RATE})
                 if args.model == "ann" else mtl_search_space(args.budget, seed))
        train_config = grid_search(train_part, space, train_config, workers=args.workers).best_config

    _, _, fit_index, val_index = make_folds(len(train_part), n_repeats=1, seed=seed)[0]
    binning, normalizer = fit_constants(train_part.subset(fit_index))
    result = train(prepare(train_part.subset(fit_index), binning, normalizer), train_config,
                   prepare(train_part.subset(val_index), binning, normalizer))

    os.makedirs(args.out, exist_ok=True)
    name = make_variant(args.model).name
    save_model(result.network, os.path.join(args.out, f"{name}.npz"),
               extra={"binning": binning.to_dict(), "flow_scale": normalizer.scale,
                      "train_config": train_config.to_dict()})
    export_loss_curve(result.curve, os.path.join(args.out, f"{name}_loss.csv"))
    train_config.save(os.path.join(args.out, f"{name}_config.json"))


def cmd_evaluate(args):
    dataset = load_dataset(args.dataset)
    _, test_index = temporal_holdout(dataset)
    rows = []
    for path in sorted(glob.glob(os.path.join(args.models, "*.npz"))):
        network, descriptor = load_model(path)
        binning = ClassBinning.from_dict(descriptor["binning"])
        normalizer = FlowNormalizer(float(descriptor["flow_scale"]))
        scores = head_rmse(network, prepare(dataset.subset(test_index), binning, normalizer))
        for task, value in scores.items():
            rows.append({"model": network.arch.name, "task": task, "scenario": "all", "run": 0, "rmse": value})
        logger.info(f"{network.arch.name}: {scores}")
    write_csv(pd.DataFrame(rows, columns=comparison.SCORE_COLUMNS), args.report)


def cmd_compare(args):
    dataset = load_dataset(args.dataset)
    result = comparison.run_comparison(dataset, models=tuple(args.models), n_folds=args.folds,
                                       n_repeats=args.repeats, seed=_seed(args), workers=args.workers)
    report.write_report(result, args.out, args.format)


def cmd_report(args):
    report.write_report(report.load_report(args.scores), args.out or args.scores, args.format)


def cmd_study(args):
    seed = _seed(args)
    os.makedirs(args.out, exist_ok=True)

    def out(name):
        return os.path.join(args.out, name)

    if args.study == "ablation":
        table = studies.feature_ablation(load_dataset(args.dataset), TrainConfig(seed=seed), seed=seed,
                                         workers=args.workers)
        write_csv(table, out("ablation.csv"))
        return

    if args.study == "density":
        channel = ChannelModel.from_dict(_scenario(args).channel, seed=seed)
        curve = studies.density_accuracy_curve(channel, seed=seed)
        write_csv(curve, out("density_accuracy.csv"))
        residual = studies.monotone_residual(curve)
        write_json({"monotone_residual": residual, "levels": len(curve)}, out("density_monotonicity.json"))
        return

    scenario = _scenario(args)
    net, profile = load_environment(scenario)

    if args.study == "c-factor":
        logs = [run_mobility_only(net, scenario.demand_rate, seed + i, scenario.horizon)
                for i in range(args.replicates)]
        observations = studies.no_event_observations(logs, profile)
        c = studies.calibrate_congestion_factor(observations)
        write_csv(studies.travel_time_variability(observations, c), out("travel_time_variability.csv"))
        write_json({"congestion_factor": c}, out("congestion_factor.json"))

    elif args.study == "alpha":
        calibration = studies.calibrate_alpha(scenario, net, profile, workers=args.workers)
        write_csv(calibration.table, out("alpha.csv"))
        write_json({"best_alpha": calibration.best_alpha, "low_error_region": list(calibration.low_error_region),
                    "contiguous": calibration.contiguous}, out("alpha_summary.json"))
        if args.trace_vehicle is not None:
            result = ConnectedRun(scenario, net, profile, trace_vehicle=args.trace_vehicle).run()
            write_csv(studies.trajectory_index_trace(result, args.trace_vehicle),
                      out(f"index_trace_{args.trace_vehicle}.csv"))

    elif args.study == "comm-impact":
        if not scenario.events:
            scenario = next(s for s in _suite(scenario, net).scenarios if s.name.startswith("incident"))
        table = studies.comm_impact_study(scenario, net, profile, replicates=args.replicates,
                                          train_config=TrainConfig(seed=seed), workers=args.workers)
        write_csv(table, out("comm_impact.csv"))


# --- CLI ---

def build_parser():
    parser = argparse.ArgumentParser(description="Connected-vehicle traffic flow prediction toolkit")
    parser.add_argument("--seed", type=int, default=None, help="single seed all randomness derives from")
    parser.add_argument("--workers", type=int, default=config.WORKERS)
    parser.add_argument("--network", default=None, help="network JSON file (with or without a stored profile)")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("network", help="build the grid network and its historical profile")
    p.add_argument("--out", required=True)
    p.add_argument("--profile-runs", type=int, default=config.PROFILE_RUNS)
    p.add_argument("--demand-rate", type=float, default=config.DEMAND_RATE)
    p.add_argument("--horizon", type=int, default=config.HORIZON_S)
    p.set_defaults(func=cmd_network)

    p = sub.add_parser("simulate", help="run one scenario (or the scenario suite) with communication")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--trace-vehicle", type=int, default=None)
    p.add_argument("--message-trace", action="store_true")
    p.add_argument("--message-log", action="store_true", help="keep every RSU input for offline replay")
    p.add_argument("--suite", action="store_true")
    p.add_argument("--replicates", type=int, default=config.SUITE_REPLICATES)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build-dataset", help="window simulated RSU streams into labeled examples")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=["ann", "mtla", "mtlb", "mtlcv"], default="mtlcv")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="models")
    p.add_argument("--search", action="store_true")
    p.add_argument("--budget", type=int, default=config.SEARCH_BUDGET)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score stored models on the test partition")
    p.add_argument("--models", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="repeated k-fold comparison of ARIMA and the network variants")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--models", nargs="+", default=list(comparison.MODELS), choices=list(comparison.MODELS))
    p.add_argument("--folds", type=int, default=config.N_FOLDS)
    p.add_argument("--repeats", type=int, default=config.N_REPEATS)
    p.add_argument("--format", choices=report.FORMATS, default="csv")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="re-render a stored comparison")
    p.add_argument("--scores", required=True, help="directory holding scores.csv")
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=report.FORMATS, default="markdown")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("study", help="ablation, communication impact and calibration studies")
    p.add_argument("study", choices=["ablation", "comm-impact", "density", "alpha", "c-factor"])
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--replicates", type=int, default=config.SUITE_REPLICATES)
    p.add_argument("--trace-vehicle", type=int, default=None)
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(config.APPLICATION_LOG, config.SIMULATION_LOG, config.TRAINING_LOG,
                  level=getattr(logging, args.log_level.upper(), logging.INFO))
    if args.command == "study" and args.study == "ablation" and not args.dataset:
        raise StpError("study ablation needs --dataset")
    logger.info(f"Running '{args.command}' with seed {_seed(args)}")
    args.func(args)
    logger.info(f"'{args.command}' finished.")


# --- Main Execution ---
if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        logging.info("Stopped manually.")
    except StpError as e:
        logging.error(f"{type(e).__name__}: {e}")
        sys.exit(2)
    except Exception as e:
        logging.critical(f"An unhandled error occurred: {e}", exc_info=True)
        sys.exit(1)
