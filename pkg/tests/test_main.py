import os

import pandas as pd
import pytest

import config
import main
from experiments.comparison import MODELS, ExperimentReport
from experiments.report import write_report
from main import build_parser
from network.profiles import HistoricalProfile, save_network
from simulation.scenario import ScenarioConfig


def test_compare_defaults():
    args = build_parser().parse_args(["compare", "--dataset", "data.csv", "--out", "reports"])
    assert args.models == list(MODELS)
    assert (args.folds, args.repeats, args.format) == (config.N_FOLDS, config.N_REPEATS, "csv")
    assert args.seed is None and args.func.__name__ == "cmd_compare"


def test_global_options_precede_the_command():
    args = build_parser().parse_args(["--seed", "7", "--workers", "4", "train", "--dataset", "d.csv",
                                      "--model", "ann", "--search"])
    assert (args.seed, args.workers, args.model, args.search) == (7, 4, "ann", True)
    assert args.budget == config.SEARCH_BUDGET


def test_unknown_choices_are_rejected():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--dataset", "d.csv", "--model", "lstm"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["study", "nonsense", "--out", "x"])


def test_report_command_renders_markdown(tmp_path):
    rows = [{"model": m, "task": "t15", "scenario": s, "run": r, "rmse": 0.1 * (i + 1)}
            for i, m in enumerate(("ann", "mtlcv")) for s in ("all", "base") for r in (0, 1)]
    write_report(ExperimentReport(pd.DataFrame(rows)), str(tmp_path))
    args = build_parser().parse_args(["report", "--scores", str(tmp_path)])
    args.func(args)
    with open(os.path.join(tmp_path, "results_table.md")) as f:
        assert f.read().splitlines()[2] == "| t15 | 0.1000 | 0.2000 |"


# ── Scenario options ──

def test_comm_impact_builds_its_incident_from_the_parsed_scenario(monkeypatch, tmp_path, grid3):
    profile = HistoricalProfile.free_flow(grid3, horizon=1200)
    monkeypatch.setattr(main, "load_environment", lambda scenario: (grid3, profile))
    seen = {}

    def fake_study(scenario, net, profile, replicates, train_config, workers):
        seen["scenario"] = scenario
        return pd.DataFrame({"channel": ["perfect"]})

    monkeypatch.setattr(main.studies, "comm_impact_study", fake_study)
    ScenarioConfig(horizon=1200, demand_rate=0.7, seed=9, channel={"base_loss": 0.3},
                   target_segment=4).save(tmp_path / "scenario.json")
    args = build_parser().parse_args(["--network", "net.json", "study", "comm-impact",
                                      "--config", str(tmp_path / "scenario.json"), "--out", str(tmp_path / "out")])
    args.func(args)
    scenario = seen["scenario"]
    assert scenario.name.startswith("incident") and scenario.events
    assert (scenario.network, scenario.demand_rate, scenario.channel, scenario.target_segment, scenario.seed) == \
        ("net.json", 0.7, {"base_loss": 0.3}, 4, 9)
    assert os.path.exists(tmp_path / "out" / "comm_impact.csv")


@pytest.mark.slow
def test_simulate_is_byte_identical_for_the_same_seed(tmp_path, grid3):
    save_network(tmp_path / "net.json", grid3, HistoricalProfile.free_flow(grid3, horizon=1600))
    ScenarioConfig(horizon=1600, demand_rate=0.3, channel={"base_loss": 0.2}).save(tmp_path / "scenario.json")
    for out in ("a", "b"):
        main.main(["--seed", "5", "--workers", "1", "--network", str(tmp_path / "net.json"), "simulate",
                   "--config", str(tmp_path / "scenario.json"), "--out", str(tmp_path / out), "--message-log"])
    for name in ("stream.csv", "features.csv", "ground_truth.csv", "run.json", "rsu_messages.json"):
        with open(tmp_path / "a" / name, "rb") as a, open(tmp_path / "b" / name, "rb") as b:
            assert a.read() == b.read(), name
