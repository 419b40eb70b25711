import logging
from dataclasses import dataclass, replace

import config
from network.road_network import central_segment
from simulation.events import ScenarioEvent
from simulation.scenario import ScenarioConfig, run_scenario
from utils.helpers import parallel_map

logger = logging.getLogger(__name__)

# (lane position, blocked lane, duration s) of each incident scenario
INCIDENT_GRID = (("beginning", 0, 1200), ("middle", 1, 1800), ("end", 0, 2400))
WEATHER_FACTOR = 0.6
CATEGORIES = ("base", "incident", "workzone", "weather", "special_event", "recurrent")


def scenario_category(name):
    """'incident-middle-1' -> 'incident'."""
    return name.split("-")[0]


@dataclass
class ScenarioSuite:
    """Named scenario configs, each run `replicates` times with derived seeds."""
    scenarios: list
    replicates: int = config.SUITE_REPLICATES

    def runs(self):
        configs = []
        for i, scenario in enumerate(self.scenarios):
            for r in range(self.replicates):
                configs.append(scenario.with_seed(scenario.seed + 1000 * i + r))
        return configs

    @property
    def names(self):
        return [s.name for s in self.scenarios]


def default_suite(net, seed=config.SEED, horizon=config.HORIZON_S, replicates=config.SUITE_REPLICATES,
                  channel=None, target=None, network_path=None, demand_rate=config.DEMAND_RATE,
                  incident_grid=INCIDENT_GRID):
    """
    Base run plus one scenario per event kind around the target segment; incidents span
    the position/lane/duration grid.
    """
    target = central_segment(net) if target is None else target
    start = horizon / 3.0
    common = dict(network=network_path, horizon=horizon, demand_rate=demand_rate, seed=seed,
                  channel=dict(channel or {}), target_segment=target)

    scenarios = [ScenarioConfig(name="base", **common)]
    for position, lane, duration in incident_grid:
        event = ScenarioEvent("accident", target, start, duration, (lane,), position)
        scenarios.append(ScenarioConfig(name=f"incident-{position}-{lane}-{duration}", events=[event], **common))
    workzone_duration = max(config.WORKZONE_MIN_DURATION_S, horizon / 2.0)
    scenarios.append(ScenarioConfig(
        name="workzone", events=[ScenarioEvent("workzone", target, horizon / 4.0, workzone_duration, (1,))], **common))
    scenarios.append(ScenarioConfig(
        name="weather", events=[ScenarioEvent("weather", target, start, horizon / 2.0,
                                              weather_speed_factor=WEATHER_FACTOR)], **common))
    scenarios.append(ScenarioConfig(
        name="special_event", events=[ScenarioEvent("special_event", target, start, horizon / 2.0,
                                                    event_destination=target)], **common))
    scenarios.append(ScenarioConfig(
        name="recurrent", events=[ScenarioEvent("recurrent", target, start, horizon / 2.0,
                                                intensity=config.RECURRENT_MULTIPLIER)], **common))
    return ScenarioSuite(scenarios, replicates)


def with_channel(suite, channel):
    return ScenarioSuite([replace(s, channel=dict(channel)) for s in suite.scenarios], suite.replicates)


def _run_job(job):
    scenario, net, profile, kwargs = job
    return run_scenario(scenario, net, profile, **kwargs)


def run_suite(suite, net, profile, workers=config.WORKERS, **kwargs):
    """Every replicate of every scenario; results come back in suite order."""
    runs = suite.runs()
    logger.info(f"Running {len(runs)} scenario runs ({len(suite.scenarios)} scenarios x {suite.replicates}) "
                f"on {workers} worker(s)")
    return parallel_map(_run_job, [(scenario, net, profile, kwargs) for scenario in runs], workers)
