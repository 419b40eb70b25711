import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

import config
from agents.rsu import (FeatureVector, Rsu, export_feature_stream, export_message_log, feature_columns,
                        ground_truth_feature_vector, nearest_segments, reference_tt_index)
from agents.vehicle_agent import GroundTruthCauseClassifier, VehicleAgent
from network.profiles import build_historical_profile, load_network
from network.road_network import adjacent_segments, build_grid_network, central_segment
from simulation.demand import generate_base_demand
from simulation.events import ScenarioEvent
from simulation.ground_truth import export_ground_truth
from simulation.world import World
from utils.errors import EmptyTableError, InsufficientHistoryError, InvalidConfigError
from utils.helpers import read_json, write_csv, write_json
from vanet.channel import (ChannelModel, exchange_step, newest_delivered_tick, segment_density,
                           deliver_upload_to_rsu)
from vanet.scf import ScfRouter

logger = logging.getLogger(__name__)
sim_logger = logging.getLogger("Simulation")


@dataclass
class ScenarioConfig:
    """One run of the road network: demand, events, channel and RSU placement."""
    name: str = "base"
    network: str = None  # path to a network JSON file; None means the default grid
    horizon: int = config.HORIZON_S
    demand_rate: float = config.DEMAND_RATE
    events: list = field(default_factory=list)
    seed: int = config.SEED
    channel: dict = field(default_factory=dict)
    target_segment: int = None

    def with_seed(self, seed):
        return replace(self, seed=seed)

    def to_dict(self):
        return {
            "name": self.name,
            "network": self.network,
            "horizon": self.horizon,
            "demand_rate": self.demand_rate,
            "events": [e.to_dict() for e in self.events],
            "seed": self.seed,
            "channel": dict(self.channel),
            "target_segment": self.target_segment,
        }

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"name", "network", "horizon", "demand_rate", "events", "seed", "channel",
                               "target_segment"}
        if unknown:
            raise InvalidConfigError(f"Unknown scenario keys: {sorted(unknown)}")
        return cls(
            name=data.get("name", "base"),
            network=data.get("network"),
            horizon=int(data.get("horizon", config.HORIZON_S)),
            demand_rate=float(data.get("demand_rate", config.DEMAND_RATE)),
            events=[ScenarioEvent.from_dict(e) for e in data.get("events", [])],
            seed=int(data.get("seed", config.SEED)),
            channel=dict(data.get("channel", {})),
            target_segment=data.get("target_segment"),
        )

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(path))

    def save(self, path):
        write_json(self.to_dict(), path)


def default_network(seed=config.SEED):
    return build_grid_network(config.GRID_ROWS, config.GRID_COLS, config.SEGMENT_LENGTH_M, config.LANES, seed)


def run_mobility_only(net, demand_rate, seed, horizon=config.HORIZON_S, events=(), dawdle_sigma=config.DAWDLE_SIGMA):
    """Traffic without communication; returns the ground-truth log."""
    demand = generate_base_demand(net, demand_rate, [seed, 1], horizon)
    world = World(net, demand, seed, horizon, events=events, dawdle_sigma=dawdle_sigma)
    while not world.finished:
        world.step()
    sim_logger.info(f"Mobility run seed={seed}: {world.inserted} inserted, {world.arrived} arrived, "
                    f"{len(world.vehicles)} on the road, {world.waiting} waiting")
    return world.log


def build_base_profile(net, runs=config.PROFILE_RUNS, demand_rate=config.DEMAND_RATE, seed=config.SEED,
                       horizon=config.HORIZON_S):
    """Averages `runs` seeded no-event runs into the historical profile."""
    logs = [run_mobility_only(net, demand_rate, seed + 10_000 + i, horizon) for i in range(runs)]
    return build_historical_profile(net, logs, horizon)


def load_environment(scenario, profile_runs=config.PROFILE_RUNS):
    """
    Network and historical profile for a scenario, building whatever the network file lacks.
    Both derive from the scenario seed.
    """
    if scenario.network:
        net, profile = load_network(scenario.network)
    else:
        net, profile = default_network(scenario.seed), None
    if profile is None:
        logger.info(f"No stored profile; averaging {profile_runs} base runs")
        profile = build_base_profile(net, profile_runs, scenario.demand_rate, seed=scenario.seed,
                                     horizon=scenario.horizon)
    return net, profile


@dataclass(frozen=True)
class StreamSample:
    t: float  # 5-minute boundary the features describe
    interval: int  # interval that just closed
    features: object  # FeatureVector estimated by the RSU
    ground_truth: object  # FeatureVector from the ground-truth log
    true_flow: int
    event: str


@dataclass
class RunResult:
    name: str
    seed: int
    target: int
    adjacent: list
    log: object
    stream: list
    rsu_flows: dict
    density_samples: list
    histories: dict  # vehicle id -> per-segment rows, reference index included
    stats: dict
    rsu: object = None  # kept only when the RSU recorded its inputs


class ConnectedRun:
    """
    Mobility plus the communication layer. Per 1 s step: events and departures, a pre-step snapshot,
    movement, ten beacon ticks on the pre-step segment membership with interpolated positions,
    then segment changes, uploads, store-carry-forward and the RSU interval bookkeeping.
    """

    def __init__(self, scenario, net, profile, alpha=config.ALPHA, c=config.CONGESTION_FACTOR,
                 classifier=None, trace_vehicle=None, message_trace=None, keep_histories=False,
                 dawdle_sigma=config.DAWDLE_SIGMA, record_messages=False):
        self.scenario = scenario
        self.net = net
        self.profile = profile
        self.alpha = alpha
        self.c = c
        self.trace_vehicle = trace_vehicle
        self.message_trace = message_trace
        self.keep_histories = keep_histories

        seed = scenario.seed
        demand = generate_base_demand(net, scenario.demand_rate, [seed, 1], scenario.horizon)
        self.world = World(net, demand, seed, scenario.horizon, events=scenario.events, dawdle_sigma=dawdle_sigma)
        self.classifier = classifier if classifier is not None else GroundTruthCauseClassifier(self.world.log)

        self.target = scenario.target_segment if scenario.target_segment is not None else central_segment(net)
        self.adjacent = adjacent_segments(net, self.target)
        self.reference_segments = list(reversed(nearest_segments(net, self.target, config.TRAJECTORY_CAPACITY - 1)))
        self.reference_segments.append(self.target)
        seg = net.segment(self.target)
        rsu_xy = ((seg.start[0] + seg.end[0]) / 2.0, (seg.start[1] + seg.end[1]) / 2.0)
        self.rsu = Rsu(self.target, self.adjacent, profile, rsu_xy, scenario.horizon, record=record_messages)
        self.channel = ChannelModel.from_dict(scenario.channel, seed=[seed, 2])
        self.router = ScfRouter(self.channel, self.rsu, trace=message_trace)
        self._phase_rng = np.random.default_rng([seed, 3])

        self.agents = {}
        self.histories = {}
        self.stream = []
        self.density_samples = []
        self._reference_cache = {}

    # --- helpers ---

    def _spawn_agents(self):
        for vid in sorted(self.world.vehicles):
            if vid in self.agents:
                continue
            vehicle = self.world.vehicles[vid]
            self.agents[vid] = VehicleAgent(
                vid, vehicle.segment, vehicle.segment_entry_time, self.net.segment(vehicle.segment).heading,
                self.profile, phase=self._phase_rng.random() * config.BEACON_PERIOD_S, alpha=self.alpha, c=self.c,
                classifier=self.classifier, keep_history=self.keep_histories or vid == self.trace_vehicle)

    def _retire(self, vid):
        agent = self.agents.pop(vid)
        self.router.drop(vid)
        if agent.keep_history:
            self.histories[vid] = agent.history

    def _densities(self, segments):
        counts = {}
        for seg_id in segments:
            counts[int(seg_id)] = counts.get(int(seg_id), 0) + 1
        return np.array([segment_density(counts[int(s)], self.net.segment(int(s))) for s in segments]), counts

    def reference_index(self, segment, t):
        """Ground-truth index over `segment` and its nine nearest segments, cached per (segment, t)."""
        key = (segment, t)
        if key not in self._reference_cache:
            segments = list(reversed(nearest_segments(self.net, segment, config.TRAJECTORY_CAPACITY - 1)))
            segments.append(segment)
            self._reference_cache[key] = reference_tt_index(self.world.log, self.profile, segments, t)
        return self._reference_cache[key]

    def _beacon(self, cache, i, k, pre, post_positions, post_speeds, t):
        key = (i, k)
        if key not in cache:
            agent = self.agents[int(pre.ids[i])]
            frac = agent.phase / self.world.dt + k / config.COMM_TICKS_PER_STEP
            seg = self.net.segment(int(pre.segments[i]))
            position = min(pre.positions[i] + frac * post_speeds[i] * self.world.dt, seg.length)
            cache[key] = agent.beacon(t + frac * self.world.dt, position, post_speeds[i])
        return cache[key]

    def _exchange_beacons(self, pre, post_xy, post_positions, post_speeds, densities, counts, t):
        n = len(pre)
        if not n:
            return
        dt = self.world.dt
        phases = np.array([self.agents[int(vid)].phase / dt for vid in pre.ids])
        cache = {}

        # V2V pairs share a segment; a vehicle drops beacons about any other segment, so
        # vehicles across an intersection never exchange even when within range
        same = pre.segments[:, None] == pre.segments[None, :]
        np.fill_diagonal(same, False)
        senders, receivers = np.nonzero(same)
        if len(senders):
            delivered = exchange_step(self.channel, pre.xy[senders], post_xy[senders], phases[senders],
                                      pre.xy[receivers], post_xy[receivers], densities[receivers])
            newest = newest_delivered_tick(delivered)
            ok = np.flatnonzero(newest >= 0)
            beacons = [(int(pre.ids[receivers[p]]), self._beacon(cache, senders[p], newest[p], pre, post_positions,
                                                                 post_speeds, t)) for p in ok]
            beacons.sort(key=lambda rb: (rb[0], rb[1].time))
            for receiver, beacon in beacons:
                self.agents[receiver].receive(beacon, beacon.time)

        on_target = np.flatnonzero(pre.segments == self.target)
        if len(on_target):
            rsu_xy = np.tile(np.asarray(self.rsu.xy, dtype=float), (len(on_target), 1))
            density = segment_density(counts[self.target], self.net.segment(self.target))
            delivered = exchange_step(self.channel, pre.xy[on_target], post_xy[on_target], phases[on_target],
                                      rsu_xy, rsu_xy, np.full(len(on_target), density))
            self.density_samples.append((density, float(delivered.mean())))
            newest = newest_delivered_tick(delivered)
            arrivals = [self._beacon(cache, on_target[j], newest[j], pre, post_positions, post_speeds, t)
                        for j in np.flatnonzero(newest >= 0)]
            for beacon in sorted(arrivals, key=lambda b: (b.time, b.sender_id)):
                self.rsu.ingest_beacon(beacon, beacon.time)
            if self.message_trace is not None:
                for j, i in enumerate(on_target):
                    for k in range(delivered.shape[1]):
                        tick_time = t + (phases[i] + k / config.COMM_TICKS_PER_STEP) * dt
                        self.message_trace.record(tick_time, "beacon", int(pre.ids[i]), "rsu", delivered[j, k])

    def _handle_changes(self, changes, now, ids, xy, densities):
        index = {int(vid): i for i, vid in enumerate(ids)}
        for change in changes:
            agent = self.agents[change.vehicle_id]
            heading = self.net.segment(change.to_segment).heading if change.to_segment is not None else agent.heading
            agent.on_segment_change(change.to_segment, heading, now)
            upload = agent.make_upload(now)
            i = index[change.vehicle_id]
            delivered = deliver_upload_to_rsu(self.channel, upload, xy[i], self.rsu, densities[i], now,
                                              self.message_trace)
            if delivered is None:
                self.router.store(change.vehicle_id, upload, now)
            if change.to_segment is None:
                self._retire(change.vehicle_id)

    def _close_interval(self, now):
        flow = self.rsu.end_of_step(now)
        if flow is None:
            return
        boundary = now - self.world.dt
        k = int(boundary // self.rsu.interval) - 1
        try:
            features = self.rsu.assemble_feature_vector(boundary, now)
        except (InsufficientHistoryError, EmptyTableError) as e:
            sim_logger.debug(f"t={boundary}: feature vector deferred ({e})")
            return
        truth = ground_truth_feature_vector(self.world.log, self.profile, self.target, self.adjacent, boundary,
                                            self.scenario.horizon, self.reference_segments)
        log = self.world.log
        self.stream.append(StreamSample(boundary, k, features, truth, log.flow(self.target, k),
                                        log.interval_event(self.target, k)))
        sim_logger.info(f"[{self.scenario.name}] t={boundary:.0f}: RSU flow {flow}, true flow "
                        f"{log.flow(self.target, k)}, TTindex {features.values[1]:.4f}")

    # --- main loop ---

    def step(self):
        world = self.world
        world.begin_step()
        t = world.t
        self._spawn_agents()
        pre = world.snapshot()
        changes = world.advance()
        now = world.t

        post_xy = pre.xy.copy()
        post_positions = pre.positions.copy()
        post_speeds = pre.speeds.copy()
        post_segments = pre.segments.copy()
        for i, vid in enumerate(pre.ids):
            vehicle = world.vehicles.get(int(vid))
            if vehicle is None:
                continue
            post_xy[i] = self.net.segment(vehicle.segment).xy_at(vehicle.position, vehicle.lane)
            post_positions[i] = vehicle.position
            post_speeds[i] = vehicle.speed
            post_segments[i] = vehicle.segment

        densities, counts = self._densities(pre.segments)
        self._exchange_beacons(pre, post_xy, post_positions, post_speeds, densities, counts, t)
        for vid in pre.ids:
            self.agents[int(vid)].refresh_index(now)

        post_densities, _ = self._densities(post_segments)
        self._handle_changes(changes, now, pre.ids, post_xy, post_densities)
        present = np.array([vid in world.vehicles for vid in pre.ids.tolist()], dtype=bool)
        self.router.forward(now, pre.ids[present], post_xy[present], post_densities[present])
        self._close_interval(now)

    def run(self):
        sim_logger.info(f"[{self.scenario.name}] seed={self.scenario.seed}: target segment {self.target}, "
                        f"adjacent {self.adjacent}, channel {self.channel.to_dict()}")
        while not self.world.finished:
            self.step()
        for vid in sorted(self.agents):
            if self.agents[vid].keep_history:
                self.histories[vid] = self.agents[vid].history
        for history in self.histories.values():
            for row in history:
                row["reference_index"] = self.reference_index(row["segment"], row["t"])
        world = self.world
        stats = {
            "inserted": world.inserted,
            "arrived": world.arrived,
            "on_road": len(world.vehicles),
            "waiting": world.waiting,
            "scf_delivered": self.router.delivered,
            "scf_relayed": self.router.relayed,
            "scf_expired": self.router.expired,
            "samples": len(self.stream),
        }
        logger.info(f"Run '{self.scenario.name}' seed={self.scenario.seed} finished: {stats}")
        return RunResult(self.scenario.name, self.scenario.seed, self.target, self.adjacent, world.log, self.stream,
                         dict(self.rsu.interval_flows), self.density_samples, self.histories, stats,
                         self.rsu if self.rsu.inbox is not None else None)


def run_scenario(scenario, net, profile, **kwargs):
    return ConnectedRun(scenario, net, profile, **kwargs).run()


def history_frame(history):
    return pd.DataFrame(history, columns=["t", "segment", "current_tt", "event", "flow", "own_index", "tt_index",
                                          "reference_index"])


def export_vehicle_trace(result, vehicle_id, path):
    history = result.histories.get(vehicle_id)
    if history is None:
        logger.warning(f"Vehicle {vehicle_id} was not traced in run '{result.name}'")
        return None
    frame = history_frame(history)
    write_csv(frame, path)
    logger.info(f"Trace of vehicle {vehicle_id} ({len(frame)} segments) written to {path}")
    return frame


# --- Persisted runs ---

STREAM_META_COLUMNS = ["t", "interval", "true_flow", "event"]


@dataclass
class StoredRun:
    """A run read back from disk: enough to rebuild its labeled examples."""
    name: str
    seed: int
    target: int
    stream: list


def stream_frame(result):
    columns = feature_columns()
    rows = []
    for s in result.stream:
        row = {"t": s.t, "interval": s.interval, "true_flow": s.true_flow, "event": s.event}
        row.update({f"x_{c}": v for c, v in zip(columns, s.features.values)})
        row.update({f"gt_{c}": v for c, v in zip(columns, s.ground_truth.values)})
        rows.append(row)
    return pd.DataFrame(rows, columns=STREAM_META_COLUMNS + [f"x_{c}" for c in columns] +
                        [f"gt_{c}" for c in columns])


def export_run(result, out_dir, message_trace=None):
    """
    Writes one run: the RSU stream with estimated and ground-truth features, the ground-truth log,
    the estimated feature stream, the message trace and RSU input log if they were kept, and a JSON summary.
    """
    write_csv(stream_frame(result), f"{out_dir}/stream.csv")
    export_ground_truth(result.log, f"{out_dir}/ground_truth.csv")
    export_feature_stream([s.features for s in result.stream], f"{out_dir}/features.csv")
    if message_trace is not None:
        message_trace.export(f"{out_dir}/messages.csv")
    if result.rsu is not None:
        export_message_log(result.rsu, f"{out_dir}/rsu_messages.json")
    write_json({"name": result.name, "seed": result.seed, "target": result.target, "adjacent": result.adjacent,
                "rsu_flows": {str(k): v for k, v in sorted(result.rsu_flows.items())}, "stats": result.stats},
               f"{out_dir}/run.json")
    logger.info(f"Run '{result.name}' seed={result.seed} exported to {out_dir}")


def load_stream(run_dir):
    summary = read_json(f"{run_dir}/run.json")
    frame = pd.read_csv(f"{run_dir}/stream.csv")
    columns = feature_columns()
    x = frame[[f"x_{c}" for c in columns]].to_numpy(dtype=float)
    gt = frame[[f"gt_{c}" for c in columns]].to_numpy(dtype=float)
    stream = [StreamSample(float(row.t), int(row.interval), FeatureVector(float(row.t), x[i]),
                           FeatureVector(float(row.t), gt[i]), int(row.true_flow), str(row.event))
              for i, row in enumerate(frame.itertuples(index=False))]
    return StoredRun(summary["name"], int(summary["seed"]), int(summary["target"]), stream)
