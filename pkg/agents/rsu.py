import logging
from collections import deque
from dataclasses import dataclass

import numpy as np
import pandas as pd

import config
from agents.vehicle_agent import NeighborTable, compute_tt_index, on_beacon_received, one_hot
from network.road_network import hop_distances
from utils.errors import DimensionMismatchError, EmptyTableError, InsufficientHistoryError
from utils.helpers import read_json, write_csv, write_json
from vanet.messages import BeaconMessage, Heading, UploadMessage, UploadRecord

logger = logging.getLogger(__name__)


def feature_columns(adjacent_count=config.ADJACENT_COUNT, history=config.FLOW_HISTORY):
    columns = ["t", "tti"]
    columns += [f"f_t{i}" for i in range(1, history + 1)]
    columns += [f"f_a{i}" for i in range(1, adjacent_count + 1)]
    columns += [f"e_a{i}_{k}" for i in range(1, adjacent_count + 1) for k in range(1, len(config.EVENT_KINDS) + 1)]
    return columns


# Column slices of the feature vector
TIME_SLICE = slice(0, 1)
TTI_SLICE = slice(1, 2)
PAST_FLOW_SLICE = slice(2, 2 + config.FLOW_HISTORY)
ADJ_FLOW_SLICE = slice(PAST_FLOW_SLICE.stop, PAST_FLOW_SLICE.stop + config.ADJACENT_COUNT)
EVENT_SLICE = slice(ADJ_FLOW_SLICE.stop, config.FEATURE_DIM)
FLOW_COLUMNS = np.r_[PAST_FLOW_SLICE, ADJ_FLOW_SLICE]


@dataclass(frozen=True)
class FeatureVector:
    """RSU input for one 5-minute boundary `t`. Flows are raw vehicle counts until the dataset scales them."""
    t: float
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (config.FEATURE_DIM,):
            raise DimensionMismatchError(f"Feature vector must have {config.FEATURE_DIM} components, got {self.values.shape}")


def build_feature_vector(t, horizon, tti, past_flows, adjacent_flows, adjacent_events):
    values = np.concatenate([
        [t / horizon],
        [tti],
        np.asarray(past_flows, dtype=float),
        np.asarray(adjacent_flows, dtype=float),
        np.concatenate([one_hot(kind) for kind in adjacent_events]),
    ])
    return FeatureVector(float(t), values)


class RsuTable(NeighborTable):
    """Beacons from vehicles on the target segment; same semantics as a vehicle's neighbor table."""


class HistoricalFlowTable:
    """The last four interval flows on the target segment, newest first."""

    def __init__(self, size=config.FLOW_HISTORY):
        self.values = deque(maxlen=size)

    def __len__(self):
        return len(self.values)

    def push(self, flow):
        self.values.appendleft(flow)

    @property
    def is_full(self):
        return len(self.values) == self.values.maxlen

    def as_list(self):
        return list(self.values)


@dataclass(frozen=True)
class AdjacentReport:
    flow: float
    event: str
    report_time: float


class AdjacentState:
    """Latest report per adjacent segment. Missing or stale slots read as (expected flow, none)."""

    def __init__(self, segments, staleness=config.STALENESS_S):
        self.segments = list(segments)
        self.staleness = staleness
        self.reports = {}

    def update(self, segment_id, flow, event, report_time):
        current = self.reports.get(segment_id)
        if current is not None and current.report_time >= report_time:
            return False
        self.reports[segment_id] = AdjacentReport(flow, event, report_time)
        return True

    def slot(self, segment_id, now, profile):
        report = self.reports.get(segment_id)
        if report is None or now - report.report_time > self.staleness:
            return profile.flow(segment_id, min(now, profile.horizon - 1)), "none"
        return report.flow, report.event


class Rsu:
    """
    Road-side unit on the target segment.
    A sender counts toward the flow of an interval once its presence on the segment ends,
    i.e. after a full step without any beacon from it; interval k is closed one step after its end.
    A counted sender heard again further along the segment within 15 minutes is the same traversal
    resuming after lost beacons and is not counted twice.
    :param record: keep every input in `inbox` so the feature stream can be replayed
    """

    def __init__(self, target, adjacent, profile, xy, horizon=config.HORIZON_S,
                 interval=config.FLOW_INTERVAL_S, staleness=config.STALENESS_S, dt=config.STEP_S, record=False):
        self.target = target
        self.adjacent = list(adjacent)
        self.profile = profile
        self.xy = tuple(xy)
        self.horizon = horizon
        self.interval = interval
        self.staleness = staleness
        self.dt = dt
        self.table = RsuTable(staleness)
        self.flows = HistoricalFlowTable()
        self.adjacent_state = AdjacentState(self.adjacent, staleness)
        self.interval_flows = {}
        self.stream = []
        self.inbox = [] if record else None
        self._last_heard = {}  # sender -> (time, position) of its newest beacon
        self._counted = {}  # sender -> (time, position) where its counted presence ended
        self._resumed = set()
        self._departed = {}

    def ingest_beacon(self, beacon, now):
        if self.inbox is not None:
            self.inbox.append(("beacon", now, beacon))
        if beacon.segment_id != self.target:
            return
        on_beacon_received(self.table, beacon, now, self.target)
        sid = beacon.sender_id
        if sid not in self._last_heard:
            counted = self._counted.get(sid)
            if counted is not None and beacon.position >= counted[1] and beacon.time - counted[0] <= self.staleness:
                self._resumed.add(sid)
        if beacon.time >= self._last_heard.get(sid, (-np.inf, 0.0))[0]:
            self._last_heard[sid] = (beacon.time, beacon.position)

    def end_of_step(self, now):
        """Closes presences silent for a whole step; returns the interval flow if one is due at `now`."""
        if self.inbox is not None:
            self.inbox.append(("step", now))
        ended = [sid for sid, (t, _) in self._last_heard.items() if t < now - self.dt]
        for sid in ended:
            last = self._last_heard.pop(sid)
            self._counted[sid] = last
            if sid in self._resumed:
                self._resumed.discard(sid)
                continue
            k = int(np.floor(last[0]) // self.interval)
            self._departed.setdefault(k, set()).add(sid)
        for sid in [sid for sid, (t, _) in self._counted.items() if now - t > self.staleness]:
            del self._counted[sid]
        due = now - self.dt
        if due > 0 and due % self.interval == 0:
            return self.compute_interval_flow(int(due // self.interval) - 1)
        return None

    def compute_interval_flow(self, k):
        flow = len(self._departed.pop(k, ()))
        self.flows.push(flow)
        self.interval_flows[k] = flow
        logger.debug(f"RSU on segment {self.target}: interval {k} flow {flow}")
        return flow

    def average_tt_index(self, now=None):
        """
        Mean index over the unpruned table: every sender heard on the target segment in the last
        15 minutes, including vehicles that have since left it.
        """
        if now is not None:
            self.table.prune(now)
        if not len(self.table):
            raise EmptyTableError(f"RSU on segment {self.target} holds no beacons")
        return self.table.mean_tt_index()

    def ingest_upload(self, upload, now):
        """Keeps fresh records about adjacent segments, newest report wins per slot."""
        if self.inbox is not None:
            self.inbox.append(("upload", now, upload))
        accepted = 0
        for record in upload.records:
            if record.segment_id not in self.adjacent_state.segments:
                continue
            if now - record.time > self.staleness:
                continue
            if self.adjacent_state.update(record.segment_id, record.flow, record.event, record.time):
                accepted += 1
        return accepted

    def assemble_feature_vector(self, t, now=None):
        """
        Feature vector stamped at boundary `t`.
        :raises InsufficientHistoryError: fewer than four interval flows so far
        :raises EmptyTableError: no beacon to average
        """
        now = t if now is None else now
        if self.inbox is not None:
            self.inbox.append(("assemble", t, now))
        if not self.flows.is_full:
            raise InsufficientHistoryError(f"Only {len(self.flows)} interval flows at t={t}")
        tti = self.average_tt_index(now)
        slots = [self.adjacent_state.slot(seg_id, now, self.profile) for seg_id in self.adjacent]
        vector = build_feature_vector(t, self.horizon, tti, self.flows.as_list(),
                                      [flow for flow, _ in slots], [event for _, event in slots])
        self.stream.append(vector)
        return vector

    def setup(self):
        """Construction arguments, enough to rebuild an empty RSU for replay."""
        return {"target": int(self.target), "adjacent": [int(s) for s in self.adjacent],
                "xy": [float(v) for v in self.xy], "horizon": self.horizon, "interval": self.interval,
                "staleness": self.staleness, "dt": self.dt}


# --- Message log ---

def _beacon_to_dict(beacon):
    return {"segment_id": int(beacon.segment_id), "time": float(beacon.time), "sender_id": int(beacon.sender_id),
            "position": float(beacon.position), "speed": float(beacon.speed), "tt_index": float(beacon.tt_index),
            "direction": Heading(beacon.direction).value}


def _upload_to_dict(upload):
    return {"vehicle_id": int(upload.vehicle_id), "time": float(upload.time), "tt_index": float(upload.tt_index),
            "records": [[int(r.segment_id), float(r.time), float(r.flow), str(r.event), float(r.current_tt)]
                        for r in upload.records]}


def export_message_log(rsu, path):
    """Writes the RSU setup and every input it received, in arrival order, as JSON."""
    entries = []
    for entry in rsu.inbox:
        kind = entry[0]
        if kind == "beacon":
            entries.append(["beacon", float(entry[1]), _beacon_to_dict(entry[2])])
        elif kind == "upload":
            entries.append(["upload", float(entry[1]), _upload_to_dict(entry[2])])
        else:
            entries.append([kind] + [float(v) for v in entry[1:]])
    write_json({"rsu": rsu.setup(), "entries": entries}, path)
    logger.info(f"RSU message log with {len(entries)} entries written to {path}")


def load_message_log(path):
    data = read_json(path)
    entries = []
    for entry in data["entries"]:
        kind = entry[0]
        if kind == "beacon":
            fields = dict(entry[2], direction=Heading(entry[2]["direction"]))
            entries.append(("beacon", entry[1], BeaconMessage(**fields)))
        elif kind == "upload":
            u = entry[2]
            records = tuple(UploadRecord(*r) for r in u["records"])
            entries.append(("upload", entry[1], UploadMessage(u["vehicle_id"], u["time"], u["tt_index"], records)))
        else:
            entries.append(tuple(entry))
    return data["rsu"], entries


def replay_message_log(setup, entries, profile):
    """Feeds a recorded input sequence to a fresh RSU; returns the feature vectors it emits."""
    rsu = Rsu(setup["target"], setup["adjacent"], profile, setup["xy"], setup["horizon"], setup["interval"],
              setup["staleness"], setup["dt"])
    for entry in entries:
        kind = entry[0]
        if kind == "beacon":
            rsu.ingest_beacon(entry[2], entry[1])
        elif kind == "upload":
            rsu.ingest_upload(entry[2], entry[1])
        elif kind == "step":
            rsu.end_of_step(entry[1])
        else:
            try:
                rsu.assemble_feature_vector(entry[1], entry[2])
            except (InsufficientHistoryError, EmptyTableError):
                pass
    return rsu.stream


def nearest_segments(net, segment, count, max_hops=6):
    """Up to `count` segments closest to `segment` by hop distance (ties by id), excluding it."""
    hops = hop_distances(net, segment, max_hops)
    return sorted(hops, key=lambda s: (hops[s], s))[:count]


def reference_tt_index(log, profile, segments, t, window=config.FLOW_INTERVAL_S):
    """
    Travel-time index a vehicle would compute after visiting every segment in `segments`
    (oldest first), using the true mean travel time of the last `window` seconds.
    Segments without a recent completion contribute no deviation.
    """
    b = min(max(t - config.STEP_S, 0), profile.horizon - 1)
    pairs = []
    for seg_id in segments:
        tth = profile.travel_time(seg_id, b)
        times = log.travel_times(seg_id, t - window, t)
        pairs.append((float(times.mean()) if len(times) else tth, tth))
    return compute_tt_index(pairs)


def ground_truth_feature_vector(log, profile, target, adjacent, t, horizon, reference_segments):
    """The feature vector a perfectly informed RSU would emit at boundary t."""
    k = int(t // log.interval) - 1
    past = [log.flow(target, j) if j >= 0 else 0 for j in range(k, k - config.FLOW_HISTORY, -1)]
    adjacent_flows = [log.flow(seg_id, k) for seg_id in adjacent]
    events = [log.active_event(seg_id, t - config.STEP_S) for seg_id in adjacent]
    tti = reference_tt_index(log, profile, reference_segments, t)
    return build_feature_vector(t, horizon, tti, past, adjacent_flows, events)


def feature_frame(vectors):
    return pd.DataFrame([v.values for v in vectors], columns=feature_columns())


def export_feature_stream(vectors, path):
    write_csv(feature_frame(vectors), path)
    logger.info(f"Feature stream of {len(vectors)} vectors written to {path}")
