import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

import config
from utils.errors import InvalidConfigError, InvalidEventError, InvalidTrajectoryError
from vanet.messages import BeaconMessage, Heading, UploadMessage, UploadRecord

logger = logging.getLogger(__name__)


class EventKind(str, Enum):
    ACCIDENT = "accident"
    WORKZONE = "workzone"
    WEATHER = "weather"
    RECURRENT = "recurrent"
    SPECIAL_EVENT = "special_event"
    NONE = "none"


def one_hot(kind):
    """Six-wide encoding in EventKind order, e.g. accident -> 100000."""
    vector = np.zeros(len(config.EVENT_KINDS))
    vector[config.EVENT_KINDS.index(EventKind(kind).value)] = 1.0
    return vector


# --- Travel-time index ---

def compute_tt_index(trajectory):
    """
    Recency-weighted deviation of observed from historical travel times.
    :param trajectory: up to 10 (tt, tth) pairs, oldest first. The newest pair always carries weight i = 10;
                       missing older terms contribute 0 and the divisor stays 10.
    """
    pairs = np.asarray(trajectory, dtype=float).reshape(-1, 2)
    n = len(pairs)
    if n == 0:
        raise InvalidTrajectoryError("Cannot compute a travel-time index from an empty trajectory")
    if n > config.TRAJECTORY_CAPACITY:
        raise InvalidTrajectoryError(f"Trajectory has {n} segments, at most {config.TRAJECTORY_CAPACITY} allowed")
    tt, tth = pairs[:, 0], pairs[:, 1]
    if np.any(tth <= 0):
        raise InvalidTrajectoryError("Historical travel times must be positive")
    capacity = config.TRAJECTORY_CAPACITY
    weights = np.arange(capacity - n + 1, capacity + 1) / capacity
    return float(np.sum(1.0 - np.exp(-weights * (tt - tth) / tth)) / capacity)


def blend_indices(own, neighbor_mean, alpha=config.ALPHA):
    """(1 - alpha) * own + alpha * neighbor_mean; own unchanged when there is no neighbor input."""
    if not 0 <= alpha <= 1:
        raise InvalidConfigError(f"alpha must be in [0, 1] (got {alpha})")
    if neighbor_mean is None:
        return own
    return (1.0 - alpha) * own + alpha * neighbor_mean


def detect_excessive(observed_tt, tth, c=config.CONGESTION_FACTOR):
    return observed_tt > c * tth


# --- Tables ---

class NeighborTable:
    """
    Latest beacon per sender heard on the current segment.
    Entries are kept in update order so pruning stops at the first fresh one.
    """

    def __init__(self, staleness=config.STALENESS_S):
        self.staleness = staleness
        self.entries = {}

    def __len__(self):
        return len(self.entries)

    def __contains__(self, sender_id):
        return sender_id in self.entries

    def get(self, sender_id):
        return self.entries.get(sender_id)

    def upsert(self, beacon):
        current = self.entries.get(beacon.sender_id)
        if current is not None:
            if current.time > beacon.time:
                return
            del self.entries[beacon.sender_id]
        self.entries[beacon.sender_id] = beacon

    def prune(self, now):
        stale = [sid for sid, b in self.entries.items() if now - b.time > self.staleness]
        for sid in stale:
            del self.entries[sid]
        return len(stale)

    def clear(self):
        self.entries.clear()

    def mean_tt_index(self):
        if not self.entries:
            return None
        return float(np.mean([b.tt_index for b in self.entries.values()]))

    def senders_since(self, t0):
        return {sid for sid, b in self.entries.items() if b.time >= t0}


def on_beacon_received(table, beacon, now, my_segment):
    """Drops off-segment beacons, upserts by sender and discards entries older than 15 minutes."""
    if beacon.segment_id != my_segment:
        return table
    table.upsert(beacon)
    table.prune(now)
    return table


def local_flow_estimate(table, window, now):
    """Distinct senders heard on the current segment within `window` seconds, plus self."""
    return len(table.senders_since(now - window)) + 1


def flow_per_interval(count, current_tt, interval=config.FLOW_INTERVAL_S):
    """
    Converts the number of vehicles met during a traversal into vehicles per interval.
    Vehicles sharing the segment with a traversal of duration T arrive within a window of about 2T.
    """
    return max(count - 1, 0) * interval / (2.0 * max(current_tt, config.STEP_S))


@dataclass(frozen=True)
class TrajectoryEntry:
    segment_id: int
    time: float  # exit time
    current_tt: float
    event: str
    flow: float
    tth: float

    def to_record(self):
        return UploadRecord(self.segment_id, self.time, self.flow, self.event, self.current_tt)


class TrajectoryLog:
    """The last 10 traversed segments, newest first."""

    def __init__(self, capacity=config.TRAJECTORY_CAPACITY, staleness=config.STALENESS_S):
        self.capacity = capacity
        self.staleness = staleness
        self.entries = []

    def __len__(self):
        return len(self.entries)

    def push(self, entry):
        if self.entries and entry.time <= self.entries[0].time:
            raise InvalidTrajectoryError(
                f"Entry time {entry.time} is not after the latest entry ({self.entries[0].time})")
        self.entries.insert(0, entry)
        del self.entries[self.capacity:]

    def index_pairs(self):
        """(current_tt, tth) pairs, oldest first."""
        return [(e.current_tt, e.tth) for e in reversed(self.entries)]

    def fresh(self, now):
        return [e for e in self.entries if now - e.time <= self.staleness]

    def records(self, now):
        return tuple(e.to_record() for e in self.fresh(now))


# --- Congestion cause ---

@dataclass(frozen=True)
class CauseContext:
    vehicle_id: int
    segment_id: int
    entry_time: float
    exit_time: float
    observed_tt: float
    tth: float


class GroundTruthCauseClassifier:
    """Reads the scenario: the event active on the segment during the traversal, else recurrent."""

    def __init__(self, log):
        self.log = log

    def classify(self, context):
        kinds = {e.kind for e in self.log.events
                 if e.kind != "none" and e.overlaps(context.entry_time, context.exit_time)
                 and (e.kind == "weather" or e.affected_segment == context.segment_id)}
        for kind in config.EVENT_KINDS:
            if kind in kinds:
                return kind
        return EventKind.RECURRENT.value


def classify_cause(context, classifier):
    kind = classifier.classify(context)
    if kind not in config.EVENT_KINDS:
        raise InvalidEventError(f"Classifier returned unknown event kind '{kind}'")
    return kind


def on_segment_change(vehicle, log, now, table, profile, classifier=None, c=config.CONGESTION_FACTOR):
    """
    Closes the traversal of `vehicle.segment`: measures its travel time, estimates the local flow,
    tags excessive congestion and pushes a new head entry (evicting the tail beyond 10).
    """
    current_tt = now - vehicle.segment_entry_time
    tth = profile.travel_time(vehicle.segment, min(vehicle.segment_entry_time, profile.horizon - 1))
    count = local_flow_estimate(table, current_tt, now)
    event = EventKind.NONE.value
    if detect_excessive(current_tt, tth, c) and classifier is not None:
        context = CauseContext(getattr(vehicle, "id", -1), vehicle.segment, vehicle.segment_entry_time,
                               now, current_tt, tth)
        event = classify_cause(context, classifier)
    log.push(TrajectoryEntry(vehicle.segment, now, current_tt, event, flow_per_interval(count, current_tt), tth))
    return log


class VehicleAgent:
    """
    Connected-vehicle logic riding on one simulated vehicle.
    :param phase: beacon phase offset within the 0.1 s period
    """

    def __init__(self, vehicle_id, segment, entry_time, heading, profile, phase=0.0,
                 alpha=config.ALPHA, c=config.CONGESTION_FACTOR, classifier=None, keep_history=False):
        self.id = vehicle_id
        self.segment = segment
        self.segment_entry_time = entry_time
        self.heading = Heading(heading)
        self.profile = profile
        self.phase = phase
        self.alpha = alpha
        self.c = c
        self.classifier = classifier
        self.table = NeighborTable()
        self.log = TrajectoryLog()
        self.own_index = 0.0
        self.tt_index = 0.0
        self.keep_history = keep_history
        self.history = []  # one row per traversed segment
        self._last_refresh = None

    def beacon(self, t, position, speed):
        return BeaconMessage(self.segment, t, self.id, position, speed, self.tt_index, self.heading)

    def receive(self, beacon, now):
        on_beacon_received(self.table, beacon, now, self.segment)

    def refresh_index(self, now):
        """Blends the own index with the neighbors' mean, at most once per step."""
        if self._last_refresh == now:
            return self.tt_index
        self._last_refresh = now
        self.tt_index = blend_indices(self.own_index, self.table.mean_tt_index(), self.alpha)
        return self.tt_index

    def on_segment_change(self, next_segment, heading, now):
        on_segment_change(self, self.log, now, self.table, self.profile, self.classifier, self.c)
        self.own_index = compute_tt_index(self.log.index_pairs())
        self.table.clear()
        self._last_refresh = None
        self.refresh_index(now)
        if self.keep_history:
            head = self.log.entries[0]
            self.history.append({
                "t": now,
                "segment": self.segment,
                "current_tt": head.current_tt,
                "event": head.event,
                "flow": head.flow,
                "own_index": self.own_index,
                "tt_index": self.tt_index,
            })
        if next_segment is not None:
            self.segment = next_segment
            self.heading = Heading(heading)
            self.segment_entry_time = now
        return self.log

    def make_upload(self, now):
        return UploadMessage(self.id, now, self.tt_index, self.log.records(now))
