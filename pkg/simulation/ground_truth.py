import bisect
import logging
from collections import defaultdict

import numpy as np
import pandas as pd

import config
from utils.helpers import write_csv

logger = logging.getLogger(__name__)


class GroundTruthLog:
    """
    Exact record of what happened on the road.
    A completion belongs to the 5-minute interval in which its final step began.
    """

    def __init__(self, net, horizon=config.HORIZON_S, interval=config.FLOW_INTERVAL_S, events=()):
        self.net = net
        self.horizon = horizon
        self.interval = interval
        self.n_intervals = int(np.ceil(horizon / interval))
        self.events = list(events)
        self.traversals = []  # (vehicle_id, segment, entry_time, exit_time)
        self._flow = {seg_id: np.zeros(self.n_intervals, dtype=int) for seg_id in net.segments}
        self._tt_sum = {seg_id: np.zeros(self.n_intervals) for seg_id in net.segments}
        self._exits = defaultdict(list)  # seg -> exit times, ascending
        self._times = defaultdict(list)  # seg -> travel times aligned with _exits
        # independent counter for the conservation cross-check
        self.completions_per_interval = np.zeros(self.n_intervals, dtype=int)

    def interval_of(self, exit_time):
        return int((exit_time - config.STEP_S) // self.interval)

    def record_traversal(self, vehicle_id, segment, entry_time, exit_time):
        travel_time = exit_time - entry_time
        self.traversals.append((vehicle_id, segment, entry_time, exit_time))
        self._exits[segment].append(exit_time)
        self._times[segment].append(travel_time)
        k = self.interval_of(exit_time)
        if 0 <= k < self.n_intervals:
            self._flow[segment][k] += 1
            self._tt_sum[segment][k] += travel_time
            self.completions_per_interval[k] += 1

    def add_event(self, event):
        self.events.append(event)

    def flow_series(self, segment):
        return self._flow[segment].copy()

    def flow(self, segment, k):
        return int(self._flow[segment][k])

    def mean_tt(self, segment, k):
        n = self._flow[segment][k]
        return float(self._tt_sum[segment][k] / n) if n else float("nan")

    def travel_times(self, segment, t0, t1):
        """Travel times of completions on `segment` with exit time in (t0, t1]."""
        exits = self._exits.get(segment, [])
        lo, hi = bisect.bisect_right(exits, t0), bisect.bisect_right(exits, t1)
        return np.array(self._times[segment][lo:hi], dtype=float)

    def vehicle_travel_times(self, vehicle_id):
        return [(seg, exit_time - entry) for vid, seg, entry, exit_time in self.traversals if vid == vehicle_id]

    def affects(self, event, segment):
        if event.kind == "weather":
            return True
        return event.affected_segment == segment

    def active_event(self, segment, t):
        """Kind of the event active on `segment` at time t, in EVENT_KINDS priority order, else 'none'."""
        kinds = {e.kind for e in self.events if e.kind != "none" and e.is_active(t) and self.affects(e, segment)}
        for kind in config.EVENT_KINDS:
            if kind in kinds:
                return kind
        return "none"

    def interval_event(self, segment, k):
        t0, t1 = k * self.interval, (k + 1) * self.interval
        kinds = {e.kind for e in self.events if e.kind != "none" and e.overlaps(t0, t1) and self.affects(e, segment)}
        for kind in config.EVENT_KINDS:
            if kind in kinds:
                return kind
        return "none"

    def to_frame(self):
        rows = []
        for seg_id in self.net.segments:
            for k in range(self.n_intervals):
                rows.append({
                    "segment": seg_id,
                    "interval_start": k * self.interval,
                    "flow": self.flow(seg_id, k),
                    "mean_tt": self.mean_tt(seg_id, k),
                    "event": self.interval_event(seg_id, k),
                })
        return pd.DataFrame(rows, columns=["segment", "interval_start", "flow", "mean_tt", "event"])


def export_ground_truth(log, path):
    write_csv(log.to_frame(), path)
    logger.info(f"Ground truth for {len(log.net.segments)} segments x {log.n_intervals} intervals written to {path}")
