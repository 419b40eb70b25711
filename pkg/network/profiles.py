import json
import logging
from dataclasses import dataclass, field

import numpy as np

import config
from network.road_network import NetworkGraph
from utils.errors import HorizonError, UnknownSegmentError

logger = logging.getLogger(__name__)


@dataclass
class HistoricalProfile:
    """Expected travel time (TTh) and expected flow per segment per time-of-day bin."""
    bin_s: int
    n_bins: int
    tth: dict = field(default_factory=dict)  # seg id -> np.ndarray[n_bins], seconds
    expected_flow: dict = field(default_factory=dict)  # seg id -> np.ndarray[n_bins], vehicles per bin

    @property
    def horizon(self):
        return self.bin_s * self.n_bins

    def bin_index(self, t):
        if t < 0 or t >= self.horizon:
            raise HorizonError(f"t={t} outside the profiled horizon [0, {self.horizon})")
        return int(t // self.bin_s)

    def travel_time(self, seg_id, t):
        try:
            series = self.tth[seg_id]
        except KeyError:
            raise UnknownSegmentError(f"No historical profile for segment {seg_id}") from None
        return float(series[self.bin_index(t)])

    def flow(self, seg_id, t):
        try:
            series = self.expected_flow[seg_id]
        except KeyError:
            raise UnknownSegmentError(f"No historical profile for segment {seg_id}") from None
        return float(series[self.bin_index(t)])

    def to_dict(self):
        return {
            "bin_s": self.bin_s,
            "n_bins": self.n_bins,
            "tth": {str(k): [round(float(v), 6) for v in arr] for k, arr in sorted(self.tth.items())},
            "expected_flow": {str(k): [round(float(v), 6) for v in arr] for k, arr in sorted(self.expected_flow.items())},
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            bin_s=int(data["bin_s"]),
            n_bins=int(data["n_bins"]),
            tth={int(k): np.asarray(v, dtype=float) for k, v in data["tth"].items()},
            expected_flow={int(k): np.asarray(v, dtype=float) for k, v in data["expected_flow"].items()},
        )

    @classmethod
    def free_flow(cls, net, horizon=config.HORIZON_S, bin_s=config.PROFILE_BIN_S):
        n_bins = int(np.ceil(horizon / bin_s))
        return cls(
            bin_s=bin_s,
            n_bins=n_bins,
            tth={s.id: np.full(n_bins, s.free_flow_time) for s in net.segments.values()},
            expected_flow={s.id: np.zeros(n_bins) for s in net.segments.values()},
        )


def historical_travel_time(profile, seg, t):
    """Expected recurring travel time of `seg` for the 5-minute bin containing `t` (seconds from start)."""
    return profile.travel_time(seg, t)


def build_historical_profile(net, logs, horizon=config.HORIZON_S, bin_s=config.PROFILE_BIN_S):
    """
    Averages no-event ground-truth logs into a profile.
    Travel times are binned by segment entry time; bins without observations fall back to the
    segment's overall mean, then to free-flow time. Every value is floored at length/speed_limit.
    """
    n_bins = int(np.ceil(horizon / bin_s))
    profile = HistoricalProfile(bin_s=bin_s, n_bins=n_bins)
    if not logs:
        logger.warning("No ground-truth logs given; using free-flow profile")
        return HistoricalProfile.free_flow(net, horizon, bin_s)

    tt_sum = {s: np.zeros(n_bins) for s in net.segments}
    tt_count = {s: np.zeros(n_bins) for s in net.segments}
    for log in logs:
        for _, seg_id, entry, exit_time in log.traversals:
            b = int(entry // bin_s)
            if 0 <= b < n_bins:
                tt_sum[seg_id][b] += exit_time - entry
                tt_count[seg_id][b] += 1

    for seg in net.segments.values():
        counts = tt_count[seg.id]
        fallback = tt_sum[seg.id].sum() / counts.sum() if counts.sum() > 0 else seg.free_flow_time
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(counts > 0, tt_sum[seg.id] / np.maximum(counts, 1), fallback)
        profile.tth[seg.id] = np.maximum(means, seg.free_flow_time)

        flows = np.stack([log.flow_series(seg.id)[:n_bins] for log in logs])
        profile.expected_flow[seg.id] = flows.mean(axis=0)

    logger.info(f"Built historical profile from {len(logs)} base runs ({n_bins} bins of {bin_s} s)")
    return profile


def save_network(path, net, profile=None):
    """Writes network (and optionally its profile) as one JSON document."""
    data = net.to_dict()
    if profile is not None:
        data["profile"] = profile.to_dict()
    with open(path, 'w') as f:
        json.dump(data, f, sort_keys=True, indent=2)
        f.write("\n")


def load_network(path):
    with open(path, 'r') as f:
        data = json.load(f)
    net = NetworkGraph.from_dict(data)
    profile = HistoricalProfile.from_dict(data["profile"]) if "profile" in data else None
    return net, profile
