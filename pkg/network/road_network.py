import json
import logging
from dataclasses import dataclass

import networkx as nx
import numpy as np

import config
from utils.errors import InvalidNetworkError, NetworkTooSmallError, UnknownSegmentError

logger = logging.getLogger(__name__)

# (row step, col step, heading) in enumeration order
_GRID_MOVES = ((0, 1, "E"), (1, 0, "N"), (0, -1, "W"), (-1, 0, "S"))


@dataclass(frozen=True)
class RoadSegment:
    id: int
    length: float
    lanes: int
    speed_limit: float
    downstream: tuple
    signalized: bool
    start: tuple  # (x, y) of the upstream node, meters
    end: tuple  # (x, y) of the downstream node, meters
    heading: str = "E"
    to_node: int = -1

    @property
    def free_flow_time(self):
        return self.length / self.speed_limit

    def xy_at(self, position, lane=0):
        """Planar coordinates of a point `position` meters along the segment, offset to the right per lane."""
        sx, sy = self.start
        ex, ey = self.end
        ux, uy = (ex - sx) / self.length, (ey - sy) / self.length
        # right-hand normal keeps opposite directions apart
        offset = (lane + 0.5) * config.LANE_WIDTH_M
        return (sx + ux * position + uy * offset, sy + uy * position - ux * offset)


@dataclass(frozen=True)
class SignalPlan:
    node: int
    offset: int
    green: int
    red: int
    phase_a: tuple  # east/west approaches
    phase_b: tuple  # north/south approaches

    @property
    def cycle(self):
        return self.green + self.red

    def is_green(self, segment_id, t):
        in_first_phase = (t + self.offset) % self.cycle < self.green
        if segment_id in self.phase_a:
            return in_first_phase
        return not in_first_phase


class NetworkGraph:
    """
    Road network: segments keyed by id plus the fixed-cycle signal plans.
    Immutable after construction.
    """

    def __init__(self, segments, signal_plans=()):
        self.segments = dict(sorted(segments.items()))
        self.signal_plans = tuple(sorted(signal_plans, key=lambda p: p.node))
        self._validate()

        self.graph = nx.DiGraph()
        self.graph.add_nodes_from(self.segments)
        for seg in self.segments.values():
            for nxt in seg.downstream:
                self.graph.add_edge(seg.id, nxt, weight=seg.free_flow_time)

        self._plan_of = {}
        for plan in self.signal_plans:
            for seg_id in plan.phase_a + plan.phase_b:
                self._plan_of[seg_id] = plan
        self._upstream = {seg_id: tuple(sorted(self.graph.predecessors(seg_id))) for seg_id in self.segments}
        self._routes = {}

    def _validate(self):
        for seg in self.segments.values():
            if seg.length < config.MIN_SEGMENT_LENGTH_M:
                raise InvalidNetworkError(f"Segment {seg.id} is {seg.length} m long, below {config.MIN_SEGMENT_LENGTH_M} m")
            if seg.lanes not in (1, 2, 3):
                raise InvalidNetworkError(f"Segment {seg.id} has {seg.lanes} lanes")
            if seg.speed_limit <= 0:
                raise InvalidNetworkError(f"Segment {seg.id} has non-positive speed limit")
            for nxt in seg.downstream:
                if nxt not in self.segments:
                    raise InvalidNetworkError(f"Segment {seg.id} points to unknown downstream segment {nxt}")

        seen = {}
        for plan in self.signal_plans:
            for seg_id in plan.phase_a + plan.phase_b:
                if seg_id in seen:
                    raise InvalidNetworkError(f"Segment {seg_id} belongs to signal plans {seen[seg_id]} and {plan.node}")
                seen[seg_id] = plan.node
        for seg in self.segments.values():
            if seg.signalized and seg.id not in seen:
                raise InvalidNetworkError(f"Signalized segment {seg.id} has no signal plan")

    def segment(self, seg_id):
        try:
            return self.segments[seg_id]
        except KeyError:
            raise UnknownSegmentError(f"Unknown segment {seg_id}") from None

    def upstream(self, seg_id):
        self.segment(seg_id)
        return self._upstream[seg_id]

    def is_green(self, seg_id, t):
        plan = self._plan_of.get(seg_id)
        if plan is None:
            return True
        return plan.is_green(seg_id, t)

    def is_strongly_connected(self):
        return nx.is_strongly_connected(self.graph)

    def shortest_route(self, origin, destination):
        """Fastest free-flow route as a list of segment ids, origin and destination included."""
        key = (origin, destination)
        if key not in self._routes:
            self.segment(origin)
            self.segment(destination)
            try:
                self._routes[key] = tuple(nx.shortest_path(self.graph, origin, destination, weight="weight"))
            except nx.NetworkXNoPath:
                self._routes[key] = None
        return self._routes[key]

    def to_dict(self):
        return {
            "segments": [
                {
                    "id": s.id,
                    "length": s.length,
                    "lanes": s.lanes,
                    "speed_limit": s.speed_limit,
                    "downstream": list(s.downstream),
                    "signalized": s.signalized,
                    "start": list(s.start),
                    "end": list(s.end),
                    "heading": s.heading,
                    "to_node": s.to_node,
                }
                for s in self.segments.values()
            ],
            "signal_plans": [
                {
                    "node": p.node,
                    "offset": p.offset,
                    "green": p.green,
                    "red": p.red,
                    "phase_a": list(p.phase_a),
                    "phase_b": list(p.phase_b),
                }
                for p in self.signal_plans
            ],
        }

    @classmethod
    def from_dict(cls, data):
        segments = {}
        for s in data["segments"]:
            segments[int(s["id"])] = RoadSegment(
                id=int(s["id"]),
                length=float(s["length"]),
                lanes=int(s["lanes"]),
                speed_limit=float(s["speed_limit"]),
                downstream=tuple(int(d) for d in s["downstream"]),
                signalized=bool(s["signalized"]),
                start=tuple(s["start"]),
                end=tuple(s["end"]),
                heading=s.get("heading", "E"),
                to_node=int(s.get("to_node", -1)),
            )
        plans = [
            SignalPlan(node=int(p["node"]), offset=int(p["offset"]), green=int(p["green"]), red=int(p["red"]),
                       phase_a=tuple(p["phase_a"]), phase_b=tuple(p["phase_b"]))
            for p in data.get("signal_plans", [])
        ]
        return cls(segments, plans)

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def build_grid_network(rows, cols, segment_length, lanes, seed,
                       speed_limit=config.SPEED_LIMIT_MPS,
                       green=config.SIGNAL_GREEN_S, red=config.SIGNAL_RED_S):
    """
    Builds a rows x cols grid of intersections joined by two-way streets.
    Each street is two directed segments; interior intersections get a two-phase signal
    whose offset is the only seeded quantity.
    """
    if rows < 3 or cols < 3:
        raise InvalidNetworkError(f"Grid must be at least 3x3 (got {rows}x{cols}); no interior target segment exists")

    def node_id(r, c):
        return r * cols + c

    def coords(r, c):
        return (float(c * segment_length), float(r * segment_length))

    edges = []  # (from_node, to_node, heading, from_rc, to_rc)
    for r in range(rows):
        for c in range(cols):
            for dr, dc, heading in _GRID_MOVES:
                nr, nc = r + dr, c + dc
                if 0 <= nr < rows and 0 <= nc < cols:
                    edges.append((node_id(r, c), node_id(nr, nc), heading, (r, c), (nr, nc)))

    by_start = {}
    for seg_id, (u, v, _, _, _) in enumerate(edges):
        by_start.setdefault(u, []).append((seg_id, v))

    def is_interior(r, c):
        return 0 < r < rows - 1 and 0 < c < cols - 1

    segments = {}
    for seg_id, (u, v, heading, from_rc, to_rc) in enumerate(edges):
        # no U-turns: skip the reverse segment
        downstream = tuple(sid for sid, w in by_start.get(v, []) if w != u)
        segments[seg_id] = RoadSegment(
            id=seg_id,
            length=float(segment_length),
            lanes=int(lanes),
            speed_limit=float(speed_limit),
            downstream=downstream,
            signalized=is_interior(*to_rc),
            start=coords(*from_rc),
            end=coords(*to_rc),
            heading=heading,
            to_node=v,
        )

    rng = np.random.default_rng(seed)
    plans = []
    for r in range(rows):
        for c in range(cols):
            if not is_interior(r, c):
                continue
            n = node_id(r, c)
            incoming = [s for s in segments.values() if s.to_node == n]
            plans.append(SignalPlan(
                node=n,
                offset=int(rng.integers(0, green + red)),
                green=int(green),
                red=int(red),
                phase_a=tuple(sorted(s.id for s in incoming if s.heading in ("E", "W"))),
                phase_b=tuple(sorted(s.id for s in incoming if s.heading in ("N", "S"))),
            ))

    net = NetworkGraph(segments, plans)
    logger.info(f"Built {rows}x{cols} grid network with {len(segments)} directed segments and {len(plans)} signal plans (seed={seed})")
    return net


def hop_distances(net, target, max_hops):
    """Directed hop distance to `target`: the smaller of upstream and downstream hop counts."""
    net.segment(target)
    down = nx.single_source_shortest_path_length(net.graph, target, cutoff=max_hops)
    up = nx.single_source_shortest_path_length(net.graph.reverse(copy=False), target, cutoff=max_hops)
    hops = {}
    for seg_id, h in list(down.items()) + list(up.items()):
        if seg_id != target:
            hops[seg_id] = min(hops.get(seg_id, h), h)
    return hops


def adjacent_segments(net, target, count=config.ADJACENT_COUNT, max_hops=3):
    """
    The `count` segments nearest to `target` by hop distance, ties broken by ascending id.
    :raises NetworkTooSmallError: fewer than `count` segments within `max_hops`
    """
    hops = hop_distances(net, target, max_hops)
    ranked = sorted(hops, key=lambda s: (hops[s], s))
    if len(ranked) < count:
        raise NetworkTooSmallError(
            f"Only {len(ranked)} segments within {max_hops} hops of segment {target}; {count} required")
    return ranked[:count]


def central_segment(net):
    """Deterministic interior target: the signalized segment whose midpoint is closest to the network centroid."""
    mids = {s.id: ((s.start[0] + s.end[0]) / 2, (s.start[1] + s.end[1]) / 2) for s in net.segments.values()}
    cx = np.mean([m[0] for m in mids.values()])
    cy = np.mean([m[1] for m in mids.values()])
    candidates = [s.id for s in net.segments.values() if s.signalized] or list(net.segments)
    return min(candidates, key=lambda sid: ((mids[sid][0] - cx) ** 2 + (mids[sid][1] - cy) ** 2, sid))
