import bisect
import logging
from collections import defaultdict, deque
from dataclasses import dataclass

import numpy as np

import config
from simulation.demand import (TripDemand, generate_recurrent_demand, generate_special_event_demand,
                               through_share)
from simulation.events import BLOCKING_KINDS, blocker_layout, inject_event
from simulation.ground_truth import GroundTruthLog
from simulation.vehicles import VehicleState, krauss_speed

logger = logging.getLogger(__name__)
sim_logger = logging.getLogger("Simulation")


@dataclass(frozen=True)
class SegmentChange:
    vehicle_id: int
    from_segment: int
    to_segment: int  # None when the vehicle reached its destination
    entry_time: float
    exit_time: float


@dataclass
class Snapshot:
    """Column view of all communicating vehicles, ordered by id."""
    ids: np.ndarray
    segments: np.ndarray
    lanes: np.ndarray
    positions: np.ndarray
    speeds: np.ndarray
    xy: np.ndarray

    def __len__(self):
        return len(self.ids)

    def segment_counts(self):
        counts = defaultdict(int)
        for seg_id in self.segments:
            counts[int(seg_id)] += 1
        return counts


class World:
    """
    Discrete-time microscopic traffic on a NetworkGraph.
    A step is split in two: begin_step() applies events and inserts departures,
    advance() moves every vehicle front to back and returns the segment changes.
    """

    def __init__(self, net, demand, seed, horizon=config.HORIZON_S, events=(),
                 dt=config.STEP_S, dawdle_sigma=config.DAWDLE_SIGMA):
        self.net = net
        self.seed = seed
        self.horizon = horizon
        self.dt = dt
        self.dawdle_sigma = dawdle_sigma
        self.t = 0.0
        self.rng = np.random.default_rng(seed)
        self.log = GroundTruthLog(net, horizon)
        self.events = []
        self.speed_factor = 1.0

        # front-first vehicle lists, blockers included
        self.lanes = {(s.id, lane): [] for s in net.segments.values() for lane in range(s.lanes)}
        self.vehicles = {}
        self.inserted = 0
        self.arrived = 0

        self._base_demand = demand
        self._trips = list(demand.trips)
        self._next_trip = 0
        self._pending = defaultdict(deque)
        self._next_id = 0
        self._blockers = {}  # event index -> placed blocking vehicles
        self._cleared = set()

        for event in events:
            inject_event(self, event)

    @property
    def finished(self):
        return self.t >= self.horizon

    # --- Events ---

    def add_event(self, event):
        index = len(self.events)
        self.events.append(event)
        self.log.add_event(event)
        window = (event.start, min(event.end, self.horizon))
        if event.kind == "special_event":
            rate = event.intensity if event.intensity is not None else config.SPECIAL_EVENT_RATE
            extra = generate_special_event_demand(self.net, event.affected_segment, rate, window,
                                                  seed=[self.seed, 1000 + index])
            self._add_trips(extra)
        elif event.kind == "recurrent":
            multiplier = event.intensity if event.intensity is not None else config.RECURRENT_MULTIPLIER
            base_rate = len(self._base_demand) / self.horizon
            share = through_share(self._base_demand, event.segment)
            extra = generate_recurrent_demand(self.net, event.segment, base_rate, share, multiplier, window,
                                              seed=[self.seed, 1000 + index])
            self._add_trips(extra)

    def _add_trips(self, demand):
        remaining = TripDemand(self._trips[self._next_trip:]).merged(demand)
        self._trips = self._trips[:self._next_trip] + remaining.trips

    def _update_events(self):
        t = self.t
        factors = [e.weather_speed_factor for e in self.events if e.kind == "weather" and e.is_active(t)]
        self.speed_factor = min(factors) if factors else 1.0

        for index, event in enumerate(self.events):
            if event.kind not in BLOCKING_KINDS or index in self._cleared:
                continue
            if t >= event.end:
                self._remove_blockers(index)
                self._cleared.add(index)
            elif event.is_active(t) and index not in self._blockers:
                self._place_blockers(index, event)

    def _place_blockers(self, index, event):
        seg = self.net.segment(event.segment)
        layout = blocker_layout(event, seg)
        for lane, position in layout:
            low = position - config.VEHICLE_LENGTH_M - config.MIN_GAP_M
            high = position + config.MIN_GAP_M
            for other in self.lanes[(seg.id, lane)]:
                if other.position > low and other.back < high:
                    sim_logger.debug(f"t={self.t}: {event.kind} on segment {seg.id} waits for lane {lane} to clear")
                    return
        placed = []
        for k, (lane, position) in enumerate(layout):
            blocker = VehicleState(id=-(index * 10 + k + 1), segment=seg.id, lane=lane, position=position,
                                   speed=0.0, route=(seg.id,), segment_entry_time=self.t, is_blocker=True)
            self._insert_sorted(blocker)
            placed.append(blocker)
        self._blockers[index] = placed
        sim_logger.info(f"t={self.t}: {event.kind} blocks lanes {sorted(event.blocked_lanes)} of segment {seg.id}")

    def _remove_blockers(self, index):
        for blocker in self._blockers.pop(index, []):
            self.lanes[(blocker.segment, blocker.lane)].remove(blocker)
        sim_logger.info(f"t={self.t}: event {index} cleared")

    def _insert_sorted(self, vehicle):
        lane_list = self.lanes[(vehicle.segment, vehicle.lane)]
        keys = [-v.position for v in lane_list]
        lane_list.insert(bisect.bisect_right(keys, -vehicle.position), vehicle)

    # --- Entry ---

    def entry_space(self, seg_id, lane):
        """Free length at the start of a lane, or None if the lane is empty."""
        lane_list = self.lanes[(seg_id, lane)]
        if not lane_list:
            return None, None
        tail = lane_list[-1]
        return tail.back - config.MIN_GAP_M, tail

    def best_entry_lane(self, seg_id):
        """Lane with the most entry space, ties to the lowest index: (lane, space, tail)."""
        best = None
        for lane in range(self.net.segment(seg_id).lanes):
            space, tail = self.entry_space(seg_id, lane)
            if space is None:
                return lane, None, None
            if best is None or space > best[1]:
                best = (lane, space, tail)
        return best

    def _queue_departures(self):
        while self._next_trip < len(self._trips) and self._trips[self._next_trip].depart <= self.t:
            trip = self._trips[self._next_trip]
            self._pending[trip.origin].append(trip)
            self._next_trip += 1

    def _insert_pending(self):
        for seg_id in sorted(self._pending):
            queue = self._pending[seg_id]
            while queue:
                lane, space, _ = self.best_entry_lane(seg_id)
                if space is not None and space < 0:
                    break
                trip = queue.popleft()
                vehicle = VehicleState(id=self._next_id, segment=seg_id, lane=lane, position=0.0, speed=0.0,
                                       route=trip.route, segment_entry_time=self.t, depart_time=trip.depart)
                self._next_id += 1
                self.lanes[(seg_id, lane)].append(vehicle)
                self.vehicles[vehicle.id] = vehicle
                self.inserted += 1

    @property
    def waiting(self):
        return sum(len(q) for q in self._pending.values())

    # --- Step ---

    def begin_step(self):
        self._update_events()
        self._queue_departures()
        self._insert_pending()

    def _avoid_blocked_lanes(self):
        for (seg_id, lane), lane_list in self.lanes.items():
            if len(lane_list) < 2 or not any(v.is_blocker for v in lane_list):
                continue
            seg = self.net.segment(seg_id)
            for i in range(1, len(lane_list)):
                vehicle, leader = lane_list[i], lane_list[i - 1]
                if vehicle.is_blocker or not leader.is_blocker:
                    continue
                if leader.back - vehicle.position > config.LANE_CHANGE_LOOKAHEAD_M:
                    continue
                for target in (lane - 1, lane + 1):
                    if 0 <= target < seg.lanes and self._safe_to_enter(vehicle, seg_id, target):
                        lane_list.remove(vehicle)
                        vehicle.lane = target
                        self._insert_sorted(vehicle)
                        sim_logger.debug(f"t={self.t}: vehicle {vehicle.id} avoids blocked lane {lane} on {seg_id}")
                        break
                # one change per lane per step keeps the list indices valid
                break

    def _safe_to_enter(self, vehicle, seg_id, lane):
        ahead = behind = None
        for other in self.lanes[(seg_id, lane)]:
            if other.position > vehicle.position:
                ahead = other
            else:
                behind = other
                break
        if ahead is not None:
            if ahead.is_blocker and ahead.back - vehicle.position <= config.LANE_CHANGE_LOOKAHEAD_M:
                return False
            if ahead.back - vehicle.position < config.MIN_GAP_M:
                return False
        if behind is not None:
            if vehicle.back - behind.position - config.MIN_GAP_M < behind.speed * config.REACTION_TIME_S:
                return False
        return True

    def _front_constraint(self, vehicle, seg):
        """(leader_speed, gap) for the first vehicle of a lane; leader_speed None means a free road."""
        to_line = seg.length - vehicle.position
        if not self.net.is_green(seg.id, self.t):
            return 0.0, to_line
        if vehicle.is_last_segment:
            return None, None
        _, space, tail = self.best_entry_lane(vehicle.next_segment)
        if tail is None:
            return None, None
        if space < 0:
            return 0.0, to_line
        return tail.speed, to_line + space

    def advance(self):
        """Moves every vehicle by one step and returns the segment changes, exit times at t + dt."""
        self._avoid_blocked_lanes()
        changes = []
        moved = set()
        exit_time = self.t + self.dt
        for seg_id, seg in self.net.segments.items():
            v_max = seg.speed_limit * self.speed_factor
            for lane in range(seg.lanes):
                lane_list = self.lanes[(seg_id, lane)]
                leader = None
                for vehicle in list(lane_list):
                    if vehicle.is_blocker:
                        leader = vehicle
                        continue
                    if vehicle.id in moved:
                        continue
                    if leader is not None:
                        leader_speed = leader.speed
                        gap = leader.back - vehicle.position - config.MIN_GAP_M
                    else:
                        leader_speed, gap = self._front_constraint(vehicle, seg)
                    speed = krauss_speed(vehicle.speed, v_max, leader_speed, gap, self.rng.random(),
                                         dt=self.dt, sigma=self.dawdle_sigma)
                    new_position = vehicle.position + speed * self.dt
                    vehicle.speed = speed
                    if new_position <= seg.length:
                        vehicle.position = new_position
                        leader = vehicle
                        continue

                    overflow = new_position - seg.length
                    if vehicle.is_last_segment:
                        lane_list.remove(vehicle)
                        del self.vehicles[vehicle.id]
                        self.arrived += 1
                        self.log.record_traversal(vehicle.id, seg_id, vehicle.segment_entry_time, exit_time)
                        changes.append(SegmentChange(vehicle.id, seg_id, None, vehicle.segment_entry_time, exit_time))
                        continue

                    nxt = vehicle.next_segment
                    next_lane, space, _ = self.best_entry_lane(nxt)
                    if space is not None and space < 0:
                        vehicle.position = seg.length
                        vehicle.speed = 0.0
                        leader = vehicle
                        continue
                    entry_position = overflow if space is None else min(overflow, space)
                    entry_position = min(entry_position, self.net.segment(nxt).length)

                    lane_list.remove(vehicle)
                    self.log.record_traversal(vehicle.id, seg_id, vehicle.segment_entry_time, exit_time)
                    changes.append(SegmentChange(vehicle.id, seg_id, nxt, vehicle.segment_entry_time, exit_time))
                    vehicle.segment = nxt
                    vehicle.lane = next_lane
                    vehicle.position = entry_position
                    vehicle.route_index += 1
                    vehicle.segment_entry_time = exit_time
                    self.lanes[(nxt, next_lane)].append(vehicle)
                    moved.add(vehicle.id)
        self.t = exit_time
        return changes

    def step(self):
        self.begin_step()
        return self.advance()

    # --- Views ---

    def snapshot(self):
        ordered = sorted(self.vehicles.values(), key=lambda v: v.id)
        n = len(ordered)
        xy = np.zeros((n, 2))
        for i, v in enumerate(ordered):
            xy[i] = self.net.segment(v.segment).xy_at(v.position, v.lane)
        return Snapshot(
            ids=np.array([v.id for v in ordered], dtype=int),
            segments=np.array([v.segment for v in ordered], dtype=int),
            lanes=np.array([v.lane for v in ordered], dtype=int),
            positions=np.array([v.position for v in ordered], dtype=float),
            speeds=np.array([v.speed for v in ordered], dtype=float),
            xy=xy,
        )

    def vehicles_on(self, seg_id):
        return [v for lane in range(self.net.segment(seg_id).lanes)
                for v in self.lanes[(seg_id, lane)] if not v.is_blocker]

    def blockers_on(self, seg_id):
        return [v for lane in range(self.net.segment(seg_id).lanes)
                for v in self.lanes[(seg_id, lane)] if v.is_blocker]


def step(world, dt=config.STEP_S):
    """Advances `world` by one mobility step."""
    if dt != world.dt:
        world.dt = dt
    world.step()
    return world
