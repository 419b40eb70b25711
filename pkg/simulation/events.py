import logging
from dataclasses import dataclass, field

import config
from utils.errors import EventOverlapError, HorizonError, InvalidEventError

logger = logging.getLogger(__name__)

BLOCKING_KINDS = ("accident", "workzone")


@dataclass(frozen=True)
class ScenarioEvent:
    """
    An atypical-traffic event injected into a run.
    `intensity` is the extra demand rate (veh/s) of a special event or the demand multiplier
    of a recurrent event; defaults come from config.
    """
    kind: str
    segment: int
    start: float
    duration: float
    blocked_lanes: tuple = field(default_factory=tuple)
    lane_position: str = "middle"
    weather_speed_factor: float = 1.0
    event_destination: int = None
    intensity: float = None

    @property
    def end(self):
        return self.start + self.duration

    def is_active(self, t):
        return self.start <= t < self.end

    def overlaps(self, t0, t1):
        """True if the event is active at some instant of [t0, t1)."""
        return self.start < t1 and t0 < self.end

    @property
    def affected_segment(self):
        if self.kind == "special_event" and self.event_destination is not None:
            return self.event_destination
        return self.segment

    def to_dict(self):
        data = {
            "kind": self.kind,
            "segment": self.segment,
            "start": self.start,
            "duration": self.duration,
            "lanes": list(self.blocked_lanes),
            "lane_position": self.lane_position,
            "factor": self.weather_speed_factor,
        }
        if self.event_destination is not None:
            data["destination"] = self.event_destination
        if self.intensity is not None:
            data["intensity"] = self.intensity
        return data

    @classmethod
    def from_dict(cls, data):
        kind = data["kind"]
        segment = int(data["segment"])
        destination = data.get("destination")
        if kind == "special_event" and destination is None:
            destination = segment
        return cls(
            kind=kind,
            segment=segment,
            start=float(data["start"]),
            duration=float(data["duration"]),
            blocked_lanes=tuple(int(x) for x in data.get("lanes", ())),
            lane_position=data.get("lane_position", "middle"),
            weather_speed_factor=float(data.get("factor", 1.0)),
            event_destination=None if destination is None else int(destination),
            intensity=None if data.get("intensity") is None else float(data["intensity"]),
        )


def validate_event(event, net, horizon, existing=()):
    """
    Checks an event against the network, the horizon and already scheduled events.
    :raises InvalidEventError: malformed event
    :raises EventOverlapError: a blocking event shares a lane and a time window with another one
    """
    if event.kind not in config.EVENT_KINDS:
        raise InvalidEventError(f"Unknown event kind '{event.kind}'")
    seg = net.segment(event.segment)
    if event.duration <= 0 and event.kind != "none":
        raise InvalidEventError(f"{event.kind} event must have a positive duration (got {event.duration})")
    if event.start < 0 or event.start >= horizon:
        raise HorizonError(f"{event.kind} event starts at {event.start}, outside [0, {horizon})")

    if event.kind in BLOCKING_KINDS:
        if event.kind == "accident" and event.duration >= 3600:
            raise InvalidEventError(f"Accident duration must be below 3600 s (got {event.duration})")
        if event.kind == "workzone" and event.duration < config.WORKZONE_MIN_DURATION_S:
            raise InvalidEventError(
                f"Workzone duration must be at least {config.WORKZONE_MIN_DURATION_S} s (got {event.duration})")
        if event.lane_position not in config.LANE_POSITION_FRACTION:
            raise InvalidEventError(f"Unknown lane position '{event.lane_position}'")
        lanes = set(event.blocked_lanes)
        if not lanes:
            raise InvalidEventError(f"{event.kind} event on segment {seg.id} blocks no lane")
        if len(lanes) > 2:
            raise InvalidEventError(f"At most two lanes can be blocked (got {sorted(lanes)})")
        if not lanes <= set(range(seg.lanes)):
            raise InvalidEventError(f"Blocked lanes {sorted(lanes)} not on segment {seg.id} ({seg.lanes} lanes)")
        if len(lanes) == seg.lanes and not (seg.lanes == 1 and event.kind == "accident"):
            raise InvalidEventError(f"{event.kind} may not block every lane of segment {seg.id}")
        for other in existing:
            if (other.kind in BLOCKING_KINDS and other.segment == event.segment
                    and lanes & set(other.blocked_lanes) and other.overlaps(event.start, event.end)):
                raise EventOverlapError(
                    f"{event.kind} on segment {event.segment} lanes {sorted(lanes)} overlaps "
                    f"{other.kind} starting at {other.start}")

    elif event.kind == "weather":
        if not 0 < event.weather_speed_factor <= 1:
            raise InvalidEventError(f"Weather speed factor must be in (0, 1] (got {event.weather_speed_factor})")
        for other in existing:
            if other.kind == "weather" and other.overlaps(event.start, event.end):
                raise EventOverlapError(f"Weather events overlap at {event.start}")

    elif event.kind == "special_event":
        net.segment(event.event_destination if event.event_destination is not None else event.segment)

    elif event.kind == "recurrent":
        if not net.upstream(event.segment) or not seg.downstream:
            raise InvalidEventError(f"Recurrent congestion needs approaches and exits around segment {seg.id}")


def blocker_layout(event, seg):
    """
    (lane, position) of each stationary blocking vehicle: two for a one-lane block, three for
    a two-lane block, packed bumper to bumper behind the configured lane position.
    """
    lanes = sorted(event.blocked_lanes)
    count = 2 if len(lanes) == 1 else 3
    spacing = config.VEHICLE_LENGTH_M + config.MIN_GAP_M
    anchor = config.LANE_POSITION_FRACTION[event.lane_position] * seg.length
    # keep the whole footprint on the segment
    anchor = min(max(anchor, config.VEHICLE_LENGTH_M + spacing * (count - 1)), seg.length)
    layout = []
    depth = {lane: 0 for lane in lanes}
    for k in range(count):
        lane = lanes[k % len(lanes)]
        layout.append((lane, anchor - depth[lane] * spacing))
        depth[lane] += 1
    return layout


def inject_event(world, event):
    """Validates `event` and schedules it in `world`."""
    validate_event(event, world.net, world.horizon, existing=world.events)
    world.add_event(event)
    logger.info(f"Injected {event.kind} event on segment {event.segment} at t={event.start} for {event.duration} s")
    return world
