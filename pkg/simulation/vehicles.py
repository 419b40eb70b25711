import logging
from dataclasses import dataclass

import config

logger = logging.getLogger(__name__)


@dataclass
class VehicleState:
    """
    One vehicle on the road. `position` is the front bumper, measured from the segment start.
    Blocking vehicles (incidents, workzones) share this type but never move or communicate.
    """
    id: int
    segment: int
    lane: int
    position: float
    speed: float
    route: tuple
    route_index: int = 0
    segment_entry_time: float = 0.0
    depart_time: float = 0.0
    length: float = config.VEHICLE_LENGTH_M
    is_blocker: bool = False

    @property
    def back(self):
        return self.position - self.length

    @property
    def next_segment(self):
        if self.route_index + 1 < len(self.route):
            return self.route[self.route_index + 1]
        return None

    @property
    def is_last_segment(self):
        return self.route_index + 1 >= len(self.route)


def safe_speed(speed, leader_speed, gap, tau=config.REACTION_TIME_S, decel=config.MAX_DECEL):
    """Krauss safe speed: the fastest speed that still allows stopping behind a braking leader."""
    denominator = (speed + leader_speed) / (2.0 * decel) + tau
    return leader_speed + (gap - leader_speed * tau) / denominator


def krauss_speed(speed, v_max, leader_speed, gap, dawdle_draw, dt=config.STEP_S,
                 accel=config.MAX_ACCEL, sigma=config.DAWDLE_SIGMA):
    """
    Next speed under the Krauss car-following rule.
    :param speed: current speed, m/s
    :param v_max: speed limit times the weather factor
    :param leader_speed: leader speed after its own update (None when the road ahead is free)
    :param gap: free space to the leader or stop line, meters (ignored when leader_speed is None)
    :param dawdle_draw: uniform draw in [0, 1) for the random deceleration
    """
    desired = min(v_max, speed + accel * dt)
    if leader_speed is not None:
        desired = min(desired, safe_speed(speed, leader_speed, max(gap, 0.0)))
    v = max(0.0, desired - sigma * accel * dt * dawdle_draw)
    if leader_speed is not None:
        # hard no-overlap clamp
        v = min(v, max(gap, 0.0) / dt)
    return max(0.0, min(v, v_max))
