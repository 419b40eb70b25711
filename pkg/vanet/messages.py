from dataclasses import dataclass, field
from enum import Enum

import config
from utils.errors import InvalidTrajectoryError


class Heading(str, Enum):
    EAST = "E"
    NORTH = "N"
    WEST = "W"
    SOUTH = "S"


@dataclass(frozen=True)
class BeaconMessage:
    segment_id: int
    time: float
    sender_id: int
    position: float
    speed: float
    tt_index: float
    direction: Heading = Heading.EAST


@dataclass(frozen=True)
class UploadRecord:
    segment_id: int
    time: float  # when the vehicle left the segment
    flow: float
    event: str
    current_tt: float


@dataclass(frozen=True)
class UploadMessage:
    """What a vehicle hands to the RSU: its index plus up to 10 segment records, most recent first."""
    vehicle_id: int
    time: float
    tt_index: float
    records: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.records) > config.TRAJECTORY_CAPACITY:
            raise InvalidTrajectoryError(
                f"Upload from vehicle {self.vehicle_id} carries {len(self.records)} records (max {config.TRAJECTORY_CAPACITY})")
        times = [r.time for r in self.records]
        if any(a <= b for a, b in zip(times, times[1:])):
            raise InvalidTrajectoryError(f"Upload records from vehicle {self.vehicle_id} are not newest-first: {times}")

    def truncated(self, n):
        return UploadMessage(self.vehicle_id, self.time, self.tt_index, self.records[:n])
