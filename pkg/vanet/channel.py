import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

import config
from utils.errors import InvalidConfigError
from utils.helpers import write_csv

logger = logging.getLogger(__name__)


def segment_density(count, seg):
    """Vehicles per square meter of carriageway."""
    return count / (seg.length * seg.lanes * config.LANE_WIDTH_M)


@dataclass
class ChannelModel:
    """
    Parametric wireless channel: a hard range gate, a base loss and a density-driven collision term.
    Owns the random stream of all delivery draws of a run.
    """
    range_m: float = config.COMM_RANGE_M
    base_loss: float = config.BASE_LOSS
    collision_coefficient: float = config.COLLISION_COEFFICIENT
    seed: object = config.SEED
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= self.base_loss < 1:
            raise InvalidConfigError(f"base_loss must be in [0, 1) (got {self.base_loss})")
        if self.range_m <= 0 or self.collision_coefficient < 0:
            raise InvalidConfigError(f"Invalid channel range {self.range_m} or collision coefficient {self.collision_coefficient}")
        self.rng = np.random.default_rng(self.seed)

    @classmethod
    def perfect(cls, range_m=config.COMM_RANGE_M, seed=config.SEED):
        return cls(range_m=range_m, base_loss=0.0, collision_coefficient=0.0, seed=seed)

    @classmethod
    def from_dict(cls, data, seed=config.SEED):
        return cls(
            range_m=float(data.get("range_m", config.COMM_RANGE_M)),
            base_loss=float(data.get("base_loss", config.BASE_LOSS)),
            collision_coefficient=float(data.get("collision_coefficient", config.COLLISION_COEFFICIENT)),
            seed=seed,
        )

    def to_dict(self):
        return {"range_m": self.range_m, "base_loss": self.base_loss,
                "collision_coefficient": self.collision_coefficient}

    @property
    def is_perfect(self):
        return self.base_loss == 0 and self.collision_coefficient == 0

    def reception_probability(self, distance, local_density):
        distance = np.asarray(distance, dtype=float)
        local_density = np.asarray(local_density, dtype=float)
        collision = np.maximum(0.0, 1.0 - self.collision_coefficient * local_density)
        p = np.where(distance <= self.range_m, (1.0 - self.base_loss) * collision, 0.0)
        return p if p.ndim else float(p)

    def draw(self, probabilities):
        """Bernoulli delivery outcomes for an array of probabilities."""
        probabilities = np.asarray(probabilities, dtype=float)
        return self.rng.random(probabilities.shape) < probabilities

    def transmit_records(self, records, distance, local_density):
        """
        Sends upload records one frame at a time, most recent first.
        Returns the delivered prefix: the first lost frame ends the transfer.
        """
        p = self.reception_probability(distance, local_density)
        delivered = []
        for record in records:
            if not self.rng.random() < p:
                break
            delivered.append(record)
        return tuple(delivered)


def reception_probability(distance, local_density, channel):
    return channel.reception_probability(distance, local_density)


def broadcast_beacon(channel, sender_xy, receiver_ids, receiver_xy, receiver_density):
    """
    One beacon emission. Delivery is purely geometric: every receiver in range draws independently,
    whatever segment it is on.
    :return: set of receiver ids that got the beacon
    """
    receiver_xy = np.asarray(receiver_xy, dtype=float).reshape(-1, 2)
    if not len(receiver_xy):
        return set()
    distance = np.linalg.norm(receiver_xy - np.asarray(sender_xy, dtype=float), axis=1)
    delivered = channel.draw(channel.reception_probability(distance, receiver_density))
    return {int(r) for r, ok in zip(receiver_ids, delivered) if ok}


def tick_fractions(phases, ticks=config.COMM_TICKS_PER_STEP):
    """Emission instants within a step, as fractions of the step: phase + k * beacon period."""
    return np.asarray(phases, dtype=float)[:, None] + np.arange(ticks)[None, :] / ticks


def exchange_step(channel, sender_pre, sender_post, phases, receiver_pre, receiver_post, receiver_density,
                  ticks=config.COMM_TICKS_PER_STEP):
    """
    Beacon outcomes of one mobility step for P (sender, receiver) pairs.
    Positions are interpolated linearly within the step at each sender emission instant.
    :return: (P x ticks) boolean delivery matrix
    """
    if not len(phases):
        return np.zeros((0, ticks), dtype=bool)
    fractions = tick_fractions(phases, ticks)[:, :, None]
    sender = sender_pre[:, None, :] + fractions * (sender_post - sender_pre)[:, None, :]
    receiver = receiver_pre[:, None, :] + fractions * (receiver_post - receiver_pre)[:, None, :]
    distance = np.linalg.norm(sender - receiver, axis=2)
    p = channel.reception_probability(distance, np.asarray(receiver_density, dtype=float)[:, None])
    return channel.draw(p)


def newest_delivered_tick(delivered):
    """Index of the last delivered tick per row, -1 if nothing arrived."""
    if not delivered.size:
        return np.full(delivered.shape[0], -1)
    ticks = delivered.shape[1]
    last = ticks - 1 - np.argmax(delivered[:, ::-1], axis=1)
    return np.where(delivered.any(axis=1), last, -1)


def deliver_upload_to_rsu(channel, upload, vehicle_xy, rsu, local_density, now, trace=None):
    """
    Hands an upload to the RSU under the channel model.
    :return: number of records delivered, or None if the vehicle is out of range
    """
    distance = float(np.linalg.norm(np.asarray(vehicle_xy, dtype=float) - np.asarray(rsu.xy, dtype=float)))
    if distance > channel.range_m:
        return None
    records = channel.transmit_records(upload.records, distance, local_density)
    if trace is not None:
        trace.record(now, "upload", upload.vehicle_id, "rsu", len(records))
    if records:
        rsu.ingest_upload(upload.truncated(len(records)), now)
    logger.debug(f"t={now}: upload from vehicle {upload.vehicle_id}: {len(records)}/{len(upload.records)} records delivered")
    return len(records)


class MessageTrace:
    """Optional per-message log, exported as CSV `tick,type,sender,receiver,delivered`."""

    def __init__(self):
        self.rows = []

    def record(self, time, kind, sender, receiver, delivered):
        self.rows.append((int(round(time / config.BEACON_PERIOD_S)), kind, sender, receiver, int(delivered)))

    def __len__(self):
        return len(self.rows)

    def to_frame(self):
        return pd.DataFrame(self.rows, columns=["tick", "type", "sender", "receiver", "delivered"])

    def export(self, path):
        write_csv(self.to_frame(), path)
        logger.info(f"Message trace with {len(self.rows)} rows written to {path}")
