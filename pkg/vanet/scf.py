import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

import config
from vanet.channel import deliver_upload_to_rsu

logger = logging.getLogger(__name__)


@dataclass
class ScfItem:
    upload: object
    created: float
    hops: int = 0


class ScfBuffer:
    """Bounded store-carry-forward buffer; the oldest item is evicted when full."""

    def __init__(self, capacity=config.SCF_BUFFER_SIZE, staleness=config.STALENESS_S):
        self.capacity = capacity
        self.staleness = staleness
        self.items = deque()

    def __len__(self):
        return len(self.items)

    def push(self, item):
        if len(self.items) >= self.capacity:
            dropped = self.items.popleft()
            logger.debug(f"SCF buffer full, evicting upload from vehicle {dropped.upload.vehicle_id}")
        self.items.append(item)

    def expire(self, now):
        kept = deque(item for item in self.items if now - item.created <= self.staleness)
        expired = len(self.items) - len(kept)
        self.items = kept
        return expired

    def take_all(self):
        items, self.items = list(self.items), deque()
        return items

    def oldest_age(self, now):
        return max((now - item.created for item in self.items), default=0.0)


def scf_carry(buffer, upload, now):
    """Stores `upload` until a contact appears."""
    buffer.push(ScfItem(upload=upload, created=now))
    return buffer


class ScfRouter:
    """
    Store-carry-forward state of all vehicles.
    Each step, carriers in RSU range hand their items over; the others give custody to the
    in-range neighbor closest to the RSU, provided it is closer than themselves and the item has
    relay hops left.
    """

    def __init__(self, channel, rsu, capacity=config.SCF_BUFFER_SIZE, staleness=config.STALENESS_S,
                 max_hops=config.SCF_MAX_HOPS, trace=None):
        self.channel = channel
        self.rsu = rsu
        self.capacity = capacity
        self.staleness = staleness
        self.max_hops = max_hops
        self.trace = trace
        self.buffers = {}
        self.delivered = 0
        self.expired = 0
        self.relayed = 0

    def buffer(self, vehicle_id):
        if vehicle_id not in self.buffers:
            self.buffers[vehicle_id] = ScfBuffer(self.capacity, self.staleness)
        return self.buffers[vehicle_id]

    def store(self, vehicle_id, upload, now):
        scf_carry(self.buffer(vehicle_id), upload, now)

    def drop(self, vehicle_id):
        buffer = self.buffers.pop(vehicle_id, None)
        return len(buffer) if buffer is not None else 0

    def held(self):
        return sum(len(b) for b in self.buffers.values())

    def forward(self, now, ids, xy, densities):
        """
        One forwarding round.
        :param ids: vehicle ids present in the network
        :param xy: (N x 2) positions aligned with `ids`
        :param densities: local density at each vehicle, aligned with `ids`
        """
        for buffer in self.buffers.values():
            self.expired += buffer.expire(now)
        carriers = [vid for vid in sorted(self.buffers) if len(self.buffers[vid])]
        if not carriers:
            return
        index = {int(vid): i for i, vid in enumerate(ids)}
        rsu_xy = np.asarray(self.rsu.xy, dtype=float)
        to_rsu = np.linalg.norm(xy - rsu_xy, axis=1) if len(ids) else np.zeros(0)

        for vid in carriers:
            i = index.get(vid)
            if i is None:
                continue
            buffer = self.buffers[vid]
            if to_rsu[i] <= self.channel.range_m:
                kept = []
                for item in buffer.take_all():
                    n = deliver_upload_to_rsu(self.channel, item.upload, xy[i], self.rsu, densities[i], now, self.trace)
                    if n:
                        self.delivered += 1
                    else:
                        kept.append(item)
                for item in kept:
                    buffer.push(item)
                continue

            distance = np.linalg.norm(xy - xy[i], axis=1)
            candidates = np.flatnonzero((distance <= self.channel.range_m) & (to_rsu < to_rsu[i]))
            candidates = candidates[candidates != i]
            if not len(candidates):
                continue
            j = int(candidates[np.argmin(to_rsu[candidates])])
            neighbor = int(ids[j])
            p = self.channel.reception_probability(distance[j], densities[j])
            kept = []
            for item in buffer.take_all():
                if item.hops >= self.max_hops:
                    kept.append(item)
                elif self.channel.rng.random() < p:
                    item.hops += 1
                    self.buffer(neighbor).push(item)
                    self.relayed += 1
                    if self.trace is not None:
                        self.trace.record(now, "scf", vid, neighbor, 1)
                else:
                    kept.append(item)
            for item in kept:
                buffer.push(item)
