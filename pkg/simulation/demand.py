import logging
from dataclasses import dataclass, field

import numpy as np

import config

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Trip:
    depart: float
    route: tuple

    @property
    def origin(self):
        return self.route[0]

    @property
    def destination(self):
        return self.route[-1]


@dataclass
class TripDemand:
    """Departures sorted by time; vehicle ids are assigned at insertion."""
    trips: list = field(default_factory=list)

    def __len__(self):
        return len(self.trips)

    def __iter__(self):
        return iter(self.trips)

    def merged(self, *others):
        trips = list(self.trips)
        for other in others:
            trips.extend(other.trips)
        return TripDemand(sorted(trips, key=lambda trip: (trip.depart, trip.route)))


def _poisson_departures(rng, rate, t0, t1):
    """Event times of a homogeneous Poisson process on [t0, t1), via exponential gaps."""
    times = []
    if rate <= 0 or t1 <= t0:
        return times
    t = t0 + rng.exponential(1.0 / rate)
    while t < t1:
        times.append(float(t))
        t += rng.exponential(1.0 / rate)
    return times


def generate_base_demand(net, rate, seed, horizon=config.HORIZON_S):
    """
    Uniform random origin/destination pairs with free-flow shortest-path routes
    and exponential inter-departure times.
    """
    rng = np.random.default_rng(seed)
    seg_ids = np.array(list(net.segments))
    trips = []
    for depart in _poisson_departures(rng, rate, 0.0, horizon):
        route = None
        while route is None:
            origin, destination = rng.choice(seg_ids, size=2, replace=False)
            route = net.shortest_route(int(origin), int(destination))
        trips.append(Trip(depart, route))
    logger.info(f"Generated {len(trips)} base trips at {rate} veh/s over {horizon} s (seed={seed})")
    return TripDemand(trips)


def generate_special_event_demand(net, destination, rate, window, seed):
    """
    Trips converging on `destination` with Poisson departures over `window` = (start, end)
    and independent uniform origins.
    """
    net.segment(destination)
    rng = np.random.default_rng(seed)
    origins = np.array([s for s in net.segments if s != destination])
    trips = []
    for depart in _poisson_departures(rng, rate, window[0], window[1]):
        route = None
        while route is None:
            route = net.shortest_route(int(rng.choice(origins)), destination)
        trips.append(Trip(depart, route))
    logger.info(f"Generated {len(trips)} special-event trips to segment {destination} over {window}")
    return TripDemand(trips)


def through_share(demand, segment):
    """Fraction of trips whose route crosses `segment`."""
    if not len(demand):
        return 0.0
    return sum(1 for trip in demand if segment in trip.route) / len(demand)


def generate_recurrent_demand(net, target, base_rate, share, multiplier, window, seed):
    """
    Extra trips approaching `target` from its upstream segments and leaving through a downstream one,
    so that the flow through the target is scaled by `multiplier`.
    """
    rng = np.random.default_rng(seed)
    approaches = net.upstream(target)
    exits = net.segment(target).downstream
    rate = (multiplier - 1.0) * base_rate * share
    trips = [
        Trip(depart, (int(rng.choice(approaches)), target, int(rng.choice(exits))))
        for depart in _poisson_departures(rng, rate, window[0], window[1])
    ]
    logger.info(f"Generated {len(trips)} recurrent trips through segment {target} at {rate:.4f} veh/s")
    return TripDemand(trips)
