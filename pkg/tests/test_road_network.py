import numpy as np
import pytest

from network.profiles import (HistoricalProfile, build_historical_profile, historical_travel_time, load_network,
                              save_network)
from network.road_network import (RoadSegment, NetworkGraph, adjacent_segments, build_grid_network,
                                  central_segment, hop_distances)
from simulation.scenario import run_mobility_only
from tests.factories import straight_road
from utils.errors import HorizonError, InvalidNetworkError, NetworkTooSmallError, UnknownSegmentError


# ── Grid construction ──

def test_grid_3x3_has_24_directed_segments(grid3):
    assert len(grid3.segments) == 24
    assert grid3.is_strongly_connected()


def test_grid_5x5_has_80_segments_of_equal_length():
    net = build_grid_network(5, 5, 150, 3, seed=7)
    assert len(net.segments) == 80
    assert {s.length for s in net.segments.values()} == {150.0}
    assert {s.lanes for s in net.segments.values()} == {3}


def test_grid_is_deterministic_per_seed():
    a = build_grid_network(4, 4, 150, 2, seed=3)
    b = build_grid_network(4, 4, 150, 2, seed=3)
    assert a.dumps() == b.dumps()


def test_grid_rejects_fewer_than_three_rows():
    with pytest.raises(InvalidNetworkError):
        build_grid_network(2, 5, 150, 2, seed=1)


def test_interior_nodes_have_four_way_connectivity(grid5):
    for seg in grid5.segments.values():
        if seg.signalized:
            # the opposite-direction segment is excluded (no U-turns)
            assert len(seg.downstream) == 3


def test_every_signalized_segment_has_a_plan(grid5):
    planned = {s for plan in grid5.signal_plans for s in plan.phase_a + plan.phase_b}
    assert {s.id for s in grid5.segments.values() if s.signalized} == planned


def test_signal_phases_alternate(grid3):
    plan = grid3.signal_plans[0]
    a, b = plan.phase_a[0], plan.phase_b[0]
    for t in range(0, plan.cycle, 7):
        assert grid3.is_green(a, t) != grid3.is_green(b, t)


def test_short_segment_is_rejected():
    with pytest.raises(InvalidNetworkError):
        NetworkGraph({0: RoadSegment(0, 20.0, 1, 10.0, (), False, (0.0, 0.0), (20.0, 0.0))})


def test_signalized_segment_without_plan_is_rejected():
    with pytest.raises(InvalidNetworkError):
        NetworkGraph({0: RoadSegment(0, 100.0, 1, 10.0, (), True, (0.0, 0.0), (100.0, 0.0))})


def test_unknown_segment_lookup(grid3):
    with pytest.raises(UnknownSegmentError):
        grid3.segment(999)


def test_shortest_route_includes_both_ends(grid3):
    route = grid3.shortest_route(0, 5)
    assert route[0] == 0 and route[-1] == 5
    for a, b in zip(route, route[1:]):
        assert b in grid3.segment(a).downstream


# ── Adjacency ──

def test_adjacent_segments_of_interior_target(grid5):
    target = central_segment(grid5)
    adjacent = adjacent_segments(grid5, target)
    hops = hop_distances(grid5, target, 3)

    assert len(adjacent) == 8 and len(set(adjacent)) == 8
    assert target not in adjacent
    one_hop = set(grid5.upstream(target)) | set(grid5.segment(target).downstream)
    assert set(adjacent[:6]) == one_hop
    assert [hops[s] for s in adjacent[6:]] == [2, 2]
    two_hop = sorted(s for s, h in hops.items() if h == 2)
    assert adjacent[6:] == two_hop[:2]


def test_adjacent_segments_is_order_stable(grid5):
    target = central_segment(grid5)
    assert adjacent_segments(grid5, target) == adjacent_segments(grid5, target)


def test_adjacent_segments_on_a_tiny_network():
    with pytest.raises(NetworkTooSmallError):
        adjacent_segments(straight_road(), 0)


def test_central_segment_is_signalized(grid3):
    assert grid3.segment(central_segment(grid3)).signalized


# ── Historical profile ──

def test_travel_time_within_one_bin_is_constant():
    profile = HistoricalProfile(bin_s=300, n_bins=3, tth={0: np.array([20.0, 25.0, 30.0])},
                                expected_flow={0: np.zeros(3)})
    assert historical_travel_time(profile, 0, 0) == historical_travel_time(profile, 0, 299)
    assert historical_travel_time(profile, 0, 300) == 25.0


def test_travel_time_outside_horizon_or_segment():
    profile = HistoricalProfile.free_flow(straight_road(), horizon=600)
    with pytest.raises(HorizonError):
        historical_travel_time(profile, 0, 600)
    with pytest.raises(UnknownSegmentError):
        historical_travel_time(profile, 7, 10)


def test_free_flow_profile_respects_physical_bound():
    profile = HistoricalProfile.free_flow(straight_road(length=200.0, speed_limit=10.0), horizon=1200)
    for seg in (0, 1):
        assert np.all(profile.tth[seg] >= 20.0)


def test_profile_from_base_runs_never_beats_free_flow(grid3):
    logs = [run_mobility_only(grid3, 0.3, seed=s, horizon=600) for s in (1, 2)]
    profile = build_historical_profile(grid3, logs, horizon=600)
    for seg in grid3.segments.values():
        assert np.all(profile.tth[seg.id] >= seg.free_flow_time - 1e-9)
        assert profile.expected_flow[seg.id].shape == (2,)


def test_network_file_keeps_graph_and_profile(tmp_path, grid3):
    profile = HistoricalProfile.free_flow(grid3, horizon=600)
    path = tmp_path / "network.json"
    save_network(path, grid3, profile)
    net, loaded = load_network(path)
    assert net.dumps() == grid3.dumps()
    assert loaded.n_bins == profile.n_bins
    np.testing.assert_allclose(loaded.tth[3], profile.tth[3], rtol=1e-6)
