from types import SimpleNamespace

import numpy as np
import pytest

import config
from agents.rsu import (EVENT_SLICE, FeatureVector, HistoricalFlowTable, Rsu, export_message_log, feature_columns,
                        load_message_log, reference_tt_index, replay_message_log)
from agents.vehicle_agent import (CauseContext, GroundTruthCauseClassifier, NeighborTable, TrajectoryEntry,
                                  TrajectoryLog, VehicleAgent, blend_indices, classify_cause, compute_tt_index,
                                  detect_excessive, flow_per_interval, local_flow_estimate, on_beacon_received,
                                  one_hot)
from simulation.events import ScenarioEvent
from simulation.ground_truth import GroundTruthLog
from utils.errors import (DimensionMismatchError, EmptyTableError, InsufficientHistoryError, InvalidConfigError,
                          InvalidEventError, InvalidTrajectoryError)
from vanet.messages import BeaconMessage, UploadMessage, UploadRecord


def beacon(sender, t, tt_index=0.0, segment=0):
    return BeaconMessage(segment, t, sender, 10.0, 5.0, tt_index)


def entry(t, segment=0, tt=20.0, tth=10.0):
    return TrajectoryEntry(segment, t, tt, "none", 3.0, tth)


# ── Travel-time index ──

def test_index_is_zero_on_schedule():
    assert compute_tt_index([(10.0, 10.0)] * 10) == 0.0


def test_single_late_segment():
    assert compute_tt_index([(20.0, 10.0)]) == pytest.approx(0.063212, abs=1e-6)


def test_short_trajectory_keeps_the_newest_weight():
    # the newest pair weighs i = 10 whatever the length
    assert compute_tt_index([(10.0, 10.0), (20.0, 10.0)]) == pytest.approx(compute_tt_index([(20.0, 10.0)]))
    assert compute_tt_index([(20.0, 10.0), (10.0, 10.0)]) == pytest.approx((1 - np.exp(-0.9)) / 10)


def test_index_lower_bound_when_everything_is_instant():
    i = np.arange(1, 11)
    expected = (10 - np.exp(i / 10).sum()) / 10
    assert compute_tt_index([(0.0, 10.0)] * 10) == pytest.approx(expected)
    assert expected == pytest.approx(-0.805626, abs=1e-6)


def test_index_grows_with_delay_and_stays_below_one():
    values = [compute_tt_index([(tt, 10.0)] * 10) for tt in (5.0, 10.0, 20.0, 40.0, 100.0)]
    assert all(a < b for a, b in zip(values, values[1:]))
    assert values[-1] < 1.0


def test_recent_segments_weigh_more():
    recent_late = compute_tt_index([(10.0, 10.0)] * 9 + [(30.0, 10.0)])
    early_late = compute_tt_index([(30.0, 10.0)] + [(10.0, 10.0)] * 9)
    assert recent_late > early_late


def test_index_rejects_bad_trajectories():
    with pytest.raises(InvalidTrajectoryError):
        compute_tt_index([])
    with pytest.raises(InvalidTrajectoryError):
        compute_tt_index([(10.0, 10.0)] * 11)
    with pytest.raises(InvalidTrajectoryError):
        compute_tt_index([(10.0, 0.0)])


def test_blend():
    assert blend_indices(0.3, 0.4, 0.3) == pytest.approx(0.33)
    assert blend_indices(0.3, 0.4, 0.0) == 0.3
    assert blend_indices(0.3, 0.4, 1.0) == 0.4
    assert blend_indices(0.3, None, 0.5) == 0.3
    with pytest.raises(InvalidConfigError):
        blend_indices(0.3, 0.4, 1.2)


def test_excessive_is_strict():
    assert not detect_excessive(25.0, 10.0, 2.5)
    assert detect_excessive(25.1, 10.0, 2.5)


def test_one_hot_order():
    np.testing.assert_array_equal(one_hot("accident"), [1, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(one_hot("none"), [0, 0, 0, 0, 0, 1])
    with pytest.raises(ValueError):
        one_hot("flood")


# ── Neighbor table ──

def test_table_keeps_the_latest_beacon_per_sender():
    table = NeighborTable()
    table.upsert(beacon(1, 5.0, 0.2))
    table.upsert(beacon(1, 3.0, 0.9))
    assert table.get(1).tt_index == 0.2
    table.upsert(beacon(1, 6.0, 0.4))
    assert len(table) == 1 and table.get(1).tt_index == 0.4


def test_off_segment_beacons_are_ignored():
    table = on_beacon_received(NeighborTable(), beacon(1, 5.0, segment=3), 5.0, my_segment=0)
    assert len(table) == 0


def test_stale_entries_are_pruned():
    table = NeighborTable()
    on_beacon_received(table, beacon(1, 0.0), 0.0, 0)
    on_beacon_received(table, beacon(2, 950.0), 950.0, 0)
    assert 1 not in table and 2 in table


def test_local_flow_counts_self():
    table = NeighborTable()
    assert local_flow_estimate(table, 60.0, 100.0) == 1
    table.upsert(beacon(1, 30.0))
    table.upsert(beacon(2, 70.0))
    assert local_flow_estimate(table, 60.0, 100.0) == 2
    assert flow_per_interval(1, 20.0) == 0.0
    assert flow_per_interval(3, 30.0) == pytest.approx(2 * 300 / 60)


# ── Trajectory log ──

def test_log_holds_the_last_ten_newest_first():
    log = TrajectoryLog()
    for t in range(1, 13):
        log.push(entry(float(t), segment=t))
    assert len(log) == 10
    assert [e.segment_id for e in log.entries[:2]] == [12, 11]
    assert log.entries[-1].segment_id == 3
    assert log.index_pairs()[0] == (20.0, 10.0)


def test_log_rejects_out_of_order_entries():
    log = TrajectoryLog()
    log.push(entry(10.0))
    with pytest.raises(InvalidTrajectoryError):
        log.push(entry(10.0))


def test_upload_carries_only_fresh_records():
    log = TrajectoryLog()
    log.push(entry(10.0, segment=1))
    log.push(entry(500.0, segment=2))
    records = log.records(1000.0)
    assert [r.segment_id for r in records] == [2]


# ── Vehicle agent ──

def test_segment_change_updates_the_index(flat_profile):
    agent = VehicleAgent(7, segment=0, entry_time=0.0, heading="E", profile=flat_profile)
    agent.on_segment_change(next_segment=1, heading="N", now=20.0)
    head = agent.log.entries[0]
    assert (head.segment_id, head.current_tt, head.event, head.flow) == (0, 20.0, "none", 0.0)
    assert agent.own_index == pytest.approx(0.063212, abs=1e-6)
    assert agent.tt_index == agent.own_index
    assert (agent.segment, agent.segment_entry_time, agent.heading.value) == (1, 20.0, "N")


def test_neighbor_table_is_reset_on_segment_change(flat_profile):
    agent = VehicleAgent(7, 0, 0.0, "E", flat_profile)
    agent.receive(beacon(3, 15.0, 0.5), 15.0)
    agent.on_segment_change(1, "E", 20.0)
    assert len(agent.table) == 0
    assert agent.log.entries[0].flow == pytest.approx(1 * 300 / 40)


def test_refresh_blends_once_per_step(flat_profile):
    agent = VehicleAgent(7, 0, 0.0, "E", flat_profile, alpha=0.5)
    agent.own_index = 0.2
    agent.receive(beacon(3, 4.0, 0.6), 4.0)
    assert agent.refresh_index(4.0) == pytest.approx(0.4)
    agent.receive(beacon(4, 4.5, 1.0), 4.5)
    assert agent.refresh_index(4.0) == pytest.approx(0.4)
    assert agent.refresh_index(5.0) == pytest.approx(0.1 + 0.5 * 0.8)


def test_congested_traversal_is_tagged(road, flat_profile):
    log = GroundTruthLog(road, horizon=1200, events=[ScenarioEvent("accident", 0, 0.0, 600.0, (0,), "middle")])
    agent = VehicleAgent(7, 0, 0.0, "E", flat_profile, c=1.5, classifier=GroundTruthCauseClassifier(log))
    agent.on_segment_change(1, "E", 40.0)
    agent.on_segment_change(None, "E", 55.0)
    assert [e.event for e in agent.log.entries] == ["none", "accident"]


def test_make_upload(flat_profile):
    agent = VehicleAgent(7, 0, 0.0, "E", flat_profile)
    agent.on_segment_change(1, "E", 20.0)
    upload = agent.make_upload(30.0)
    assert upload.vehicle_id == 7 and upload.tt_index == agent.tt_index
    assert upload.records[0].segment_id == 0


# ── Cause classification ──

def context(segment=0, entry_time=0.0, exit_time=60.0):
    return CauseContext(1, segment, entry_time, exit_time, exit_time - entry_time, 10.0)


def test_ground_truth_classifier():
    events = [ScenarioEvent("weather", 5, 0.0, 100.0, weather_speed_factor=0.5),
              ScenarioEvent("accident", 0, 50.0, 600.0, (0,), "middle")]
    classifier = GroundTruthCauseClassifier(SimpleNamespace(events=events))
    assert classify_cause(context(0, 0.0, 60.0), classifier) == "accident"
    assert classify_cause(context(3, 0.0, 60.0), classifier) == "weather"
    assert classify_cause(context(3, 200.0, 260.0), classifier) == "recurrent"


def test_pluggable_classifier():
    class AlwaysWorkzone:
        def classify(self, ctx):
            return "workzone"

    class Bogus:
        def classify(self, ctx):
            return "flood"

    assert classify_cause(context(), AlwaysWorkzone()) == "workzone"
    with pytest.raises(InvalidEventError):
        classify_cause(context(), Bogus())


# ── RSU ──

@pytest.fixture
def rsu(flat_profile):
    return Rsu(0, list(range(1, 9)), flat_profile, (0.0, 0.0), horizon=1200)


def test_rsu_counts_senders_when_they_go_silent(rsu):
    rsu.ingest_beacon(beacon(1, 100.0), 100.0)
    rsu.ingest_beacon(beacon(2, 299.0), 299.0)
    rsu.ingest_beacon(beacon(3, 300.0), 300.0)
    rsu.ingest_beacon(beacon(4, 300.0, segment=5), 300.0)
    assert rsu.end_of_step(150.0) is None
    assert rsu.end_of_step(301.0) == 2
    assert rsu.end_of_step(601.0) == 1
    assert rsu.interval_flows == {0: 2, 1: 1}
    assert rsu.flows.as_list() == [1, 2]


def test_flow_history_keeps_four():
    table = HistoricalFlowTable()
    for flow in range(1, 6):
        table.push(flow)
    assert table.is_full and table.as_list() == [5, 4, 3, 2]


def test_rsu_average_index(rsu):
    rsu.ingest_beacon(beacon(1, 10.0, 0.2), 10.0)
    rsu.ingest_beacon(beacon(2, 10.0, 0.4), 10.0)
    assert rsu.average_tt_index(10.0) == pytest.approx(0.3)
    rsu.ingest_beacon(beacon(1, 11.0, 0.0), 11.0)
    assert rsu.average_tt_index(11.0) == pytest.approx(0.2)
    with pytest.raises(EmptyTableError):
        rsu.average_tt_index(1000.0)


def test_rsu_keeps_fresh_adjacent_reports(rsu):
    upload = UploadMessage(9, 1000.0, 0.1, (UploadRecord(1, 990.0, 5.0, "accident", 30.0),
                                            UploadRecord(9, 980.0, 2.0, "none", 12.0),
                                            UploadRecord(2, 50.0, 4.0, "none", 12.0)))
    assert rsu.ingest_upload(upload, 1000.0) == 1
    older = UploadMessage(10, 1000.0, 0.1, (UploadRecord(1, 900.0, 1.0, "none", 12.0),))
    assert rsu.ingest_upload(older, 1000.0) == 0
    assert rsu.adjacent_state.slot(1, 1000.0, rsu.profile) == (5.0, "accident")
    assert rsu.adjacent_state.slot(3, 1000.0, rsu.profile) == (3.0, "none")
    assert rsu.adjacent_state.slot(1, 1891.0, rsu.profile) == (3.0, "none")


def test_rsu_feature_vector_layout(rsu):
    for flow in (4, 3, 2, 1):
        rsu.flows.push(flow)
    rsu.ingest_beacon(beacon(1, 599.0, 0.25), 599.0)
    rsu.ingest_upload(UploadMessage(9, 590.0, 0.0, (UploadRecord(1, 580.0, 6.0, "accident", 30.0),)), 590.0)
    vector = rsu.assemble_feature_vector(600.0, now=600.0)
    assert vector.values.shape == (config.FEATURE_DIM,)
    assert vector.values[0] == pytest.approx(0.5)
    assert vector.values[1] == pytest.approx(0.25)
    np.testing.assert_array_equal(vector.values[2:6], [1, 2, 3, 4])
    np.testing.assert_array_equal(vector.values[6:14], [6.0] + [3.0] * 7)
    events = vector.values[EVENT_SLICE].reshape(8, 6)
    np.testing.assert_array_equal(events[0], [1, 0, 0, 0, 0, 0])
    assert events[1:, -1].all()
    assert len(rsu.stream) == 1


def test_rsu_needs_four_flows(rsu):
    for flow in (1, 2, 3):
        rsu.flows.push(flow)
    rsu.ingest_beacon(beacon(1, 599.0), 599.0)
    with pytest.raises(InsufficientHistoryError):
        rsu.assemble_feature_vector(600.0)


def moving_beacon(sender, t, position, segment=0):
    return BeaconMessage(segment, t, sender, position, 5.0, 0.0)


def test_rsu_counts_a_presence_once_across_lost_beacons(rsu):
    for now in range(290, 320):
        if now != 298:
            rsu.ingest_beacon(moving_beacon(7, float(now), 5.0 * (now - 290)), float(now))
        rsu.end_of_step(float(now + 1))
    for now in range(321, 602):
        rsu.end_of_step(float(now))
    assert rsu.interval_flows == {0: 1, 1: 0}


def test_rsu_counts_a_new_traversal_again(rsu):
    rsu.ingest_beacon(moving_beacon(7, 100.0, 120.0), 100.0)
    rsu.end_of_step(102.0)
    assert rsu.end_of_step(301.0) == 1
    rsu.ingest_beacon(moving_beacon(7, 400.0, 3.0), 400.0)
    rsu.end_of_step(402.0)
    assert rsu.end_of_step(601.0) == 1


def test_rsu_average_keeps_departed_senders_until_stale(rsu):
    rsu.ingest_beacon(beacon(1, 10.0, 0.4), 10.0)
    rsu.end_of_step(12.0)
    rsu.ingest_beacon(beacon(2, 500.0, 0.2), 500.0)
    assert rsu.average_tt_index(500.0) == pytest.approx(0.3)
    assert rsu.average_tt_index(911.0) == pytest.approx(0.2)


def test_rsu_message_log_replays_bit_identically(flat_profile, tmp_path):
    rsu = Rsu(0, list(range(1, 9)), flat_profile, (0.0, 0.0), horizon=1200, record=True)
    rng = np.random.default_rng(2)
    for now in range(1, 1802):
        now = float(now)
        for sender in range(5):
            if rng.random() < 0.5:
                rsu.ingest_beacon(BeaconMessage(0, now - 0.5, sender, now % 150.0, 5.0, float(rng.normal(0.0, 0.1))),
                                  now - 0.5)
        if now % 50 == 0:
            record = UploadRecord(int(rng.integers(1, 12)), now - 1.0, float(rng.uniform(0.0, 10.0)), "accident", 30.0)
            rsu.ingest_upload(UploadMessage(9, now, 0.0, (record,)), now)
        if rsu.end_of_step(now) is not None:
            try:
                rsu.assemble_feature_vector(now - 1.0, now)
            except (InsufficientHistoryError, EmptyTableError):
                pass
    assert len(rsu.stream) == 3

    path = tmp_path / "rsu_messages.json"
    export_message_log(rsu, path)
    setup, entries = load_message_log(path)
    replayed = replay_message_log(setup, entries, flat_profile)
    assert len(replayed) == len(rsu.stream)
    for a, b in zip(replayed, rsu.stream):
        assert a.t == b.t
        np.testing.assert_array_equal(a.values, b.values)


def test_feature_vector_shape():
    columns = feature_columns()
    assert len(columns) == config.FEATURE_DIM == 62
    assert columns[:3] == ["t", "tti", "f_t1"] and columns[-1] == "e_a8_6"
    with pytest.raises(DimensionMismatchError):
        FeatureVector(0.0, np.zeros(61))


def test_reference_index_uses_recent_true_travel_times(road, flat_profile):
    log = GroundTruthLog(road, horizon=1200)
    log.record_traversal(1, 0, 230.0, 250.0)
    tti = reference_tt_index(log, flat_profile, [0, 1], 300.0)
    assert tti == pytest.approx((1 - np.exp(-0.9)) / 10)


# ── Randomized properties ──

def test_tt_index_is_scale_invariant_and_bounded():
    rng = np.random.default_rng(11)
    for _ in range(2000):
        n = int(rng.integers(1, 11))
        tt = rng.uniform(1.0, 500.0, n)
        tth = rng.uniform(1.0, 200.0, n)
        value = compute_tt_index(np.column_stack([tt, tth]))
        scale = rng.uniform(0.1, 100.0)
        assert compute_tt_index(np.column_stack([tt * scale, tth * scale])) == pytest.approx(value, abs=1e-9)
        assert value < 1.0


def test_neighbor_table_holds_only_fresh_same_segment_beacons():
    rng = np.random.default_rng(5)
    table = NeighborTable()
    now = 0.0
    for _ in range(5000):
        now += float(rng.uniform(0.0, 5.0))
        sent = now - float(rng.uniform(0.0, 1200.0))
        on_beacon_received(table, beacon(int(rng.integers(0, 50)), sent, segment=int(rng.integers(0, 3))), now, 0)
        assert all(b.segment_id == 0 and now - b.time <= config.STALENESS_S for b in table.entries.values())


@pytest.mark.slow
def test_tt_index_bounds_over_many_random_trajectories():
    rng = np.random.default_rng(23)
    lowest = sum(1.0 - np.exp(i / 10.0) for i in range(1, 11)) / 10.0
    for _ in range(100_000):
        n = int(rng.integers(1, 11))
        pairs = np.column_stack([rng.uniform(0.0, 200.0, n), rng.uniform(1.0, 200.0, n)])
        value = compute_tt_index(pairs)
        assert lowest - 1e-12 <= value < 1.0
    assert lowest == pytest.approx(-0.805626, abs=1e-6)
