import numpy as np
import pytest

from agents.rsu import Rsu
from vanet.channel import (ChannelModel, MessageTrace, broadcast_beacon, deliver_upload_to_rsu, exchange_step,
                           newest_delivered_tick, reception_probability, segment_density)
from vanet.messages import UploadMessage, UploadRecord
from vanet.scf import ScfBuffer, ScfItem, ScfRouter, scf_carry
from utils.errors import InvalidConfigError, InvalidTrajectoryError


class ScriptedDraws:
    """Stands in for the channel's generator: hands out uniform draws from a fixed list."""

    def __init__(self, values):
        self.values = iter(values)

    def random(self, size=None):
        return next(self.values)


def upload(vehicle_id=1, segments=(1,), now=100.0):
    records = tuple(UploadRecord(seg, now - i, 4.0, "none", 12.0) for i, seg in enumerate(segments))
    return UploadMessage(vehicle_id, now, 0.1, records)


def rsu_at_origin(profile):
    return Rsu(0, list(range(1, 9)), profile, (0.0, 0.0), horizon=1200)


# ── Reception model ──

def test_perfect_channel_at_zero_density():
    assert reception_probability(100.0, 0.0, ChannelModel.perfect()) == 1.0


def test_collision_term_at_the_top_of_the_density_sweep():
    channel = ChannelModel(base_loss=0.0, collision_coefficient=20.0)
    assert channel.reception_probability(10.0, 0.036) == pytest.approx(0.28)
    lossy = ChannelModel(base_loss=0.1, collision_coefficient=20.0)
    assert lossy.reception_probability(10.0, 0.036) == pytest.approx(0.9 * 0.28)


def test_nothing_arrives_beyond_range():
    channel = ChannelModel.perfect(range_m=300.0)
    assert channel.reception_probability(300.5, 0.0) == 0.0
    p = channel.reception_probability(np.array([0.0, 299.0, 301.0]), np.zeros(3))
    np.testing.assert_array_equal(p, [1.0, 1.0, 0.0])


def test_probability_does_not_grow_with_density():
    channel = ChannelModel()
    p = channel.reception_probability(50.0, np.linspace(0.0, 0.05, 11))
    assert np.all(np.diff(p) <= 0)
    assert p[-1] == 0.0


def test_invalid_channel_parameters():
    with pytest.raises(InvalidConfigError):
        ChannelModel(base_loss=1.0)
    with pytest.raises(InvalidConfigError):
        ChannelModel(range_m=0.0)


def test_segment_density_per_square_meter(grid3):
    seg = grid3.segment(0)
    assert segment_density(21, seg) == pytest.approx(21 / (seg.length * seg.lanes * 3.5))


# ── Beacons ──

def test_broadcast_is_geometric():
    channel = ChannelModel.perfect()
    delivered = broadcast_beacon(channel, (0.0, 0.0), [1, 2, 3], [(100.0, 0.0), (0.0, 350.0), (0.0, -299.0)],
                                 np.zeros(3))
    assert delivered == {1, 3}


def test_broadcast_delivery_rate_matches_base_loss():
    channel = ChannelModel(base_loss=0.1, collision_coefficient=0.0, seed=5)
    n = 10_000
    delivered = broadcast_beacon(channel, (0.0, 0.0), range(n), np.zeros((n, 2)), np.zeros(n))
    assert len(delivered) / n == pytest.approx(0.9, abs=0.01)


def test_exchange_step_is_total_on_a_perfect_channel():
    channel = ChannelModel.perfect()
    pre = np.array([[0.0, 0.0], [10.0, 0.0]])
    post = pre + [5.0, 0.0]
    delivered = exchange_step(channel, pre, post, np.array([0.0, 0.05]), pre[::-1], post[::-1], np.zeros(2))
    assert delivered.shape == (2, 10)
    assert delivered.all()


def test_newest_delivered_tick():
    delivered = np.array([[True, False, True, False], [False, False, False, False]])
    np.testing.assert_array_equal(newest_delivered_tick(delivered), [2, -1])


def test_message_trace_columns():
    trace = MessageTrace()
    trace.record(1.25, "beacon", 3, "rsu", True)
    frame = trace.to_frame()
    assert list(frame.columns) == ["tick", "type", "sender", "receiver", "delivered"]
    assert frame.iloc[0].tolist() == [12, "beacon", 3, "rsu", 1]


# ── Uploads ──

def test_upload_caps_records_and_orders_them():
    with pytest.raises(InvalidTrajectoryError):
        upload(segments=range(11))
    with pytest.raises(InvalidTrajectoryError):
        UploadMessage(1, 10.0, 0.0, (UploadRecord(1, 5.0, 1.0, "none", 3.0), UploadRecord(2, 6.0, 1.0, "none", 3.0)))


def test_upload_out_of_range_is_not_delivered(flat_profile):
    rsu = rsu_at_origin(flat_profile)
    assert deliver_upload_to_rsu(ChannelModel.perfect(), upload(), (400.0, 0.0), rsu, 0.0, 100.0) is None
    assert rsu.adjacent_state.reports == {}


def test_perfect_channel_delivers_every_record(flat_profile):
    rsu = rsu_at_origin(flat_profile)
    message = upload(segments=range(1, 11))
    assert deliver_upload_to_rsu(ChannelModel.perfect(), message, (50.0, 0.0), rsu, 0.0, 100.0) == 10
    assert sorted(rsu.adjacent_state.reports) == list(range(1, 9))


def test_lost_frame_truncates_the_upload(flat_profile):
    rsu = rsu_at_origin(flat_profile)
    channel = ChannelModel(base_loss=0.5, collision_coefficient=0.0)
    channel.rng = ScriptedDraws([0.0, 0.0, 0.0, 0.0, 0.9, 0.0])
    delivered = deliver_upload_to_rsu(channel, upload(segments=range(1, 11)), (50.0, 0.0), rsu, 0.0, 100.0)
    assert delivered == 4
    assert sorted(rsu.adjacent_state.reports) == [1, 2, 3, 4]


# ── Store-carry-forward ──

def test_buffer_evicts_the_oldest_item():
    buffer = ScfBuffer(capacity=2)
    for t in (1.0, 2.0, 3.0):
        scf_carry(buffer, upload(now=t), t)
    assert [item.created for item in buffer.items] == [2.0, 3.0]


def test_items_expire_after_fifteen_minutes():
    buffer = ScfBuffer()
    buffer.push(ScfItem(upload(), created=0.0))
    assert buffer.expire(900.0) == 0
    assert buffer.expire(901.0) == 1
    assert len(buffer) == 0


def test_isolated_carrier_only_loses_data_to_expiry(flat_profile):
    router = ScfRouter(ChannelModel.perfect(), rsu_at_origin(flat_profile))
    router.store(1, upload(), 0.0)
    far = np.array([[5000.0, 0.0]])
    for now in (1.0, 30.0, 899.0):
        router.forward(now, np.array([1]), far, np.zeros(1))
        assert router.held() == 1
    router.forward(901.0, np.array([1]), far, np.zeros(1))
    assert router.held() == 0 and router.expired == 1


def test_relay_bridges_a_carrier_to_the_rsu(flat_profile):
    rsu = rsu_at_origin(flat_profile)
    router = ScfRouter(ChannelModel.perfect(), rsu)
    router.store(1, upload(segments=(3,)), 10.0)

    # vehicle 2 is closer to the RSU and within range of the carrier
    router.forward(11.0, np.array([1, 2]), np.array([[1000.0, 0.0], [800.0, 0.0]]), np.zeros(2))
    assert len(router.buffer(1)) == 0 and len(router.buffer(2)) == 1
    assert router.buffer(2).items[0].hops == 1

    # vehicle 2 drives into RSU range
    router.forward(40.0, np.array([1, 2]), np.array([[1000.0, 0.0], [100.0, 0.0]]), np.zeros(2))
    assert router.delivered == 1
    assert rsu.adjacent_state.reports[3].report_time == 100.0


def test_relay_respects_the_hop_limit(flat_profile):
    router = ScfRouter(ChannelModel.perfect(), rsu_at_origin(flat_profile), max_hops=0)
    router.store(1, upload(), 10.0)
    router.forward(11.0, np.array([1, 2]), np.array([[1000.0, 0.0], [800.0, 0.0]]), np.zeros(2))
    assert len(router.buffer(1)) == 1 and router.relayed == 0
