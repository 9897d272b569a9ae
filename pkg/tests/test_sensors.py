import math

import numpy as np
import pytest

from activeswarm.config import BusParams, CameraParams, UwbParams, VioParams
from activeswarm.core import WorldState, seeded_rng
from activeswarm.sensors import (
    Bus,
    BusMessage,
    MeasurementLog,
    UwbRange,
    VioSample,
    VioTrack,
    VisionDetection,
    broadcast,
    deliver,
    in_view,
    simulate_camera,
    simulate_uwb,
    simulate_vio,
)

QUIET_CAM = CameraParams(sigma0=0.0, sigma1=0.0, detect_prob=1.0)


def pair_world(offset, camera_angle=0.0):
    w = WorldState.at_rest([[0.0, 0.0, 0.0], offset], 0.02)
    return w.with_camera_angles([camera_angle, 0.0])


def test_camera_zero_noise_exact():
    det = simulate_camera(pair_world([2.0, 0.0, 0.3]), 0, 1, QUIET_CAM, seeded_rng(0, "c"))
    assert det is not None
    assert np.array_equal(det.relative_position, [2.0, 0.0, 0.3])


def test_camera_outside_fov():
    b = math.radians(80)
    w = pair_world([2 * math.cos(b), 2 * math.sin(b), 0.0])
    assert not in_view(w, 0, 1, QUIET_CAM)
    assert simulate_camera(w, 0, 1, QUIET_CAM, seeded_rng(0, "c")) is None


def test_camera_fov_follows_camera_angle():
    b = math.radians(80)
    w = pair_world([2 * math.cos(b), 2 * math.sin(b), 0.0], camera_angle=math.radians(60))
    assert in_view(w, 0, 1, QUIET_CAM)


def test_camera_max_range():
    assert simulate_camera(pair_world([8.5, 0.0, 0.0]), 0, 1, QUIET_CAM, seeded_rng(0, "c")) is None
    assert simulate_camera(pair_world([7.9, 0.0, 0.0]), 0, 1, QUIET_CAM, seeded_rng(0, "c")) is not None


def test_camera_noise_grows_with_distance():
    params = CameraParams(detect_prob=1.0)
    rng = seeded_rng(1, "c")
    w = pair_world([4.0, 0.0, 0.0])
    samples = np.array([simulate_camera(w, 0, 1, params, rng).relative_position for _ in range(10_000)])
    std = samples.std(axis=0)
    assert np.all(np.abs(std - 0.06) < 0.006)


def test_camera_detection_probability():
    params = CameraParams(detect_prob=0.9)
    rng = seeded_rng(2, "c")
    w = pair_world([1.0, 0.0, 0.0])
    hits = sum(simulate_camera(w, 0, 1, params, rng) is not None for _ in range(10_000))
    assert 0.88 < hits / 10_000 < 0.92


def test_uwb_zero_noise():
    r = simulate_uwb(pair_world([1.0, 0.0, 0.0]), (1, 0), UwbParams(sigma=0.0, p_outlier=0.0), seeded_rng(0, "u"))
    assert (r.a, r.b, r.distance) == (0, 1, 1.0)


def test_uwb_noise_std():
    params = UwbParams(sigma=0.1, p_outlier=0.0)
    rng = seeded_rng(3, "u")
    w = pair_world([3.0, 0.0, 0.0])
    d = np.array([simulate_uwb(w, (0, 1), params, rng).distance for _ in range(10_000)])
    assert abs(d.std() - 0.1) < 0.01
    assert abs(d.mean() - 3.0) < 0.005


def test_uwb_forced_outlier_band():
    params = UwbParams(sigma=0.0, p_outlier=1.0)
    rng = seeded_rng(4, "u")
    w = pair_world([1.0, 0.0, 0.0])
    for _ in range(2000):
        d = simulate_uwb(w, (0, 1), params, rng).distance
        assert d >= 0.0
        assert not 0.5 < d < 1.5


def test_uwb_clamps_negative():
    params = UwbParams(sigma=0.0, p_outlier=1.0, outlier_min=1.9, outlier_max=2.0)
    w = pair_world([0.2, 0.0, 0.0])
    ds = [simulate_uwb(w, (0, 1), params, seeded_rng(s, "u")).distance for s in range(50)]
    assert min(ds) == 0.0


def fly(track, world, params, rng, velocity, ticks):
    w = world
    for _ in range(ticks):
        w = WorldState(w.tick + 1, w.dt, w.positions + np.asarray(velocity) * w.dt, np.tile(velocity, (w.n, 1)),
                       w.yaw, w.camera_angles)
        track = simulate_vio(w, 0, track, params, rng)
    return track, w


def test_vio_stationary_zero_noise():
    w = pair_world([1.0, 0.0, 0.0])
    quiet = VioParams(sigma_drift=0.0, sigma_white=0.0, sigma_velocity=0.0)
    track = VioTrack.start(w, 0)
    for _ in range(10):
        w = WorldState(w.tick + 1, w.dt, w.positions, w.velocities, w.yaw, w.camera_angles)
        track = simulate_vio(w, 0, track, quiet, seeded_rng(0, "v"))
    assert np.array_equal(track.sample.displacement, np.zeros(3))


def test_vio_exact_integration():
    w = pair_world([1.0, 0.0, 0.0])
    quiet = VioParams(sigma_drift=0.0, sigma_white=0.0, sigma_velocity=0.0)
    track, _ = fly(VioTrack.start(w, 0), w, quiet, seeded_rng(0, "v"), [1.0, 0.0, 0.0], 100)
    assert np.allclose(track.sample.displacement, [2.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(track.sample.velocity, [1.0, 0.0, 0.0])


def test_vio_drift_grows_with_distance():
    params = VioParams(sigma_drift=0.02, sigma_white=0.0, sigma_velocity=0.0)
    short, long_ = [], []
    for seed in range(100):
        w = pair_world([1.0, 0.0, 0.0])
        rng = seeded_rng(seed, "v")
        t1, w1 = fly(VioTrack.start(w, 0), w, params, rng, [1.0, 0.0, 0.0], 50)  # 1 m
        short.append(np.linalg.norm(t1.drift))
        t10, _ = fly(t1, w1, params, rng, [1.0, 0.0, 0.0], 450)  # 10 m total
        long_.append(np.linalg.norm(t10.drift))
    assert np.mean(long_) > np.mean(short)


def _messages(bus, count):
    for k in range(count):
        bus.broadcast(BusMessage(k % bus.n, VioSample(k % bus.n, np.zeros(3), np.zeros(3), 0), 0))


def test_bus_lossless_delivers_everything_once():
    bus = Bus(3, 0.0, seeded_rng(0, "bus"))
    _messages(bus, 6)
    inbox = deliver(bus, 1)
    assert all(len(inbox[r]) == 4 for r in range(3))
    assert deliver(bus, 2) == {0: [], 1: [], 2: []}


def test_bus_total_loss():
    bus = Bus(3, 1.0, seeded_rng(0, "bus"))
    _messages(bus, 6)
    assert all(not m for m in deliver(bus, 1).values())


def test_bus_one_tick_latency():
    bus = Bus(2, 0.0, seeded_rng(0, "bus"))
    broadcast(bus, BusMessage(0, "hello", 5))
    assert deliver(bus, 5) == {0: [], 1: []}
    assert [m.payload for m in deliver(bus, 6)[1]] == ["hello"]


def test_bus_drop_rate():
    bus = Bus(2, BusParams(p_drop=0.5).p_drop, seeded_rng(9, "bus"))
    for k in range(10_000):
        bus.broadcast(BusMessage(0, k, 0))
    got = len(bus.deliver(1)[1])
    assert 0.47 <= got / 10_000 <= 0.53


def test_bus_sender_order():
    bus = Bus(4, 0.0, seeded_rng(0, "bus"))
    for s in (3, 1, 2):
        bus.broadcast(BusMessage(s, s, 0))
    assert [m.sender for m in bus.deliver(1)[0]] == [1, 2, 3]


def test_measurement_log_round_trip(tmp_path):
    log = MeasurementLog(
        vision=[VisionDetection(0, 1, np.array([0.1, 1 / 3, -2e-17]), 4)],
        uwb=[UwbRange(0, 1, 1.2345678901234567, 4)],
        vio=[VioSample(1, np.array([1e-9, 2.0, 3.0]), np.array([0.1, 0.2, 0.3]), 4)],
        deliveries=[(4, 0, 1, "vision", 1)],
    )
    log.write_csv(tmp_path)
    back = MeasurementLog.read_csv(tmp_path)
    assert np.array_equal(back.vision[0].relative_position, log.vision[0].relative_position)
    assert back.uwb[0] == log.uwb[0]
    assert np.array_equal(back.vio[0].displacement, log.vio[0].displacement)
    assert back.deliveries == log.deliveries
    assert (tmp_path / "uwb.csv").read_text().startswith("# schema_version=1")
