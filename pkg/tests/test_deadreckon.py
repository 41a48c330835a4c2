import math

import numpy as np
import pytest

from spooflab.deadreckon import (
    VelocityWindow,
    integrate,
    relative_motion,
    windowed_velocity,
)
from spooflab.geometry import Pose
from spooflab.worldsim import sample_trajectory, synth_dead_reckoning


# --- integrate / relative_motion ------------------------------------------------


def test_integrate_no_increments():
    anchor = Pose.from_yaw(0.2, (3.0, 1.0, 0.0))
    chain = integrate(anchor, [])
    assert len(chain) == 1
    assert chain[0].almost_equal(anchor)


def test_integrate_constant_steps():
    step = Pose.from_yaw(0.0, (1.0, 0.0, 0.0))
    chain = integrate(Pose.identity(), [step] * 5)
    assert len(chain) == 6
    for k, pose in enumerate(chain):
        np.testing.assert_allclose(pose.t, [float(k), 0.0, 0.0], atol=1e-12)


def test_integrate_body_frame_composition():
    # a yawed step advances along the rotated heading, not the world x axis
    quarter = Pose.from_yaw(math.pi / 2, (1.0, 0.0, 0.0))
    chain = integrate(Pose.identity(), [quarter, quarter])
    np.testing.assert_allclose(chain[1].t, [1.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(chain[2].t, [1.0, 1.0, 0.0], atol=1e-12)
    assert chain[2].yaw() == pytest.approx(math.pi, abs=1e-9)


def test_relative_motion_inverts_integration():
    rng = np.random.default_rng(5)
    incs = [
        Pose.from_yaw(rng.uniform(-0.2, 0.2), tuple(rng.uniform(-1, 1, size=3)))
        for _ in range(8)
    ]
    chain = integrate(Pose.from_yaw(0.3, (2.0, -1.0, 0.5)), incs)
    for k, inc in enumerate(incs):
        assert relative_motion(chain, k, k + 1).almost_equal(inc, tol=1e-9)
    # long-span relative motion composes the in-between increments
    span = relative_motion(chain, 0, len(incs))
    acc = Pose.identity()
    for inc in incs:
        acc = acc @ inc
    assert span.almost_equal(acc, tol=1e-9)


def test_zero_noise_reckoning_reproduces_truth():
    gt = sample_trajectory([(0.0, 0.0, 0.0), (8.0, 0.0, 0.0), (8.0, 8.0, 0.0)], 2.0, 0.1)
    stream = synth_dead_reckoning(gt, 0.0, 0.0, seed=0)
    chain = integrate(gt.poses[0], stream.increments)
    assert len(chain) == len(gt.poses)
    for est, true in zip(chain, gt.poses):
        assert est.almost_equal(true, tol=1e-9)


# --- VelocityWindow ---------------------------------------------------------------


def test_window_invalid_until_span_filled():
    w = VelocityWindow(1.0)
    for k in range(10):  # 0.0 .. 0.9, span still short of 1.0
        w.push(0.1 * k, np.array([0.1 * k, 0.0, 0.0]))
        assert w.velocity() is None
        assert w.yaw_rate() is None
    w.push(1.0, np.array([1.0, 0.0, 0.0]))
    assert w.velocity() is not None


def test_window_uniform_motion_velocity():
    w = VelocityWindow(1.0)
    for k in range(21):
        w.push(0.1 * k, np.array([0.2 * k, -0.1 * k, 0.0]))
    np.testing.assert_allclose(w.velocity(), [2.0, -1.0, 0.0], atol=1e-9)
    assert w.span() == pytest.approx(1.0)


def test_window_stationary():
    w = VelocityWindow(0.5)
    for k in range(11):
        w.push(0.1 * k, np.zeros(3))
    np.testing.assert_allclose(w.velocity(), np.zeros(3), atol=1e-12)
    assert w.yaw_rate() == pytest.approx(0.0, abs=1e-12)


def test_window_yaw_rate_across_wrap():
    # steady rotation crossing the +/-pi seam must not produce a rate spike
    w = VelocityWindow(1.0)
    rate = 1.0
    for k in range(40):
        t = 0.1 * k
        yaw = math.remainder(math.pi - 0.05 + rate * t, 2.0 * math.pi)
        w.push(t, np.zeros(3), yaw)
        r = w.yaw_rate()
        if r is not None:
            assert r == pytest.approx(rate, abs=1e-9)


def test_window_reset():
    w = VelocityWindow(0.5)
    for k in range(11):
        w.push(0.1 * k, np.array([float(k), 0.0, 0.0]))
    assert w.velocity() is not None
    w.reset()
    assert w.velocity() is None
    assert w.span() == 0.0
    w.push(100.0, np.zeros(3))  # old timestamps forgotten


def test_window_rejects_nonincreasing_time():
    w = VelocityWindow(1.0)
    w.push(0.0, np.zeros(3))
    with pytest.raises(ValueError):
        w.push(0.0, np.zeros(3))
    with pytest.raises(ValueError):
        VelocityWindow(0.0)


# --- windowed_velocity ---------------------------------------------------------------


def test_windowed_velocity_exact_on_grid():
    ts = np.arange(0.0, 2.05, 0.1)
    ps = np.column_stack([3.0 * ts, np.zeros_like(ts), np.zeros_like(ts)])
    est = windowed_velocity(ts, ps, 2.0, 1.0)
    assert est.valid
    np.testing.assert_allclose(est.linear_velocity, [3.0, 0.0, 0.0], atol=1e-9)


def test_windowed_velocity_invalid_before_window_fills():
    ts = np.arange(0.0, 0.55, 0.1)
    ps = np.column_stack([ts, np.zeros_like(ts), np.zeros_like(ts)])
    est = windowed_velocity(ts, ps, 0.5, 1.0)
    assert not est.valid
    np.testing.assert_allclose(est.linear_velocity, np.zeros(3))


def test_windowed_velocity_requires_exact_sample():
    ts = np.arange(0.0, 1.05, 0.1)
    ps = np.zeros((len(ts), 3))
    with pytest.raises(ValueError):
        windowed_velocity(ts, ps, 0.123, 0.5)
    with pytest.raises(ValueError):
        windowed_velocity(ts, ps, 1.0, 0.0)
