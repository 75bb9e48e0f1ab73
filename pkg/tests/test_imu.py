import warnings

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from lowlight_vo.geometry import Pose
from lowlight_vo.imu import (
    GRAVITY,
    GnssFix,
    ImuSample,
    PreintegratedMotion,
    apply_gnss_correction,
    chain_to_world,
    compose_preintegrated,
    preintegrate,
    preintegrate_arrays,
    preintegrate_between,
)
from lowlight_vo.sim import ScenarioConfig, gen_ground_truth, gen_imu
from lowlight_vo.trajectory import Trajectory


def loop_oracle(t, acc, gyr):
    """Zero-order-hold recursion with scipy's rotation-vector exponential."""
    R = np.eye(3)
    v = np.zeros(3)
    p = np.zeros(3)
    for k in range(len(t) - 1):
        dt = t[k + 1] - t[k]
        a = R @ acc[k]
        p = p + v * dt + 0.5 * a * dt * dt
        v = v + a * dt
        R = R @ Rotation.from_rotvec(gyr[k] * dt).as_matrix()
    return R, v, p


def samples(t, acc, gyr):
    return [ImuSample(float(a), b, c) for a, b, c in zip(t, acc, gyr)]


def test_zero_readings_give_identity(backend):
    t = np.linspace(0, 1, 11)
    m = preintegrate(samples(t, np.zeros((11, 3)), np.zeros((11, 3))))
    np.testing.assert_array_equal(m.delta_rotation, np.eye(3))
    np.testing.assert_array_equal(m.delta_velocity, np.zeros(3))
    np.testing.assert_array_equal(m.delta_position, np.zeros(3))
    assert m.duration == 1.0


def test_constant_accel_is_exact(backend):
    dt, n = 0.25, 8
    t = dt * np.arange(n + 1)
    acc = np.tile([1.0, 0, 0], (n + 1, 1))
    m = preintegrate_arrays(t, acc, np.zeros((n + 1, 3)))
    T = n * dt
    np.testing.assert_array_equal(m.delta_velocity, [T, 0, 0])
    np.testing.assert_array_equal(m.delta_position, [0.5 * T * T, 0, 0])


def test_matches_loop_oracle(rng, backend):
    n = 100
    t = np.cumsum(rng.uniform(0.004, 0.006, n))
    acc = rng.standard_normal((n, 3))
    gyr = rng.standard_normal((n, 3))
    m = preintegrate_arrays(t, acc, gyr)
    R, v, p = loop_oracle(t, acc, gyr)
    np.testing.assert_allclose(m.delta_rotation, R, atol=1e-12)
    np.testing.assert_allclose(m.delta_velocity, v, atol=1e-12)
    np.testing.assert_allclose(m.delta_position, p, atol=1e-12)


def test_last_sample_readings_unused(rng):
    t = np.linspace(0, 1, 5)
    acc, gyr = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    a = preintegrate_arrays(t, acc, gyr)
    acc[-1] += 100
    gyr[-1] -= 100
    b = preintegrate_arrays(t, acc, gyr)
    np.testing.assert_array_equal(a.delta_position, b.delta_position)


def test_first_order_convergence_to_continuous_motion():
    """Sampled smooth signals: the error against a much finer step shrinks linearly."""

    def signals(t):
        acc = np.stack([np.cos(t), np.sin(2 * t), 0.5 * t], axis=1)
        gyr = np.stack([0.3 * np.sin(t), 0.2 * np.ones_like(t), 0.4 * np.cos(3 * t)], axis=1)
        return acc, gyr

    def run(h):
        t = np.linspace(0, 2.0, int(round(2.0 / h)) + 1)
        return preintegrate_arrays(t, *signals(t))

    ref = run(0.01 / 100)
    errs = []
    for h in (0.02, 0.01, 0.005):
        m = run(h)
        errs.append(np.linalg.norm(m.delta_position - ref.delta_position) + np.linalg.norm(m.delta_velocity - ref.delta_velocity))
    for a, b in zip(errs[:-1], errs[1:]):
        assert 1.7 < a / b < 2.3


@pytest.mark.parametrize("bad_t", [[0.0, 0.2, 0.1], [0.0, 0.0, 0.1]])
def test_unordered_timestamps_rejected(bad_t):
    with pytest.raises(ValueError, match="increasing"):
        preintegrate_arrays(bad_t, np.zeros((3, 3)), np.zeros((3, 3)))


def test_too_few_samples_rejected():
    with pytest.raises(ValueError):
        preintegrate([ImuSample(0.0, np.zeros(3), np.zeros(3))])
    with pytest.raises(ValueError):
        preintegrate([])


def test_non_finite_rejected():
    acc = np.zeros((3, 3))
    acc[1, 1] = np.nan
    with pytest.raises(ValueError):
        preintegrate_arrays([0, 1, 2], acc, np.zeros((3, 3)))


def test_halves_compose_to_whole(rng, backend):
    n = 201
    t = np.cumsum(rng.uniform(0.004, 0.006, n))
    acc, gyr = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
    whole = preintegrate_arrays(t, acc, gyr)
    a = preintegrate_arrays(t[:101], acc[:101], gyr[:101])
    b = preintegrate_arrays(t[100:], acc[100:], gyr[100:])
    c = compose_preintegrated(a, b)
    np.testing.assert_allclose(c.delta_rotation, whole.delta_rotation, atol=1e-9)
    np.testing.assert_allclose(c.delta_velocity, whole.delta_velocity, atol=1e-9)
    np.testing.assert_allclose(c.delta_position, whole.delta_position, atol=1e-9)
    assert c.duration == pytest.approx(whole.duration, abs=1e-12)


def test_rotation_stays_orthonormal_over_long_runs(rng, backend):
    n = 100_001
    t = np.arange(n) * 0.005
    m = preintegrate_arrays(t, rng.standard_normal((n, 3)), rng.standard_normal((n, 3)))
    R = m.delta_rotation
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-9


def test_time_shift_invariance(rng):
    t = np.cumsum(rng.uniform(0.004, 0.006, 50))
    acc, gyr = rng.standard_normal((50, 3)), rng.standard_normal((50, 3))
    a = preintegrate_arrays(t, acc, gyr)
    b = preintegrate_arrays(t + 1000.0, acc, gyr)
    np.testing.assert_allclose(a.delta_position, b.delta_position, atol=1e-9)
    np.testing.assert_allclose(a.delta_rotation, b.delta_rotation, atol=1e-9)


def test_preintegrate_between_matches_slices(rng):
    t = np.arange(31) * 0.01
    acc, gyr = rng.standard_normal((31, 3)), rng.standard_normal((31, 3))
    ms = preintegrate_between(t, acc, gyr, [0.0, 0.1, 0.3])
    assert len(ms) == 2
    np.testing.assert_array_equal(ms[1].delta_position, preintegrate_arrays(t[10:], acc[10:], gyr[10:]).delta_position)
    whole = compose_preintegrated(*ms)
    np.testing.assert_allclose(whole.delta_position, preintegrate_arrays(t, acc, gyr).delta_position, atol=1e-12)
    with pytest.raises(ValueError):
        preintegrate_between(t, acc, gyr, [0.0, 0.105])


# -------------------------------------------------------------- chaining


def test_chain_identity_deltas_stay_put(rng):
    start = Pose.from_matrix(np.eye(4))
    still = PreintegratedMotion(np.eye(3), np.zeros(3), np.zeros(3), 1.0)
    traj = chain_to_world([still] * 3, start)
    assert len(traj) == 4
    np.testing.assert_array_equal(traj.positions, np.zeros((4, 3)))


def test_chain_constant_accel_from_rest():
    t = np.arange(11) * 0.1
    m = preintegrate_arrays(t, np.tile([1.0, 0, 0], (11, 1)), np.zeros((11, 3)))
    traj = chain_to_world([m])
    np.testing.assert_allclose(traj.positions[-1], [0.5, 0, 0], atol=1e-14)
    assert traj.role == "imu"


def test_chain_carries_initial_velocity():
    d = PreintegratedMotion(np.eye(3), np.zeros(3), np.zeros(3), 2.0)
    traj = chain_to_world([d, d], initial_velocity=[1.0, 0, 0])
    np.testing.assert_allclose(traj.positions[:, 0], [0, 2, 4])
    np.testing.assert_allclose(traj.timestamps, [0, 2, 4])


@pytest.mark.parametrize("gravity", [False, True])
def test_round_trip_circle(gravity, backend):
    cfg = ScenarioConfig(kind="circle", duration=60, imu_rate=100, gravity_compensation=gravity)
    imu = gen_imu(cfg)
    deltas = preintegrate_between(imu.t, imu.accel, imu.gyro, cfg.keyframe_times())
    traj = chain_to_world(deltas, initial_velocity=imu.initial_velocity, gravity_compensation=gravity)
    gt = gen_ground_truth(cfg)
    assert np.max(np.linalg.norm(traj.positions - gt.positions, axis=1)) < 1e-3


def test_gravity_term_matters():
    """Ignoring gravity on gravity-laden readings falls at g t^2 / 2."""
    cfg = ScenarioConfig(kind="line", duration=2, imu_rate=100, gravity_compensation=True)
    imu = gen_imu(cfg)
    deltas = preintegrate_between(imu.t, imu.accel, imu.gyro, cfg.keyframe_times())
    off = chain_to_world(deltas, initial_velocity=imu.initial_velocity, gravity_compensation=False)
    on = chain_to_world(deltas, initial_velocity=imu.initial_velocity, gravity_compensation=True)
    np.testing.assert_allclose(off.positions[-1] - on.positions[-1], -0.5 * GRAVITY * 4.0, atol=1e-9)


# ------------------------------------------------------------------ GNSS


def _line(n=11):
    t = np.arange(n, dtype=float)
    return Trajectory(t, np.tile(np.eye(3), (n, 1, 1)), np.column_stack([t, np.zeros(n), np.zeros(n)]))


def test_gnss_identical_fixes_leave_trajectory_unchanged():
    traj = _line()
    fixes = [GnssFix(float(t), p, 0.01) for t, p in zip(traj.timestamps, traj.positions)]
    out = apply_gnss_correction(traj, fixes)
    np.testing.assert_array_equal(out.positions, traj.positions)


def test_gnss_tiny_sigma_snaps_to_fix():
    traj = _line()
    out = apply_gnss_correction(traj, [GnssFix(5.0, np.array([5.0, 3.0, 0.0]), 1e-12)])
    np.testing.assert_allclose(out.positions[5], [5.0, 3.0, 0.0], atol=1e-9)
    # ramp before the fix, hold after it
    np.testing.assert_allclose(out.positions[2, 1], 3.0 * 2 / 5, atol=1e-9)
    np.testing.assert_allclose(out.positions[8, 1], 3.0, atol=1e-9)
    np.testing.assert_array_equal(out.rotations, traj.rotations)


def test_gnss_reduces_drift():
    traj = _line(61)
    drift = np.column_stack([np.zeros(61), 0.01 * np.arange(61), np.zeros(61)])
    drifted = traj.with_translations(traj.positions + drift)
    fixes = [GnssFix(float(t), p, 0.01) for t, p in zip(traj.timestamps, traj.positions)]
    out = apply_gnss_correction(drifted, fixes)
    before = np.linalg.norm(drifted.positions[-1] - traj.positions[-1])
    after = np.linalg.norm(out.positions[-1] - traj.positions[-1])
    assert after < 0.1 * before


def test_gnss_out_of_span_fix_warns_and_is_ignored():
    traj = _line()
    with pytest.warns(UserWarning, match="outside"):
        out = apply_gnss_correction(traj, [GnssFix(50.0, np.array([0.0, 9.0, 0.0]), 0.01)])
    np.testing.assert_array_equal(out.positions, traj.positions)


def test_gnss_sigma_must_be_positive():
    with pytest.raises(ValueError):
        GnssFix(0.0, np.zeros(3), 0.0)


def test_gnss_no_fixes_is_noop():
    traj = _line()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert apply_gnss_correction(traj, []) is traj
