import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from app.services import earthmodel, simkit
from app.services.earthmodel import GeodeticPosition
from app.services.rotations import euler_to_dcm, quat_to_dcm

from .conftest import ideal_spec

POSITION = GeodeticPosition.from_degrees(114.0, 30.0, 50.0)


@pytest.fixture
def moving_profile(short_config):
    return short_config.motion_profile()


def test_initial_attitude_encodes_nav_to_body(moving_profile):
    C_bn = euler_to_dcm(moving_profile.initial_euler)
    np.testing.assert_allclose(quat_to_dcm(moving_profile.initial_attitude), C_bn.T, atol=1e-12)


def test_truth_starts_at_initial_pose(moving_profile):
    truth = simkit.truth_at(moving_profile, 0.0)
    np.testing.assert_allclose(truth.C_bn, euler_to_dcm(moving_profile.initial_euler), atol=1e-12)
    np.testing.assert_allclose(truth.position.as_array(), moving_profile.initial_position.as_array())
    np.testing.assert_allclose(truth.v_n, moving_profile.velocity_amplitude * np.sin(moving_profile.velocity_phase))


def test_body_rate_matches_attitude_derivative(moving_profile):
    t, h = 3.7, 1e-4
    truth = simkit.truth_series(moving_profile, [t - h, t, t + h])
    relative = Rotation.from_matrix(truth.C_bn[0].T @ truth.C_bn[2]).as_rotvec() / (2 * h)

    C_nb = truth.C_bn[1].T
    omega_in = (earthmodel.earth_rate_n(truth.position[1])
                + earthmodel.transport_rate_n(truth.v_n[1], truth.position[1]))
    omega_nb = truth.omega_ib[1] - C_nb @ omega_in
    np.testing.assert_allclose(relative, omega_nb, atol=1e-7)


def test_static_increments_hold_earth_rate_and_gravity():
    profile = simkit.MotionProfile.static(POSITION, np.deg2rad([20.0, 2.0, -1.0]))
    spec = ideal_spec()
    imu = simkit.synthesize_imu(profile, spec, seed=1, duration=1.0)
    T = spec.interval

    C_nb = euler_to_dcm(profile.initial_euler).T
    omega_ib = C_nb @ earthmodel.earth_rate_n(POSITION)
    f_b = -C_nb @ earthmodel.gravity_n(POSITION)
    assert len(imu) == 50
    for increment in (imu[0], imu[-1]):
        np.testing.assert_allclose(increment.dtheta1, omega_ib * T / 2, rtol=1e-9, atol=1e-18)
        np.testing.assert_allclose(increment.dv2, f_b * T / 2, rtol=1e-9)


def test_biases_add_per_sample():
    profile = simkit.MotionProfile.static(POSITION)
    clean = simkit.synthesize_imu(profile, ideal_spec(), seed=0, duration=0.1)
    biased = simkit.synthesize_imu(profile, ideal_spec(gyro_bias=np.full(3, 1e-5), accel_bias=np.full(3, 1e-3)),
                                   seed=0, duration=0.1)
    np.testing.assert_allclose(biased[2].dtheta1 - clean[2].dtheta1, np.full(3, 1e-5 * 0.01), atol=1e-17)
    np.testing.assert_allclose(biased[2].dv2 - clean[2].dv2, np.full(3, 1e-3 * 0.01), atol=1e-15)


def test_noise_level_matches_density():
    profile = simkit.MotionProfile.static(POSITION)
    spec = ideal_spec(gyro_noise=1e-4, accel_noise=1e-3)
    clean = simkit.synthesize_imu(profile, ideal_spec(), seed=3, duration=100.0)
    noisy = simkit.synthesize_imu(profile, spec, seed=3, duration=100.0)
    gyro = np.array([n.dtheta1 - c.dtheta1 for n, c in zip(noisy, clean)])
    accel = np.array([n.dv1 - c.dv1 for n, c in zip(noisy, clean)])
    half = spec.interval / 2
    assert gyro.std() == pytest.approx(1e-4 * np.sqrt(half), rel=0.05)
    assert accel.std() == pytest.approx(1e-3 * np.sqrt(half), rel=0.05)


def test_streams_are_reproducible_per_seed(moving_profile):
    spec = ideal_spec(gyro_noise=1e-4, accel_noise=1e-3, gnss_velocity_sigma=0.02, gnss_position_sigma=0.2)
    first = simkit.synthesize_imu(moving_profile, spec, seed=7, duration=0.2)
    again = simkit.synthesize_imu(moving_profile, spec, seed=7, duration=0.2)
    other = simkit.synthesize_imu(moving_profile, spec, seed=8, duration=0.2)
    np.testing.assert_array_equal(first[-1].dv1, again[-1].dv1)
    assert not np.array_equal(first[-1].dv1, other[-1].dv1)

    fixes = simkit.synthesize_gnss(moving_profile, spec, seed=7, duration=0.2)
    fixes_again = simkit.synthesize_gnss(moving_profile, spec, seed=7, duration=0.2)
    np.testing.assert_array_equal(fixes[3].velocity, fixes_again[3].velocity)


def test_gnss_fixes_cover_every_epoch(moving_profile):
    fixes = simkit.synthesize_gnss(moving_profile, ideal_spec(), seed=0, duration=1.0)
    assert len(fixes) == 51
    np.testing.assert_allclose([fix.t for fix in fixes], np.arange(51) * 0.02)


def test_static_antenna_is_offset_by_lever_arm():
    profile = simkit.MotionProfile.static(POSITION, np.deg2rad([45.0, 0.0, 0.0]))
    lever = np.array([1.0, 2.0, 1.5])
    fixes = simkit.synthesize_gnss(profile, ideal_spec(lever_arm=lever), seed=0, duration=0.04)

    C_bn = euler_to_dcm(profile.initial_euler)
    offset = np.linalg.solve(earthmodel.curvature_matrix(POSITION), fixes[0].position.as_array() - POSITION.as_array())
    np.testing.assert_allclose(offset, C_bn @ lever, atol=1e-6)
    np.testing.assert_allclose(fixes[1].velocity, np.zeros(3), atol=1e-12)


def test_duration_must_be_whole_intervals(moving_profile):
    with pytest.raises(ValueError):
        simkit.synthesize_imu(moving_profile, ideal_spec(), seed=0, duration=0.015)


def test_sensor_spec_requires_two_samples_per_interval():
    with pytest.raises(ValueError):
        ideal_spec(imu_rate=200.0)


def test_export_frames(moving_profile):
    spec = ideal_spec()
    imu = simkit.synthesize_imu(moving_profile, spec, seed=0, duration=0.2)
    fixes = simkit.synthesize_gnss(moving_profile, spec, seed=0, duration=0.2)
    truth = simkit.truth_series(moving_profile, [fix.t for fix in fixes])

    assert len(simkit.imu_frame(imu).columns) == 13
    assert len(simkit.gnss_frame(fixes)) == 11
    frame = simkit.truth_frame(truth)
    assert frame["yaw_deg"].iloc[0] == pytest.approx(30.0)
