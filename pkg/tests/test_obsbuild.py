import numpy as np
import pytest
from scipy import integrate

from app.exceptions import GapDetected, InsufficientHistory
from app.services import earthmodel, obsbuild, simkit
from app.services.earthmodel import GeodeticPosition
from app.services.rotations import euler_to_dcm, rotvec_to_dcm, skew

from .conftest import ideal_spec

POSITION = GeodeticPosition.from_degrees(114.0, 30.0, 50.0)


@pytest.fixture(scope="module")
def noise_free_run():
    """Twenty seconds of noise-free data with biases and lever arm switched on."""
    from app.schemas import ScenarioConfig

    config = ScenarioConfig.preset("ideal", duration=20.0, warmup_s=5.0)
    profile = config.motion_profile()
    spec = config.sensor_spec()
    imu = simkit.synthesize_imu(profile, spec, seed=0, duration=config.duration)
    gnss = simkit.synthesize_gnss(profile, spec, seed=0, duration=config.duration)
    epochs = list(obsbuild.build_epochs(imu, gnss))
    return profile, spec, imu, gnss, epochs


def test_build_epochs_counts_and_times(noise_free_run):
    _, _, imu, gnss, epochs = noise_free_run
    assert len(epochs) == len(imu) + 1
    assert epochs[0].M == 0 and epochs[-1].M == len(imu)
    assert epochs[-1].t == pytest.approx(gnss[-1].t)
    np.testing.assert_array_equal(epochs[0].alpha, np.zeros(3))


def test_truth_satisfies_differenced_equalities(noise_free_run):
    profile, spec, _, _, epochs = noise_free_run
    C_bn0 = euler_to_dcm(profile.initial_euler)

    exact, no_lever = [], []
    for d in obsbuild.differenced(epochs, nabla=50):
        exact.append(np.linalg.norm(obsbuild.observation_residual(
            d, C_bn0, spec.accel_bias, spec.gyro_bias, spec.lever_arm)))
        no_lever.append(np.linalg.norm(obsbuild.observation_residual(
            d, C_bn0, spec.accel_bias, spec.gyro_bias, np.zeros(3))))

    assert len(exact) == len(epochs) - 50
    assert max(exact) < 1e-4
    assert max(no_lever) > 10 * max(exact)


def test_frame_propagations_track_truth(noise_free_run):
    profile, spec, _, gnss, epochs = noise_free_run
    truth = simkit.truth_series(profile, [fix.t for fix in gnss])
    # C_b^n(t) = C_n(t)^n(0)' C_b^n(0) C_b(t)^b(0), body side freed of the gyro bias drift
    for k in (100, 500, 1000):
        C_b = rotvec_to_dcm(epochs[k].chi @ spec.gyro_bias) @ epochs[k].C_b
        C_bn = epochs[k].C_n.T @ truth.C_bn[0] @ C_b
        np.testing.assert_allclose(C_bn, truth.C_bn[k], atol=1e-6)


@pytest.mark.slow
def test_truth_satisfies_differenced_equalities_over_full_run():
    from app.schemas import ScenarioConfig

    config = ScenarioConfig.preset("ideal")
    profile = config.motion_profile()
    spec = config.sensor_spec()
    imu = simkit.synthesize_imu(profile, spec, seed=0, duration=config.duration)
    gnss = simkit.synthesize_gnss(profile, spec, seed=0, duration=config.duration)
    C_bn0 = euler_to_dcm(profile.initial_euler)

    worst = max(np.linalg.norm(obsbuild.observation_residual(
        d, C_bn0, spec.accel_bias, spec.gyro_bias, spec.lever_arm))
        for d in obsbuild.differenced(obsbuild.build_epochs(imu, gnss), nabla=config.nabla))
    assert config.duration == pytest.approx(300.0)
    assert worst < 1e-4


def test_window_differencer_waits_for_a_full_window(noise_free_run):
    epochs = noise_free_run[4]
    differencer = obsbuild.WindowDifferencer(3)
    outputs = [differencer.push(epoch) for epoch in epochs[:5]]
    assert outputs[:3] == [None, None, None]
    d = outputs[3]
    assert d.M == 3 and d.nabla == 3
    np.testing.assert_allclose(d.beta, epochs[3].beta - epochs[0].beta)
    np.testing.assert_allclose(outputs[4].G, np.hstack([
        epochs[4].chi - epochs[1].chi, epochs[4].lam - epochs[1].lam, epochs[4].gamma - epochs[1].gamma]))


def test_window_diff_needs_enough_history(noise_free_run):
    epochs = noise_free_run[4]
    with pytest.raises(InsufficientHistory):
        obsbuild.window_diff(epochs[:5], nabla=5)


def test_window_diff_rejects_non_contiguous_history(noise_free_run):
    epochs = noise_free_run[4]
    with pytest.raises(InsufficientHistory):
        obsbuild.window_diff([epochs[0], epochs[2], epochs[3]], nabla=2)


def test_gap_in_fixes_is_detected():
    profile = simkit.MotionProfile.static(POSITION)
    spec = ideal_spec()
    imu = simkit.synthesize_imu(profile, spec, seed=0, duration=0.1)
    gnss = simkit.synthesize_gnss(profile, spec, seed=0, duration=0.1)
    builder = obsbuild.CoefficientBuilder(spec.interval)
    builder.step(imu[0], gnss[0], gnss[1])
    with pytest.raises(GapDetected):
        builder.step(imu[1], gnss[1], gnss[3])


def test_unknown_coupling_is_rejected():
    with pytest.raises(ValueError):
        obsbuild.CoefficientBuilder(0.02, gyro_bias_coupling="midpoint")


@pytest.mark.parametrize("coupling, scale", [("integrated", 0.02 ** 2 / 2), ("literal", 0.02)])
def test_gyro_bias_coupling_of_first_interval(coupling, scale):
    profile = simkit.MotionProfile.static(POSITION)
    spec = ideal_spec()
    imu = simkit.synthesize_imu(profile, spec, seed=0, duration=0.02)
    gnss = simkit.synthesize_gnss(profile, spec, seed=0, duration=0.02)
    epoch = obsbuild.CoefficientBuilder(spec.interval, coupling).step(imu[0], gnss[0], gnss[1])

    f_b = -earthmodel.gravity_n(POSITION)
    np.testing.assert_allclose(epoch.lam, skew(f_b) * scale, rtol=1e-6, atol=1e-12)


def constant_increment(omega, accel=np.zeros(3), T=0.02):
    return simkit.ImuIncrement(t=0.0, dtheta1=omega * T / 2, dtheta2=omega * T / 2,
                               dv1=accel * T / 2, dv2=accel * T / 2, T=T)


def test_body_side_with_zero_increments():
    builder = obsbuild.CoefficientBuilder(0.02)
    for _ in range(3):
        builder.update_body_side(constant_increment(np.zeros(3)))
        builder.M += 1
    np.testing.assert_array_equal(builder.alpha, np.zeros(3))
    np.testing.assert_allclose(builder.chi, -0.06 * np.eye(3))
    np.testing.assert_array_equal(builder.C_b, np.eye(3))


def test_velocity_increment_without_rotation():
    increment = constant_increment(np.zeros(3), accel=np.array([2.0, 0.0, 0.0]))
    np.testing.assert_allclose(obsbuild.velocity_increment(increment), [0.04, 0.0, 0.0])


def linear_force_increment(omega, f0, f1, T):
    """Increments of a constant rate and a specific force growing linearly in time."""
    return simkit.ImuIncrement(t=0.0, dtheta1=omega * T / 2, dtheta2=omega * T / 2,
                               dv1=f0 * T / 2 + f1 * T * T / 8, dv2=f0 * T / 2 + 3 * f1 * T * T / 8, T=T)


def two_sample_errors(T):
    omega = np.array([0.5, -0.3, 0.8])
    f0 = np.array([0.3, 9.8, -0.5])
    f1 = np.array([1.0, 0.5, -2.0])
    increment = linear_force_increment(omega, f0, f1, T)
    builder = obsbuild.CoefficientBuilder(T)
    builder.update_body_side(increment)

    dv_exact, _ = integrate.quad_vec(lambda t: rotvec_to_dcm(omega * t) @ (f0 + f1 * t), 0.0, T, epsrel=1e-13)
    chi_exact, _ = integrate.quad_vec(lambda t: -rotvec_to_dcm(omega * t), 0.0, T, epsrel=1e-13)
    return (np.linalg.norm(obsbuild.velocity_increment(increment) - dv_exact),
            np.linalg.norm(builder.chi - chi_exact))


def test_two_sample_integration_error_is_third_order():
    coarse = two_sample_errors(0.02)
    fine = two_sample_errors(0.01)
    for big, small in zip(coarse, fine):
        assert big > 0
        assert big / small >= 7.0


def test_lever_arm_coefficient_under_constant_rate():
    omega = np.array([0.1, -0.3, 0.2])
    builder = obsbuild.CoefficientBuilder(0.02)
    np.testing.assert_array_equal(builder.gamma, np.zeros((3, 3)))
    for n in range(1, 6):
        increment = constant_increment(omega)
        builder.update_body_side(increment)
        builder.M += 1
        gamma = builder.gamma_eval(increment)
        C = rotvec_to_dcm(omega * 0.02 * n)
        np.testing.assert_allclose(gamma, (C - np.eye(3)) @ skew(omega), atol=1e-12)


def test_nav_side_first_step_at_rest():
    T = 0.02
    fix0 = simkit.GnssFix(t=0.0, velocity=np.zeros(3), position=POSITION)
    fix1 = simkit.GnssFix(t=T, velocity=np.zeros(3), position=POSITION)
    builder = obsbuild.CoefficientBuilder(T)
    builder.update_nav_side(fix0, fix1)

    earth = earthmodel.earth_params(POSITION, np.zeros(3))
    expected = -(T * np.eye(3) + 0.5 * T * T * skew(earth.omega_in)) @ earth.gravity
    np.testing.assert_allclose(builder.beta, expected, rtol=1e-12, atol=1e-15)
    assert builder.beta[1] == pytest.approx(T * earthmodel.gravity_magnitude(POSITION.latitude, POSITION.height))


def test_two_sample_rates_recover_constant_rate():
    omega = np.array([1e-3, -2e-3, 5e-4])
    increment = simkit.ImuIncrement(t=0.0, dtheta1=omega * 0.01, dtheta2=omega * 0.01,
                                    dv1=np.zeros(3), dv2=np.zeros(3), T=0.02)
    np.testing.assert_allclose(obsbuild.rate_at_start(increment), omega)
    np.testing.assert_allclose(obsbuild.rate_at_end(increment), omega)
    np.testing.assert_allclose(obsbuild.rotation_increment(increment), omega * 0.02)


def test_earth_rate_term_grows_with_time_when_static():
    profile = simkit.MotionProfile.static(POSITION, np.deg2rad([10.0, 1.0, 2.0]))
    spec = ideal_spec()
    imu = simkit.synthesize_imu(profile, spec, seed=0, duration=20.0)
    gnss = simkit.synthesize_gnss(profile, spec, seed=0, duration=20.0)
    epochs = list(obsbuild.build_epochs(imu, gnss))
    ratio = obsbuild.earth_rate_term_ratio(epochs, imu, POSITION, euler_to_dcm(profile.initial_euler))
    assert ratio == pytest.approx(earthmodel.RATE * 20.0, rel=0.01)
