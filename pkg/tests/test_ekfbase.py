from dataclasses import replace

import numpy as np
import pytest

from app.exceptions import InnovationOutlier, TimeGap
from app.services import ekfbase, simkit
from app.services.earthmodel import GeodeticPosition
from app.services.ekfbase import ATT, BA, BG, LEVER, N_ERROR, POS, VEL, EkfTuning
from app.services.rotations import euler_to_dcm

from .conftest import ideal_spec

POSITION = GeodeticPosition.from_degrees(114.0, 30.0, 50.0)


@pytest.fixture
def state():
    fix = simkit.GnssFix(t=10.0, velocity=np.array([1.0, 0.2, -0.5]), position=POSITION)
    s = ekfbase.ekf_init(euler_to_dcm(np.deg2rad([30.0, 4.0, -3.0])), fix)
    return replace(s, lever_arm=np.array([1.0, 2.0, 1.5]), gyro_bias=np.full(3, 1e-6),
                   omega_ib=np.array([0.05, -0.1, 0.08]))


def predicted_fix(s: ekfbase.EkfState) -> simkit.GnssFix:
    p, v = ekfbase.measurement_model(s)
    return simkit.GnssFix(t=s.t, velocity=v, position=GeodeticPosition.from_array(p))


def test_init_covariance_is_diagonal_with_tuning():
    tuning = EkfTuning()
    fix = simkit.GnssFix(t=0.0, velocity=np.zeros(3), position=POSITION)
    s = ekfbase.ekf_init(np.eye(3), fix, tuning)
    np.testing.assert_allclose(np.diag(s.P)[ATT], np.square(tuning.attitude_sigma))
    np.testing.assert_allclose(np.diag(s.P)[LEVER], tuning.lever_arm_sigma ** 2)
    assert np.count_nonzero(s.P - np.diag(np.diag(s.P))) == 0
    np.testing.assert_array_equal(s.lever_arm, np.zeros(3))


def test_measurement_jacobian_matches_finite_differences(state):
    fix = predicted_fix(state)
    H = ekfbase.measurement_jacobian(state)
    steps = [(ATT, 1e-3), (VEL, 1e-3), (POS, 1e-3), (BG, 1e-6), (BA, 1e-3), (LEVER, 1e-3)]
    assert sum(block.stop - block.start for block, _ in steps) == N_ERROR
    numeric = np.zeros((6, N_ERROR))
    for block, h in steps:
        for i in range(block.start, block.stop):
            dx = np.zeros(N_ERROR)
            dx[i] = h
            plus = ekfbase.innovation(ekfbase.inject_error(state, dx), fix)
            minus = ekfbase.innovation(ekfbase.inject_error(state, -dx), fix)
            # innovation is measured minus predicted
            numeric[:, i] = -(plus - minus) / (2 * h)
    np.testing.assert_allclose(H, numeric, rtol=1e-4, atol=2e-5)


def test_innovation_is_zero_at_prediction(state):
    np.testing.assert_allclose(ekfbase.innovation(state, predicted_fix(state)), np.zeros(6), atol=1e-8)


def test_innovation_converts_position_to_metres(state):
    fix = predicted_fix(state)
    R_c = ekfbase.earthmodel.curvature_matrix(state.position)
    shifted = replace(fix, position=fix.position.shifted(R_c @ np.array([2.0, -1.0, 0.5])))
    np.testing.assert_allclose(ekfbase.innovation(state, shifted)[:3], [2.0, -1.0, 0.5], atol=1e-6)


def test_transition_blocks(state):
    T = 0.02
    earth = ekfbase.earthmodel.earth_params(state.position, state.v_n)
    Phi = ekfbase.transition_matrix(state, np.array([0.0, 9.8, 0.0]), earth, T)
    np.testing.assert_allclose(Phi[ATT, BG], -state.C_bn * T)
    np.testing.assert_allclose(Phi[VEL, BA], -state.C_bn * T)
    np.testing.assert_allclose(Phi[POS, VEL], np.eye(3) * T)
    np.testing.assert_allclose(Phi[LEVER, LEVER], np.eye(3))


def test_propagate_requires_contiguous_increment(state):
    increment = simkit.ImuIncrement(t=state.t + 0.04, dtheta1=np.zeros(3), dtheta2=np.zeros(3),
                                    dv1=np.zeros(3), dv2=np.zeros(3), T=0.02)
    with pytest.raises(TimeGap):
        ekfbase.ekf_propagate(state, increment)


def test_update_requires_matching_time(state):
    fix = replace(predicted_fix(state), t=state.t + 0.02)
    with pytest.raises(TimeGap):
        ekfbase.ekf_update(state, fix)


def test_update_shrinks_covariance_and_stays_symmetric(state):
    fix = predicted_fix(state)
    updated = ekfbase.ekf_update(state, fix)
    np.testing.assert_allclose(updated.P, updated.P.T)
    assert np.trace(updated.P[POS, POS]) < np.trace(state.P[POS, POS])
    assert np.all(np.linalg.eigvalsh(updated.P) > -1e-12)


def test_gate_rejects_outliers(state):
    gated = replace(state, tuning=replace(state.tuning, gate=20.0))
    fix = predicted_fix(gated)
    R_c = ekfbase.earthmodel.curvature_matrix(gated.position)
    outlier = replace(fix, position=fix.position.shifted(R_c @ np.array([500.0, 0.0, 0.0])))
    with pytest.raises(InnovationOutlier) as info:
        ekfbase.ekf_update(gated, outlier)
    assert info.value.statistic > 20.0
    ekfbase.ekf_update(gated, fix)


def test_static_filter_holds_position_and_learns_lever_arm():
    profile = simkit.MotionProfile.static(POSITION, np.deg2rad([30.0, 0.0, 0.0]))
    lever = np.array([0.5, 1.0, -0.5])
    spec = ideal_spec(lever_arm=lever)
    imu = simkit.synthesize_imu(profile, spec, seed=0, duration=10.0)
    gnss = simkit.synthesize_gnss(profile, spec, seed=0, duration=10.0)

    s = ekfbase.ekf_init(euler_to_dcm(profile.initial_euler), gnss[0])
    for increment, fix in zip(imu, gnss[1:]):
        s = ekfbase.ekf_update(ekfbase.ekf_propagate(s, increment), fix)

    assert s.t == pytest.approx(10.0)
    np.testing.assert_allclose(ekfbase.innovation(s, gnss[-1]), np.zeros(6), atol=0.05)
    assert np.all(np.diag(s.P) > 0)
