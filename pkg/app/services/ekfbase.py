"""Error-state extended Kalman filter used as the comparison baseline.

Error state (18): attitude error ``phi`` resolved in the N frame with
``C_true = (I + phi x) C_est``, velocity error, position error in metres
(N-U-E), gyro bias, accelerometer bias and lever arm. Errors are "true minus
estimate". Biases and lever arm are random constants.

GNSS antenna position and velocity are fused loosely:

    p_gnss = p + R_c C l
    v_gnss = v + C (omega_eb x l)
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from app.exceptions import InnovationOutlier, TimeGap
from app.services import earthmodel
from app.services.earthmodel import GeodeticPosition, wrap_longitude
from app.services.obsbuild import GAP_TOLERANCE, rate_at_end, rotation_increment, velocity_increment
from app.services.rotations import rotvec_to_dcm, skew
from app.services.simkit import GnssFix, ImuIncrement

logger = logging.getLogger(__name__)

N_ERROR = 18
ATT, VEL, POS, BG, BA, LEVER = (slice(3 * i, 3 * i + 3) for i in range(6))
_EYE = np.eye(3)


# ===== DOMAIN TYPES =====
@dataclass(frozen=True)
class EkfTuning:
    """Initial uncertainties and noise settings, SI units.

    ``attitude_sigma`` is ordered along N, U, E so index 1 is heading.
    """
    attitude_sigma: Tuple[float, float, float] = tuple(np.deg2rad([1.0, 8.0, 1.0]))
    velocity_sigma: float = 0.1
    position_sigma: float = 3.0
    gyro_bias_sigma: float = np.deg2rad(1.0) / 3600
    accel_bias_sigma: float = 1e-3
    lever_arm_sigma: float = 1.0
    gyro_noise: float = 0.0
    accel_noise: float = 0.0
    position_noise: float = 0.2
    velocity_noise: float = 0.02
    gate: Optional[float] = None


@dataclass(frozen=True, eq=False)
class EkfState:
    """Nominal navigation solution, sensor parameters and error covariance."""
    t: float
    C_bn: np.ndarray
    v_n: np.ndarray
    position: GeodeticPosition
    gyro_bias: np.ndarray
    accel_bias: np.ndarray
    lever_arm: np.ndarray
    P: np.ndarray
    omega_ib: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tuning: EkfTuning = EkfTuning()


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def ekf_init(C_bn: np.ndarray, fix: GnssFix, tuning: EkfTuning = EkfTuning()) -> EkfState:
    """Start the filter from an attitude and the antenna fix at the same time.

    The antenna position and velocity stand in for the IMU ones, with the
    lever arm starting at zero.
    """
    variances = np.concatenate([
        np.square(tuning.attitude_sigma),
        np.full(3, tuning.velocity_sigma ** 2),
        np.full(3, tuning.position_sigma ** 2),
        np.full(3, tuning.gyro_bias_sigma ** 2),
        np.full(3, tuning.accel_bias_sigma ** 2),
        np.full(3, tuning.lever_arm_sigma ** 2),
    ])
    return EkfState(
        t=fix.t,
        C_bn=np.asarray(C_bn, dtype=float).copy(),
        v_n=np.asarray(fix.velocity, dtype=float).copy(),
        position=fix.position,
        gyro_bias=np.zeros(3),
        accel_bias=np.zeros(3),
        lever_arm=np.zeros(3),
        P=np.diag(variances),
        tuning=tuning,
    )


def transition_matrix(state: EkfState, f_n: np.ndarray, earth: earthmodel.EarthParams, T: float) -> np.ndarray:
    """First-order transition ``I + F T`` of the error dynamics."""
    F = np.zeros((N_ERROR, N_ERROR))
    F[ATT, ATT] = -skew(earth.omega_in)
    F[ATT, BG] = -state.C_bn
    F[VEL, ATT] = -skew(f_n)
    F[VEL, VEL] = -skew(2 * earth.omega_ie + earth.omega_en)
    F[VEL, BA] = -state.C_bn
    F[POS, VEL] = _EYE
    return np.eye(N_ERROR) + F * T


def process_noise(tuning: EkfTuning, T: float) -> np.ndarray:
    Q = np.zeros((N_ERROR, N_ERROR))
    Q[ATT, ATT] = tuning.gyro_noise ** 2 * T * _EYE
    Q[VEL, VEL] = tuning.accel_noise ** 2 * T * _EYE
    return Q


def ekf_propagate(state: EkfState, imu: ImuIncrement) -> EkfState:
    """Advance the nominal solution and the covariance across one interval.

    Raises:
        TimeGap: If the increment does not start at the filter time.
    """
    if abs(imu.t - state.t) > GAP_TOLERANCE:
        raise TimeGap(f"increment at {imu.t:.6f} s does not follow filter time {state.t:.6f} s")
    T = imu.T
    earth = earthmodel.earth_params(state.position, state.v_n)

    dv_b = velocity_increment(imu) - state.accel_bias * T
    rotation = rotation_increment(imu) - state.gyro_bias * T
    C_bn = rotvec_to_dcm(T * earth.omega_in).T @ state.C_bn @ rotvec_to_dcm(rotation)

    dv_n = (_EYE - 0.5 * T * skew(earth.omega_in)) @ state.C_bn @ dv_b
    v_n = state.v_n + dv_n + T * (earth.gravity - np.cross(2 * earth.omega_ie + earth.omega_en, state.v_n))
    R_c = earthmodel.curvature_matrix(state.position)
    position = state.position.shifted(R_c @ (0.5 * (state.v_n + v_n) * T))

    Phi = transition_matrix(state, state.C_bn @ dv_b / T, earth, T)
    P = _symmetrize(Phi @ state.P @ Phi.T + process_noise(state.tuning, T))

    return replace(state, t=state.t + T, C_bn=C_bn, v_n=v_n, position=position, P=P,
                   omega_ib=rate_at_end(imu))


# ===== MEASUREMENT =====
def earth_relative_rate(state: EkfState) -> np.ndarray:
    """Body rate relative to the Earth, body axes, bias-corrected."""
    omega_ie = earthmodel.earth_rate_n(state.position)
    return state.omega_ib - state.gyro_bias - state.C_bn.T @ omega_ie


def measurement_model(state: EkfState) -> Tuple[np.ndarray, np.ndarray]:
    """Predicted antenna position (geodetic) and velocity (N-U-E)."""
    R_c = earthmodel.curvature_matrix(state.position)
    p = state.position.as_array() + R_c @ state.C_bn @ state.lever_arm
    v = state.v_n + state.C_bn @ np.cross(earth_relative_rate(state), state.lever_arm)
    return p, v


def measurement_jacobian(state: EkfState) -> np.ndarray:
    """Jacobian (6 x 18) of the metric innovation with respect to the error state."""
    C = state.C_bn
    lever = state.lever_arm
    omega_eb = earth_relative_rate(state)
    omega_ie = earthmodel.earth_rate_n(state.position)
    u = np.cross(omega_eb, lever)

    H = np.zeros((6, N_ERROR))
    H[0:3, ATT] = -skew(C @ lever)
    H[0:3, POS] = _EYE
    H[0:3, LEVER] = C
    H[3:6, ATT] = -skew(C @ u) + C @ skew(lever) @ C.T @ skew(omega_ie)
    H[3:6, VEL] = _EYE
    H[3:6, BG] = C @ skew(lever)
    H[3:6, LEVER] = C @ skew(omega_eb)
    return H


def position_innovation(state: EkfState, fix: GnssFix) -> np.ndarray:
    """Geodetic innovation ``p_gnss - (p + R_c C l)``."""
    predicted, _ = measurement_model(state)
    difference = fix.position.as_array() - predicted
    difference[0] = wrap_longitude(difference[0])
    return difference


def innovation(state: EkfState, fix: GnssFix) -> np.ndarray:
    """Innovation in metres and m/s, ordered position then velocity."""
    R_c = earthmodel.curvature_matrix(state.position)
    _, predicted_v = measurement_model(state)
    return np.concatenate([np.linalg.solve(R_c, position_innovation(state, fix)),
                           np.asarray(fix.velocity) - predicted_v])


def measurement_noise(state: EkfState, fix: GnssFix) -> np.ndarray:
    tuning = state.tuning
    sigma_p = max(fix.position_sigma, tuning.position_noise)
    sigma_v = max(fix.velocity_sigma, tuning.velocity_noise)
    return np.diag(np.concatenate([np.full(3, sigma_p ** 2), np.full(3, sigma_v ** 2)]))


def inject_error(state: EkfState, dx: np.ndarray) -> EkfState:
    """Fold an error-state estimate into the nominal solution."""
    R_c = earthmodel.curvature_matrix(state.position)
    return replace(
        state,
        C_bn=rotvec_to_dcm(dx[ATT]) @ state.C_bn,
        v_n=state.v_n + dx[VEL],
        position=state.position.shifted(R_c @ dx[POS]),
        gyro_bias=state.gyro_bias + dx[BG],
        accel_bias=state.accel_bias + dx[BA],
        lever_arm=state.lever_arm + dx[LEVER],
    )


def ekf_update(state: EkfState, fix: GnssFix) -> EkfState:
    """Joseph-form update with one antenna fix, then fold and reset.

    Raises:
        TimeGap: If the fix is not at the filter time.
        InnovationOutlier: If a gate is configured and the normalized
            innovation exceeds it.
    """
    if abs(fix.t - state.t) > GAP_TOLERANCE:
        raise TimeGap(f"fix at {fix.t:.6f} s does not match filter time {state.t:.6f} s")
    y = innovation(state, fix)
    H = measurement_jacobian(state)
    R = measurement_noise(state, fix)
    S = H @ state.P @ H.T + R

    if state.tuning.gate is not None:
        statistic = float(y @ np.linalg.solve(S, y))
        if statistic > state.tuning.gate:
            raise InnovationOutlier(statistic, state.tuning.gate)

    K = np.linalg.solve(S, H @ state.P).T
    dx = K @ y
    I_KH = np.eye(N_ERROR) - K @ H
    P = _symmetrize(I_KH @ state.P @ I_KH.T + K @ R @ K.T)
    return replace(inject_error(state, dx), P=P)
