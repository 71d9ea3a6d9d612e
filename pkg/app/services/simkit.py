"""Ground-truth trajectories and synthetic IMU/GNSS streams.

The trajectory is closed-form: Euler angles (yaw about Up, pitch about the body
right axis, roll about the body forward axis) and N-U-E velocity components
each oscillate sinusoidally. Angular rate and specific force follow
analytically from the navigation equations, and IMU increments integrate them
with Gauss-Legendre quadrature over every half-interval.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import pandas as pd

from app.services import earthmodel
from app.services.earthmodel import GeodeticPosition
from app.services.rotations import dcm_to_euler, dcm_to_quat, euler_to_dcm

logger = logging.getLogger(__name__)

IMU_STREAM = 0
GNSS_STREAM = 1
_CHUNK = 4000


# ===== DOMAIN TYPES =====
@dataclass(frozen=True, eq=False)
class MotionProfile:
    """Oscillating attitude and velocity around a start pose.

    Attitude arrays are ordered ``[yaw, pitch, roll]`` (rad, Hz, rad); velocity
    arrays ``[north, up, east]`` (m/s, Hz, rad).
    """
    attitude_amplitude: np.ndarray
    attitude_frequency: np.ndarray
    attitude_phase: np.ndarray
    velocity_amplitude: np.ndarray
    velocity_frequency: np.ndarray
    velocity_phase: np.ndarray
    initial_euler: np.ndarray
    initial_position: GeodeticPosition

    def __post_init__(self):
        for name in ("attitude_amplitude", "attitude_frequency", "attitude_phase",
                     "velocity_amplitude", "velocity_frequency", "velocity_phase", "initial_euler"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != (3,) or not np.all(np.isfinite(value)):
                raise ValueError(f"{name} must be a finite 3-vector")
            object.__setattr__(self, name, value)
        if np.any(self.attitude_frequency < 0) or np.any(self.velocity_frequency < 0):
            raise ValueError("frequencies must be non-negative")

    @property
    def initial_attitude(self) -> np.ndarray:
        """Quaternion encoding ``C_n^b(0)``."""
        return dcm_to_quat(euler_to_dcm(self.initial_euler).T)

    @classmethod
    def static(cls, position: GeodeticPosition, initial_euler=(0.0, 0.0, 0.0)) -> "MotionProfile":
        zeros = np.zeros(3)
        return cls(zeros, zeros, zeros, zeros, zeros, zeros, np.asarray(initial_euler, dtype=float), position)


@dataclass(frozen=True, eq=False)
class SensorSpec:
    """Sensor errors and rates in SI units."""
    gyro_bias: np.ndarray
    gyro_noise: float
    accel_bias: np.ndarray
    accel_noise: float
    imu_rate: float
    gnss_rate: float
    gnss_velocity_sigma: float
    gnss_position_sigma: float
    lever_arm: np.ndarray

    def __post_init__(self):
        for name in ("gyro_bias", "accel_bias", "lever_arm"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.imu_rate <= 0 or self.gnss_rate <= 0:
            raise ValueError("rates must be positive")
        if not np.isclose(self.imu_rate, 2 * self.gnss_rate):
            raise ValueError("IMU rate must be twice the GNSS rate")
        if min(self.gyro_noise, self.accel_noise, self.gnss_velocity_sigma, self.gnss_position_sigma) < 0:
            raise ValueError("noise levels must be non-negative")

    @property
    def interval(self) -> float:
        """Update interval T (one GNSS period, two IMU samples)."""
        return 1.0 / self.gnss_rate


@dataclass(frozen=True, eq=False)
class NavTruth:
    """True navigation state; fields carry a leading time axis for series."""
    t: np.ndarray
    C_bn: np.ndarray
    v_n: np.ndarray
    position: GeodeticPosition
    omega_ib: np.ndarray
    f_b: np.ndarray

    def __getitem__(self, index) -> "NavTruth":
        return NavTruth(self.t[index], self.C_bn[index], self.v_n[index], self.position[index],
                        self.omega_ib[index], self.f_b[index])


@dataclass(frozen=True, eq=False)
class ImuIncrement:
    """Two samples of gyro and accelerometer increments over ``[t, t + T]``."""
    t: float
    dtheta1: np.ndarray
    dtheta2: np.ndarray
    dv1: np.ndarray
    dv2: np.ndarray
    T: float


@dataclass(frozen=True, eq=False)
class GnssFix:
    """Antenna velocity (N-U-E) and geodetic position at time ``t``."""
    t: float
    velocity: np.ndarray
    position: GeodeticPosition
    velocity_sigma: float = 0.0
    position_sigma: float = 0.0


# ===== TRUTH =====
def _attitude(profile: MotionProfile, t: np.ndarray):
    omega = 2 * np.pi * profile.attitude_frequency
    arg = omega * t[:, None] + profile.attitude_phase
    euler = profile.initial_euler + profile.attitude_amplitude * (np.sin(arg) - np.sin(profile.attitude_phase))
    rates = profile.attitude_amplitude * omega * np.cos(arg)
    return euler, rates


def _body_rate(euler: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """Angular rate of the body relative to the N frame, body axes."""
    pitch, roll = euler[:, 1], euler[:, 2]
    yaw_rate, pitch_rate, roll_rate = rates.T
    return np.stack([
        yaw_rate * np.sin(pitch) + roll_rate,
        yaw_rate * np.cos(roll) * np.cos(pitch) + pitch_rate * np.sin(roll),
        -yaw_rate * np.sin(roll) * np.cos(pitch) + pitch_rate * np.cos(roll),
    ], axis=-1)


def _velocity(profile: MotionProfile, t: np.ndarray):
    omega = 2 * np.pi * profile.velocity_frequency
    amplitude = profile.velocity_amplitude
    phase = profile.velocity_phase
    arg = omega * t[:, None] + phase
    v = amplitude * np.sin(arg)
    v_dot = amplitude * omega * np.cos(arg)

    moving = omega > 0
    safe_omega = np.where(moving, omega, 1.0)
    displacement = np.where(moving,
                            amplitude * (np.cos(phase) - np.cos(arg)) / safe_omega,
                            amplitude * np.sin(phase) * t[:, None])
    return v, v_dot, displacement


def truth_series(profile: MotionProfile, t) -> NavTruth:
    """Evaluate the true navigation state at every time in ``t``.

    Position is advanced from the start through the curvature matrix of the
    start position; the oscillating velocity keeps excursions to a few metres.

    Args:
        profile: Motion profile.
        t: Times in seconds, shape (n,).

    Returns:
        NavTruth with a leading axis of length n.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("time must be non-negative")

    euler, euler_rates = _attitude(profile, t)
    C_bn = euler_to_dcm(euler).reshape(-1, 3, 3)
    C_nb = np.swapaxes(C_bn, -1, -2)
    omega_nb = _body_rate(euler, euler_rates)

    v, v_dot, displacement = _velocity(profile, t)
    R_c0 = earthmodel.curvature_matrix(profile.initial_position)
    p = profile.initial_position.as_array() + displacement @ R_c0.T
    position = GeodeticPosition.from_array(p)

    omega_ie = earthmodel.earth_rate_n(position)
    omega_en = earthmodel.transport_rate_n(v, position)
    g = earthmodel.gravity_n(position)

    omega_ib = omega_nb + np.einsum("nij,nj->ni", C_nb, omega_ie + omega_en)
    f_n = v_dot + np.cross(2 * omega_ie + omega_en, v) - g
    f_b = np.einsum("nij,nj->ni", C_nb, f_n)
    return NavTruth(t, C_bn, v, position, omega_ib, f_b)


def truth_at(profile: MotionProfile, t: float) -> NavTruth:
    """True navigation state at a single time."""
    return truth_series(profile, [t])[0]


# ===== SENSORS =====
def make_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one (seed, stream) pair."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def _interval_count(duration: float, T: float) -> int:
    count = int(round(duration / T))
    if count < 1 or abs(count * T - duration) > 1e-9:
        raise ValueError(f"duration {duration} s is not a positive multiple of T = {T} s")
    return count


def integrate_rates(profile: MotionProfile, starts: np.ndarray, width: float, nodes: int = 20):
    """Integrate true angular rate and specific force over ``[start, start + width]``.

    Returns:
        Tuple ``(dtheta, dv)`` each of shape (len(starts), 3).
    """
    x, w = np.polynomial.legendre.leggauss(nodes)
    offsets = 0.5 * width * (x + 1)
    weights = 0.5 * width * w

    dtheta = np.empty((len(starts), 3))
    dv = np.empty((len(starts), 3))
    for lo in range(0, len(starts), _CHUNK):
        block = starts[lo:lo + _CHUNK]
        times = (block[:, None] + offsets).ravel()
        truth = truth_series(profile, times)
        dtheta[lo:lo + len(block)] = np.einsum("k,nkj->nj", weights, truth.omega_ib.reshape(len(block), nodes, 3))
        dv[lo:lo + len(block)] = np.einsum("k,nkj->nj", weights, truth.f_b.reshape(len(block), nodes, 3))
    return dtheta, dv


def synthesize_imu(profile: MotionProfile, spec: SensorSpec, seed: int, duration: float,
                   nodes: int = 20) -> List[ImuIncrement]:
    """Generate two-sample IMU increments over ``[0, duration]``.

    Each half-interval sample integrates the true rate (or specific force),
    adds the constant bias times T/2 and white noise with variance
    ``density^2 * T/2``.

    Args:
        profile: Motion profile.
        spec: Sensor specification.
        seed: Run seed; identical seeds give bit-identical streams.
        duration: Multiple of the update interval, s.
        nodes: Gauss-Legendre nodes per half-interval.

    Returns:
        One ImuIncrement per update interval.
    """
    T = spec.interval
    count = _interval_count(duration, T)
    half = T / 2
    starts = np.arange(2 * count) * half
    dtheta, dv = integrate_rates(profile, starts, half, nodes)

    rng = make_rng(seed, IMU_STREAM)
    gyro_white = rng.standard_normal((2 * count, 3))
    accel_white = rng.standard_normal((2 * count, 3))
    dtheta = dtheta + spec.gyro_bias * half + spec.gyro_noise * np.sqrt(half) * gyro_white
    dv = dv + spec.accel_bias * half + spec.accel_noise * np.sqrt(half) * accel_white

    logger.debug("Synthesized %d IMU intervals (seed %d)", count, seed)
    return [
        ImuIncrement(t=k * T, dtheta1=dtheta[2 * k], dtheta2=dtheta[2 * k + 1],
                     dv1=dv[2 * k], dv2=dv[2 * k + 1], T=T)
        for k in range(count)
    ]


def antenna_state(truth: NavTruth, lever_arm) -> tuple:
    """Antenna velocity and geodetic position for a truth series.

    Returns:
        Tuple ``(v_gnss, p_gnss)`` with ``p_gnss`` as an (n, 3) array.
    """
    lever_arm = np.asarray(lever_arm, dtype=float)
    C_nb = np.swapaxes(truth.C_bn, -1, -2)
    omega_ie_b = np.einsum("nij,nj->ni", C_nb, earthmodel.earth_rate_n(truth.position))
    omega_eb = truth.omega_ib - omega_ie_b
    v_gnss = truth.v_n + np.einsum("nij,nj->ni", truth.C_bn, np.cross(omega_eb, lever_arm))
    R_c = earthmodel.curvature_matrix(truth.position)
    lever_n = np.einsum("nij,j->ni", truth.C_bn, lever_arm)
    p_gnss = truth.position.as_array() + np.einsum("nij,nj->ni", R_c, lever_n)
    return v_gnss, p_gnss


def synthesize_gnss(profile: MotionProfile, spec: SensorSpec, seed: int, duration: float) -> List[GnssFix]:
    """Generate antenna fixes at every update epoch of ``[0, duration]``.

    Position noise is drawn in metres along N-U-E and mapped to geodetic
    increments through the curvature matrix.
    """
    T = spec.interval
    count = _interval_count(duration, T)
    times = np.arange(count + 1) * T
    truth = truth_series(profile, times)
    v_gnss, p_gnss = antenna_state(truth, spec.lever_arm)

    rng = make_rng(seed, GNSS_STREAM)
    velocity_white = rng.standard_normal((count + 1, 3))
    position_white = rng.standard_normal((count + 1, 3))
    v_gnss = v_gnss + spec.gnss_velocity_sigma * velocity_white
    R_c = earthmodel.curvature_matrix(truth.position)
    p_gnss = p_gnss + np.einsum("nij,nj->ni", R_c, spec.gnss_position_sigma * position_white)

    return [
        GnssFix(t=float(times[k]), velocity=v_gnss[k], position=GeodeticPosition.from_array(p_gnss[k]),
                velocity_sigma=spec.gnss_velocity_sigma, position_sigma=spec.gnss_position_sigma)
        for k in range(count + 1)
    ]


# ===== EXPORT =====
def truth_frame(truth: NavTruth) -> pd.DataFrame:
    euler = np.rad2deg(np.atleast_2d(dcm_to_euler(truth.C_bn)))
    p = truth.position.as_array()
    return pd.DataFrame({
        "t": truth.t,
        "yaw_deg": euler[:, 0], "pitch_deg": euler[:, 1], "roll_deg": euler[:, 2],
        "v_n": truth.v_n[:, 0], "v_u": truth.v_n[:, 1], "v_e": truth.v_n[:, 2],
        "lon_deg": np.rad2deg(p[:, 0]), "lat_deg": np.rad2deg(p[:, 1]), "h": p[:, 2],
    })


def imu_frame(imu: Sequence[ImuIncrement]) -> pd.DataFrame:
    columns = {"t": [inc.t for inc in imu]}
    for name in ("dtheta1", "dtheta2", "dv1", "dv2"):
        values = np.array([getattr(inc, name) for inc in imu])
        for axis, suffix in enumerate("xyz"):
            columns[f"{name}_{suffix}"] = values[:, axis]
    return pd.DataFrame(columns)


def gnss_frame(gnss: Sequence[GnssFix]) -> pd.DataFrame:
    velocity = np.array([fix.velocity for fix in gnss])
    position = np.array([fix.position.as_array() for fix in gnss])
    return pd.DataFrame({
        "t": [fix.t for fix in gnss],
        "v_n": velocity[:, 0], "v_u": velocity[:, 1], "v_e": velocity[:, 2],
        "lon_deg": np.rad2deg(position[:, 0]), "lat_deg": np.rad2deg(position[:, 1]), "h": position[:, 2],
    })
