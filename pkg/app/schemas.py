"""Pydantic schemas for scenario configuration and API payloads.

Configuration files use human units (degrees, deg/h, micro-g, Hz); conversion
to SI happens only in ``ScenarioConfig.motion_profile``,
``ScenarioConfig.sensor_spec``, ``ScenarioConfig.solver_settings`` and
``ScenarioConfig.ekf_tuning``.
"""
import math
from datetime import datetime
from typing import Annotated, Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.services.earthmodel import GeodeticPosition
from app.services.ekfbase import EkfTuning
from app.services.jape import SolverSettings
from app.services.simkit import MotionProfile, SensorSpec

#: Standard gravity used to express accelerometer errors in micro-g.
MICRO_G = 9.80665e-6
DEG_PER_HOUR = math.radians(1.0) / 3600

Estimator = Literal["ra-jape", "ba-jape", "ekf"]
Vector3 = Annotated[List[float], Field(min_length=3, max_length=3)]


# ===== MOTION SCHEMAS =====
class MotionProfileConfig(BaseModel):
    """Oscillating attitude (yaw, pitch, roll) and velocity (north, up, east)."""
    attitude_amplitude_deg: Vector3 = Field([10.0, 5.0, 8.0], description="Yaw, pitch, roll amplitudes")
    attitude_frequency_hz: Vector3 = Field([0.1, 0.15, 0.2])
    attitude_phase_rad: Vector3 = Field([0.0, 0.5, 1.0])
    velocity_amplitude: Vector3 = Field([2.0, 1.0, 1.5], description="North, up, east amplitudes in m/s")
    velocity_frequency_hz: Vector3 = Field([0.1, 0.1, 0.1])
    velocity_phase_rad: Vector3 = Field([0.0, math.pi / 3, math.pi / 2])
    initial_euler_deg: Vector3 = Field([30.0, 0.0, 0.0], description="Yaw, pitch, roll at t = 0")
    latitude_deg: float = Field(30.0, ge=-89.0, le=89.0)
    longitude_deg: float = Field(114.0, ge=-180.0, le=180.0)
    height: float = Field(50.0, description="Height above the ellipsoid in m")


# ===== SENSOR SCHEMAS =====
class SensorConfig(BaseModel):
    gyro_bias_deg_h: Vector3 = Field([0.01, 0.01, 0.01], description="Constant gyro drift in deg/h")
    gyro_noise_deg_h_rthz: float = Field(0.1, ge=0.0, description="Gyro white noise in deg/h/sqrt(Hz)")
    accel_bias_ug: Vector3 = Field([50.0, 50.0, 50.0], description="Constant accelerometer bias in micro-g")
    accel_noise_ug_rthz: float = Field(5.0, ge=0.0, description="Accelerometer white noise in micro-g/sqrt(Hz)")
    imu_rate_hz: float = Field(100.0, gt=0.0)
    gnss_rate_hz: float = Field(50.0, gt=0.0)
    gnss_velocity_sigma: float = Field(0.02, ge=0.0, description="m/s")
    gnss_position_sigma: float = Field(0.2, ge=0.0, description="m")
    lever_arm: Vector3 = Field([1.0, 2.0, 1.5], description="INS to antenna, body axes, m")

    @model_validator(mode="after")
    def _rates_match(self):
        if not math.isclose(self.imu_rate_hz, 2 * self.gnss_rate_hz):
            raise ValueError("imu_rate_hz must be twice gnss_rate_hz")
        return self


# ===== ESTIMATOR SCHEMAS =====
class SolverConfig(BaseModel):
    max_iter: int = Field(5, ge=1)
    tolerance: float = Field(1e-12, gt=0.0, description="Stop when the largest step component is below this")
    guard: bool = Field(False, description="Halve steps that increase the merit function")
    max_condition: float = Field(1e12, gt=1.0)
    strict: bool = Field(False, description="Raise instead of warning when iterations do not converge")
    batch_stride: int = Field(50, ge=1, description="Epochs between batch solves")
    gyro_bias_coupling: Literal["integrated", "literal"] = "integrated"


class EkfConfig(BaseModel):
    attitude_sigma_deg: Vector3 = Field([1.0, 8.0, 1.0], description="Initial attitude sigma about N, U, E")
    velocity_sigma: float = Field(0.1, ge=0.0)
    position_sigma: float = Field(3.0, ge=0.0)
    gyro_bias_sigma_deg_h: float = Field(0.05, ge=0.0)
    accel_bias_sigma_ug: float = Field(100.0, ge=0.0)
    lever_arm_sigma: float = Field(2.0, ge=0.0)
    process_noise_scale: float = Field(1.0, ge=0.0, description="Multiplier on the sensor noise densities")
    position_noise_floor: float = Field(0.01, ge=0.0)
    velocity_noise_floor: float = Field(0.001, ge=0.0)
    gate: Optional[float] = Field(None, gt=0.0, description="Chi-square gate on the innovation, off when null")


# ===== SCENARIO SCHEMAS =====
PRESETS: Dict[str, Dict[str, Any]] = {
    "navigation": {},
    "noisy-velocity": {"sensor": {"gnss_velocity_sigma": 0.2}},
    "consumer": {
        "sensor": {"gyro_bias_deg_h": [10.0, 10.0, 10.0], "gyro_noise_deg_h_rthz": 36.0,
                   "accel_bias_ug": [5000.0, 5000.0, 5000.0], "accel_noise_ug_rthz": 80.0},
        "ekf": {"gyro_bias_sigma_deg_h": 20.0, "accel_bias_sigma_ug": 10000.0},
    },
    "ideal": {
        "sensor": {"gyro_noise_deg_h_rthz": 0.0, "accel_noise_ug_rthz": 0.0,
                   "gnss_velocity_sigma": 0.0, "gnss_position_sigma": 0.0},
    },
}


class ScenarioConfig(BaseModel):
    """Complete description of one simulated scenario and its Monte Carlo campaign."""
    motion: MotionProfileConfig = Field(default_factory=MotionProfileConfig)
    sensor: SensorConfig = Field(default_factory=SensorConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    ekf: EkfConfig = Field(default_factory=EkfConfig)
    duration: float = Field(300.0, gt=0.0, description="Simulated time in s")
    nabla: int = Field(50, ge=1, description="Differencing window in epochs")
    warmup_s: float = Field(30.0, ge=0.0, description="Attitude-only phase in s")
    estimators: List[Estimator] = Field(["ra-jape", "ekf"], min_length=1)
    seed: int = Field(0, ge=0, description="Seed of run 0; run i uses seed + i")
    runs: int = Field(50, ge=1)
    report_stride: int = Field(50, ge=1, description="Epochs between rows of the per-run time series")

    @model_validator(mode="after")
    def _check_duration(self):
        if self.duration < self.warmup_s:
            raise ValueError("duration must not be shorter than warmup_s")
        T = 1.0 / self.sensor.gnss_rate_hz
        if abs(round(self.duration / T) * T - self.duration) > 1e-9:
            raise ValueError("duration must be a multiple of the update interval")
        return self

    @classmethod
    def preset(cls, name: str, **overrides) -> "ScenarioConfig":
        """Build one of the named sensor regimes, with top-level overrides."""
        if name not in PRESETS:
            raise ValueError(f"unknown preset '{name}', choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    @property
    def interval(self) -> float:
        return 1.0 / self.sensor.gnss_rate_hz

    def motion_profile(self) -> MotionProfile:
        m = self.motion
        return MotionProfile(
            attitude_amplitude=np.deg2rad(m.attitude_amplitude_deg),
            attitude_frequency=np.asarray(m.attitude_frequency_hz),
            attitude_phase=np.asarray(m.attitude_phase_rad),
            velocity_amplitude=np.asarray(m.velocity_amplitude),
            velocity_frequency=np.asarray(m.velocity_frequency_hz),
            velocity_phase=np.asarray(m.velocity_phase_rad),
            initial_euler=np.deg2rad(m.initial_euler_deg),
            initial_position=GeodeticPosition.from_degrees(m.longitude_deg, m.latitude_deg, m.height),
        )

    def sensor_spec(self) -> SensorSpec:
        s = self.sensor
        return SensorSpec(
            gyro_bias=np.asarray(s.gyro_bias_deg_h) * DEG_PER_HOUR,
            gyro_noise=s.gyro_noise_deg_h_rthz * DEG_PER_HOUR,
            accel_bias=np.asarray(s.accel_bias_ug) * MICRO_G,
            accel_noise=s.accel_noise_ug_rthz * MICRO_G,
            imu_rate=s.imu_rate_hz,
            gnss_rate=s.gnss_rate_hz,
            gnss_velocity_sigma=s.gnss_velocity_sigma,
            gnss_position_sigma=s.gnss_position_sigma,
            lever_arm=np.asarray(s.lever_arm),
        )

    def solver_settings(self) -> SolverSettings:
        s = self.solver
        return SolverSettings(max_iter=s.max_iter, tolerance=s.tolerance, guard=s.guard,
                              max_condition=s.max_condition, strict=s.strict)

    def ekf_tuning(self) -> EkfTuning:
        e = self.ekf
        spec = self.sensor_spec()
        return EkfTuning(
            attitude_sigma=tuple(np.deg2rad(e.attitude_sigma_deg)),
            velocity_sigma=e.velocity_sigma,
            position_sigma=e.position_sigma,
            gyro_bias_sigma=e.gyro_bias_sigma_deg_h * DEG_PER_HOUR,
            accel_bias_sigma=e.accel_bias_sigma_ug * MICRO_G,
            lever_arm_sigma=e.lever_arm_sigma,
            gyro_noise=spec.gyro_noise * e.process_noise_scale,
            accel_noise=spec.accel_noise * e.process_noise_scale,
            position_noise=e.position_noise_floor,
            velocity_noise=e.velocity_noise_floor,
            gate=e.gate,
        )


# ===== API SCHEMAS =====
class ScenarioRequest(BaseModel):
    """Schema for running a single scenario."""
    config: ScenarioConfig = Field(default_factory=ScenarioConfig)
    run_index: int = Field(0, ge=0)


class FinalEstimate(BaseModel):
    estimator: str
    t: float
    attitude_error_deg: Vector3
    accel_bias_ug: Vector3
    accel_bias_error_ug: Vector3
    gyro_bias_deg_h: Vector3
    lever_arm_error_mm: Vector3
    objective: Optional[float] = None
    objective_at_truth: Optional[float] = None
    iterations: int = 0


class RunResponse(BaseModel):
    run_index: int
    seed: int
    estimates: List[FinalEstimate]
    earth_rate_ratio: float
    wall_time_s: float


class CampaignRequest(BaseModel):
    """Schema for running and storing a Monte Carlo campaign."""
    config: ScenarioConfig = Field(default_factory=ScenarioConfig)
    label: Optional[str] = Field(None, max_length=100)
    workers: int = Field(1, ge=1)


class CampaignResponse(BaseModel):
    id: int
    label: Optional[str]
    runs: int
    output_dir: Optional[str]
    summary: Dict[str, Any]
    created_at: datetime

    model_config = ConfigDict(from_attributes=True)
