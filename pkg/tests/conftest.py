"""Shared fixtures: synthetic coefficient epochs, short scenarios and an isolated app."""
import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from app.schemas import ScenarioConfig
from app.services.obsbuild import DiffCoeff
from app.services.rotations import dcm_to_quat, quat_to_dcm


def random_quat(rng: np.random.Generator) -> np.ndarray:
    """Unit quaternion ``[s, eta]`` with non-negative scalar part."""
    q = Rotation.random(random_state=int(rng.integers(1 << 31))).as_quat()
    q = np.r_[q[3], q[:3]]
    return q if q[0] >= 0 else -q


def consistent_diffs(rng: np.random.Generator, q: np.ndarray, theta: np.ndarray, n: int = 30):
    """Epochs whose equalities hold exactly at ``(q, theta)``."""
    C_bn0 = quat_to_dcm(q).T
    diffs = []
    for m in range(n):
        alpha = rng.normal(scale=10.0, size=3)
        chi = rng.normal(scale=0.5, size=(3, 3))
        lam = rng.normal(scale=2.0, size=(3, 3))
        gamma = rng.normal(scale=0.3, size=(3, 3))
        G = np.hstack([chi, lam, gamma])
        beta = C_bn0 @ (alpha + G @ theta)
        diffs.append(DiffCoeff(M=m + 1, t=0.02 * (m + 1), alpha=alpha, beta=beta, chi=chi, lam=lam,
                               gamma=gamma, nabla=1))
    return diffs


def noisy_diffs(rng: np.random.Generator, n: int = 20):
    """Epochs with unrelated coefficients, so every residual is non-zero."""
    return [
        DiffCoeff(M=m + 1, t=0.02 * (m + 1), alpha=rng.normal(size=3), beta=rng.normal(size=3),
                  chi=rng.normal(size=(3, 3)), lam=rng.normal(size=(3, 3)), gamma=rng.normal(size=(3, 3)),
                  nabla=1)
        for m in range(n)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def true_quat():
    return dcm_to_quat(Rotation.from_euler("YZX", [30.0, 4.0, -3.0], degrees=True).as_matrix().T)


@pytest.fixture
def true_theta():
    return np.array([4.9e-4, -3.0e-4, 5.0e-4, 2e-6, -1e-6, 3e-6, 1.0, 2.0, 1.5])


@pytest.fixture
def short_config():
    """Noise-free ten-second scenario, small enough for the default test run."""
    return ScenarioConfig.preset(
        "ideal", duration=10.0, warmup_s=5.0, nabla=10, report_stride=25, runs=2,
        estimators=["ra-jape", "ba-jape", "ekf"], solver={"batch_stride": 25},
    )


@pytest.fixture
def isolated_app(tmp_path, monkeypatch):
    """The FastAPI app with its registry and reports redirected to ``tmp_path``."""
    from app.routers import dependencies
    from app.settings import get_settings

    monkeypatch.setenv("JAPE_DATABASE_PATH", str(tmp_path / "campaigns.db"))
    monkeypatch.setenv("JAPE_OUTPUT_DIR", str(tmp_path / "reports"))
    get_settings.cache_clear()
    dependencies.get_services.cache_clear()
    dependencies.ServiceContainer._instance = None

    from main import app
    yield app

    get_settings.cache_clear()
    dependencies.get_services.cache_clear()
    dependencies.ServiceContainer._instance = None


def ideal_spec(**overrides):
    """Error-free sensors at 100 Hz IMU / 50 Hz GNSS."""
    from app.services.simkit import SensorSpec

    values = dict(gyro_bias=np.zeros(3), gyro_noise=0.0, accel_bias=np.zeros(3), accel_noise=0.0,
                  imu_rate=100.0, gnss_rate=50.0, gnss_velocity_sigma=0.0, gnss_position_sigma=0.0,
                  lever_arm=np.zeros(3))
    values.update(overrides)
    return SensorSpec(**values)
