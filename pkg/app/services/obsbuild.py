"""Per-epoch observation coefficients and their time differences.

At epoch ``M`` the navigation equations reduce to

    beta_M = C_b^n(0) (alpha_M + chi_M b_a + lambda_M b_g + gamma_M l^b)

where ``beta`` integrates GNSS velocity in the N frame frozen at t = 0 and
``alpha``, ``chi``, ``lambda``, ``gamma`` integrate IMU increments in the body
frame frozen at t = 0. Differencing the coefficients ``nabla`` epochs apart
gives equalities with comparable error levels.
"""
import logging
from collections import deque
from dataclasses import dataclass
from typing import Deque, Iterable, Iterator, Optional, Sequence

import numpy as np

from app.exceptions import GapDetected, InsufficientHistory
from app.services import earthmodel
from app.services.rotations import rotvec_to_dcm, skew
from app.services.simkit import GnssFix, ImuIncrement

logger = logging.getLogger(__name__)

GAP_TOLERANCE = 1e-6
_EYE = np.eye(3)


# ===== DOMAIN TYPES =====
@dataclass(frozen=True, eq=False)
class CoeffEpoch:
    """Observation coefficients at epoch ``M`` plus the frame propagations."""
    M: int
    t: float
    alpha: np.ndarray
    beta: np.ndarray
    chi: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    C_b: np.ndarray
    C_n: np.ndarray


@dataclass(frozen=True, eq=False)
class DiffCoeff:
    """Coefficients of epoch ``M`` minus those of epoch ``M - nabla``."""
    M: int
    t: float
    alpha: np.ndarray
    beta: np.ndarray
    chi: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    nabla: int

    @property
    def G(self) -> np.ndarray:
        """Parameter coefficient block ``[chi lambda gamma]``, shape (3, 9)."""
        return np.hstack([self.chi, self.lam, self.gamma])


_DIFFERENCED = ("alpha", "beta", "chi", "lam", "gamma")


# ===== TWO-SAMPLE HELPERS =====
def velocity_increment(imu: ImuIncrement) -> np.ndarray:
    """Sculling-compensated velocity increment over one interval, body frame at ``t_k``."""
    dtheta = imu.dtheta1 + imu.dtheta2
    dv = imu.dv1 + imu.dv2
    return (dv + 0.5 * np.cross(dtheta, dv)
            + 2.0 / 3.0 * (np.cross(imu.dtheta1, imu.dv2) + np.cross(imu.dv1, imu.dtheta2)))


def rotation_increment(imu: ImuIncrement) -> np.ndarray:
    """Coning-compensated rotation vector of one interval."""
    return imu.dtheta1 + imu.dtheta2 + 2.0 / 3.0 * np.cross(imu.dtheta1, imu.dtheta2)


def rate_at_start(imu: ImuIncrement) -> np.ndarray:
    """Angular rate at ``t_k`` from the linear two-sample rate model."""
    return (3 * imu.dtheta1 - imu.dtheta2) / imu.T


def rate_at_end(imu: ImuIncrement) -> np.ndarray:
    """Angular rate at ``t_k + T`` from the linear two-sample rate model."""
    return (3 * imu.dtheta2 - imu.dtheta1) / imu.T


class CoefficientBuilder:
    """Sequential state machine producing one CoeffEpoch per update interval.

    Feed ``step(imu_k, fix_k, fix_k1)`` with the increment covering
    ``[t_k, t_k + T]`` and the fixes at both ends.
    """

    def __init__(self, T: float, gyro_bias_coupling: str = "integrated"):
        if gyro_bias_coupling not in ("integrated", "literal"):
            raise ValueError(f"unknown gyro bias coupling '{gyro_bias_coupling}'")
        self.T = T
        self.gyro_bias_coupling = gyro_bias_coupling

        self.M = 0
        self.alpha = np.zeros(3)
        self.chi = np.zeros((3, 3))
        self.lam = np.zeros((3, 3))
        self.gamma = np.zeros((3, 3))
        self.C_b = _EYE.copy()
        self.C_n = _EYE.copy()
        self.beta = np.zeros(3)
        self._nav_sum = np.zeros(3)
        self._v0: Optional[np.ndarray] = None
        self._omega0: Optional[np.ndarray] = None

    def snapshot(self, t: float) -> CoeffEpoch:
        return CoeffEpoch(M=self.M, t=t, alpha=self.alpha.copy(), beta=self.beta.copy(),
                          chi=self.chi.copy(), lam=self.lam.copy(), gamma=self.gamma.copy(),
                          C_b=self.C_b.copy(), C_n=self.C_n.copy())

    def update_nav_side(self, fix_k: GnssFix, fix_k1: GnssFix) -> None:
        """Advance ``beta`` and ``C_n(t)^n(0)`` across one interval.

        Earth quantities come from the antenna fix at ``t_k``; velocity is taken
        as linear within the interval.

        Raises:
            GapDetected: If the fixes are not ``T`` apart.
        """
        T = self.T
        if abs(fix_k1.t - fix_k.t - T) > GAP_TOLERANCE:
            raise GapDetected(f"GNSS fixes at {fix_k.t:.6f} s and {fix_k1.t:.6f} s are not {T} s apart")
        if self._v0 is None:
            self._v0 = np.asarray(fix_k.velocity, dtype=float).copy()

        earth = earthmodel.earth_params(fix_k.position, fix_k.velocity)
        w_in = skew(earth.omega_in)
        w_ie = skew(earth.omega_ie)
        step = ((0.5 * T * _EYE + T * T / 6 * w_in) @ (w_ie @ fix_k.velocity)
                + (0.5 * T * _EYE + T * T / 3 * w_in) @ (w_ie @ fix_k1.velocity)
                - (T * _EYE + 0.5 * T * T * w_in) @ earth.gravity)
        self._nav_sum = self._nav_sum + self.C_n @ step
        self.C_n = self.C_n @ rotvec_to_dcm(T * earth.omega_in)
        self.beta = self.C_n @ fix_k1.velocity - self._v0 + self._nav_sum

    def update_body_side(self, imu: ImuIncrement) -> None:
        """Advance ``alpha``, ``chi``, ``lambda`` and ``C_b(t)^b(0)`` across one interval."""
        T = self.T
        k = self.M
        C = self.C_b
        dv = velocity_increment(imu)

        self.alpha = self.alpha + C @ dv
        self.chi = self.chi - T * C @ (_EYE + skew(5 * imu.dtheta1 + imu.dtheta2) / 6)
        if self.gyro_bias_coupling == "integrated":
            within = T / 6 * (imu.dv1 + 5 * imu.dv2)
        else:
            within = imu.dv1 + imu.dv2
        self.lam = self.lam + C @ skew(within) + k * T * skew(dv)
        self.C_b = C @ rotvec_to_dcm(rotation_increment(imu))

    def gamma_eval(self, imu: ImuIncrement) -> np.ndarray:
        """Lever-arm coefficient at the end of ``imu``'s interval.

        Uses the rate at ``t_M`` from the interval just processed and the rate
        at ``t = 0`` from the first interval.
        """
        if self._omega0 is None:
            self._omega0 = rate_at_start(imu)
        return self.C_b @ skew(rate_at_end(imu)) - skew(self._omega0)

    def step(self, imu: ImuIncrement, fix_k: GnssFix, fix_k1: GnssFix) -> CoeffEpoch:
        """Process one interval and return the coefficients of the new epoch."""
        if abs(imu.t - fix_k.t) > GAP_TOLERANCE:
            raise GapDetected(f"IMU interval at {imu.t:.6f} s does not start at fix time {fix_k.t:.6f} s")
        self.update_nav_side(fix_k, fix_k1)
        self.update_body_side(imu)
        self.M += 1
        self.gamma = self.gamma_eval(imu)
        return self.snapshot(fix_k1.t)


def window_diff(history: Sequence[CoeffEpoch], nabla: int) -> DiffCoeff:
    """Difference the newest epoch of ``history`` against the one ``nabla`` earlier.

    Raises:
        InsufficientHistory: If fewer than ``nabla + 1`` epochs are available.
    """
    if nabla < 1:
        raise ValueError("nabla must be at least 1")
    if len(history) < nabla + 1:
        raise InsufficientHistory(f"need {nabla + 1} epochs, have {len(history)}")
    newest = history[-1]
    oldest = history[-1 - nabla]
    if newest.M - oldest.M != nabla:
        raise InsufficientHistory("history is not contiguous")
    values = {name: getattr(newest, name) - getattr(oldest, name) for name in _DIFFERENCED}
    return DiffCoeff(M=newest.M, t=newest.t, nabla=nabla, **values)


class WindowDifferencer:
    """Keeps the last ``nabla + 1`` epochs and emits one DiffCoeff per epoch once full."""

    def __init__(self, nabla: int):
        if nabla < 1:
            raise ValueError("nabla must be at least 1")
        self.nabla = nabla
        self.history: Deque[CoeffEpoch] = deque(maxlen=nabla + 1)

    def push(self, epoch: CoeffEpoch) -> Optional[DiffCoeff]:
        self.history.append(epoch)
        if len(self.history) < self.nabla + 1:
            return None
        return window_diff(self.history, self.nabla)


def build_epochs(imu: Sequence[ImuIncrement], gnss: Sequence[GnssFix],
                 gyro_bias_coupling: str = "integrated") -> Iterator[CoeffEpoch]:
    """Yield epoch 0 followed by one CoeffEpoch per IMU interval."""
    if len(gnss) < len(imu) + 1:
        raise GapDetected(f"{len(imu)} IMU intervals need {len(imu) + 1} GNSS fixes, got {len(gnss)}")
    T = imu[0].T if imu else 1.0
    builder = CoefficientBuilder(T, gyro_bias_coupling)
    yield builder.snapshot(gnss[0].t)
    for k, increment in enumerate(imu):
        yield builder.step(increment, gnss[k], gnss[k + 1])


def differenced(epochs: Iterable[CoeffEpoch], nabla: int) -> Iterator[DiffCoeff]:
    differencer = WindowDifferencer(nabla)
    for epoch in epochs:
        diff = differencer.push(epoch)
        if diff is not None:
            yield diff


def observation_residual(d: DiffCoeff, C_bn0: np.ndarray, b_a, b_g, lever_arm) -> np.ndarray:
    """Residual ``beta - C_b^n(0)(alpha + chi b_a + lambda b_g + gamma l)`` of one equality."""
    return d.beta - C_bn0 @ (d.alpha + d.chi @ b_a + d.lam @ b_g + d.gamma @ lever_arm)


def earth_rate_term_ratio(epochs: Sequence[CoeffEpoch], imu: Sequence[ImuIncrement],
                          position, C_bn0: np.ndarray) -> float:
    """Largest ratio of the neglected Earth-rate lever-arm term to the kept one.

    Compares ``|(omega_ie^b(0) x) int_0^t C omega_ib x dt|`` against
    ``|C omega_ib x|`` along the run, both as matrix 2-norms.

    Args:
        epochs: Epochs 0..M from ``build_epochs``.
        imu: Increments that produced ``epochs[1:]``.
        position: GeodeticPosition at t = 0.
        C_bn0: Body-to-nav attitude at t = 0.
    """
    omega_ie_b0 = np.asarray(C_bn0).T @ earthmodel.earth_rate_n(position)
    integral = np.zeros((3, 3))
    ratio = 0.0
    for epoch, increment in zip(epochs[1:], imu):
        kept = epoch.C_b @ skew(rate_at_end(increment))
        integral = integral + increment.T * kept
        norm = np.linalg.norm(kept, 2)
        if norm > 0:
            ratio = max(ratio, np.linalg.norm(skew(omega_ie_b0) @ integral, 2) / norm)
    return float(ratio)
