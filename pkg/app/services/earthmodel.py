"""Earth geometry, rotation and gravity in the local-level North-Up-East frame.

WGS-84 ellipsoid with the Somigliana normal-gravity formula and a linear
free-air correction. Vectors in the navigation frame are ordered
``[north, up, east]`` and positions ``p = [longitude, latitude, height]``.

Every function accepts scalar or array-valued positions; array inputs broadcast
and the trailing axis of the result holds the vector components.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from app.exceptions import PolarSingularity

logger = logging.getLogger(__name__)

#: Rotation rate of the Earth, rad/s.
RATE = 7.292115e-5
#: Semi-major axis of the ellipsoid, m.
A = 6378137.0
#: Squared first eccentricity.
E2 = 6.6943799901413e-3
#: Normal gravity at the equator, m/s^2.
GE = 9.7803253359
#: Normal gravity at the pole, m/s^2.
GP = 9.8321849378
#: Somigliana constant.
K_SOMIGLIANA = (1 - E2) ** 0.5 * GP / GE - 1

_POLAR_COS = 1e-12


def wrap_longitude(longitude):
    """Wrap longitude to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(longitude, dtype=float), 2 * np.pi)


@dataclass(frozen=True, eq=False)
class GeodeticPosition:
    """Geodetic position; fields may be floats or equally shaped arrays."""
    longitude: float
    latitude: float
    height: float

    def __post_init__(self):
        latitude = np.asarray(self.latitude, dtype=float)
        height = np.asarray(self.height, dtype=float)
        if np.any(np.abs(latitude) > np.pi / 2 + 1e-12):
            raise ValueError("latitude must lie within [-pi/2, pi/2]")
        if not np.all(np.isfinite(height)):
            raise ValueError("height must be finite")
        longitude = wrap_longitude(self.longitude)
        if longitude.ndim == 0:
            longitude = float(longitude)
        object.__setattr__(self, "longitude", longitude)

    @classmethod
    def from_degrees(cls, longitude_deg, latitude_deg, height) -> "GeodeticPosition":
        return cls(np.deg2rad(longitude_deg), np.deg2rad(latitude_deg), height)

    @classmethod
    def from_array(cls, p) -> "GeodeticPosition":
        """Build from ``[longitude, latitude, height]`` (shape (3,) or (n, 3))."""
        p = np.asarray(p, dtype=float)
        return cls(p[..., 0], p[..., 1], p[..., 2])

    def as_array(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(self.longitude, self.latitude, self.height), axis=-1)

    def shifted(self, dp) -> "GeodeticPosition":
        """Return the position displaced by geodetic increments ``dp``."""
        return GeodeticPosition.from_array(self.as_array() + np.asarray(dp, dtype=float))

    def __getitem__(self, index) -> "GeodeticPosition":
        return GeodeticPosition.from_array(self.as_array()[index])


@dataclass(frozen=True, eq=False)
class EarthParams:
    """Earth quantities evaluated at one position and velocity."""
    R_E: float
    R_N: float
    omega_ie: np.ndarray
    omega_en: np.ndarray
    omega_in: np.ndarray
    gravity: np.ndarray


def principal_radii(latitude, height=0.0) -> Tuple[np.ndarray, np.ndarray]:
    """Compute the principal radii of curvature of the ellipsoid.

    Args:
        latitude: Geodetic latitude, rad.
        height: Unused by the radii themselves, kept for broadcasting.

    Returns:
        Tuple ``(R_N, R_E)``: meridian and transverse radii, m.
    """
    sin_lat = np.sin(latitude)
    x = 1 - E2 * sin_lat ** 2
    R_E = A / np.sqrt(x)
    R_N = R_E * (1 - E2) / x
    R_N, R_E, _ = np.broadcast_arrays(R_N, R_E, height)
    return R_N, R_E


def _check_polar(cos_lat):
    if np.any(np.abs(cos_lat) < _POLAR_COS):
        raise PolarSingularity("latitude too close to a pole for the curvature matrix")


def curvature_matrix(pos: GeodeticPosition) -> np.ndarray:
    """Compute the matrix mapping ``v^n = [v_N, v_U, v_E]`` to ``dp/dt``.

    Args:
        pos: Geodetic position.

    Returns:
        Matrix ``R_c``, shape (3, 3) or (..., 3, 3).

    Raises:
        PolarSingularity: When ``|cos L| < 1e-12``.
    """
    cos_lat = np.cos(pos.latitude)
    _check_polar(cos_lat)
    R_N, R_E = principal_radii(pos.latitude, pos.height)
    h = np.asarray(pos.height, dtype=float)

    result = np.zeros(np.shape(R_N) + (3, 3))
    result[..., 0, 2] = 1 / ((R_E + h) * cos_lat)
    result[..., 1, 0] = 1 / (R_N + h)
    result[..., 2, 1] = 1.0
    return result


def earth_rate_n(pos: GeodeticPosition) -> np.ndarray:
    """Earth rotation rate resolved in the N-U-E frame, ``RATE * [cos L, sin L, 0]``."""
    latitude = np.asarray(pos.latitude, dtype=float)
    return RATE * np.stack([np.cos(latitude), np.sin(latitude), np.zeros_like(latitude)], axis=-1)


def transport_rate_n(v_n, pos: GeodeticPosition) -> np.ndarray:
    """Rotation rate of the N-U-E frame with respect to the Earth.

    With ``dlon/dt = v_E / ((R_E + h) cos L)`` and ``dlat/dt = v_N / (R_N + h)``
    the frame turns at ``[dlon/dt cos L, dlon/dt sin L, -dlat/dt]``.

    Args:
        v_n: Velocity ``[v_N, v_U, v_E]``, m/s.
        pos: Geodetic position.

    Returns:
        Transport rate, rad/s.

    Raises:
        PolarSingularity: When ``|cos L| < 1e-12``.
    """
    v_n = np.asarray(v_n, dtype=float)
    latitude = np.asarray(pos.latitude, dtype=float)
    _check_polar(np.cos(latitude))
    R_N, R_E = principal_radii(latitude, pos.height)
    h = np.asarray(pos.height, dtype=float)

    v_north = v_n[..., 0]
    v_east = v_n[..., 2]
    return np.stack([
        v_east / (R_E + h),
        v_east * np.tan(latitude) / (R_E + h),
        -v_north / (R_N + h),
    ], axis=-1)


def gravity_magnitude(latitude, height) -> np.ndarray:
    """Normal gravity magnitude (Somigliana with linear free-air correction)."""
    sin_lat = np.sin(latitude)
    height = np.asarray(height, dtype=float)
    return GE * (1 + K_SOMIGLIANA * sin_lat ** 2) / np.sqrt(1 - E2 * sin_lat ** 2) * (1 - 2 * height / A)


def gravity_n(pos: GeodeticPosition) -> np.ndarray:
    """Gravity vector ``[0, -g, 0]`` in the N-U-E frame."""
    g = gravity_magnitude(pos.latitude, pos.height)
    zeros = np.zeros_like(g)
    return np.stack([zeros, -g, zeros], axis=-1)


def earth_params(pos: GeodeticPosition, v_n) -> EarthParams:
    """Evaluate all Earth quantities needed by the navigation equations.

    Args:
        pos: Geodetic position (scalar fields).
        v_n: Velocity ``[v_N, v_U, v_E]``, m/s.

    Returns:
        EarthParams with ``omega_in = omega_ie + omega_en``.
    """
    R_N, R_E = principal_radii(pos.latitude, pos.height)
    omega_ie = earth_rate_n(pos)
    omega_en = transport_rate_n(v_n, pos)
    return EarthParams(
        R_E=float(R_E),
        R_N=float(R_N),
        omega_ie=omega_ie,
        omega_en=omega_en,
        omega_in=omega_ie + omega_en,
        gravity=gravity_n(pos),
    )
