"""Quaternion and direction-cosine algebra.

Quaternions are stored as ``[s, eta1, eta2, eta3]`` with Hamilton
multiplication. ``quat_to_dcm`` maps ``q`` to the nav-to-body matrix
``C_n^b = (s^2 - eta.eta) I + 2 eta eta^T - 2 s (eta x)``; the body-to-nav
matrix is its transpose. Nothing here normalizes implicitly.
"""
import logging
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from app.exceptions import NotRotation, NotUnit

logger = logging.getLogger(__name__)

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])
#: Euler sequence of the reported attitude: yaw about Up, pitch about the
#: body right axis, roll about the body forward axis (intrinsic).
EULER_SEQUENCE = "YZX"

_UNIT_TOL = 1e-9
_ROTATION_TOL = 1e-9


def skew(v) -> np.ndarray:
    """Skew-symmetric matrix with ``skew(v) @ w == cross(v, w)``; accepts (..., 3)."""
    v = np.asarray(v, dtype=float)
    result = np.zeros(v.shape[:-1] + (3, 3))
    result[..., 0, 1] = -v[..., 2]
    result[..., 0, 2] = v[..., 1]
    result[..., 1, 0] = v[..., 2]
    result[..., 1, 2] = -v[..., 0]
    result[..., 2, 0] = -v[..., 1]
    result[..., 2, 1] = v[..., 0]
    return result


def pure(v) -> np.ndarray:
    """Embed a 3-vector as a vector quaternion ``[0, v]``."""
    v = np.asarray(v, dtype=float)
    return np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _check_unit(q):
    norm2 = np.sum(np.asarray(q) ** 2, axis=-1)
    if np.any(np.abs(norm2 - 1) > _UNIT_TOL):
        raise NotUnit(f"quaternion norm^2 deviates from 1 by {np.max(np.abs(norm2 - 1)):.3e}")


def qplus(q) -> np.ndarray:
    """Left multiplication matrix ``[q]+`` so that ``q o p = [q]+ p``."""
    s, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack([
        np.stack([s, -x, -y, -z], axis=-1),
        np.stack([x, s, -z, y], axis=-1),
        np.stack([y, z, s, -x], axis=-1),
        np.stack([z, -y, x, s], axis=-1),
    ], axis=-2)


def qminus(q) -> np.ndarray:
    """Right multiplication matrix ``[q]-`` so that ``p o q = [q]- p``."""
    s, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack([
        np.stack([s, -x, -y, -z], axis=-1),
        np.stack([x, s, z, -y], axis=-1),
        np.stack([y, -z, s, x], axis=-1),
        np.stack([z, y, -x, s], axis=-1),
    ], axis=-2)


def qmat(q) -> Tuple[np.ndarray, np.ndarray]:
    """Return both multiplication matrices ``([q]+, [q]-)``."""
    return qplus(q), qminus(q)


def quat_mul(q, p) -> np.ndarray:
    """Hamilton product ``q o p``."""
    return np.einsum("...ab,...b->...a", qplus(q), np.asarray(p, dtype=float))


def quat_to_dcm(q, check: bool = True) -> np.ndarray:
    """Nav-to-body matrix ``C_n^b`` encoded by ``q``.

    Raises:
        NotUnit: If ``check`` and ``|q.q - 1| > 1e-9``.
    """
    q = np.asarray(q, dtype=float)
    if check:
        _check_unit(q)
    s = q[..., 0]
    eta = q[..., 1:]
    eye = np.broadcast_to(np.eye(3), q.shape[:-1] + (3, 3))
    return ((s ** 2 - np.sum(eta ** 2, axis=-1))[..., None, None] * eye
            + 2 * eta[..., :, None] * eta[..., None, :]
            - 2 * s[..., None, None] * skew(eta))


def dcm_to_quat(C) -> np.ndarray:
    """Inverse of ``quat_to_dcm`` using the largest-pivot (Shepperd) branch.

    Raises:
        NotRotation: If ``C`` is not orthonormal with determinant +1.
    """
    C = np.asarray(C, dtype=float)
    if C.shape != (3, 3):
        raise NotRotation("expected a 3x3 matrix")
    if (np.max(np.abs(C @ C.T - np.eye(3))) > _ROTATION_TOL
            or abs(np.linalg.det(C) - 1) > _ROTATION_TOL):
        raise NotRotation("matrix is not a proper rotation")

    R = C.T
    trace = np.trace(R)
    pivot = int(np.argmax([trace, R[0, 0], R[1, 1], R[2, 2]]))
    if pivot == 0:
        s = 0.5 * np.sqrt(1 + trace)
        q = [s, (R[2, 1] - R[1, 2]) / (4 * s), (R[0, 2] - R[2, 0]) / (4 * s), (R[1, 0] - R[0, 1]) / (4 * s)]
    elif pivot == 1:
        x = 0.5 * np.sqrt(1 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / (4 * x), x, (R[0, 1] + R[1, 0]) / (4 * x), (R[0, 2] + R[2, 0]) / (4 * x)]
    elif pivot == 2:
        y = 0.5 * np.sqrt(1 - R[0, 0] + R[1, 1] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / (4 * y), (R[0, 1] + R[1, 0]) / (4 * y), y, (R[1, 2] + R[2, 1]) / (4 * y)]
    else:
        z = 0.5 * np.sqrt(1 - R[0, 0] - R[1, 1] + R[2, 2])
        q = [(R[1, 0] - R[0, 1]) / (4 * z), (R[0, 2] + R[2, 0]) / (4 * z), (R[1, 2] + R[2, 1]) / (4 * z), z]
    return np.asarray(q)


def rotvec_to_dcm(rv) -> np.ndarray:
    """Rodrigues matrix ``exp(rv x)``; series form for small angles.

    Accepts (3,) or (n, 3).
    """
    rv = np.asarray(rv, dtype=float)
    norm2 = np.sum(rv ** 2, axis=-1)
    norm4 = norm2 ** 2
    small = norm2 < 1e-6
    norm = np.sqrt(np.where(small, 1.0, norm2))
    k1 = np.where(small, 1 - norm2 / 6 + norm4 / 120, np.sin(norm) / norm)
    k2 = np.where(small, 0.5 - norm2 / 24 + norm4 / 720, (1 - np.cos(norm)) / np.where(small, 1.0, norm2))

    K = skew(rv)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + k1[..., None, None] * K + k2[..., None, None] * (K @ K)


def jbeta_decomp(beta) -> np.ndarray:
    """Matrices ``J_beta_i`` with ``[beta]+ [q]+ = s [beta]+ + sum_i eta_i J_beta_i``.

    Args:
        beta: 3-vector (treated as a vector quaternion).

    Returns:
        Array of shape (3, 4, 4) holding ``J_beta_1..3``.
    """
    b1, b2, b3 = np.asarray(beta, dtype=float)
    return np.array([
        [[-b1, 0.0, -b3, b2],
         [0.0, -b1, b2, b3],
         [b3, -b2, -b1, 0.0],
         [-b2, -b3, 0.0, -b1]],
        [[-b2, b3, 0.0, -b1],
         [-b3, -b2, -b1, 0.0],
         [0.0, b1, -b2, b3],
         [b1, 0.0, -b3, -b2]],
        [[-b3, -b2, b1, 0.0],
         [b2, -b3, 0.0, -b1],
         [-b1, 0.0, -b3, -b2],
         [0.0, b1, b2, -b3]],
    ])


def jq_decomp(q, check: bool = True) -> np.ndarray:
    """Vectors ``J_q_i`` with ``q* o beta o q = sum_i beta_i J_q_i``.

    Args:
        q: Quaternion ``[s, eta]``.
        check: Enforce the unit-norm precondition.

    Returns:
        Array of shape (3, 4); row ``i`` is ``J_q_(i+1)``.

    Raises:
        NotUnit: If ``check`` and ``q`` is not unit.
    """
    q = np.asarray(q, dtype=float)
    if check:
        _check_unit(q)
    s, e1, e2, e3 = q
    return np.array([
        [0.0, s * s + e1 * e1 - e2 * e2 - e3 * e3, 2 * e1 * e2 - 2 * s * e3, 2 * s * e2 + 2 * e1 * e3],
        [0.0, 2 * e1 * e2 + 2 * s * e3, s * s - e1 * e1 + e2 * e2 - e3 * e3, -2 * s * e1 + 2 * e2 * e3],
        [0.0, -2 * s * e2 + 2 * e1 * e3, 2 * s * e1 + 2 * e2 * e3, s * s - e1 * e1 - e2 * e2 + e3 * e3],
    ])


# ===== EULER ANGLES =====
def euler_to_dcm(euler) -> np.ndarray:
    """Body-to-nav matrix from ``[yaw, pitch, roll]`` in radians; accepts (..., 3)."""
    return Rotation.from_euler(EULER_SEQUENCE, np.asarray(euler, dtype=float)).as_matrix()


def dcm_to_euler(C_bn) -> np.ndarray:
    """``[yaw, pitch, roll]`` in radians of a body-to-nav matrix; accepts (..., 3, 3)."""
    return Rotation.from_matrix(np.asarray(C_bn, dtype=float)).as_euler(EULER_SEQUENCE)


def wrap_angle(angle) -> np.ndarray:
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2 * np.pi)


def euler_error_deg(C_est, C_true) -> np.ndarray:
    """Yaw, pitch and roll differences ``estimate - truth`` in degrees."""
    return np.rad2deg(wrap_angle(dcm_to_euler(C_est) - dcm_to_euler(C_true)))
