import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from app.exceptions import NotRotation, NotUnit
from app.services import rotations
from app.services.rotations import (
    dcm_to_quat,
    jbeta_decomp,
    jq_decomp,
    pure,
    qmat,
    qminus,
    qplus,
    quat_conj,
    quat_mul,
    quat_to_dcm,
)

from .conftest import random_quat


def test_multiplication_matrices_agree_with_product(rng):
    q, p = rng.normal(size=4), rng.normal(size=4)
    np.testing.assert_allclose(qplus(q) @ p, quat_mul(q, p))
    np.testing.assert_allclose(qminus(p) @ q, quat_mul(q, p))


def test_product_against_scipy_composition(rng):
    q, p = random_quat(rng), random_quat(rng)
    # scipy stores quaternions scalar-last
    expected = (Rotation.from_quat(np.r_[q[1:], q[0]]) * Rotation.from_quat(np.r_[p[1:], p[0]])).as_quat()
    product = quat_mul(q, p)
    expected = np.r_[expected[3], expected[:3]]
    assert abs(product @ expected) == pytest.approx(1.0)


def test_plus_and_minus_matrices_commute(rng):
    q, p = rng.normal(size=4), rng.normal(size=4)
    np.testing.assert_allclose(qplus(q) @ qminus(p), qminus(p) @ qplus(q), atol=1e-12)


def test_qmat_of_identity_and_conjugate(rng):
    plus, minus = qmat([1.0, 0.0, 0.0, 0.0])
    np.testing.assert_array_equal(plus, np.eye(4))
    np.testing.assert_array_equal(minus, np.eye(4))

    q = rng.normal(size=4)
    plus, minus = qmat(q)
    np.testing.assert_allclose(plus.T, qplus(quat_conj(q)))
    np.testing.assert_allclose(minus.T, qminus(quat_conj(q)))


def test_quat_to_dcm_is_nav_to_body(rng):
    q = random_quat(rng)
    v = rng.normal(size=3)
    rotated = quat_mul(quat_mul(quat_conj(q), pure(v)), q)
    np.testing.assert_allclose(rotated[1:], quat_to_dcm(q) @ v, atol=1e-12)
    assert rotated[0] == pytest.approx(0.0, abs=1e-12)


def test_quat_to_dcm_is_transpose_of_scipy_matrix(rng):
    q = random_quat(rng)
    expected = Rotation.from_quat(np.r_[q[1:], q[0]]).as_matrix().T
    np.testing.assert_allclose(quat_to_dcm(q), expected, atol=1e-12)


def test_quat_to_dcm_rejects_non_unit():
    with pytest.raises(NotUnit):
        quat_to_dcm([1.0, 0.1, 0.0, 0.0])
    quat_to_dcm([1.0, 0.1, 0.0, 0.0], check=False)


def test_dcm_to_quat_recovers_quaternion_up_to_sign(rng):
    for _ in range(20):
        q = random_quat(rng)
        recovered = dcm_to_quat(quat_to_dcm(q))
        assert abs(recovered @ q) == pytest.approx(1.0, abs=1e-12)


def test_dcm_to_quat_for_half_turn():
    C = np.diag([1.0, -1.0, -1.0])
    q = dcm_to_quat(C)
    np.testing.assert_allclose(quat_to_dcm(q), C, atol=1e-12)


@pytest.mark.parametrize("matrix", [np.diag([1.0, 1.0, -1.0]), 1.01 * np.eye(3), np.ones((3, 3))])
def test_dcm_to_quat_rejects_improper_matrices(matrix):
    with pytest.raises(NotRotation):
        dcm_to_quat(matrix)


def test_rotvec_to_dcm_matches_scipy(rng):
    for scale in (1e-5, 0.3, 2.5):
        rv = scale * rng.normal(size=3)
        np.testing.assert_allclose(rotations.rotvec_to_dcm(rv), Rotation.from_rotvec(rv).as_matrix(), atol=1e-13)


def test_rotvec_to_dcm_accepts_stacks(rng):
    rv = rng.normal(size=(4, 3))
    np.testing.assert_allclose(rotations.rotvec_to_dcm(rv), Rotation.from_rotvec(rv).as_matrix(), atol=1e-13)


def test_jbeta_decomposition(rng):
    beta = rng.normal(size=3)
    q = rng.normal(size=4)
    J = jbeta_decomp(beta)
    expected = qplus(pure(beta)) @ qplus(q)
    np.testing.assert_allclose(q[0] * qplus(pure(beta)) + np.tensordot(q[1:], J, axes=1), expected, atol=1e-12)


def test_jq_decomposition(rng):
    q = random_quat(rng)
    beta = rng.normal(size=3)
    J = jq_decomp(q)
    expected = quat_mul(quat_mul(quat_conj(q), pure(beta)), q)
    np.testing.assert_allclose(beta @ J, expected, atol=1e-12)
    np.testing.assert_allclose(J[:, 1:].T, quat_to_dcm(q), atol=1e-12)


def test_jq_decomposition_without_unit_check_is_quadratic(rng):
    q = random_quat(rng)
    np.testing.assert_allclose(jq_decomp(3.0 * q, check=False), 9.0 * jq_decomp(q))
    with pytest.raises(NotUnit):
        jq_decomp(3.0 * q)


def test_euler_round_trip_in_reporting_sequence():
    euler = np.deg2rad([30.0, 5.0, -8.0])
    np.testing.assert_allclose(rotations.dcm_to_euler(rotations.euler_to_dcm(euler)), euler, atol=1e-12)


def test_euler_yaw_turns_about_up():
    C_bn = rotations.euler_to_dcm(np.deg2rad([90.0, 0.0, 0.0]))
    # a positive turn about up swings the forward axis from north to west
    np.testing.assert_allclose(C_bn @ [1.0, 0.0, 0.0], [0.0, 0.0, -1.0], atol=1e-12)


def test_euler_error_wraps_across_yaw_discontinuity():
    C_est = rotations.euler_to_dcm(np.deg2rad([179.9, 0.0, 0.0]))
    C_true = rotations.euler_to_dcm(np.deg2rad([-179.9, 0.0, 0.0]))
    np.testing.assert_allclose(rotations.euler_error_deg(C_est, C_true), [-0.2, 0.0, 0.0], atol=1e-9)
