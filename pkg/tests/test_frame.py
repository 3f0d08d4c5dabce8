import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cathrod.frame import (B_MATERIAL, B_REFERENCE, DegenerateQuaternionError, b_matrices,
                           director_components, directors_batch, directors_from_quaternion,
                           material_rates, quaternion_from_matrix)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
quaternions = arrays(float, 4, elements=finite).filter(lambda q: q @ q > 1e-3)


def _reference_rotation(q):
    x, y, z, w = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


class TestDirectors:
    def test_identity(self):
        f = directors_from_quaternion([0, 0, 0, 1])
        np.testing.assert_allclose(f.as_matrix(), np.eye(3), atol=1e-15)

    def test_quarter_turn_about_z(self):
        s = np.sin(np.pi / 4)
        f = directors_from_quaternion([0, 0, s, s])
        np.testing.assert_allclose(f.d1, [0, 1, 0], atol=1e-15)
        np.testing.assert_allclose(f.d2, [-1, 0, 0], atol=1e-15)
        np.testing.assert_allclose(f.d3, [0, 0, 1], atol=1e-15)

    def test_zero_quaternion_rejected(self):
        with pytest.raises(DegenerateQuaternionError):
            directors_from_quaternion([0, 0, 0, 0])
        with pytest.raises(DegenerateQuaternionError):
            directors_batch(np.zeros((2, 4)))

    def test_random_unit_gram_is_identity(self, rng):
        for q in rng.standard_normal((20, 4)):
            q /= np.linalg.norm(q)
            D = directors_from_quaternion(q).as_matrix()
            np.testing.assert_allclose(D.T @ D, np.eye(3), atol=1e-12)

    @given(quaternions)
    def test_right_handed_orthonormal(self, q):
        D = directors_from_quaternion(q).as_matrix()
        np.testing.assert_allclose(D.T @ D, np.eye(3), atol=1e-9)
        assert np.linalg.det(D) == pytest.approx(1.0, abs=1e-9)

    @given(quaternions)
    def test_matches_standard_rotation_matrix(self, q):
        np.testing.assert_allclose(directors_from_quaternion(q).as_matrix(),
                                   _reference_rotation(q), atol=1e-12)

    @given(quaternions, st.floats(0.1, 10))
    def test_scale_invariant(self, q, s):
        np.testing.assert_allclose(directors_from_quaternion(s * q).as_matrix(),
                                   directors_from_quaternion(q).as_matrix(), atol=1e-12)

    @given(arrays(float, (5, 4), elements=finite).filter(
        lambda a: np.all(np.einsum("ij,ij->i", a, a) > 1e-3)))
    def test_batch_matches_single(self, qs):
        batch = directors_batch(qs)
        for q, D in zip(qs, batch):
            f = directors_from_quaternion(q)
            np.testing.assert_allclose(D, np.stack([f.d1, f.d2, f.d3]), atol=1e-13)

    def test_components_are_quadratic(self, rng):
        q = rng.standard_normal(4)
        np.testing.assert_allclose(director_components(3.0 * q), 9.0 * director_components(q),
                                   rtol=1e-13)

    @given(quaternions)
    def test_quaternion_from_matrix_round_trip(self, q):
        D = directors_from_quaternion(q).as_matrix()
        q2 = quaternion_from_matrix(D)
        np.testing.assert_allclose(directors_from_quaternion(q2).as_matrix(), D, atol=1e-12)


class TestBMatrices:
    def test_six_skew_symmetric(self):
        mats = b_matrices()
        assert len(mats) == 6
        for B in mats:
            np.testing.assert_array_equal(B + B.T, 0)

    def test_b3_first_row(self):
        np.testing.assert_array_equal(b_matrices()[2][0], [0, 1, 0, 0])

    def test_read_only(self):
        with pytest.raises(ValueError):
            B_MATERIAL[0][0, 0] = 1.0

    @given(quaternions)
    def test_quadratic_form_vanishes(self, q):
        for B in (*B_MATERIAL, *B_REFERENCE):
            assert abs(B @ q @ q) < 1e-12 * (1 + q @ q)


class TestMaterialRates:
    def test_zero_rates(self):
        r = material_rates([0.1, 0.2, 0.3, 0.9], np.zeros(4), np.zeros(4))
        for v in (r.u, r.omega, r.omega0):
            np.testing.assert_array_equal(v, 0)

    def test_zero_quaternion_rejected(self):
        with pytest.raises(DegenerateQuaternionError):
            material_rates(np.zeros(4), np.ones(4), np.ones(4))

    @given(quaternions, arrays(float, 4, elements=finite), st.floats(0.1, 10))
    def test_homogeneous_degree_zero(self, q, dq, s):
        u1 = material_rates(q, dq, dq).u
        u2 = material_rates(s * q, s * dq, s * dq).u
        np.testing.assert_allclose(u2, u1, rtol=1e-10, atol=1e-10)

    @given(quaternions, arrays(float, 4, elements=finite), arrays(float, 4, elements=finite))
    def test_linear_in_derivative(self, q, a, b):
        ua = material_rates(q, a, b).u
        ub = material_rates(q, b, a).u
        uab = material_rates(q, a + b, a).u
        np.testing.assert_allclose(uab, ua + ub, rtol=1e-9, atol=1e-9)

    def test_circular_arc_curvature(self):
        R = 0.05

        def q_of(s):
            # rotation by s/R about d2 keeps the arc in the d1-d3 plane
            a = s / R
            return np.array([0.0, np.sin(a / 2), 0.0, np.cos(a / 2)])

        s, ds = 0.013, 1e-6
        dq = (q_of(s + ds) - q_of(s - ds)) / (2 * ds)
        u = material_rates(q_of(s), dq, np.zeros(4)).u
        assert abs(np.hypot(u[0], u[1]) - 1 / R) < 1e-6 * (1 / R)
        assert abs(u[2]) < 1e-9
