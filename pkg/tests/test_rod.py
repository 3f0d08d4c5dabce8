import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cathrod import rod
from cathrod.frame import axis_angle_quaternion
from cathrod.kernels import DegenerateGeometryError
from conftest import ALONG_X, perturbed_state, cantilever_params


def arc_state(params, R):
    l = params.length / (params.num_points - 1)
    th = np.arange(params.num_points) * l / R
    pts = np.column_stack([R * np.sin(th), R * (1 - np.cos(th)), 0 * th])
    mid = 0.5 * (th[:-1] + th[1:])
    quats = np.array([rod.orientation_quaternion([np.cos(a), np.sin(a), 0],
                                                 [-np.sin(a), np.cos(a), 0]) for a in mid])
    return rod.RodState(pts, quats)


def rotate(state, q):
    from cathrod.frame import directors_from_quaternion
    R = directors_from_quaternion(q).as_matrix()
    x, y, z, w = q
    # left-multiply each quaternion by q (real part last)
    def mul(a):
        a1, a2, a3, a4 = a
        return np.array([w * a1 + x * a4 + y * a3 - z * a2,
                         w * a2 - x * a3 + y * a4 + z * a1,
                         w * a3 + x * a2 - y * a1 + z * a4,
                         w * a4 - x * a1 - y * a2 - z * a3])
    return rod.RodState(state.points @ R.T, np.array([mul(a) for a in state.quaternions]))


class TestParameters:
    def test_corrected_tensor(self):
        p = cantilever_params()
        r4 = np.pi * 0.006 ** 4
        np.testing.assert_allclose(p.stiffness_tensor,
                                   [5.9e6 * r4 / 4, 5.9e6 * r4 / 4, 5.9e6 / 3 * r4 / 2])

    def test_corde_tensor_ratio(self):
        ratio = cantilever_params(stiffness_variant="corde-original").stiffness_tensor \
            / cantilever_params().stiffness_tensor
        np.testing.assert_allclose(ratio, 1 / 0.006 ** 2)

    @pytest.mark.parametrize("bad", [dict(radius=0.0), dict(density=-1.0),
                                     dict(stiffness_variant="x"), dict(inertia_scale=0.0),
                                     dict(penalty_constant=-1.0), dict(youngs_bend=np.nan)])
    def test_invalid(self, bad):
        with pytest.raises(rod.ConfigurationError):
            cantilever_params(40, **bad)

    def test_minimum_n_message(self):
        with pytest.raises(rod.ConfigurationError, match="minimum N=3"):
            cantilever_params(2)


class TestMakeRod:
    def test_three_points_along_z(self):
        s = rod.make_rod(cantilever_params(3))
        np.testing.assert_allclose(s.points, [[0, 0, 0], [0, 0, 0.06], [0, 0, 0.12]],
                                   atol=1e-15)

    @pytest.mark.parametrize("n", [3, 10, 40])
    def test_rest_energy_and_length(self, n):
        p = cantilever_params(n)
        s = rod.make_rod(p, base_orientation=ALONG_X)
        assert rod.total_energy(s, p) < 1e-20
        assert abs(rod.centerline_length(s.points) - p.length) < 1e-12
        np.testing.assert_array_equal(s.point_velocities, 0)

    def test_zero_orientation_rejected(self):
        with pytest.raises(rod.ConfigurationError):
            rod.make_rod(cantilever_params(5), base_orientation=(0, 0, 0, 0))


class TestEnergies:
    def test_uniform_strain(self):
        p = cantilever_params(11)
        s = rod.make_rod(p)
        s.points *= 1.01
        expected = 0.5 * p.stretch_stiffness * 0.01 ** 2 * p.length
        assert rod.stretch_energy(s, p) == pytest.approx(expected, rel=1e-9)

    def test_axial_displacement_increases_stretch(self):
        p = cantilever_params(6)
        base = rod.make_rod(p)
        energies = []
        for eps in (0.0, 1e-5, 1e-4, 1e-3):
            s = base.copy()
            s.points[3, 2] += eps
            energies.append(rod.stretch_energy(s, p))
        assert np.all(np.diff(energies) > 0)

    def test_perpendicular_tangent_penalty(self):
        p = cantilever_params(3)
        s = rod.make_rod(p)  # d3 = z
        s.points[2] = s.points[1] + [p.length / 2, 0, 0]
        contribution = 0.5 * p.penalty_constant * (p.length / 2) * 2.0
        assert rod.penalty_energy(s, p) == pytest.approx(contribution, rel=1e-12)

    def test_coincident_points_rejected(self):
        p = cantilever_params(4)
        s = rod.make_rod(p)
        s.points[2] = s.points[1]
        with pytest.raises(DegenerateGeometryError):
            rod.penalty_energy(s, p)

    def test_arc_energy_matches_discrete_span(self):
        p = cantilever_params(40)
        R = 0.12
        s = arc_state(p, R)
        l = p.length / (p.num_points - 1)
        K = p.stiffness_tensor[0]
        assert rod.bend_energy(s, p) == pytest.approx(0.5 * K * (p.length - l) / R ** 2,
                                                      rel=1e-3)
        assert rod.penalty_energy(s, p) < 1e-20

    def test_arc_energy_converges_in_n(self):
        R = 0.12
        errors = []
        for n in (10, 40, 160):
            p = cantilever_params(n)
            exact = 0.5 * p.stiffness_tensor[0] * p.length / R ** 2
            errors.append(abs(rod.bend_energy(arc_state(p, R), p) / exact - 1))
        assert errors[0] > errors[1] > errors[2]
        assert errors[2] < 0.01

    def test_corde_energy_ratio(self):
        p = cantilever_params(20)
        q = cantilever_params(20, stiffness_variant="corde-original")
        s = arc_state(p, 0.1)
        assert rod.bend_energy(s, q) / rod.bend_energy(s, p) == pytest.approx(1 / 0.006 ** 2,
                                                                              rel=1e-12)

    @given(st.integers(0, 10 ** 6))
    def test_nonnegative_and_zero_only_at_rest(self, seed):
        p = cantilever_params(8)
        s = perturbed_state(p, np.random.default_rng(seed))
        assert rod.total_energy(s, p) > 0
        terms = rod.energy_terms(s, p)
        assert np.all(terms >= 0)

    @given(st.integers(0, 10 ** 6))
    def test_rigid_motion_invariance(self, seed):
        rng = np.random.default_rng(seed)
        p = cantilever_params(8)
        s = perturbed_state(p, rng)
        e0 = rod.total_energy(s, p)
        moved = rod.RodState(s.points + rng.standard_normal(3), s.quaternions)
        assert abs(rod.total_energy(moved, p) - e0) < 1e-9
        q = axis_angle_quaternion(rng.standard_normal(3), rng.uniform(0, np.pi))
        assert abs(rod.total_energy(rotate(s, q), p) - e0) < 1e-9


class TestForces:
    def test_rest_state_no_loads(self):
        p = cantilever_params(10)
        s = rod.make_rod(p, base_orientation=ALONG_X)
        np.testing.assert_allclose(rod.assemble_forces(s, p, rod.BoundaryConditions()), 0,
                                   atol=1e-9)

    @given(st.integers(0, 10 ** 6))
    def test_internal_point_forces_sum_to_zero(self, seed):
        p = cantilever_params(8)
        s = perturbed_state(p, np.random.default_rng(seed))
        fp, _ = rod.internal_forces(s.points, s.quaternions, p)
        scale = np.max(np.abs(fp))
        assert np.max(np.abs(fp.sum(axis=0))) <= 1e-9 * scale

    def test_clamped_coordinates_zeroed(self, rng):
        p = cantilever_params(6)
        s = perturbed_state(p, rng)
        bc = rod.BoundaryConditions(point_loads=[(5, (0.0, -1.0, 0.0))])
        f = rod.assemble_forces(s, p, bc)
        np.testing.assert_array_equal(f[~bc.free_mask(6)], 0)
        assert np.any(f[bc.free_mask(6)] != 0)

    def test_point_load_and_gravity(self):
        p = cantilever_params(5)
        s = rod.make_rod(p, base_orientation=ALONG_X)
        bc = rod.BoundaryConditions(point_loads=[(4, (0.0, -2.0, 0.0))], gravity=(0, -9.8, 0),
                                    clamped_base=False)
        f = rod.assemble_forces(s, p, bc)
        pidx, _ = rod.layout_indices(5)
        m = rod.point_masses(p)
        np.testing.assert_allclose(f[pidx][:, 1], -9.8 * m + np.array([0, 0, 0, 0, -2.0]))

    def test_bad_load_index(self):
        with pytest.raises(rod.ConfigurationError):
            rod.BoundaryConditions(point_loads=[(7, (0, 0, 1))]).validate(5)


class TestMass:
    def test_mass_conservation_and_lumping(self):
        p = cantilever_params(11)
        m = rod.point_masses(p)
        total = p.density * np.pi * p.radius ** 2 * p.length
        assert m.sum() == pytest.approx(total, rel=1e-12)
        assert m[3] == pytest.approx(total / 10, rel=1e-12)
        assert m[0] == pytest.approx(m[3] / 2, rel=1e-12)

    def test_layout_and_inertia_scale(self):
        p = cantilever_params(4)
        M = rod.mass_matrix(p)
        assert len(M) == p.ndof == 24
        pidx, qidx = rod.layout_indices(4)
        np.testing.assert_allclose(M[pidx][:, 0], rod.point_masses(p))
        np.testing.assert_allclose(M[qidx][:, 0], rod.quaternion_masses(p))
        np.testing.assert_allclose(rod.mass_matrix(p.with_(inertia_scale=10.0)), 10 * M)

    def test_pack_round_trip(self, rng):
        pts, qs = rng.standard_normal((5, 3)), rng.standard_normal((4, 4))
        p2, q2 = rod.unpack(rod.pack(pts, qs), 5)
        np.testing.assert_array_equal(p2, pts)
        np.testing.assert_array_equal(q2, qs)
