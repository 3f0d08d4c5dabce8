import numpy as np
import pytest

from cathrod import rod
from cathrod.coupling import (CouplingConfig, CoupledSystem, actuation_vector, coupled_forces,
                              coupled_sparsity, coupling_point_forces, endpoint_forces,
                              lumen_forces, lumen_points, make_tendon_on_lumen, register_tendon,
                              simulate_coupled)
from cathrod.stepper import IntegratorConfig, dense_fd_jacobian
from conftest import ALONG_X

CATHETER = dict(youngs_bend=5.9e6, density=11040.0, radius=0.006, length=0.16)
TENDON = dict(youngs_bend=5.9e6, youngs_stretch=1000.0, density=10000.0, radius=1e-4,
              length=0.16, inertia_scale=1e4)
COUPLED_STEPPING = dict(timestep=0.2, fd_scheme="central", adaptive_timestep=True,
                        max_steps=3000)


def toy_system(nc=6, nt=4, force=2.0, **coupling):
    cp = rod.RodParameters(num_points=nc, **CATHETER)
    tp = rod.RodParameters(num_points=nt, **TENDON)
    cat = rod.make_rod(cp, base_orientation=ALONG_X)
    cfg = CouplingConfig(**coupling)
    return CoupledSystem(cat, cp, make_tendon_on_lumen(cat, tp, cfg), tp, cfg,
                         actuation_force=force)


class TestConfig:
    def test_weights_normalized(self):
        assert CouplingConfig(direction_weights=(3.0, 4.0)).direction_weights == (0.6, 0.8)

    @pytest.mark.parametrize("bad", [dict(direction_weights=(0, 0)), dict(lumen_constant=-1),
                                     dict(reaction_mode="mean"),
                                     dict(registration_update="always")])
    def test_invalid(self, bad):
        with pytest.raises(rod.ConfigurationError):
            CouplingConfig(**bad)


class TestLumen:
    def test_zero_offset_is_centerline(self):
        cat = rod.make_rod(rod.RodParameters(num_points=5, **CATHETER))
        np.testing.assert_array_equal(lumen_points(cat, CouplingConfig(lumen_offset=0.0)),
                                      cat.points)

    def test_offset_along_d1(self):
        cat = rod.make_rod(rod.RodParameters(num_points=5, **CATHETER))  # along z, d1 = x
        lum = lumen_points(cat, CouplingConfig(lumen_offset=0.003))
        np.testing.assert_allclose(lum - cat.points, np.tile([0.003, 0, 0], (5, 1)),
                                   atol=1e-15)

    def test_offset_along_d2(self):
        cat = rod.make_rod(rod.RodParameters(num_points=5, **CATHETER))
        lum = lumen_points(cat, CouplingConfig(lumen_offset=0.003, direction_weights=(0, 1)))
        np.testing.assert_allclose(lum - cat.points, np.tile([0, 0.003, 0], (5, 1)),
                                   atol=1e-15)


class TestRegistration:
    def test_tendon_on_lumen(self):
        s = toy_system()
        reg = register_tendon(s.tendon, lumen_points(s.catheter, s.coupling), s.catheter,
                              s.coupling)
        np.testing.assert_allclose(reg.compliance, 0, atol=1e-12)
        assert np.all((reg.parent >= 0) & (reg.parent < s.catheter.num_points - 1))
        assert not reg.constrained[-1] and reg.constrained[:-1].all()

    def test_displacement_sign(self):
        s = toy_system()
        lum = lumen_points(s.catheter, s.coupling)
        t = s.tendon.copy()
        delta = 2e-4
        t.points[1] += delta * np.array([0.0, 1.0, 0.0])  # d_t = d1 = +y
        reg = register_tendon(t, lum, s.catheter, s.coupling)
        assert reg.compliance[1] == pytest.approx(-delta, abs=1e-15)

    def test_tie_goes_to_lower_index(self):
        s = toy_system(nc=5)
        lum = lumen_points(s.catheter, s.coupling)
        t = s.tendon.copy()
        t.points[1] = 0.5 * (lum[1] + lum[2])
        reg = register_tendon(t, lum, s.catheter, s.coupling)
        assert reg.nearest[1] == 1

    def test_empty_lumen(self):
        s = toy_system()
        with pytest.raises(rod.ConfigurationError):
            register_tendon(s.tendon, np.empty((0, 3)), s.catheter, s.coupling)


class TestForces:
    def test_zero_compliance_zero_force(self):
        s = toy_system()
        reg = register_tendon(s.tendon, lumen_points(s.catheter, s.coupling), s.catheter,
                              s.coupling)
        f_t, f_c = lumen_forces(reg, s.coupling, s.catheter.num_points)
        np.testing.assert_allclose(f_t, 0, atol=1e-12)
        np.testing.assert_allclose(f_c, 0, atol=1e-12)

    def test_single_displaced_point(self):
        s = toy_system(lumen_constant=1000.0)
        t = s.tendon.copy()
        t.points[1, 1] += 1e-4
        reg = register_tendon(t, lumen_points(s.catheter, s.coupling), s.catheter, s.coupling)
        f_t, _ = lumen_forces(reg, s.coupling, s.catheter.num_points)
        assert np.linalg.norm(f_t[1]) == pytest.approx(0.1, rel=1e-9)
        assert f_t[1, 1] < 0  # back toward the lumen line

    @pytest.mark.parametrize("mode", ["average", "sum"])
    def test_reaction_modes(self, mode, rng):
        s = toy_system(nc=4, nt=8, reaction_mode=mode)
        t = s.tendon.copy()
        t.points += 1e-4 * rng.standard_normal(t.points.shape)
        reg = register_tendon(t, lumen_points(s.catheter, s.coupling), s.catheter, s.coupling)
        f_t, f_c = lumen_forces(reg, s.coupling, s.catheter.num_points)
        if mode == "sum":
            assert np.max(np.abs(f_t.sum(axis=0) + f_c.sum(axis=0))) < 1e-12
        else:
            j = reg.nearest[0]
            kids = np.nonzero(reg.constrained & (reg.nearest == j))[0]
            np.testing.assert_allclose(f_c[j], -f_t[kids].mean(axis=0), atol=1e-15)

    def test_endpoint_rest_and_stretch(self):
        s = toy_system(endpoint_coupling_constant=2e5)
        ep = endpoint_forces(s)
        assert np.linalg.norm(ep.compliance_force) < 1e-12
        assert np.linalg.norm(ep.coupling_force) < 1e-9
        t = s.tendon.copy()
        sep = t.points[-1] - s.catheter.points[-1]
        t.points[-1] += 1e-5 * sep / np.linalg.norm(sep)
        moved = CoupledSystem(s.catheter, s.catheter_params, t, s.tendon_params, s.coupling)
        ep = endpoint_forces(moved)
        assert np.linalg.norm(ep.coupling_force) == pytest.approx(2e5 * 1e-5, rel=1e-6)
        assert ep.coupling_gap == pytest.approx(1e-5, rel=1e-6)

    def test_coincident_endpoints(self):
        s = toy_system()
        t = s.tendon.copy()
        t.points[-1] = s.catheter.points[-1]
        moved = CoupledSystem(s.catheter, s.catheter_params, t, s.tendon_params, s.coupling)
        np.testing.assert_array_equal(endpoint_forces(moved).coupling_force, 0)

    def test_decoupled_limit(self, rng):
        s = toy_system(force=0.0, lumen_constant=0.0, endpoint_compliance_constant=0.0,
                       endpoint_coupling_constant=0.0)
        t = s.tendon.copy()
        t.points += 1e-4 * rng.standard_normal(t.points.shape)
        s = CoupledSystem(s.catheter, s.catheter_params, t, s.tendon_params, s.coupling,
                          actuation_force=0.0)
        f = coupled_forces(s)
        bc = rod.BoundaryConditions()
        fc = rod.assemble_forces(s.catheter, s.catheter_params, bc)
        fp, fq = rod.internal_forces(t.points, t.quaternions, s.tendon_params)
        np.testing.assert_allclose(f, np.concatenate([fc, rod.pack(fp, fq)]), atol=1e-12)

    @pytest.mark.parametrize("site", ["distal", "proximal"])
    def test_actuation_magnitude(self, site):
        s = toy_system()
        s = CoupledSystem(s.catheter, s.catheter_params, s.tendon, s.tendon_params, s.coupling,
                          actuation_force=2.0, actuation_site=site)
        idx, fa = actuation_vector(s)
        assert idx == (0 if site == "proximal" else s.tendon.num_points - 1)
        assert np.linalg.norm(fa) == pytest.approx(2.0, rel=1e-12)
        if site == "distal":
            np.testing.assert_allclose(fa / 2.0, [-1.0, 0.0, 0.0], atol=1e-12)

    def test_sum_mode_pairs_cancel(self, rng):
        s = toy_system(reaction_mode="sum")
        t = s.tendon.copy()
        t.points += 1e-4 * rng.standard_normal(t.points.shape)
        s = CoupledSystem(s.catheter, s.catheter_params, t, s.tendon_params, s.coupling)
        assert np.max(np.abs(coupling_point_forces(s).net)) < 1e-12


class TestSparsity:
    def test_decoupled_two_bands(self):
        s = toy_system(force=0.0, lumen_constant=0.0, endpoint_compliance_constant=0.0,
                       endpoint_coupling_constant=0.0)
        pat = coupled_sparsity(s, np.arange(s.tendon.num_points))
        off = s.n_catheter
        mask = pat.to_mask()
        assert not mask[:off, off:].any() and not mask[off:, :off].any()

    def test_parent_columns_in_tendon_rows(self):
        s = toy_system()
        reg = register_tendon(s.tendon, lumen_points(s.catheter, s.coupling), s.catheter,
                              s.coupling)
        mask = coupled_sparsity(s, reg.nearest).to_mask()
        cp, cq = rod.layout_indices(s.catheter.num_points)
        tp, _ = rod.layout_indices(s.tendon.num_points)
        for i in range(s.tendon.num_points - 1):
            rows = tp[i] + s.n_catheter
            cols = np.concatenate([cp[reg.nearest[i]], cq[reg.parent[i]]])
            assert mask[np.ix_(rows, cols)].all()

    @pytest.mark.parametrize("site", ["distal", "proximal"])
    def test_contains_dense_structure(self, site, rng):
        s = toy_system(nc=4, nt=4)
        t = s.tendon.copy()
        t.points += 2e-4 * rng.standard_normal(t.points.shape)
        c = s.catheter.copy()
        c.points[1:] += 1e-4 * rng.standard_normal(c.points[1:].shape)
        s = CoupledSystem(c, s.catheter_params, t, s.tendon_params, s.coupling,
                          actuation_force=2.0, actuation_site=site)
        reg = register_tendon(t, lumen_points(c, s.coupling), c, s.coupling)
        x0 = s.coordinates()

        def force(x):
            return coupled_forces(s.with_coordinates(x), reg.nearest)

        J = dense_fd_jacobian(force, x0, scheme="central")
        structural = np.abs(J) > 1e-9 * np.max(np.abs(J))
        mask = coupled_sparsity(s, reg.nearest).to_mask()
        assert not np.any(structural & ~mask)


class TestSimulation:
    def test_no_pull_stays_straight(self):
        s = toy_system(nc=8, nt=5, force=0.0)
        out = simulate_coupled(s, IntegratorConfig(**COUPLED_STEPPING))
        assert out.equilibrium.converged
        tip = out.system.catheter.points[-1]
        assert np.hypot(tip[1], tip[2]) < 1e-6 * 0.16

    def test_sum_mode_net_force_every_evaluation(self):
        s = toy_system(nc=8, nt=5, force=2.0, reaction_mode="sum")
        cfg = IntegratorConfig(**{**COUPLED_STEPPING, "max_steps": 15})
        out = simulate_coupled(s, cfg, ramp_time=4.0)
        assert out.max_net_coupling_force < 1e-12
        assert out.system.catheter.points[-1, 1] > 0  # bends toward the lumen side
