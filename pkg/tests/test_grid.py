"""Lattice, quadrature, and moment tests.

The frozen oracle values are standard-Gaussian moments, worked out by hand:
with E|v|^2 = 3, E|v|^4 = 15, E|v|^6 = 105 for the unit 3-D Gaussian,

    <A:A> = E|v|^4 - E|v|^4 / 3           = 10,
    <B.B> = (E|v|^6 - 10 E|v|^4 + 25 E|v|^2) / 4 = 7.5,

where A = v (x) v - |v|^2 I / 3 and B = v (|v|^2 - 5) / 2.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slabkinetics.grid import (
    DistributionField,
    MomentSet,
    SpatialMesh,
    bracket,
    build_velocity_grid,
    local_maxwellian,
    moments,
)


def traceless_stress_squared(grid):
    A = grid.nodes[:, :, None] * grid.nodes[:, None, :]
    A = A - (grid.speed2 / 3.0)[:, None, None] * np.eye(3)
    return np.einsum("kab,kab->k", A, A)


def heat_vector_squared(grid):
    B = grid.nodes * (grid.speed2 / 2.0 - 2.5)[:, None]
    return np.einsum("ka,ka->k", B, B)


class TestConstruction:
    def test_rejects_odd_and_small_counts(self):
        with pytest.raises(ValueError, match="even"):
            build_velocity_grid(9, 6.0)
        with pytest.raises(ValueError, match="even"):
            build_velocity_grid(2, 6.0)

    def test_rejects_bad_vmax(self):
        with pytest.raises(ValueError):
            build_velocity_grid(8, 0.0)
        with pytest.raises(ValueError):
            build_velocity_grid(8, float("nan"))

    def test_maxwellian_mass_is_one(self, grid16):
        total = np.sum(grid16.weights * grid16.maxwellian)
        assert total == pytest.approx(1.0, abs=1e-15)

    def test_weights_positive(self, grid16):
        assert np.all(grid16.weights > 0)

    def test_lattice_is_mirror_symmetric(self, grid12):
        assert np.array_equal(grid12.nodes[grid12.mirror], -grid12.nodes)
        assert np.array_equal(grid12.maxwellian[grid12.mirror], grid12.maxwellian)

    def test_first_moment_vanishes(self, grid16):
        flux = bracket(grid16.nodes.T, grid16)
        assert np.max(np.abs(flux)) < 1e-15

    @given(n=st.sampled_from([4, 6, 8, 10]), v_max=st.floats(3.0, 8.0))
    @settings(max_examples=25, deadline=None)
    def test_symmetry_holds_for_any_even_lattice(self, n, v_max):
        g = build_velocity_grid(n, v_max)
        assert np.array_equal(g.nodes[g.mirror], -g.nodes)
        assert np.sum(g.weights * g.maxwellian) == pytest.approx(1.0, abs=1e-14)


class TestQuadratureOracles:
    def test_second_moment(self, grid16):
        # E|v|^2 = 3 for the unit Gaussian
        assert bracket(grid16.speed2, grid16) == pytest.approx(3.0, abs=1e-4)

    def test_stress_norm(self, grid16):
        assert bracket(traceless_stress_squared(grid16), grid16) == pytest.approx(
            10.0, abs=1e-3
        )

    def test_heat_flux_norm(self, grid16):
        assert bracket(heat_vector_squared(grid16), grid16) == pytest.approx(
            7.5, abs=1e-2
        )

    def test_refinement_is_monotone(self):
        # exact value of <cos v_x> is exp(-1/2); the lattice error must fall
        # strictly as the lattice refines at fixed v_max
        errs = []
        for n in (8, 12, 16):
            g = build_velocity_grid(n, 6.0)
            errs.append(abs(bracket(np.cos(g.vx), g) - math.exp(-0.5)))
        assert errs[0] > errs[1] > errs[2]


class TestMoments:
    def test_maxwellian_has_standard_moments(self, grid16):
        m = moments(grid16.maxwellian, grid16)
        assert m.rho == pytest.approx(1.0, abs=1e-15)
        assert np.max(np.abs(m.u)) < 1e-14
        assert m.theta == pytest.approx(1.0, abs=1e-7)

    def test_shifted_maxwellian_recovers_inputs(self, grid16):
        target = MomentSet(
            rho=np.float64(0.7),
            u=np.array([0.2, -0.1, 0.05]),
            theta=np.float64(1.3),
        )
        F = local_maxwellian(target, grid16)
        m = moments(F, grid16)
        assert m.rho == pytest.approx(0.7, rel=1e-5)
        assert np.allclose(m.u, target.u, atol=1e-5)
        assert m.theta == pytest.approx(1.3, rel=1e-4)

    def test_zero_density_cell_is_reported(self, grid12):
        F = np.tile(grid12.maxwellian, (3, 1))
        F[1] = 0.0
        with pytest.raises(ValueError, match=r"cell \(1,\)"):
            moments(F, grid12)

    def test_fluctuation_functionals(self, grid16):
        ones = np.ones(grid16.size)
        m = moments(ones, grid16, fluctuation=True)
        assert m.fluctuation
        assert m.rho == pytest.approx(1.0, abs=1e-14)
        assert np.max(np.abs(m.u)) < 1e-14
        assert m.theta == pytest.approx(0.0, abs=1e-7)

        # g = (|v|^2 - 3)/2 pairs to exactly 1 through (|v|^2/3 - 1):
        # E[(|v|^2-3)^2]/6 = (15 - 18 + 9)/6 = 1
        g = (grid16.speed2 - 3.0) / 2.0
        m = moments(g, grid16, fluctuation=True)
        assert m.theta == pytest.approx(1.0, abs=1e-4)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_projection_removes_all_five_moments(self, seed):
        g = build_velocity_grid(8, 6.0)
        q = np.random.default_rng(seed).normal(size=g.size) * g.maxwellian
        p = g.project_to_invariants_complement(q)
        residual = np.abs((p * g.weights) @ g.invariants.T)
        scale = max(np.abs((q * g.weights) @ g.invariants.T).max(), 1e-30)
        assert residual.max() <= 1e-13 * max(scale, 1.0)
        again = g.project_to_invariants_complement(p)
        assert np.max(np.abs(again - p)) <= 1e-13 * max(np.abs(p).max(), 1e-30)


class TestLocalMaxwellian:
    def test_standard_moments_reproduce_cached_values_bitwise(self, grid16):
        m = MomentSet(rho=np.float64(1.0), u=np.zeros(3), theta=np.float64(1.0))
        assert np.array_equal(local_maxwellian(m, grid16), grid16.maxwellian)

    def test_rejects_nonpositive_temperature(self, grid12):
        m = MomentSet(rho=np.float64(1.0), u=np.zeros(3), theta=np.float64(-0.1))
        with pytest.raises(ValueError, match="temperature"):
            local_maxwellian(m, grid12)

    def test_rejects_nan(self, grid12):
        m = MomentSet(rho=np.float64("nan"), u=np.zeros(3), theta=np.float64(1.0))
        with pytest.raises(ValueError, match="finite"):
            local_maxwellian(m, grid12)

    @given(
        rho=st.floats(0.2, 3.0),
        ux=st.floats(-1.0, 1.0),
        theta=st.floats(0.6, 1.5),
    )
    @settings(max_examples=30, deadline=None)
    def test_positive_and_consistent(self, rho, ux, theta):
        g = build_velocity_grid(12, 6.0)
        m = MomentSet(
            rho=np.float64(rho), u=np.array([ux, 0.0, 0.0]), theta=np.float64(theta)
        )
        F = local_maxwellian(m, g)
        assert np.all(F > 0)
        got = moments(F, g)
        assert got.rho == pytest.approx(rho, rel=2e-2)
        assert got.theta == pytest.approx(theta, rel=2e-2)


class TestMeshAndField:
    def test_mesh_geometry(self):
        mesh = SpatialMesh(length=2.0, n_cells=5)
        assert mesh.dx == pytest.approx(0.4)
        assert mesh.centers[0] == pytest.approx(0.2)
        assert mesh.centers[-1] == pytest.approx(1.8)

    def test_mesh_validation(self):
        with pytest.raises(ValueError):
            SpatialMesh(length=-1.0, n_cells=4)
        with pytest.raises(ValueError):
            SpatialMesh(length=1.0, n_cells=0)

    def test_incoming_outgoing_partition(self, grid12):
        mesh = SpatialMesh(length=1.0, n_cells=3)
        left_in = mesh.incoming(grid12, "left")
        left_out = mesh.outgoing(grid12, "left")
        # even lattice: no node has v_x = 0, so the split is a partition
        assert not np.any(grid12.vx == 0.0)
        assert np.all(left_in ^ left_out)
        assert np.array_equal(left_in, mesh.outgoing(grid12, "right"))
        with pytest.raises(ValueError, match="wall"):
            mesh.incoming(grid12, "top")

    def test_field_rejects_negative_values(self, grid12):
        mesh = SpatialMesh(length=1.0, n_cells=2)
        vals = np.tile(grid12.maxwellian, (2, 1))
        vals[1, 7] = -1e-9
        with pytest.raises(ValueError, match="negative"):
            DistributionField(vals, mesh, grid12)

    def test_field_shape_check(self, grid12):
        mesh = SpatialMesh(length=1.0, n_cells=2)
        with pytest.raises(ValueError, match="shape"):
            DistributionField(np.zeros((3, grid12.size)), mesh, grid12)

    def test_maxwellian_field(self, grid12):
        mesh = SpatialMesh(length=1.0, n_cells=4)
        f = DistributionField.maxwellian(mesh, grid12)
        assert f.values.shape == (4, grid12.size)
        assert np.array_equal(f.values[2], grid12.maxwellian)
