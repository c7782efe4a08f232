"""Collision operator tests.

The brute-force entropy-production oracle below re-implements the pair sum
from the definition with a different interpolation code path (searchsorted +
corner enumeration), so agreement with the engine is a genuine cross-check
rather than the same code run twice.  The two-bump values are then frozen as
regression locks.
"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slabkinetics.collision import (
    KernelSpec,
    ResourceLimitError,
    angular_quadrature,
    apply_collision,
    build_kernel,
    conservation_project,
    discrete_maxwellian,
    dissipation,
)
from slabkinetics.grid import (
    MomentSet,
    build_velocity_grid,
    local_maxwellian,
    moments,
)

# frozen engine outputs for the two-bump profile (hard sphere, defaults);
# derived once against the brute-force oracle and locked
TWO_BUMP_D_N8 = 2.0143988747668464
TWO_BUMP_D_N12 = 1.3525911899556076


def two_bump(grid):
    a = MomentSet(rho=np.float64(0.6), u=np.array([1.2, 0.0, 0.0]), theta=np.float64(0.8))
    b = MomentSet(rho=np.float64(0.4), u=np.array([-1.5, 0.3, 0.0]), theta=np.float64(1.1))
    return local_maxwellian(a, grid) + local_maxwellian(b, grid)


def interp_ratio(f, pts, grid):
    """Trilinear read of node values at arbitrary points, zero off the hull.

    Independent implementation: locates cells with searchsorted and loops
    over the 8 corners explicitly.
    """
    n = grid.n_per_axis
    cells = np.searchsorted(grid.axis, pts, side="right") - 1
    inside = np.all((cells >= 0) & (cells <= n - 2), axis=-1)
    cells = np.clip(cells, 0, n - 2)
    frac = (pts - grid.axis[cells]) / grid.dv
    out = np.zeros(pts.shape[:-1])
    for corner in itertools.product((0, 1), repeat=3):
        weight = np.ones(pts.shape[:-1])
        flat = np.zeros(pts.shape[:-1], dtype=np.int64)
        for ax, bit in enumerate(corner):
            weight = weight * (frac[..., ax] if bit else 1.0 - frac[..., ax])
            flat = flat * n + (cells[..., ax] + bit)
        out += weight * f[flat]
    return np.where(inside, out, 0.0), inside


def brute_force_dissipation(F, grid, gamma=1.0, band_n=20.0, order=3):
    """Entropy production straight from the definition, fully vectorized."""
    mu, wmu = np.polynomial.legendre.leggauss(order)
    phi = (np.arange(2 * order) + 0.5) * np.pi / order
    sin_th = np.sqrt(1.0 - mu**2)
    omegas = np.stack(
        np.meshgrid(mu, phi, indexing="ij"), axis=-1
    )  # placeholder to build pairs below
    dirs = []
    weights = []
    for k, m in enumerate(mu):
        for p in phi:
            dirs.append([sin_th[k] * np.cos(p), sin_th[k] * np.sin(p), m])
            weights.append(wmu[k] * np.pi / order)
    dirs = np.array(dirs)
    weights = np.array(weights)  # sums to 4 pi

    f = F / grid.maxwellian
    diff = grid.nodes[:, None, :] - grid.nodes[None, :, :]
    r = np.sqrt(np.sum(diff**2, axis=-1))
    kern = np.where((r >= 1.0 / band_n) & (r <= band_n), r**gamma, 0.0)
    mid = 0.5 * (grid.nodes[:, None, :] + grid.nodes[None, :, :])
    mprod = grid.maxwellian[:, None] * grid.maxwellian[None, :]
    wprod = grid.weights[:, None] * grid.weights[None, :]
    loss_f = f[:, None] * f[None, :]

    total = 0.0
    floor = 1e-300
    for q in range(dirs.shape[0]):
        off = 0.5 * r[..., None] * dirs[q]
        fp, in_p = interp_ratio(f, mid + off, grid)
        fs, in_s = interp_ratio(f, mid - off, grid)
        ga = mprod * fp * fs
        lo = mprod * loss_f
        live = (in_p & in_s) & ((ga > floor) | (lo > floor))
        term = (ga - lo) * np.log(np.maximum(ga, floor) / np.maximum(lo, floor))
        total += weights[q] / (4.0 * np.pi) * np.sum(
            np.where(live, wprod * kern * term, 0.0)
        )
    return 0.25 * total


class TestKernelSpec:
    def test_gamma_range_enforced(self):
        with pytest.raises(ValueError, match=r"-3 < gamma <= 1"):
            KernelSpec(family="vhs", gamma=2.0)
        with pytest.raises(ValueError, match=r"-3 < gamma <= 1"):
            KernelSpec(family="vhs", gamma=-3.0)
        KernelSpec(family="vhs", gamma=-2.9)  # admissible

    def test_family_gamma_resolution(self):
        assert KernelSpec(family="hard_sphere").resolved_gamma == 1.0
        assert KernelSpec(family="maxwell").resolved_gamma == 0.0

    def test_bgk_needs_positive_tau(self):
        with pytest.raises(ValueError, match="tau"):
            KernelSpec(family="bgk", tau=0.0)

    def test_unknown_family(self):
        with pytest.raises(ValueError, match="family"):
            KernelSpec(family="landau")

    def test_angular_and_band_validation(self):
        with pytest.raises(ValueError, match="angular_order"):
            KernelSpec(family="hard_sphere", angular_order=0)
        with pytest.raises(ValueError, match="truncation_n"):
            KernelSpec(family="hard_sphere", truncation_n=0)


class TestBuildKernel:
    def test_band_mask(self):
        g = build_velocity_grid(8, 6.0)
        eng = build_kernel(KernelSpec(family="hard_sphere", truncation_n=4), g)
        diff = g.nodes[:, None, :] - g.nodes[None, :, :]
        r = np.sqrt(np.sum(diff**2, axis=-1))
        assert np.all(eng.pair_kernel[r > 4.0] == 0.0)
        assert np.all(eng.pair_kernel[r < 0.25] == 0.0)
        assert np.all(eng.pair_kernel >= 0.0)

    def test_maxwell_kernel_is_distance_free(self):
        g = build_velocity_grid(8, 6.0)
        eng = build_kernel(KernelSpec(family="maxwell"), g)
        live = eng.pair_kernel != 0.0
        assert np.all(eng.pair_kernel[live] == 1.0)

    def test_collision_frequency_positive_and_growing(self, grid12):
        eng = build_kernel(KernelSpec(family="hard_sphere"), grid12)
        a = eng.collision_frequency
        assert np.all(a > 0.0)
        # walk outward along the x axis at the smallest |v_y|, |v_z|
        n = grid12.n_per_axis
        iy = iz = n // 2
        line = [a[(ix * n + iy) * n + iz] for ix in range(n // 2, n)]
        assert np.all(np.diff(line) > 0)

    def test_memory_cap(self, grid12):
        with pytest.raises(ResourceLimitError, match="bytes"):
            build_kernel(KernelSpec(family="hard_sphere"), grid12, memory_cap_bytes=1000)

    def test_truncation_band_is_monotone(self):
        g = build_velocity_grid(6, 6.0)
        masks = {}
        for n_band in (1, 2, 5, 11):
            eng = build_kernel(KernelSpec(family="hard_sphere", truncation_n=n_band), g)
            masks[n_band] = eng.pair_kernel != 0.0
        assert np.all(masks[1] <= masks[2])
        assert np.all(masks[2] <= masks[5])
        assert np.all(masks[5] <= masks[11])

    def test_bgk_builds_without_tables(self, grid12):
        eng = build_kernel(KernelSpec(family="bgk", tau=0.5), grid12)
        assert eng.is_bgk and eng.pair_kernel is None


class TestAngularQuadrature:
    def test_normalization_and_symmetry(self):
        dirs, w = angular_quadrature(3)
        assert w.sum() == pytest.approx(1.0, abs=1e-14)
        assert np.allclose(np.sum(dirs**2, axis=-1), 1.0, atol=1e-14)
        # second moments of the uniform sphere measure: <w_a w_b> = delta/3
        second = (dirs * w[:, None]).T @ dirs
        assert np.allclose(second, np.eye(3) / 3.0, atol=1e-14)
        assert np.max(np.abs(w @ dirs)) < 1e-14


class TestApplyCollision:
    def test_equilibrium_defect_small_and_conservative(self, grid12):
        eng = build_kernel(KernelSpec(family="hard_sphere"), grid12)
        q = apply_collision(eng, grid12.maxwellian)
        l1 = np.sum(grid12.weights * np.abs(q))
        assert l1 <= 1e-3
        mom = (q * grid12.weights) @ grid12.invariants.T
        assert np.max(np.abs(mom)) < 1e-15

    def test_projected_moments_vanish_for_random_data(self, grid8, rng):
        eng = build_kernel(KernelSpec(family="hard_sphere"), grid8)
        F = grid8.maxwellian * rng.uniform(0.5, 2.0, grid8.size)
        q = apply_collision(eng, F)
        mom = (q * grid8.weights) @ grid8.invariants.T
        assert np.max(np.abs(mom)) < 1e-14

    def test_damping_is_exact_scalar(self, grid8):
        F = two_bump(grid8)
        on = apply_collision(build_kernel(KernelSpec(family="hard_sphere"), grid8), F)
        off = apply_collision(
            build_kernel(KernelSpec(family="hard_sphere", damping=False), grid8), F
        )
        rho = float(F @ grid8.weights)
        assert np.array_equal(on, off * (1.0 / (1.0 + rho / 20.0)))

    def test_rejects_negative_input(self, grid8):
        eng = build_kernel(KernelSpec(family="hard_sphere"), grid8)
        F = grid8.maxwellian.copy()
        F[3] = -1e-12
        with pytest.raises(ValueError, match="nonnegative"):
            apply_collision(eng, F)

    def test_bgk_annihilates_sampled_maxwellians(self, grid12):
        eng = build_kernel(KernelSpec(family="bgk", tau=0.5), grid12)
        m = MomentSet(rho=np.float64(0.8), u=np.array([0.3, -0.2, 0.1]), theta=np.float64(1.2))
        F = local_maxwellian(m, grid12)
        q = apply_collision(eng, F)
        assert np.max(np.abs(q)) < 1e-13

    def test_bgk_moment_fixity(self, grid12, rng):
        eng = build_kernel(KernelSpec(family="bgk", tau=0.7), grid12)
        F = grid12.maxwellian * rng.uniform(0.5, 1.5, grid12.size)
        q = apply_collision(eng, F)
        dt = 0.37
        before = moments(F, grid12)
        after = moments(F + dt * q, grid12)
        assert after.rho == pytest.approx(before.rho, rel=1e-14)
        assert np.allclose(after.u, before.u, atol=1e-14)
        assert after.theta == pytest.approx(before.theta, rel=1e-13)


class TestConservationProject:
    def test_orthogonal_input_unchanged(self, grid8, rng):
        q = rng.normal(size=grid8.size) * grid8.maxwellian
        q0 = grid8.project_to_invariants_complement(q)
        again = conservation_project(grid8, q0)
        assert np.allclose(again, q0, atol=1e-15 * np.abs(q0).max())

    def test_pure_mass_purged(self, grid12):
        out = conservation_project(grid12, grid12.maxwellian)
        mom = (out * grid12.weights) @ grid12.invariants.T
        assert np.max(np.abs(mom)) < 1e-15

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=15, deadline=None)
    def test_idempotent(self, seed):
        g = build_velocity_grid(6, 5.0)
        q = np.random.default_rng(seed).normal(size=g.size)
        once = conservation_project(g, q)
        twice = conservation_project(g, once)
        assert np.allclose(twice, once, atol=1e-13 * max(np.abs(once).max(), 1e-30))


class TestDissipation:
    def test_equilibrium_produces_nothing(self, grid12):
        eng = build_kernel(KernelSpec(family="hard_sphere"), grid12)
        assert dissipation(eng, grid12.maxwellian) == pytest.approx(0.0, abs=1e-8)

    def test_scaled_maxwellian_produces_nothing(self, grid8):
        eng = build_kernel(KernelSpec(family="hard_sphere"), grid8)
        assert dissipation(eng, 2.5 * grid8.maxwellian) == pytest.approx(0.0, abs=1e-8)

    def test_two_bump_matches_brute_force_oracle(self, grid8):
        eng = build_kernel(KernelSpec(family="hard_sphere"), grid8)
        F = two_bump(grid8)
        got = dissipation(eng, F)
        want = brute_force_dissipation(F, grid8)
        # the engine's compiled sum reassociates; agreement to 8 digits is
        # the cross-check, exact equality is not expected
        assert got == pytest.approx(want, rel=1e-8)
        assert got == pytest.approx(TWO_BUMP_D_N8, rel=1e-6)

    def test_two_bump_regression_lock_n12(self, grid12):
        eng = build_kernel(KernelSpec(family="hard_sphere"), grid12)
        got = dissipation(eng, two_bump(grid12))
        assert got > 0.0
        assert got == pytest.approx(TWO_BUMP_D_N12, rel=1e-6)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=12, deadline=None)
    def test_nonnegative_on_random_data(self, seed):
        g = build_velocity_grid(8, 6.0)
        eng = build_kernel(KernelSpec(family="hard_sphere"), g)
        r = np.random.default_rng(seed)
        F = g.maxwellian * r.uniform(0.0, 2.0, g.size)
        F[r.integers(0, g.size, 5)] = 0.0  # sprinkle vacuum nodes
        assert dissipation(eng, F) >= 0.0

    def test_bgk_dissipation_sign_and_zero(self, grid12, rng):
        eng = build_kernel(KernelSpec(family="bgk", tau=0.5), grid12)
        m = MomentSet(rho=np.float64(1.1), u=np.array([0.2, 0.0, -0.3]), theta=np.float64(0.9))
        assert dissipation(eng, local_maxwellian(m, grid12)) == pytest.approx(0.0, abs=1e-12)
        F = grid12.maxwellian * rng.uniform(0.5, 1.5, grid12.size)
        assert dissipation(eng, F) > 0.0


class TestDiscreteMaxwellian:
    def test_matches_moments_exactly(self, grid12):
        target = MomentSet(
            rho=np.float64(0.85), u=np.array([0.25, -0.15, 0.05]), theta=np.float64(1.15)
        )
        F = discrete_maxwellian(target, grid12)
        got = moments(F, grid12)
        assert got.rho == pytest.approx(0.85, abs=1e-13)
        assert np.allclose(got.u, target.u, atol=1e-13)
        assert got.theta == pytest.approx(1.15, abs=1e-13)

    def test_works_on_coarse_lattice(self):
        g = build_velocity_grid(4, 4.0)
        target = MomentSet(rho=np.float64(1.0), u=np.array([0.1, 0.0, 0.0]), theta=np.float64(1.0))
        F = discrete_maxwellian(target, g)
        got = moments(F, g)
        assert got.rho == pytest.approx(1.0, abs=1e-13)
        assert np.allclose(got.u, target.u, atol=1e-13)
        assert got.theta == pytest.approx(1.0, abs=1e-13)

    def test_unreachable_moments_raise(self):
        g = build_velocity_grid(4, 4.0)
        target = MomentSet(rho=np.float64(1.0), u=np.array([6.0, 0.0, 0.0]), theta=np.float64(1.0))
        with pytest.raises(RuntimeError, match="converge"):
            discrete_maxwellian(target, g)
