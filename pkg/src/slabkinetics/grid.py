"""Velocity lattice, slab mesh, and moment machinery.

Velocity space is a uniform Cartesian midpoint lattice on [-v_max, v_max]^3.
The quadrature weights start out as dv^3 and are rescaled once, at
construction, so that the discrete integral of the global Maxwellian

    M(v) = (2 pi)^(-3/2) exp(-|v|^2 / 2)

equals 1.  Every weighted integral in the package goes through this one
quadrature, so equilibrium normalization errors cannot leak into ledgers.

Position space is a 1-D slab [0, L] split into equal finite-volume cells with
walls at x = 0 (inward normal +e_x) and x = L (inward normal -e_x).  A node is
"incoming" at a wall when its x-velocity points into the slab there.  The
lattice has an even number of points per axis, so no node ever sits exactly on
v_x = 0 and the incoming/outgoing split is exhaustive.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

GAUSS_NORM = (2.0 * np.pi) ** -1.5


def global_maxwellian(nodes):
    """Standard Maxwellian density (unit mass, zero bulk velocity, unit
    temperature) evaluated at an (..., 3) array of velocities."""
    speed2 = np.sum(nodes * nodes, axis=-1)
    return GAUSS_NORM * np.exp(-0.5 * speed2)


@dataclass(frozen=True)
class VelocityGrid:
    """Midpoint lattice with weights and cached global Maxwellian.

    ``axis`` holds the 1-D coordinates; ``nodes`` is the flattened (K, 3)
    lattice in C order (x slowest); ``weights`` are the renormalized midpoint
    weights; ``maxwellian`` caches M at the nodes.  Instances are immutable.
    """

    n_per_axis: int
    v_max: float
    axis: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    maxwellian: np.ndarray

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def dv(self) -> float:
        return 2.0 * self.v_max / self.n_per_axis

    @cached_property
    def vx(self):
        return self.nodes[:, 0]

    @cached_property
    def vy(self):
        return self.nodes[:, 1]

    @cached_property
    def vz(self):
        return self.nodes[:, 2]

    @cached_property
    def speed2(self):
        return np.sum(self.nodes * self.nodes, axis=-1)

    @cached_property
    def mirror(self):
        """Index permutation sending node i to the node at -v_i (exact,
        because the axis array is built mirror-symmetric)."""
        n = self.n_per_axis
        rev = np.arange(n - 1, -1, -1)
        ix, iy, iz = np.meshgrid(rev, rev, rev, indexing="ij")
        return (((ix * n) + iy) * n + iz).ravel()

    @cached_property
    def invariants(self):
        """Rows span the collision invariants 1, v_x, v_y, v_z, |v|^2 - 3."""
        return np.stack(
            [
                np.ones(self.size),
                self.vx,
                self.vy,
                self.vz,
                self.speed2 - 3.0,
            ]
        )

    @cached_property
    def _invariant_factor(self):
        # Cholesky factor of the Gram matrix of the invariants under the
        # w*M inner product; used to orthogonalize moment projections.
        wm = self.weights * self.maxwellian
        gram = self.invariants @ (wm[:, None] * self.invariants.T)
        return np.linalg.cholesky(gram)

    def project_to_invariants_complement(self, q):
        """Remove from a node function q (shape (..., K)) its component along
        span{M, v M, |v|^2 M}, orthogonally in the w*M inner product.

        Output r satisfies sum_i w_i psi(v_i) r_i = 0 for all five collision
        invariants psi, exactly up to roundoff, and the map is idempotent.
        """
        q = np.asarray(q, dtype=float)
        cho = self._invariant_factor
        out = q
        # two sweeps: the second removes the O(eps) moment residue the first
        # leaves behind, giving genuinely machine-zero invariant moments
        for _ in range(2):
            inner = (out * self.weights) @ self.invariants.T  # = sum w psi q
            c = np.linalg.solve(cho.T, np.linalg.solve(cho, inner[..., :, None]))
            out = out - (c[..., 0] @ self.invariants) * self.maxwellian
        return out


def build_velocity_grid(n_per_axis: int, v_max: float) -> VelocityGrid:
    """Construct the velocity lattice.

    n_per_axis must be even (so the lattice is symmetric under v -> -v and no
    node has v_x = 0) and at least 4.  v_max must be positive and finite.
    """
    if not isinstance(n_per_axis, (int, np.integer)):
        raise TypeError(f"n_per_axis must be an integer, got {n_per_axis!r}")
    if n_per_axis < 4 or n_per_axis % 2 != 0:
        raise ValueError(
            f"n_per_axis must be even and >= 4 so the lattice is symmetric "
            f"under v -> -v; got {n_per_axis}"
        )
    if not (np.isfinite(v_max) and v_max > 0):
        raise ValueError(f"v_max must be positive and finite, got {v_max}")

    half = n_per_axis // 2
    dv = 2.0 * v_max / n_per_axis
    pos = (np.arange(half) + 0.5) * dv
    axis = np.concatenate([-pos[::-1], pos])  # exactly mirror-symmetric

    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    nodes = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=-1)

    maxwellian = global_maxwellian(nodes)
    weights = np.full(nodes.shape[0], dv**3)
    weights /= np.sum(weights * maxwellian)

    return VelocityGrid(
        n_per_axis=int(n_per_axis),
        v_max=float(v_max),
        axis=axis,
        nodes=nodes,
        weights=weights,
        maxwellian=maxwellian,
    )


@dataclass
class MomentSet:
    """Density, bulk velocity, and temperature per spatial cell.

    When ``fluctuation`` is True the fields hold the linear functionals of a
    fluctuation g instead: <g>, <v g>, and <(|v|^2/3 - 1) g>, where <.> is the
    Maxwellian-weighted quadrature sum.  Shapes broadcast over cells: rho and
    theta are (...,), u is (..., 3).
    """

    rho: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    fluctuation: bool = False


def moments(F, grid: VelocityGrid, fluctuation: bool = False) -> MomentSet:
    """Velocity moments of a distribution (or fluctuation) per cell.

    F has shape (..., K) with K = grid.size.  In the default (raw) mode the
    hydrodynamic fields are

        rho = sum w F,   u = sum w v F / rho,
        theta = (sum w |v - u|^2 F) / (3 rho),

    and any cell with nonpositive or non-finite density raises a ValueError
    naming the cell.  In fluctuation mode F is read as g and the returned
    fields are plain linear functionals against w*M (no division).
    """
    F = np.asarray(F, dtype=float)
    if F.shape[-1] != grid.size:
        raise ValueError(
            f"last axis of F has length {F.shape[-1]}, expected {grid.size}"
        )
    w = grid.weights
    if fluctuation:
        wm = w * grid.maxwellian
        rho = F @ wm
        u = F @ (wm[:, None] * grid.nodes)
        theta = F @ (wm * (grid.speed2 / 3.0 - 1.0))
        return MomentSet(rho=rho, u=u, theta=theta, fluctuation=True)

    rho = F @ w
    bad = ~(np.isfinite(rho) & (rho > 0.0))
    if np.any(bad):
        idx = tuple(int(k) for k in np.argwhere(np.atleast_1d(bad))[0])
        val = float(np.atleast_1d(rho)[idx])
        raise ValueError(f"nonpositive or non-finite density {val} in cell {idx}")
    momentum = F @ (w[:, None] * grid.nodes)
    u = momentum / rho[..., None]
    energy = F @ (w * grid.speed2)
    theta = (energy / rho - np.sum(u * u, axis=-1)) / 3.0
    return MomentSet(rho=rho, u=u, theta=theta, fluctuation=False)


def local_maxwellian(m: MomentSet, grid: VelocityGrid):
    """Maxwellian profile with the given (rho, u, theta) per cell.

    Evaluates rho (2 pi theta)^(-3/2) exp(-|v - u|^2 / (2 theta)) at the
    lattice nodes; shape (..., K).  For the standard moments (1, 0, 1) this
    reproduces grid.maxwellian bitwise, since it is the same expression.
    Non-finite input, rho <= 0, or theta <= 0 raise a ValueError.
    """
    rho = np.asarray(m.rho, dtype=float)
    u = np.asarray(m.u, dtype=float)
    theta = np.asarray(m.theta, dtype=float)
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(u)) and np.all(np.isfinite(theta))):
        raise ValueError("moments contain non-finite values")
    if np.any(theta <= 0.0):
        raise ValueError(f"temperature must be positive, got min {theta.min()}")
    if np.any(rho <= 0.0):
        raise ValueError(f"density must be positive, got min {rho.min()}")

    diff = grid.nodes - u[..., None, :]
    arg = -np.sum(diff * diff, axis=-1) / (2.0 * theta[..., None])
    norm = rho * (2.0 * np.pi * theta) ** -1.5
    return norm[..., None] * np.exp(arg)


def bracket(phi, grid: VelocityGrid):
    """Maxwellian-weighted quadrature sum <phi> = sum_i w_i phi(v_i) M(v_i).

    phi is an array of node values, shape (..., K); reduction is over the
    last axis.
    """
    phi = np.asarray(phi, dtype=float)
    return phi @ (grid.weights * grid.maxwellian)


@dataclass(frozen=True)
class SpatialMesh:
    """Equal-width finite-volume cells on the slab [0, length]."""

    length: float
    n_cells: int

    def __post_init__(self):
        if not (np.isfinite(self.length) and self.length > 0):
            raise ValueError(f"slab length must be positive, got {self.length}")
        if self.n_cells < 1:
            raise ValueError(f"need at least one cell, got {self.n_cells}")

    @property
    def dx(self) -> float:
        return self.length / self.n_cells

    @cached_property
    def centers(self):
        return (np.arange(self.n_cells) + 0.5) * self.dx

    def incoming(self, grid: VelocityGrid, wall: str):
        """Boolean node mask of velocities entering the slab at a wall."""
        if wall == "left":
            return grid.vx > 0.0
        if wall == "right":
            return grid.vx < 0.0
        raise ValueError(f"wall must be 'left' or 'right', got {wall!r}")

    def outgoing(self, grid: VelocityGrid, wall: str):
        """Boolean node mask of velocities leaving the slab at a wall."""
        return self.incoming(grid, "right" if wall == "left" else "left")


class DistributionField:
    """Distribution values on (cells x velocity nodes), kept nonnegative.

    A thin container: construction (and every solver update) checks shape,
    finiteness, and F >= 0, which is what keeps entropies well-defined.
    """

    def __init__(self, values, mesh: SpatialMesh, grid: VelocityGrid):
        values = np.ascontiguousarray(values, dtype=float)
        if values.shape != (mesh.n_cells, grid.size):
            raise ValueError(
                f"values shape {values.shape} does not match "
                f"(n_cells, nodes) = ({mesh.n_cells}, {grid.size})"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("distribution contains non-finite entries")
        if np.any(values < 0.0):
            i, j = np.argwhere(values < 0.0)[0]
            raise ValueError(
                f"negative distribution value {values[i, j]} at cell {i}, node {j}"
            )
        self.values = values
        self.mesh = mesh
        self.grid = grid

    @classmethod
    def maxwellian(cls, mesh: SpatialMesh, grid: VelocityGrid):
        """Global equilibrium in every cell."""
        vals = np.broadcast_to(grid.maxwellian, (mesh.n_cells, grid.size))
        return cls(vals.copy(), mesh, grid)

    def copy(self) -> "DistributionField":
        return DistributionField(self.values.copy(), self.mesh, self.grid)
