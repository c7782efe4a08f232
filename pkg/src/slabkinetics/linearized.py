"""Linearization of the collision operator around a global equilibrium.

Writing ``F = M(1 + g)`` and expanding the collision operator to first
order in ``g`` gives ``Q(F, F) = -M L g + O(g^2)``, where ``L`` is a
positive semi-definite operator on the weighted space with inner product
``<a, b> = sum_k w_k M_k a_k b_k``.  Its kernel is spanned by the five
collision invariants, and its pseudo-inverse on the orthogonal complement
of that kernel yields the shear viscosity and heat conductivity.

The matrix built here is the exact derivative of the discrete collision
sweep (including the interpolation stencil and its zero extension), then
symmetrized in the weighted inner product and compressed to the
complement of the invariants, so the returned operator annihilates the
invariants to machine precision by construction.  The symmetrization
defect of the raw derivative is kept as a diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _accel
from .collision import CollisionEngine
from .grid import VelocityGrid

__all__ = [
    "FredholmResult",
    "IllConditionedError",
    "LinearizedOperator",
    "TransportCoefficients",
    "assemble_linearized",
    "kernel_projection_basis",
    "solve_fredholm",
    "transport_coefficients",
]


class IllConditionedError(RuntimeError):
    """The deflated operator could not be inverted to the requested accuracy."""


def kernel_projection_basis(grid: VelocityGrid) -> np.ndarray:
    """Orthonormal basis of the collision invariants, shape ``(5, K)``.

    Rows span {1, v_x, v_y, v_z, (|v|^2 - 3)/2} and are orthonormal in the
    weighted inner product ``sum w M a b``.  Two rounds of Cholesky-based
    orthonormalization push the Gram defect to machine precision.
    """
    metric = grid.weights * grid.maxwellian
    basis = grid.invariants.astype(np.float64, copy=True)
    for _ in range(2):
        gram = (basis * metric) @ basis.T
        basis = np.linalg.solve(np.linalg.cholesky(gram), basis)
    return basis


@dataclass(frozen=True)
class LinearizedOperator:
    """Matrix form of the linearized collision operator on one velocity grid.

    ``matrix`` acts on nodal values of the fluctuation ``g`` and is
    self-adjoint in the weighted inner product after assembly.  It maps the
    span of ``kernel_basis`` to zero exactly and returns values orthogonal
    to that span.  ``symmetry_defect`` records the relative asymmetry of
    the raw derivative before symmetrization (zero for relaxation models).
    """

    matrix: np.ndarray
    kernel_basis: np.ndarray
    family: str
    grid: VelocityGrid
    symmetry_defect: float

    @cached_property
    def metric(self) -> np.ndarray:
        """Weights of the inner product in which the operator is self-adjoint."""
        return self.grid.weights * self.grid.maxwellian

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(self.metric * a * b))

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.metric * a * a)))

    def apply(self, g: np.ndarray) -> np.ndarray:
        return self.matrix @ g

    def kernel_components(self, g: np.ndarray) -> np.ndarray:
        """Coefficients of ``g`` along the five invariant basis vectors."""
        return self.kernel_basis @ (self.metric * g)

    def project_out_kernel(self, g: np.ndarray) -> np.ndarray:
        """Remove the invariant content of ``g`` (twice, for exactness)."""
        out = np.asarray(g, dtype=np.float64).copy()
        for _ in range(2):
            out -= self.kernel_components(out) @ self.kernel_basis
        return out


def _stencil_parts(points, grid):
    """Trilinear stencil data for a batch of points: base index, fractional
    coordinates and an in-hull flag per point (matching the sweep's zero
    extension)."""
    n = grid.n_per_axis
    t = (points - grid.axis[0]) / grid.dv
    cell = np.floor(t).astype(np.int64)
    inside = np.all((cell >= 0) & (cell <= n - 2), axis=-1)
    cell = np.clip(cell, 0, n - 2)
    frac = t - cell
    base = (cell[..., 0] * n + cell[..., 1]) * n + cell[..., 2]
    return base, frac, inside


_CORNER_SHIFTS = None


def _corner_data(n: int):
    offsets = np.array(
        [0, 1, n, n + 1, n * n, n * n + 1, n * n + n, n * n + n + 1],
        dtype=np.int64,
    )
    return offsets


def _corner_weights(frac: np.ndarray) -> np.ndarray:
    fx, fy, fz = frac[..., 0], frac[..., 1], frac[..., 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    return np.stack(
        [
            gx * gy * gz,
            gx * gy * fz,
            gx * fy * gz,
            gx * fy * fz,
            fx * gy * gz,
            fx * gy * fz,
            fx * fy * gz,
            fx * fy * fz,
        ],
        axis=-1,
    )


def _linearized_rows_numpy(L, engine: CollisionEngine) -> None:
    """Reference assembly of the sweep derivative (used without the JIT)."""
    grid = engine.grid
    nodes, weights, M = grid.nodes, grid.weights, grid.maxwellian
    kern = engine.pair_kernel
    dirs, aw = engine.angular_dirs, engine.angular_weights
    offsets = _corner_data(grid.n_per_axis)
    K = grid.size
    index = np.arange(K)
    for j in range(K):
        active = kern[j] != 0.0
        if not active.any():
            continue
        rows = index[active]
        mid = 0.5 * (nodes[rows] + nodes[j])
        half_r = 0.5 * np.linalg.norm(nodes[rows] - nodes[j], axis=1)
        base_c = weights[j] * M[j] * kern[j, rows]
        for q in range(dirs.shape[0]):
            c = aw[q] * base_c
            off = half_r[:, None] * dirs[q]
            bp, fp, in_p = _stencil_parts(mid + off, grid)
            bs, fs, in_s = _stencil_parts(mid - off, grid)
            np.add.at(L, (rows, rows), c)
            np.add.at(L, (rows, np.full(rows.shape, j)), c)
            both = in_p & in_s
            if not both.any():
                continue
            r2 = np.repeat(rows[both], 8)
            for b, f in ((bp, fp), (bs, fs)):
                cols = (b[both, None] + offsets[None, :]).ravel()
                vals = (-c[both, None] * _corner_weights(f[both])).ravel()
                np.add.at(L, (r2, cols), vals)


def _raw_derivative(engine: CollisionEngine) -> np.ndarray:
    """Exact derivative of the discrete sweep at equilibrium, scaled by 1/M.

    The returned matrix satisfies ``Q(M(1+eps g)) = -eps M (L g) + O(eps^2)``
    node by node; it is not yet symmetrized or compressed.
    """
    grid = engine.grid
    matrix = np.zeros((grid.size, grid.size))
    if _accel.HAVE_NUMBA:
        _accel.linearized_rows(
            matrix,
            grid.maxwellian,
            grid.weights,
            grid.nodes,
            engine.pair_kernel,
            engine.angular_dirs,
            engine.angular_weights,
            grid.axis[0],
            1.0 / grid.dv,
            grid.n_per_axis,
        )
    else:
        _linearized_rows_numpy(matrix, engine)

    if engine.spec.damping:
        # Around equilibrium the density is one, so the damping prefactor
        # contributes the constant n/(n+1); its derivative couples only to
        # the invariant content of g, which the compression removes.
        n = engine.spec.truncation_n
        matrix *= n / (n + 1.0)
    return matrix


def assemble_linearized(engine: CollisionEngine) -> LinearizedOperator:
    """Build the linearized operator for the model held by ``engine``.

    For relaxation models the operator is ``(I - P)/tau`` with ``P`` the
    orthogonal projection onto the invariants, which is already
    self-adjoint with kernel exactly the invariant span.  For binary
    models the exact derivative of the sweep is assembled column by
    column, scaled by the equilibrium value of the damping prefactor when
    the engine damps, symmetrized, and compressed by ``(I - P) . (I - P)``.
    """
    grid = engine.grid
    basis = kernel_projection_basis(grid)
    metric = grid.weights * grid.maxwellian
    weighted_basis = basis * metric[None, :]

    if engine.is_bgk:
        matrix = (np.eye(grid.size) - basis.T @ weighted_basis) / engine.spec.tau
        return LinearizedOperator(matrix, basis, engine.spec.family, grid, 0.0)

    matrix = _raw_derivative(engine)
    scaled = matrix * metric[:, None]
    defect = float(
        np.linalg.norm(scaled - scaled.T) / max(np.linalg.norm(scaled), 1e-300)
    )
    matrix = (0.5 * (scaled + scaled.T)) / metric[:, None]
    matrix -= (matrix @ basis.T) @ weighted_basis
    matrix -= basis.T @ (weighted_basis @ matrix)
    return LinearizedOperator(matrix, basis, engine.spec.family, grid, defect)


@dataclass(frozen=True)
class FredholmResult:
    """Outcome of a deflated solve: the profile, the norm of the invariant
    component removed from the right-hand side, the relative residual of
    the returned solution, and solver statistics."""

    solution: np.ndarray
    removed_norm: float
    residual: float
    iterations: int
    condition_estimate: float


def solve_fredholm(
    op: LinearizedOperator,
    rhs: np.ndarray,
    *,
    rtol: float = 1e-12,
    maxiter: int = 5000,
) -> FredholmResult:
    """Solve ``L x = rhs`` on the orthogonal complement of the invariants.

    The invariant component of ``rhs`` is removed first and its norm is
    reported in the result.  The deflated system is solved by conjugate
    gradients in the weighted inner product with a Jacobi preconditioner;
    if the solver stalls or the operator has no positive curvature in some
    direction, an :class:`IllConditionedError` with a rough condition
    estimate is raised.  The returned relative residual is guaranteed to
    be at most ``1e-8``.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape != (op.grid.size,):
        raise ValueError(
            f"rhs has shape {rhs.shape}, expected ({op.grid.size},)"
        )
    metric = op.metric
    removed = rhs - op.project_out_kernel(rhs)
    removed_norm = float(np.sqrt(np.sum(metric * removed * removed)))
    b = rhs - removed

    # A right-hand side that is invariant up to roundoff has nothing left
    # to solve for; chasing the residue would feed the iteration noise.
    rhs_norm = float(np.sqrt(np.sum(metric * rhs * rhs)))
    bnorm = float(np.sqrt(np.sum(metric * b * b)))
    if bnorm <= 1e-12 * rhs_norm or bnorm == 0.0:
        return FredholmResult(np.zeros_like(b), removed_norm, 0.0, 0, 1.0)

    diag = np.abs(np.diag(op.matrix))
    diag_max = float(diag.max())
    if diag_max <= 0.0 or not np.isfinite(diag_max):
        raise IllConditionedError(
            "operator diagonal vanishes, nothing to precondition with; "
            "condition estimate inf"
        )
    diag = np.maximum(diag, diag_max * 1e-14)

    x = np.zeros_like(b)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = float(np.sum(metric * r * z))
    ray_min = np.inf
    ray_max = 0.0
    iterations = 0
    for iterations in range(1, maxiter + 1):
        Ap = op.matrix @ p
        pAp = float(np.sum(metric * p * Ap))
        pp = float(np.sum(metric * p * p))
        if pAp <= 0.0 or not np.isfinite(pAp):
            raise IllConditionedError(
                "deflated operator lost positive definiteness during the "
                f"solve (curvature {pAp:.3e} after {iterations} iterations); "
                f"condition estimate {_cond(ray_min, ray_max):.3e}"
            )
        ray = pAp / pp
        ray_min = min(ray_min, ray)
        ray_max = max(ray_max, ray)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = float(np.sqrt(np.sum(metric * r * r)))
        if rnorm <= rtol * bnorm:
            break
        z = r / diag
        rz_new = float(np.sum(metric * r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new

    # The Jacobi-preconditioned directions are not orthogonal to the
    # invariants, so the iterate can pick up kernel content that the
    # deflated matrix silently ignores; strip it (this cannot change the
    # residual, because the matrix annihilates what is removed).
    x = op.project_out_kernel(x)
    residual = b - op.matrix @ x
    rel = float(np.sqrt(np.sum(metric * residual * residual))) / bnorm
    if rel > 1e-8:
        raise IllConditionedError(
            f"deflated solve stalled at relative residual {rel:.3e} after "
            f"{iterations} iterations; condition estimate "
            f"{_cond(ray_min, ray_max):.3e}"
        )
    return FredholmResult(x, removed_norm, rel, iterations, _cond(ray_min, ray_max))


def _cond(ray_min: float, ray_max: float) -> float:
    if not np.isfinite(ray_min) or ray_min <= 0.0:
        return np.inf
    return ray_max / ray_min


@dataclass(frozen=True)
class TransportCoefficients:
    """Shear viscosity and heat conductivity with per-component detail.

    ``shear_components`` holds the viscosity extracted from each of the
    five independent entries of the traceless rate-of-strain tensor
    (three off-diagonal, two diagonal differences); ``heat_components``
    the conductivity from each axis of the heat-flux vector.  For an
    isotropic operator all entries of each tuple agree.
    """

    shear_viscosity: float
    heat_conductivity: float
    shear_components: tuple[float, ...]
    heat_components: tuple[float, ...]


def transport_coefficients(op: LinearizedOperator) -> TransportCoefficients:
    """First-order transport coefficients of the linearized operator.

    Solves ``L a_ab = v_a v_b - delta_ab |v|^2 / 3`` for the five
    independent tensor entries (the sixth follows from tracelessness) and
    ``L b_a = v_a (|v|^2 - 5)/2`` per axis, then contracts:

        viscosity    = (1/10) <A : A_hat>
        conductivity = (2/15) <B . B_hat>

    With the Gaussian normalization used here ``<A : A> = 10`` and
    ``<B . B> = 15/2``, so a relaxation model with time ``tau`` returns
    ``(tau, tau)`` up to quadrature error.
    """
    grid = op.grid
    vx, vy, vz = grid.vx, grid.vy, grid.vz
    s2 = grid.speed2

    a_fields = {
        "xy": vx * vy,
        "xz": vx * vz,
        "yz": vy * vz,
        "xx": vx * vx - s2 / 3.0,
        "yy": vy * vy - s2 / 3.0,
    }
    a_hat = {key: solve_fredholm(op, rhs).solution for key, rhs in a_fields.items()}
    a_fields["zz"] = -(a_fields["xx"] + a_fields["yy"])
    a_hat["zz"] = -(a_hat["xx"] + a_hat["yy"])

    pair = {key: op.inner(a_fields[key], a_hat[key]) for key in a_fields}
    contraction = (
        2.0 * (pair["xy"] + pair["xz"] + pair["yz"])
        + pair["xx"]
        + pair["yy"]
        + pair["zz"]
    )
    viscosity = contraction / 10.0

    # Five independent components, each normalized so that an isotropic
    # operator yields the viscosity itself: <A_xy A_xy_hat> = nu, and the
    # diagonal differences (xx-yy)/2 and (xx+yy-2zz)/(2 sqrt 3) likewise.
    cross = {
        ("xx", "yy"): op.inner(a_fields["xx"], a_hat["yy"]),
        ("xx", "zz"): op.inner(a_fields["xx"], a_hat["zz"]),
        ("yy", "zz"): op.inner(a_fields["yy"], a_hat["zz"]),
    }
    diag_diff = 0.25 * (pair["xx"] - 2.0 * cross[("xx", "yy")] + pair["yy"])
    diag_sum = (
        pair["xx"]
        + pair["yy"]
        + 4.0 * pair["zz"]
        + 2.0 * cross[("xx", "yy")]
        - 4.0 * cross[("xx", "zz")]
        - 4.0 * cross[("yy", "zz")]
    ) / 12.0
    shear_components = (
        pair["xy"],
        pair["xz"],
        pair["yz"],
        diag_diff,
        diag_sum,
    )

    b_fields = (vx * (s2 - 5.0) / 2.0, vy * (s2 - 5.0) / 2.0, vz * (s2 - 5.0) / 2.0)
    b_hat = tuple(solve_fredholm(op, rhs).solution for rhs in b_fields)
    b_pair = tuple(op.inner(f, h) for f, h in zip(b_fields, b_hat))
    conductivity = (2.0 / 15.0) * sum(b_pair)
    heat_components = tuple((2.0 / 5.0) * value for value in b_pair)

    return TransportCoefficients(
        viscosity, conductivity, shear_components, heat_components
    )
