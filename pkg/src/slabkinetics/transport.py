"""Free streaming on the slab with prescribed incoming wall data.

The advection v_x d/dx F is discretized with first-order upwind finite
volumes.  At each wall the incoming velocity nodes (those whose v_x points
into the slab) read a ghost value from the prescribed boundary density Z;
outgoing nodes deposit their upwind cell value as the wall trace.  Because
every face flux appears once with each sign, the cell totals telescope and
the discrete mass balance

    sum_cells w (F_next - F) dx + dt (outflux - influx) = 0

holds to roundoff, which is what the ledger machinery relies on.

Boundary integrals use the measure dmu = |v_x| dv on the wall (and
dsigma = M |v_x| dv for fluctuation-sized quantities); with the lattice's
even node count no node sits at v_x = 0, so the incoming/outgoing split is
exhaustive and the bystander set is empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import DistributionField, SpatialMesh, VelocityGrid

__all__ = [
    "BoundaryData",
    "StepSizeError",
    "TraceLedger",
    "exact_free_stream",
    "transport_step",
]

WALLS = ("left", "right")
FLUX_KEYS = ("mass", "mom_x", "mom_y", "mom_z", "energy", "entropy")


class StepSizeError(ValueError):
    """A time step exceeded a stability bound; carries the admissible dt."""

    def __init__(self, message: str, admissible_dt: float):
        super().__init__(message)
        self.admissible_dt = float(admissible_dt)


@dataclass(frozen=True)
class BoundaryData:
    """Prescribed incoming density Z(t, v) at each wall.

    ``left`` and ``right`` map a time to the full node vector of Z at that
    wall; only the incoming entries are ever read.  Values must be
    nonnegative with a finite boundary integral of Z (1 + |v|^2 + |log Z|)
    against dmu, which :meth:`value` checks against ``integrability_cap``
    on every evaluation (the lattice makes the integral a finite sum, so
    the check guards magnitude, not measurability).
    """

    grid: VelocityGrid
    left: Callable[[float], np.ndarray]
    right: Callable[[float], np.ndarray]
    integrability_cap: float = 1e9

    @classmethod
    def equilibrium(cls, grid: VelocityGrid, **kwargs) -> "BoundaryData":
        """Both walls feed the global Maxwellian, Z = M."""
        fn = lambda t: grid.maxwellian  # noqa: E731 - tiny closure
        return cls(grid, fn, fn, **kwargs)

    @classmethod
    def fluctuation(
        cls,
        grid: VelocityGrid,
        epsilon: float,
        left: Callable[[float, VelocityGrid], np.ndarray] | None = None,
        right: Callable[[float, VelocityGrid], np.ndarray] | None = None,
        **kwargs,
    ) -> "BoundaryData":
        """Walls feed Z = M (1 + epsilon zhat(t, v)).

        ``left``/``right`` give zhat as a function of time and grid; a wall
        left at None stays at equilibrium.  Nonnegativity of the product is
        enforced at evaluation time, so an oversized zhat fails loudly
        rather than injecting negative density.
        """

        def wall(zhat):
            if zhat is None:
                return lambda t: grid.maxwellian
            return lambda t: grid.maxwellian * (
                1.0 + epsilon * np.asarray(zhat(t, grid), dtype=float)
            )

        return cls(grid, wall(left), wall(right), **kwargs)

    def value(self, wall: str, t: float) -> np.ndarray:
        """Z at one wall and time, validated (shape, sign, integrability)."""
        if wall not in WALLS:
            raise ValueError(f"wall must be 'left' or 'right', got {wall!r}")
        z = np.ascontiguousarray(
            (self.left if wall == "left" else self.right)(t), dtype=float
        )
        if z.shape != (self.grid.size,):
            raise ValueError(
                f"boundary data at wall {wall!r} has shape {z.shape}, "
                f"expected ({self.grid.size},)"
            )
        if not np.all(np.isfinite(z)):
            raise ValueError(f"boundary data at wall {wall!r} is not finite")
        if np.any(z < 0.0):
            raise ValueError(
                f"boundary data at wall {wall!r} is negative at t={t}: "
                f"min {z.min()}"
            )
        mu = self.grid.weights * np.abs(self.grid.vx)
        logz = np.where(z > 0.0, np.abs(np.log(np.where(z > 0.0, z, 1.0))), 0.0)
        bound = float(np.sum(mu * z * (1.0 + self.grid.speed2 + logz)))
        if not bound <= self.integrability_cap:
            raise ValueError(
                f"boundary data at wall {wall!r} fails the integrability "
                f"bound at t={t}: integral {bound:.3e} exceeds cap "
                f"{self.integrability_cap:.3e}"
            )
        return z


def entropy_density(values: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Pointwise relative-entropy density h(F) = F log(F/M) - F + M.

    Nonnegative, zero exactly at F = M, and continuous at F = 0 (limit M).
    The boundary ledger integrates this against dmu, and the volume
    relative entropy H(F|M) integrates it against w dx; equilibrium
    contributes nothing to either.
    """
    ratio = np.where(values > 0.0, values / M, 1.0)
    return np.where(values > 0.0, values * np.log(ratio), 0.0) - values + M


@dataclass
class TraceLedger:
    """Wall traces and running boundary-flux integrals.

    ``outgoing``/``injected`` hold one node vector per recorded step and
    wall (gamma_+ F on outgoing nodes, Z on incoming nodes; other entries
    zero).  ``influx``/``outflux`` accumulate dt-weighted dmu-integrals of
    mass, momentum, energy (|v|^2 convention), and relative entropy;
    ``fluct_influx``/``fluct_outflux`` accumulate the squared fluctuation
    (F/M - 1)^2 against dsigma = M |v_x| dv.
    """

    grid: VelocityGrid
    times: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    outgoing: dict = field(default_factory=lambda: {w: [] for w in WALLS})
    injected: dict = field(default_factory=lambda: {w: [] for w in WALLS})
    influx: dict = field(
        default_factory=lambda: {w: dict.fromkeys(FLUX_KEYS, 0.0) for w in WALLS}
    )
    outflux: dict = field(
        default_factory=lambda: {w: dict.fromkeys(FLUX_KEYS, 0.0) for w in WALLS}
    )
    fluct_influx: dict = field(default_factory=lambda: dict.fromkeys(WALLS, 0.0))
    fluct_outflux: dict = field(default_factory=lambda: dict.fromkeys(WALLS, 0.0))

    def _tally(self, values, mask, dt):
        g = self.grid
        mu = g.weights * np.abs(g.vx) * mask
        masked = values * mask
        return {
            "mass": dt * float(mu @ values),
            "mom_x": dt * float((mu * g.vx) @ values),
            "mom_y": dt * float((mu * g.vy) @ values),
            "mom_z": dt * float((mu * g.vz) @ values),
            "energy": dt * float((mu * g.speed2) @ values),
            "entropy": dt * float(mu @ entropy_density(masked, g.maxwellian)),
        }

    def _fluct(self, values, mask, dt):
        g = self.grid
        sigma = g.weights * g.maxwellian * np.abs(g.vx)
        ghat = values / g.maxwellian - 1.0
        return dt * float((sigma * mask) @ (ghat * ghat))

    def add_step(self, t, dt, z_left, z_right, out_left, out_right) -> None:
        """Record one transport step's wall values and integrate the fluxes.

        ``z_*`` are the injected boundary densities, ``out_*`` the upwind
        wall values of the interior field; each is a full node vector, and
        the incoming/outgoing masks select what is stored and integrated.
        """
        g = self.grid
        masks_in = {"left": g.vx > 0.0, "right": g.vx < 0.0}
        data = {
            "left": (z_left, out_left),
            "right": (z_right, out_right),
        }
        self.times.append(float(t))
        self.dts.append(float(dt))
        for wall in WALLS:
            m_in = masks_in[wall]
            m_out = ~m_in
            z, out = data[wall]
            self.injected[wall].append(np.where(m_in, z, 0.0))
            self.outgoing[wall].append(np.where(m_out, out, 0.0))
            tally_in = self._tally(z, m_in, dt)
            tally_out = self._tally(out, m_out, dt)
            for key in FLUX_KEYS:
                self.influx[wall][key] += tally_in[key]
                self.outflux[wall][key] += tally_out[key]
            self.fluct_influx[wall] += self._fluct(z, m_in, dt)
            self.fluct_outflux[wall] += self._fluct(out, m_out, dt)

    def merge(self, other: "TraceLedger") -> None:
        """Fold another ledger (e.g. a single-step increment) into this one."""
        self.times.extend(other.times)
        self.dts.extend(other.dts)
        for wall in WALLS:
            self.outgoing[wall].extend(other.outgoing[wall])
            self.injected[wall].extend(other.injected[wall])
            for key in FLUX_KEYS:
                self.influx[wall][key] += other.influx[wall][key]
                self.outflux[wall][key] += other.outflux[wall][key]
            self.fluct_influx[wall] += other.fluct_influx[wall]
            self.fluct_outflux[wall] += other.fluct_outflux[wall]

    def total(self, key: str, direction: str) -> float:
        """Sum of one accumulated flux over both walls.

        ``key`` is one of mass/mom_x/mom_y/mom_z/energy/entropy and
        ``direction`` is 'in' or 'out'.
        """
        book = {"in": self.influx, "out": self.outflux}[direction]
        return book["left"][key] + book["right"][key]


def transport_step(
    F: DistributionField,
    dt: float,
    boundary: BoundaryData,
    *,
    t: float = 0.0,
):
    """One upwind finite-volume step of v_x d/dx with inflow data.

    Incoming nodes at each wall read the ghost value Z(t); outgoing nodes
    record their upwind cell value as the wall trace.  Returns the updated
    field together with a single-step :class:`TraceLedger` increment.
    Raises :class:`StepSizeError` when dt violates the CFL bound
    dt max|v_x| <= dx (the admissible dt rides on the exception).
    """
    mesh, grid = F.mesh, F.grid
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    vmax = float(np.max(np.abs(grid.vx)))
    admissible = mesh.dx / vmax
    if dt * vmax > mesh.dx * (1.0 + 1e-12):
        raise StepSizeError(
            f"transport step dt={dt:.6g} violates the CFL bound "
            f"dt max|v_x| <= dx; admissible dt is {admissible:.6g}",
            admissible,
        )

    z_left = boundary.value("left", t)
    z_right = boundary.value("right", t)

    vals = F.values
    courant = (dt / mesh.dx) * grid.vx
    pos = grid.vx > 0.0
    neg = ~pos

    upstream = np.empty_like(vals)
    upstream[0, pos] = z_left[pos]
    upstream[1:, pos] = vals[:-1, pos]
    upstream[-1, neg] = z_right[neg]
    upstream[:-1, neg] = vals[1:, neg]

    next_vals = vals - np.abs(courant) * (vals - upstream)
    # Upwind convexity guarantees nonnegativity; roundoff can still produce
    # -1e-17 from cancellations, which the field container would reject.
    np.maximum(next_vals, 0.0, out=next_vals)

    increment = TraceLedger(grid)
    increment.add_step(t, dt, z_left, z_right, vals[0], vals[-1])
    return DistributionField(next_vals, mesh, grid), increment


def exact_free_stream(
    F0: DistributionField,
    boundary: BoundaryData,
    t: float,
) -> DistributionField:
    """Collisionless reference solution by tracing characteristics.

    Evaluates F(t, x, v) at the cell centers: the value is F0 at the foot
    x - v_x t of the characteristic when that point lies inside the slab
    (piecewise-constant in the originating cell), and the wall datum Z for
    characteristics entering through a wall.  Z must be constant in time
    for this closed form; the function is a verification oracle, not part
    of the marching scheme.
    """
    if t < 0.0:
        raise ValueError(f"t must be nonnegative, got {t}")
    mesh, grid = F0.mesh, F0.grid
    z_left = boundary.value("left", 0.0)
    z_right = boundary.value("right", 0.0)

    feet = mesh.centers[:, None] - t * grid.vx[None, :]
    inside = (feet > 0.0) & (feet < mesh.length)
    cells = np.clip((feet // mesh.dx).astype(int), 0, mesh.n_cells - 1)

    interior = np.take_along_axis(F0.values, cells, axis=0)
    from_wall = np.where(grid.vx[None, :] > 0.0, z_left[None, :], z_right[None, :])
    return DistributionField(
        np.where(inside, interior, from_wall), mesh, grid
    )
