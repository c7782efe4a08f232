"""Deterministic kinetic solver for a dilute gas in a 1-D slab.

Full 3-D velocity space on a uniform lattice, first-order upwind transport in
the slab coordinate, truncated-and-damped binary collisions (or a relaxation
surrogate), prescribed inflow at both walls, and ledger-grade accounting of
mass, momentum, energy, and entropy.
"""

from .collision import (
    CollisionEngine,
    KernelSpec,
    apply_collision,
    build_kernel,
)
from .diagnostics import (
    EntropyReport,
    LedgerReport,
    conservation_ledger,
    entropy_inequality_check,
    green_identity_residual,
    relative_entropy,
    renormalizer,
    trace_commutativity_check,
)
from .grid import (
    DistributionField,
    MomentSet,
    SpatialMesh,
    VelocityGrid,
    bracket,
    build_velocity_grid,
    global_maxwellian,
    local_maxwellian,
    moments,
)
from .linearized import (
    FredholmResult,
    IllConditionedError,
    LinearizedOperator,
    TransportCoefficients,
    assemble_linearized,
    solve_fredholm,
    transport_coefficients,
)
from .solver import (
    ContractionError,
    FixedPointRecord,
    RunConfig,
    RunOutput,
    SolverState,
    advance,
    fixed_point_solve,
    run_simulation,
)
from .transport import (
    BoundaryData,
    StepSizeError,
    TraceLedger,
    exact_free_stream,
    transport_step,
)

__all__ = [
    "BoundaryData",
    "CollisionEngine",
    "ContractionError",
    "DistributionField",
    "EntropyReport",
    "FixedPointRecord",
    "FredholmResult",
    "IllConditionedError",
    "KernelSpec",
    "LedgerReport",
    "LinearizedOperator",
    "MomentSet",
    "RunConfig",
    "RunOutput",
    "SolverState",
    "SpatialMesh",
    "StepSizeError",
    "TraceLedger",
    "TransportCoefficients",
    "VelocityGrid",
    "advance",
    "apply_collision",
    "assemble_linearized",
    "bracket",
    "build_kernel",
    "build_velocity_grid",
    "conservation_ledger",
    "entropy_inequality_check",
    "exact_free_stream",
    "fixed_point_solve",
    "global_maxwellian",
    "green_identity_residual",
    "local_maxwellian",
    "moments",
    "relative_entropy",
    "renormalizer",
    "run_simulation",
    "solve_fredholm",
    "trace_commutativity_check",
    "transport_coefficients",
    "transport_step",
]

__version__ = "0.1.0"
