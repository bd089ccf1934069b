"""Iteratively glued slow-fast 3D flows.

Build a stack of extension levels over the unit-speed base system, integrate
the resulting hybrid flow through its seam rules, and verify the claims the
construction is designed to satisfy: generic flatness, prescribed
itineraries, return-cycle timing, and order-k jet periodicity at each
level's marked point.
"""

from .builder import (
    BuildError,
    BuildReport,
    build_report,
    compute_w0,
    extend,
    find_pattern_radius,
    total_dwell,
)
from .construct import (
    ConstructConfig,
    ConstructError,
    ConstructionState,
    dense_sequence,
    dump_trajectory,
    find_flat_point,
    q_interior_contains,
    run_construction,
)
from .engine import (
    FlowBudget,
    FlowResult,
    PlaneOutcome,
    TrajectoryEvent,
    advance_to_plane,
    diagnostic_planes,
    flow,
    orbit_itinerary,
    travel_time,
)
from .planar import (
    DiskPair,
    Fiber,
    PsiMap,
    escape_count,
    h0_flow,
    psi_at,
    psi_displacement,
    psi_inverse_at,
    psi_iterate,
    q0,
    zeta_star,
)
from .regions import (
    AmbiguousMembershipError,
    Cell,
    DisplayedSystem,
    JumpRule,
    LevelParams,
    NotInManifoldError,
    SpacePoint,
    build_level0,
    check_extension,
    interior_contains,
    load_system,
    locate,
    save_system,
    speed,
    validate_displayed_axioms,
)
from .verify import (
    CheckReport,
    FlatnessResult,
    JetOrderResult,
    VerifyError,
    bad_set_catalog,
    check_claim_13,
    check_claim_14,
    check_confinement,
    check_crossing_uniqueness,
    check_itineraries,
    classify_stall,
    flat_fraction,
    flat_fraction_report,
    is_flat,
    jet_order,
    periodic_base_point,
    psi_jet_slope,
)

__version__ = "0.1.0"

__all__ = [
    "AmbiguousMembershipError",
    "BuildError",
    "BuildReport",
    "Cell",
    "CheckReport",
    "ConstructConfig",
    "ConstructError",
    "ConstructionState",
    "DiskPair",
    "DisplayedSystem",
    "Fiber",
    "FlatnessResult",
    "FlowBudget",
    "FlowResult",
    "JetOrderResult",
    "JumpRule",
    "LevelParams",
    "NotInManifoldError",
    "PlaneOutcome",
    "PsiMap",
    "SpacePoint",
    "TrajectoryEvent",
    "VerifyError",
    "advance_to_plane",
    "bad_set_catalog",
    "build_level0",
    "build_report",
    "check_claim_13",
    "check_claim_14",
    "check_confinement",
    "check_crossing_uniqueness",
    "check_extension",
    "check_itineraries",
    "classify_stall",
    "compute_w0",
    "dense_sequence",
    "diagnostic_planes",
    "dump_trajectory",
    "escape_count",
    "extend",
    "find_flat_point",
    "find_pattern_radius",
    "flat_fraction",
    "flat_fraction_report",
    "flow",
    "h0_flow",
    "interior_contains",
    "is_flat",
    "jet_order",
    "load_system",
    "locate",
    "orbit_itinerary",
    "periodic_base_point",
    "psi_at",
    "psi_displacement",
    "psi_inverse_at",
    "psi_iterate",
    "psi_jet_slope",
    "q0",
    "q_interior_contains",
    "run_construction",
    "save_system",
    "speed",
    "total_dwell",
    "travel_time",
    "validate_displayed_axioms",
    "zeta_star",
    "__version__",
]
