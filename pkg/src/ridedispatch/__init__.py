"""Rolling-horizon ride-sharing dispatch with service guarantees.

A fleet dispatcher that batches incoming requests into short epochs and,
each epoch, re-solves a static dial-a-ride problem by column generation:
an LP master selects one route per vehicle from a growing pool, routes are
priced per vehicle in waves of increasing request count, and a final
integral selection fixes the plan. Unserved requests carry a penalty that
doubles every ten epochs, so every rider is eventually picked up.
"""

from .model import (
    DeviationPolicy,
    Grid,
    OnboardRider,
    PenaltyParams,
    Request,
    StaticProblem,
    Stop,
    TravelTimeMatrix,
    VehicleState,
    build_grid,
    deviation_bound,
    load_matrix,
    load_stops,
    penalty,
    save_matrix,
    save_stops,
)
from .schedule import (
    Node,
    NodeKind,
    Route,
    RouteStructureError,
    Schedule,
    Violation,
    build_route,
    dropoff_node,
    onboard_dropoff_node,
    pickup_node,
    schedule_route,
    wait_cost_lower_bound,
)
from .pricing import Column, ColumnSearch, DualValues, best_route_for_set, prune_requests
from .master import (
    MasterInstance,
    MasterSolution,
    StaticSolveResult,
    seed_column,
    solve_final,
    solve_rmp,
    solve_static,
    write_lp_format,
)
from .simplex import LPResult, solve_lp
from .oracle import OracleSizeError, oracle_route_optimum, oracle_static_optimum
from .realtime import (
    EpochConfig,
    EpochRecord,
    RiderRecord,
    SimulationReport,
    batch,
    make_fleet,
    run,
)
from .io_cli import (
    Projection,
    TripRecord,
    histogram,
    ingest,
    manhattan_matrix,
    parse_trips,
    summarize,
    synth,
    write_report,
)

__version__ = "0.1.0"
