"""Detection rate versus inspection capacity for threshold-based triage of streaming events."""

from .bounds import (
    BoundCurve,
    bound_batch_mc,
    bound_dynamic_mc,
    bound_random,
    bound_static,
    bound_static_optimal,
    optimal_static_threshold,
    order_stat_pdf,
    upper_bound,
)
from .curves import CriticalCurveSet, CurveCache, SolverError, solve_curves, threshold_at
from .nhpp import (
    ArrivalSequence,
    DomainError,
    RateFunction,
    estimate_rate,
    sample_next_arrival,
    simulate_arrivals,
    split_thinning,
    superpose,
)
from .policies import (
    Episode,
    InspectionOutcome,
    TradeoffCurve,
    UndefinedResultError,
    capacity_for,
    detection_rate,
    run_batch,
    run_dynamic,
    run_random,
    run_static,
)
from .scoredist import ScoreCdf, ScoreModel, fit_ecdf, mixture, partial_expectation

__version__ = "0.1.0"
