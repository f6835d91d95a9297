"""Simulation and analytic solvers for admission markets with noisy signals."""

from .analytics import (
    ExperimentRecord,
    UtilityModel,
    UtilityTotals,
    compare_matchings,
    compute_utilities,
    make_record,
    write_records_csv,
)
from .fixed_point import (
    AcceptanceEstimate,
    ConvergenceError,
    RankVector,
    SolverResult,
    estimate_acceptance,
    expected_accepted_mass,
    solve_general,
    solve_iid,
)
from .market import (
    ConfigurationError,
    MarketConfig,
    MarketInstance,
    SeededProposalPlan,
    SignalSpec,
    build_seeded_plan,
    child_seed,
    complete_instance,
    draw_signal,
    make_rng,
    sample_market,
)
from .matching import (
    BlockingPair,
    InvalidMatchingError,
    Matching,
    RankProfile,
    continue_rejection_chains,
    find_blocking_pairs,
    match_rank_indices,
    matching_to_csv,
    rank_profile,
    school_proposing_da,
    seeded_matching,
    student_proposing_da,
)
from .stable_partners import (
    MarketSizeError,
    StablePartnerReport,
    enumerate_stable_matchings,
    extra_stable_partner_reports,
    has_extra_stable_partners,
    stable_partner_sets,
)

__version__ = "0.1.0"

__all__ = [
    "AcceptanceEstimate",
    "BlockingPair",
    "ConfigurationError",
    "ConvergenceError",
    "ExperimentRecord",
    "InvalidMatchingError",
    "MarketConfig",
    "MarketInstance",
    "MarketSizeError",
    "Matching",
    "RankProfile",
    "RankVector",
    "SeededProposalPlan",
    "SignalSpec",
    "SolverResult",
    "StablePartnerReport",
    "UtilityModel",
    "UtilityTotals",
    "build_seeded_plan",
    "child_seed",
    "compare_matchings",
    "complete_instance",
    "compute_utilities",
    "continue_rejection_chains",
    "draw_signal",
    "enumerate_stable_matchings",
    "estimate_acceptance",
    "expected_accepted_mass",
    "extra_stable_partner_reports",
    "find_blocking_pairs",
    "has_extra_stable_partners",
    "make_record",
    "make_rng",
    "match_rank_indices",
    "matching_to_csv",
    "rank_profile",
    "sample_market",
    "school_proposing_da",
    "seeded_matching",
    "solve_general",
    "solve_iid",
    "stable_partner_sets",
    "student_proposing_da",
    "write_records_csv",
]
