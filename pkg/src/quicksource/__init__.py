"""quicksource: sequential source estimation for noisy network cascades.

Simulates deterministic cascades with per-vertex noisy signals on implicit
infinite regular trees and lattices, and runs two near-optimal sequential
source estimators: the Bayes threshold rule and the multi-hypothesis SPRT
with uniform or K-level thresholds.
"""

from .bayes import (
    BayesRunResult,
    Posterior,
    bayes_estimate,
    error_trajectory,
    expected_distances,
    initial_posterior,
    run_bayes,
    uniform_prior_error,
    update,
    xu_moment_check,
)
from .cascade import (
    CascadeGeometry,
    CascadeTrace,
    ObservationRegion,
    Observations,
    affected_count,
    clear_geometry_cache,
    dump_trace,
    geometry_for,
    new_trace,
    observe,
)
from .channels import (
    BernoulliChannel,
    Channel,
    ChannelConstants,
    DiagnosticTestChannel,
    GaussianChannel,
    constants,
    format_channel,
    parse_channel,
    rate_function,
    sample,
)
from .errors import (
    BallSizeError,
    ChannelError,
    HorizonExhaustedError,
    PlanError,
    QuicksourceError,
    VertexEncodingError,
)
from .graphs import (
    CandidateSet,
    GraphKind,
    GrowthTables,
    Lattice,
    RegularTree,
    format_graph,
    geodesic_sq_sum,
    geodesic_sum,
    growth_tables,
    make_candidate_set,
    parse_graph,
)
from .msprt import (
    MsprtRunResult,
    MsprtState,
    ThresholdPlan,
    check_stop,
    initial_state,
    make_generalized_klevel_plan,
    make_plan,
    pairwise_llr_samples,
    run_msprt,
    stop_margins,
    update_llr,
)
from .rng import derive_seed

__version__ = "0.1.0"
