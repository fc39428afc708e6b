"""vanetsim: discrete-time VANET topology regulation simulator.

A library plus experiment harness implementing a hierarchical two-layer
topology control scheme (local feature fusion + dual-mode global
optimization) alongside greedy, shortest-path, and motif baselines, with
full per-step metric instrumentation.
"""

from .baselines import BaselineKind, MotifTracker, greedy_build, motif_build, shortest_path_build
from .fusion import (
    FeatureMatrix,
    FusionParams,
    FusionResult,
    extract_features,
    fuse_step,
    neighbor_weights,
    neighborhoods,
    run_fusion,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    SummaryStats,
    compare,
    linear_trend,
    load_config,
    run_experiment,
    summarize,
)
from .metrics import (
    BandwidthModel,
    DelayParams,
    MetricsRecord,
    PairEvaluation,
    ThroughputParams,
    average_path_length,
    evaluate_pairs,
    mean_delay,
    path_delay,
    throughput,
)
from .mobility import (
    NetworkSnapshot,
    RsuNode,
    SyntheticMobilityConfig,
    VehicleState,
    generate_synthetic,
    parse_csv_trace,
    parse_fcd_xml,
    place_rsus,
    write_csv_trace,
)
from .netgraph import (
    CandidateLinks,
    CommPairSet,
    ConstraintViolation,
    DemandMatrix,
    GraphStats,
    LinkStrategy,
    NetworkParams,
    Topology,
    candidate_links,
    connectivity_rate,
    demand_matrix,
    graph_stats,
    k_path_count,
    key_pairs,
    link_adaptability,
    shortest_hop_path,
)
from .optimizer import (
    CandidateOutcome,
    SolverParams,
    VerifyResult,
    adjust,
    complexity,
    predict_link_lifetime,
    prune_strategy,
    solve_exact,
    solve_heuristic,
    verify,
)
from .regulation import (
    RegulationState,
    composite_objective,
    filter_3sigma,
    improvement_rate,
    update_l_norm,
    update_t_norm,
    update_weights,
)

__version__ = "0.1.0"
