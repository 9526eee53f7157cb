//! Detection of the true model among a finite family of MDPs that share
//! states and actions: policy synthesis for asymptotically perfect
//! detection, Bhattacharyya-coefficient analysis, and seeded simulation.

#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod binary;
pub mod general;
pub mod graph;
pub mod model;
pub mod policy;
pub mod scenarios;
pub mod sim;

pub use analysis::{
    bc_exact, bc_exact_augmented, bc_matrix, decay_fit, error_bounds_binary, error_bounds_multi, pairwise_bc_curve,
    AnalysisError, BcCurve, BcMatrix, DecayFit, ErrorBounds, FitStatus,
};
pub use binary::{
    bi_apd, bi_apd_pair, classify_pairs, informative_mecs, informative_structure, preprocess, ApdError, PairClass,
    PreprocessedPair, SaClassification, StateClass,
};
pub use general::{base_case_apd, general_apd, general_apd_with, pairwise_isa, SolverOptions};
pub use graph::{
    almost_sure_reach_set, mec_decompose, mec_uniform_policy, reach_policy, GraphError, Mec, MecUniformPolicy,
    PartialDeterministicPolicy,
};
pub use model::{
    induced_transition_system, parse_mmdp, serialize_mmdp, validate_mmdp, Distribution, History, Mdp, Mmdp, ModelError,
    TransitionSystem, Violation,
};
pub use policy::{
    ActiveSet, ApdOutcome, Controller, ControllerState, DetectionPolicy, Diagnostics, DiagnosticsDocument, Mode,
    PolicyDocument, PolicyEntry, PolicyError, StationaryPolicy,
};
pub use scenarios::{gen_grid, gen_recsys, GridSpec, RecSysSpec, ScenarioError};
pub use sim::{
    belief_update, map_decide, mean_belief, monte_carlo_error, run_batch, simulate, write_batch_csv, BatchSummary,
    BeliefState, SimConfig, SimError, StopReason, Trace,
};
