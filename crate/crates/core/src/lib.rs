//! Associative memory over subspace-structured integer patterns.
//!
//! The pipeline: [`dataset`] builds exponential-capacity pattern sets from a
//! block-structured integer generator and injects +/-1 query noise;
//! [`learner`] finds sparse vectors orthogonal to the training set with an
//! iterative primal-dual scheme and stacks them into constraint graphs;
//! [`recall`] runs bit-flipping error correction over a two-level (local +
//! global) network of those graphs; [`analysis`] computes degree profiles and
//! the single-error correction bound; [`harness`] wires everything into
//! seeded, reproducible experiments behind the `nullnet` CLI.

pub mod analysis;
pub mod config;
pub mod dataset;
pub mod harness;
pub mod learner;
pub mod linalg;
mod persist;
pub mod recall;
pub mod rng;

pub use dataset::{
    build_generator, inject_noise, load_generator, load_patterns, save_generator, save_patterns,
    synthesize_patterns, verify_subspace, DatasetError, Generator, GeneratorSpec, NoiseVector,
    PatternCount, PatternMatrix, StructureReport,
};
pub use learner::{
    alpha_schedule, learn_constraint, learn_constraint_full, learn_constraint_reference,
    learn_network, soft_threshold, sparsity_grad, sparsity_penalty, spectral_norm, AlphaMode,
    ConstraintGraph, LearnError, LearnParams, LearnRun, LearnTrace, PStop, SparseRow,
};
pub use recall::{
    backward_pass, constraints_satisfied, correct, forward_pass, multilevel_correct,
    MultiLevelNetwork, MultilevelOutcome, RecallError, RecallOutcome, RecallParams, TMaxRule,
};
pub use analysis::{
    degree_profile, per_gain, single_error_bound, sparsity_ratio, AnalysisError, DegreeProfile,
    ErrorBounds, GainRow, GainTable,
};
pub use config::{ConfigTMax, ExperimentConfig};
pub use harness::{learn_multilevel, rerender_report, run_experiment, ExperimentReport, HarnessError};
