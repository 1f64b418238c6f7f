//! Relational causal discovery.
//!
//! The crate is organized bottom-up: [`schema`] and [`paths`] describe the
//! relational domain, [`model`] holds dependencies, [`skeleton`] instantiates
//! them, [`agg`] lifts them into abstract ground graphs, [`ci`] answers
//! conditional independence queries, [`rcd`] learns a model and [`harness`]
//! scores and benchmarks the result.

pub mod agg;
pub mod ci;
pub mod harness;
pub mod model;
pub mod paths;
pub mod rcd;
pub mod schema;
pub mod skeleton;

pub use agg::{build_agg, build_all, Agg, AggError, AggSet, Direction, Orientation};
pub use ci::{
    find_sepset, oracle_ci, regression_ci, CiBackend, CiError, CiQuery, CiStats, OracleCi, RegressionCi,
    RegressionParams, SepsetStore,
};
pub use harness::{brute_force_pattern, rule_profile, run_bench, score, BenchReport, HarnessError, TrialConfig, TrialMetrics};
pub use model::{
    is_canonical, parse_dependency, parse_variable, potential_dependencies, random_model, reverse_dependency,
    ModelDoc, ModelError, ModelParams, RelationalDependency, RelationalModel, RelationalVariable,
};
pub use paths::{cardinality, enumerate_paths, extend, is_valid, parse_path, PathError, RelationalPath};
pub use rcd::{majority_vote, phase1, rcd_learn, LearnConfig, LearnedPattern, RboOrder, RcdError, Rule};
pub use schema::{
    random_schema, validate_schema, AttrId, Cardinality, ItemId, Schema, SchemaDoc, SchemaError, SchemaParams,
};
pub use skeleton::{
    dsep_ground, ground_graph, load_skeleton, random_skeleton, sample_data, save_skeleton, GroundGraph,
    SampleParams, Skeleton, SkeletonError,
};

/// Any error raised by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Agg(#[from] AggError),
    #[error(transparent)]
    Ci(#[from] CiError),
    #[error(transparent)]
    Rcd(#[from] RcdError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}
