//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use rcd_core::harness::{generate_truth, TrialConfig};
use rcd_core::model::movie_model;
use rcd_core::{ground_graph, random_skeleton, sample_data, RelationalModel, SampleParams, Skeleton};

/// A feasible random model with the given shape, found by scanning trials.
pub fn random_truth(entities: usize, deps: usize) -> RelationalModel {
    let config = TrialConfig::default();
    (0..)
        .find_map(|trial| generate_truth(entities, deps, trial, &config).unwrap())
        .unwrap()
}

/// Movie data with `n` actors and `n` movies sampled from the movie model.
pub fn movie_data(n: usize, seed: u64) -> (RelationalModel, Arc<Skeleton>) {
    let m = movie_model();
    let density = 2.0 / n as f64;
    let skel = random_skeleton(m.schema_arc().clone(), &[n, n], density, seed).unwrap();
    let g = ground_graph(&m, &skel).unwrap();
    let values = sample_data(&g, seed, SampleParams::default()).unwrap();
    (m, Arc::new(skel.with_values(values).unwrap()))
}
