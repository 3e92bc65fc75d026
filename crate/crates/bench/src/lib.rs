//! Shared fixtures for the criterion benchmarks in `benches/`.

use acqlab::generate::{self, GenKind, GenOptions};
use acqlab::{Dims, GameInstance};

/// The two-agent instance with informative-action cost `1/24`.
pub fn counterexample() -> GameInstance {
    generate::gen_counterexample(1.0 / 24.0, 1.0).expect("valid cost")
}

/// A two-agent instance on which every action can be strictly incentivized.
pub fn learnable_instance() -> GameInstance {
    let opts = GenOptions { cost_scale: 0.05, concentration: 0.2, ..GenOptions::default() };
    generate::gen_random(GenKind::General, dims(2, 2, 2, 2, 2), 4, 0.25, 0.8, &opts).expect("generator succeeds")
}

/// Seeded random instances with default generator options and no rejection thresholds.
pub fn random_instances(kind: GenKind, dims: Dims, count: u64) -> Vec<GameInstance> {
    (0..count).map(|seed| generate::gen_random(kind, dims, seed, 0.0, 0.0, &GenOptions::default()).expect("generator succeeds")).collect()
}

/// Shorthand for [`Dims::new`] on valid cardinalities.
pub fn dims(n: usize, k: usize, l: usize, m: usize, d: usize) -> Dims {
    Dims::new(n, k, l, m, d).expect("positive cardinalities")
}
