//! Shared fixtures for the criterion benchmarks.

use causalref::rng::{tagged_rng, StreamTag};
use causalref::sim::{simulate_trial, ScenarioConfig};
use causalref::TrialDataset;

/// One simulated high-discontinuation trial with `n_per_arm` patients per arm.
pub fn trial(n_per_arm: usize) -> TrialDataset {
    let mut s = ScenarioConfig::bundled("high_alt").expect("bundled scenario");
    s.n_per_arm = n_per_arm;
    simulate_trial(&s, &mut tagged_rng(s.seed, 0, StreamTag::Simulate)).expect("simulation")
}
