//! Shared fixtures for the benchmark suite.

use coalfarris_core::harness::{triplet_species_tree, TripletTreeParams};
use coalfarris_core::trees::SpeciesPhylogeny;

/// The non-ultrametric desk-scale tree used across benches.
pub fn bench_tree() -> SpeciesPhylogeny {
    let params = TripletTreeParams {
        mu_cherry_a: 0.45,
        mu_cherry_b: 0.15,
        mu_internal: 0.25,
        mu_outgroup: 0.35 / 1.2,
        root_mu: 0.15,
        ..TripletTreeParams::default()
    };
    triplet_species_tree(0.2, &params).expect("valid bench tree")
}
