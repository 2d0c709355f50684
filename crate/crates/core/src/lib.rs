//! Simulation and inference toolkit for species-tree estimation under the
//! multispecies coalescent with Jukes-Cantor sequence evolution.
//!
//! The pipeline: sample gene trees from the coalescent ([`msc`]), evolve
//! sequences on them ([`seqevo`]), reduce the data to the molecular-clock
//! case with a stochastic Farris transform ([`reduction`]), decide rooted
//! triplet topologies with a quantile test ([`triplet_test`]), and assemble
//! the full species-tree topology from triplets ([`reconstruct`]). The
//! [`harness`] module drives reproducible Monte-Carlo experiments over all
//! of it.

pub mod harness;
pub mod msc;
pub mod reconstruct;
pub mod reduction;
pub mod seqevo;
pub mod stats;
pub mod streams;
pub mod trees;

pub use streams::StreamKey;
pub use trees::{
    DistanceMatrix, GeneTree, RegimeConfig, RootedTopology, SpeciesPhylogeny, Taxon, TaxonId,
    TripletTopology,
};
