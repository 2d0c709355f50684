//! Reproducible end-to-end experiments: dataset generation, success curves
//! over (m, k, f) grids, and Monte-Carlo identifiability checks.
//!
//! Every trial draws from substreams keyed on (seed, f-bits, m, k, trial),
//! so a grid point's trials are unchanged when other points are added or
//! removed, and results are identical across thread counts. Wall-clock
//! times are tracked in memory but never written to result files, which
//! must be byte-identical for a given (config, seed).

pub mod report;

use crate::msc::{pairwise_excess_density, sample_gene_tree, sample_gene_tree_traced, Population};
use crate::reduction::{
    run_reduction_with_retries, PartitionFractions, ReductionConfig, ReductionError,
};
use crate::seqevo::{evolve_sequences, SequenceDataset};
use crate::stats;
use crate::streams::{domain, StreamKey};
use crate::trees::{
    parse_species_newick, random_species_tree, NewickError, RegimeConfig, RootedTopology, Shape,
    SpeciesPhylogeny, Taxon, TreeError, TripletTopology,
};
use crate::triplet_test::{quantile_triplet_test, TripletTestError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Newick(#[from] NewickError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    TripletTest(#[from] TripletTestError),
    #[error("io error at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Tunable constants of the pipeline, echoed into every report.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Constants {
    pub c3: f64,
    pub fractions: PartitionFractions,
    /// Closeness target for the reduction (reporting only).
    pub phi: f64,
    pub clamp_max: f64,
    pub retries: u32,
    pub use_upper_window: bool,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            c3: 1.0,
            fractions: PartitionFractions::default(),
            phi: 0.05,
            clamp_max: 0.74,
            retries: 3,
            use_upper_window: true,
        }
    }
}

impl Constants {
    pub fn reduction_config(&self) -> ReductionConfig {
        ReductionConfig {
            fractions: self.fractions,
            clamp_max: self.clamp_max,
            retries: self.retries,
            use_upper_window: self.use_upper_window,
        }
    }
}

/// Parameterized three-taxon tree family for grid experiments: cherry
/// leaves of length `tau_leaf`, internal branch of the grid's `f`, and an
/// outgroup leaf of `tau_leaf + f` (balanced in coalescent units; rate
/// differences decide whether the weighted tree is ultrametric).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TripletTreeParams {
    pub tau_leaf: f64,
    pub mu_cherry_a: f64,
    pub mu_cherry_b: f64,
    pub mu_internal: f64,
    pub mu_outgroup: f64,
    pub root_mu: f64,
}

impl Default for TripletTreeParams {
    fn default() -> Self {
        TripletTreeParams {
            tau_leaf: 1.0,
            mu_cherry_a: 0.25,
            mu_cherry_b: 0.25,
            mu_internal: 0.25,
            mu_outgroup: 0.25,
            root_mu: 0.25,
        }
    }
}

/// Build the three-taxon tree for internal length `f`.
pub fn triplet_species_tree(
    f: f64,
    p: &TripletTreeParams,
) -> Result<SpeciesPhylogeny, TreeError> {
    let taxa: Vec<Taxon> = (0..3)
        .map(|i| Taxon { id: i, label: format!("{}", i + 1) })
        .collect();
    let shape = Shape::Node(vec![
        Shape::Node(vec![Shape::Leaf(0), Shape::Leaf(1)]),
        Shape::Leaf(2),
    ]);
    let topo = RootedTopology::from_shape(&shape, taxa)?;
    // node order from the shape walk: root, cherry, leaf0, leaf1, leaf2
    let tau = vec![0.0, f, p.tau_leaf, p.tau_leaf, p.tau_leaf + f];
    let mu = vec![0.0, p.mu_internal, p.mu_cherry_a, p.mu_cherry_b, p.mu_outgroup];
    SpeciesPhylogeny::new(topo, tau, mu, p.root_mu)
}

/// Tree source for experiments: a fixed Newick string (the grid's f is
/// then a label only), the parameterized triplet family driven by f, or a
/// fresh regime-random three-taxon tree per trial (the grid's f replaces
/// the regime's internal lower bound).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeSpecConfig {
    Newick { newick: String },
    Triplet { params: TripletTreeParams },
    Random { regime: RegimeConfig },
}

impl Default for TreeSpecConfig {
    fn default() -> Self {
        TreeSpecConfig::Triplet { params: TripletTreeParams::default() }
    }
}

pub const EXPERIMENT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub tree: TreeSpecConfig,
    pub m_grid: Vec<usize>,
    pub k_grid: Vec<usize>,
    pub f_grid: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: u32,
    pub seed: u64,
    #[serde(default)]
    pub constants: Constants,
    /// Worker threads; never serialized, so emitted reports and config
    /// hashes are identical across thread counts.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    /// Per-grid-point wall-time budget; once a point exceeds it, the
    /// remaining points are emitted as skipped markers. Budgeted runs are
    /// inherently wall-clock dependent.
    #[serde(default)]
    pub point_budget_secs: Option<f64>,
}

fn default_trials() -> u32 {
    200
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.m_grid.is_empty() || self.k_grid.is_empty() || self.f_grid.is_empty() {
            return Err(HarnessError::BadConfig("grids must be nonempty".into()));
        }
        if self.trials == 0 {
            return Err(HarnessError::BadConfig("trials must be >= 1".into()));
        }
        if !self.f_grid.iter().all(|f| f.is_finite() && *f > 0.0) {
            return Err(HarnessError::BadConfig("f values must be positive".into()));
        }
        Ok(())
    }

    /// The tree for a grid point; random specs get a per-trial substream.
    pub fn tree_for_trial(
        &self,
        f: f64,
        trial_key: StreamKey,
    ) -> Result<SpeciesPhylogeny, HarnessError> {
        match &self.tree {
            TreeSpecConfig::Newick { newick } => Ok(parse_species_newick(newick)?),
            TreeSpecConfig::Triplet { params } => Ok(triplet_species_tree(f, params)?),
            TreeSpecConfig::Random { regime } => {
                let mut regime = regime.clone();
                regime.f = f;
                if regime.g <= regime.f {
                    return Err(HarnessError::BadConfig(format!(
                        "grid f = {f} reaches the regime's internal upper bound g = {}",
                        regime.g
                    )));
                }
                let mut rng = trial_key.child(domain::TREE).rng();
                Ok(random_species_tree(3, &regime, &mut rng)?)
            }
        }
    }

    /// Fixed-tree view (first trial's tree; identical across trials except
    /// for random specs).
    pub fn tree_for(&self, f: f64) -> Result<SpeciesPhylogeny, HarnessError> {
        self.tree_for_trial(f, StreamKey::from_seed(self.seed))
    }
}

/// Long sequences when k * f^2 >= 1, short otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Long,
    Short,
}

pub fn regime_of(k: usize, f: f64) -> Regime {
    if (k as f64) * f * f >= 1.0 {
        Regime::Long
    } else {
        Regime::Short
    }
}

/// One simulated dataset: m independent gene trees, each evolved for k
/// sites, fully determined by the seed.
pub fn run_msc_jc(s: &SpeciesPhylogeny, m: usize, k: usize, seed: u64) -> SequenceDataset {
    run_msc_jc_keyed(s, m, k, StreamKey::from_seed(seed), seed)
}

/// The gene trees behind [`run_msc_jc`] for the same seed: gene `i`'s tree
/// comes from the identical substream, so these are exactly the
/// genealogies the dataset was evolved on.
pub fn sample_gene_trees(s: &SpeciesPhylogeny, m: usize, seed: u64) -> Vec<crate::GeneTree> {
    let key = StreamKey::from_seed(seed);
    (0..m)
        .map(|gene| {
            let mut rng = key.child(domain::GENE_TREE).child(gene as u64).rng();
            sample_gene_tree(s, &mut rng)
        })
        .collect()
}

/// Keyed variant used inside trials; `seed` only labels the dataset.
pub fn run_msc_jc_keyed(
    s: &SpeciesPhylogeny,
    m: usize,
    k: usize,
    key: StreamKey,
    seed: u64,
) -> SequenceDataset {
    let mut data = SequenceDataset::new(s.taxa().to_vec(), k, seed);
    for gene in 0..m {
        let mut tree_rng = key.child(domain::GENE_TREE).child(gene as u64).rng();
        let g = sample_gene_tree(s, &mut tree_rng);
        let mut site_rng = key.child(domain::SITES).child(gene as u64).rng();
        data.push_gene(evolve_sequences(&g, k, &mut site_rng))
            .expect("per-gene sequences match the dataset shape");
    }
    data
}

/// Outcome of one pipeline trial.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: u32,
    pub truth: TripletTopology,
    pub declared: TripletTopology,
    pub correct: bool,
    /// Max over pairs of |estimated - true| root-distance difference.
    pub delta_err_max: Option<f64>,
    /// Smallest selected-set size across the two estimated pairs.
    pub i_size_min: Option<usize>,
    pub clamp_events: u32,
    pub retries_used: u32,
    /// Wall time, in-memory only; never written to result files.
    pub wall: Duration,
}

/// All trials of one grid point plus its summary.
#[derive(Clone, Debug)]
pub struct GridPointResult {
    pub f: f64,
    pub m: usize,
    pub k: usize,
    pub regime: Regime,
    pub trials: Vec<TrialResult>,
    pub successes: u32,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Marker for points not run because a previous point blew the budget.
    pub skipped: bool,
}

/// One end-to-end trial: simulate, reduce (with partition retries), run
/// the quantile test, compare against the species-tree truth.
pub fn run_single_trial(
    s: &SpeciesPhylogeny,
    truth: TripletTopology,
    m: usize,
    k: usize,
    constants: &Constants,
    trial: u32,
    trial_key: StreamKey,
) -> TrialResult {
    let start = Instant::now();
    let data = run_msc_jc_keyed(s, m, k, trial_key.child(domain::DATA), trial_key.value());
    let cfg = constants.reduction_config();
    let (_, root_dists) = s.species_metric_with_root();
    match run_reduction_with_retries(&data, &cfg, trial_key) {
        Ok(out) => {
            let q1: Vec<usize> = (0..out.q1_len).collect();
            let q2: Vec<usize> = (out.q1_len..out.noisy.num_genes()).collect();
            let (declared, _state) =
                quantile_triplet_test(&out.noisy, &q1, &q2, m, constants.c3)
                    .expect("reduction output is a valid three-taxon dataset");
            let mut delta_err_max = 0.0f64;
            for x in 0..3 {
                for y in 0..3 {
                    if x != y {
                        let true_d = root_dists[x] - root_dists[y];
                        delta_err_max =
                            delta_err_max.max((out.deltas.delta(x, y) - true_d).abs());
                    }
                }
            }
            let i_min = out.deltas.selected.iter().map(|s| s.genes.len()).min();
            TrialResult {
                trial,
                truth,
                declared,
                correct: declared == truth,
                delta_err_max: Some(delta_err_max),
                i_size_min: i_min,
                clamp_events: out.clamp_events,
                retries_used: out.retries_used,
                wall: start.elapsed(),
            }
        }
        Err(_) => TrialResult {
            trial,
            truth,
            declared: TripletTopology::Unresolved,
            correct: false,
            delta_err_max: None,
            i_size_min: None,
            clamp_events: 0,
            retries_used: constants.retries,
            wall: start.elapsed(),
        },
    }
}

fn resolve_threads(cfg: &ExperimentConfig) -> usize {
    cfg.threads
        .or_else(|| {
            std::env::var("COALFARRIS_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
        .max(1)
}

/// Run the full grid. Trials within a point run on a worker pool; results
/// are ordered by trial id before any aggregation, so output bytes do not
/// depend on the thread count.
pub fn success_curve(cfg: &ExperimentConfig) -> Result<Vec<GridPointResult>, HarnessError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_threads(cfg))
        .build()?;
    let root = StreamKey::from_seed(cfg.seed).child(domain::EXPERIMENT);
    let mut out = Vec::new();
    let mut budget_blown = false;
    for &f in &cfg.f_grid {
        for &m in &cfg.m_grid {
            for &k in &cfg.k_grid {
                let regime = regime_of(k, f);
                if budget_blown {
                    out.push(GridPointResult {
                        f,
                        m,
                        k,
                        regime,
                        trials: vec![],
                        successes: 0,
                        success_rate: 0.0,
                        ci_low: 0.0,
                        ci_high: 1.0,
                        skipped: true,
                    });
                    continue;
                }
                let start = Instant::now();
                let point_key = root.child_f64(f).child(m as u64).child(k as u64);
                // validate the tree source up front so per-trial
                // construction cannot fail inside the worker pool
                let fixed_tree = match &cfg.tree {
                    TreeSpecConfig::Random { .. } => {
                        cfg.tree_for_trial(f, point_key)?;
                        None
                    }
                    _ => Some(cfg.tree_for(f)?),
                };
                let mut trials: Vec<TrialResult> = pool.install(|| {
                    (0..cfg.trials)
                        .into_par_iter()
                        .map(|t| {
                            let trial_key = point_key.child(domain::TRIAL).child(t as u64);
                            let trial_tree;
                            let tree = match &fixed_tree {
                                Some(tree) => tree,
                                None => {
                                    trial_tree = cfg
                                        .tree_for_trial(f, trial_key)
                                        .expect("random tree spec validated above");
                                    &trial_tree
                                }
                            };
                            let truth = tree
                                .restrict_to_triplet(0, 1, 2)
                                .expect("three-taxon trial tree");
                            run_single_trial(tree, truth, m, k, &cfg.constants, t, trial_key)
                        })
                        .collect()
                });
                trials.sort_by_key(|t| t.trial);
                let successes = trials.iter().filter(|t| t.correct).count() as u32;
                let (ci_low, ci_high) =
                    stats::wilson_ci(successes as u64, cfg.trials as u64, stats::Z_95);
                out.push(GridPointResult {
                    f,
                    m,
                    k,
                    regime,
                    trials,
                    successes,
                    success_rate: successes as f64 / cfg.trials as f64,
                    ci_low,
                    ci_high,
                    skipped: false,
                });
                if let Some(budget) = cfg.point_budget_secs {
                    if start.elapsed().as_secs_f64() > budget {
                        budget_blown = true;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per-permutation identifiability findings.
#[derive(Clone, Debug, Serialize)]
pub struct PermutationReport {
    pub cherry: (usize, usize),
    pub apart: usize,
    /// Genes in the quantile event (pair close, both cross pairs far).
    pub event_count: usize,
    /// Event trees whose topology is not the cherry (must be zero).
    pub topology_violations: usize,
    /// Mean of (delta_xz - delta_yz) over the event.
    pub mean_diff: f64,
    pub se_diff: f64,
    /// True mu_rx - mu_ry.
    pub delta_true: f64,
    /// Trees with the shared cross coalescence in the root population.
    pub exact_count: usize,
    /// Among those, per-tree |(delta_xz - delta_yz) - Delta| > 1e-10.
    pub exact_violations: usize,
    pub max_exact_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentifiabilityReport {
    pub samples: usize,
    pub seed: u64,
    pub permutations: Vec<PermutationReport>,
}

/// Sample gene trees and test the identifiability statements directly on
/// true gene distances: the median event implies the cherry topology, the
/// conditional mean of the cross-distance difference recovers the true
/// root-distance difference, and trees whose shared cross coalescence sits
/// in the root population satisfy the difference identity exactly.
///
/// Event thresholds are the analytic distance medians (species metric plus
/// twice the excess-mixture median): the implication is a statement about
/// true quantiles, and empirical medians leak O(sqrt(n)) boundary
/// violations because the two cross pairs share one true median.
pub fn identifiability_check(
    s: &SpeciesPhylogeny,
    n_samples: usize,
    seed: u64,
) -> Result<IdentifiabilityReport, HarnessError> {
    if s.num_taxa() != 3 {
        return Err(HarnessError::BadConfig(format!(
            "identifiability check needs a 3-leaf tree, got {} leaves",
            s.num_taxa()
        )));
    }
    let key = StreamKey::from_seed(seed).child(domain::IDENTIFIABILITY);
    let (mu, root_dists) = s.species_metric_with_root();
    let pair_cols = [(0usize, 1usize), (0, 2), (1, 2)];
    let col_of = |a: usize, b: usize| {
        pair_cols
            .iter()
            .position(|&(x, y)| (x, y) == (a.min(b), a.max(b)))
            .unwrap()
    };
    let mut dist = vec![[0.0f64; 3]; n_samples];
    let mut topo = vec![TripletTopology::Unresolved; n_samples];
    let mut root_pop = vec![[false; 3]; n_samples];
    let mut shared = vec![[false; 3]; n_samples]; // indexed by "apart" taxon
    for i in 0..n_samples {
        let mut rng = key.child(i as u64).rng();
        let sg = sample_gene_tree_traced(s, &mut rng);
        let d = sg.tree.gene_metric();
        for (c, &(a, b)) in pair_cols.iter().enumerate() {
            dist[i][c] = d.get(a, b);
            root_pop[i][c] = sg.pair_population(a, b) == Population::Root;
        }
        topo[i] = sg.tree.topology().triplet(0, 1, 2).unwrap();
        for (z, slot) in shared[i].iter_mut().enumerate() {
            let others: Vec<usize> = (0..3).filter(|&t| t != z).collect();
            *slot = sg.shared_cross_coalescence(others[0], others[1], z);
        }
    }
    let mut permutations = Vec::new();
    for &(x, y) in &pair_cols {
        let z = 3 - x - y;
        let c_xy = col_of(x, y);
        let c_xz = col_of(x, z);
        let c_yz = col_of(y, z);
        let med = |a: usize, b: usize| -> Result<f64, HarnessError> {
            let mix = pairwise_excess_density(s, a, b)
                .map_err(|e| HarnessError::BadConfig(format!("excess density: {e}")))?;
            let q = mix
                .quantile(0.5)
                .map_err(|e| HarnessError::BadConfig(format!("median: {e}")))?;
            Ok(mu.get(a, b) + 2.0 * q)
        };
        let (m_xy, m_xz, m_yz) = (med(x, y)?, med(x, z)?, med(y, z)?);
        let cherry_topo = TripletTopology::resolved(x, y, z);
        let mut event_diffs = Vec::new();
        let mut topology_violations = 0usize;
        let mut exact_count = 0usize;
        let mut exact_violations = 0usize;
        let mut max_exact_error = 0.0f64;
        let delta_true = root_dists[x] - root_dists[y];
        for i in 0..n_samples {
            let diff = dist[i][c_xz] - dist[i][c_yz];
            let in_event =
                dist[i][c_xy] <= m_xy && dist[i][c_xz] > m_xz && dist[i][c_yz] > m_yz;
            if in_event {
                event_diffs.push(diff);
                if topo[i] != cherry_topo {
                    topology_violations += 1;
                }
            }
            // exact identity: topology xy|z puts both cross coalescences at
            // the shared gene root; require it to sit in the root population
            if topo[i] == cherry_topo
                && shared[i][z]
                && root_pop[i][c_xz]
                && root_pop[i][c_yz]
            {
                exact_count += 1;
                let err = (diff - delta_true).abs();
                max_exact_error = max_exact_error.max(err);
                if err > 1e-10 {
                    exact_violations += 1;
                }
            }
        }
        let mean_diff = stats::mean(&event_diffs);
        let se_diff = stats::sample_sd(&event_diffs) / (event_diffs.len() as f64).sqrt();
        permutations.push(PermutationReport {
            cherry: (x, y),
            apart: z,
            event_count: event_diffs.len(),
            topology_violations,
            mean_diff,
            se_diff,
            delta_true,
            exact_count,
            exact_violations,
            max_exact_error,
        });
    }
    Ok(IdentifiabilityReport { samples: n_samples, seed, permutations })
}

#[cfg(test)]
mod tests;
