//! Ultrametric reduction: fix gene-tree topologies through empirical
//! quantile windows, estimate root-distance differences, and apply the
//! stochastic Farris transform to the sequence data.
//!
//! The reduction works on a three-taxon dataset split into four gene sets.
//! Thresholds come from first-half p-distances of genes in R1 only; the
//! window predicate selects genes from R2 on their first-half p-distances;
//! the difference estimates average second-half p-distances over the
//! selected set before the log correction. Q1 and Q2 are untouched until
//! the transform, which adds calibrated mod-4 noise per taxon so the
//! output mimics an ultrametric coalescent process.

use crate::seqevo::{p_distances, p_of_distance, PDistanceTable, PackedSeq, SequenceDataset};
use crate::streams::{domain, StreamKey};
use crate::trees::TaxonId;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("empty value list has no quantiles")]
    EmptyQuantileInput,
    #[error("no genes selected for pair ({0}, {1})")]
    EmptySelection(TaxonId, TaxonId),
    #[error("difference estimation failed for pair {pair:?}: mean p-distance {value} is not usable")]
    EstimationFailure { pair: (TaxonId, TaxonId), value: f64 },
    #[error("partition sets must be disjoint, nonempty, and cover 0..{m}")]
    BadPartition { m: usize },
    #[error("partition fractions must be positive and sum to at most 1")]
    BadFractions,
    #[error("reduction needs exactly 3 taxa, got {0}")]
    NotThreeTaxa(usize),
    #[error("reduction failed after {retries} partition retries: {source}")]
    RetriesExhausted {
        retries: u32,
        #[source]
        source: Box<ReductionError>,
    },
}

/// Disjoint gene-index sets partitioning `0..m`, all nonempty.
#[derive(Clone, Debug)]
pub struct GenePartition {
    r1: Vec<usize>,
    r2: Vec<usize>,
    q1: Vec<usize>,
    q2: Vec<usize>,
    m: usize,
}

impl GenePartition {
    pub fn new(
        r1: Vec<usize>,
        r2: Vec<usize>,
        q1: Vec<usize>,
        q2: Vec<usize>,
        m: usize,
    ) -> Result<Self, ReductionError> {
        let mut seen = vec![false; m];
        let sets = [&r1, &r2, &q1, &q2];
        if sets.iter().any(|s| s.is_empty()) {
            return Err(ReductionError::BadPartition { m });
        }
        let mut count = 0usize;
        for s in sets {
            for &i in s {
                if i >= m || seen[i] {
                    return Err(ReductionError::BadPartition { m });
                }
                seen[i] = true;
                count += 1;
            }
        }
        if count != m {
            return Err(ReductionError::BadPartition { m });
        }
        Ok(GenePartition { r1, r2, q1, q2, m })
    }

    /// Random partition by shuffling `0..m` and cutting at the fraction
    /// boundaries (Q2 takes the remainder).
    pub fn from_fractions<R: Rng + ?Sized>(
        m: usize,
        fractions: &PartitionFractions,
        rng: &mut R,
    ) -> Result<Self, ReductionError> {
        fractions.validate()?;
        let n1 = ((fractions.r1 * m as f64) as usize).max(1);
        let n2 = ((fractions.r2 * m as f64) as usize).max(1);
        let nq1 = ((fractions.q1 * m as f64) as usize).max(1);
        if n1 + n2 + nq1 >= m {
            return Err(ReductionError::BadPartition { m });
        }
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(rng);
        let r1 = idx[..n1].to_vec();
        let r2 = idx[n1..n1 + n2].to_vec();
        let q1 = idx[n1 + n2..n1 + n2 + nq1].to_vec();
        let q2 = idx[n1 + n2 + nq1..].to_vec();
        GenePartition::new(r1, r2, q1, q2, m)
    }

    pub fn r1(&self) -> &[usize] {
        &self.r1
    }

    pub fn r2(&self) -> &[usize] {
        &self.r2
    }

    pub fn q1(&self) -> &[usize] {
        &self.q1
    }

    pub fn q2(&self) -> &[usize] {
        &self.q2
    }

    pub fn m(&self) -> usize {
        self.m
    }
}

/// Partition fractions for (R1, R2, Q1); Q2 takes the remainder.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PartitionFractions {
    pub r1: f64,
    pub r2: f64,
    pub q1: f64,
    pub q2: f64,
}

impl Default for PartitionFractions {
    fn default() -> Self {
        PartitionFractions { r1: 0.1, r2: 0.2, q1: 0.1, q2: 0.6 }
    }
}

impl PartitionFractions {
    pub fn validate(&self) -> Result<(), ReductionError> {
        let parts = [self.r1, self.r2, self.q1, self.q2];
        if !parts.iter().all(|f| f.is_finite() && *f > 0.0) || parts.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(ReductionError::BadFractions);
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ReductionConfig {
    pub fractions: PartitionFractions,
    /// Clamp ceiling for averaged p-distances before the log correction.
    pub clamp_max: f64,
    /// Partition reshuffles allowed on empty selection.
    pub retries: u32,
    /// Keep the 5/6 upper window constraints (disable for ablation).
    pub use_upper_window: bool,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig {
            fractions: PartitionFractions::default(),
            clamp_max: 0.74,
            retries: 3,
            use_upper_window: true,
        }
    }
}

/// Empirical beta-quantile: the max(1, floor(beta * N))-th order statistic
/// of a stable ascending sort. The floor carries a 1e-9 guard so exact
/// fractions like 1/3 and 5/6 do not fall off integer boundaries through
/// binary representation error; beta at or above 1 clamps to the maximum.
pub fn empirical_quantile(values: &[f64], beta: f64) -> Result<f64, ReductionError> {
    if values.is_empty() {
        return Err(ReductionError::EmptyQuantileInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(sorted[quantile_index(values.len(), beta)])
}

pub(crate) fn quantile_index(n: usize, beta: f64) -> usize {
    let idx = (beta * n as f64 + 1e-9).floor() as i64;
    (idx.max(1).min(n as i64) - 1) as usize
}

/// The five thresholds of the window predicate for one oriented pair.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Thresholds {
    pub t_xy: f64,
    pub t_xz_lo: f64,
    pub t_xz_hi: f64,
    pub t_yz_lo: f64,
    pub t_yz_hi: f64,
}

/// Genes selected as (with high probability) having topology xy|z, plus the
/// thresholds that selected them.
#[derive(Clone, Debug)]
pub struct SelectedSet {
    pub pair: (TaxonId, TaxonId),
    pub apart: TaxonId,
    pub genes: Vec<usize>,
    pub thresholds: Thresholds,
}

/// Compute the window thresholds from R1 first-half p-distances and select
/// from R2 the genes whose first-half p-distances satisfy
/// `p_xy <= t(1/3)`, `t(2/3) <= p_xz <= t(5/6)`, `t(2/3) <= p_yz <= t(5/6)`.
pub fn select_topology_fixed_genes(
    tbl: &PDistanceTable,
    part: &GenePartition,
    pair: (TaxonId, TaxonId),
    apart: TaxonId,
    cfg: &ReductionConfig,
) -> Result<SelectedSet, ReductionError> {
    let (x, y) = pair;
    let z = apart;
    let p_xy = tbl.pair_index(x, y);
    let p_xz = tbl.pair_index(x, z);
    let p_yz = tbl.pair_index(y, z);
    let r1_vals = |pair_idx: usize| -> Vec<f64> {
        part.r1().iter().map(|&g| tbl.first_half(g, pair_idx)).collect()
    };
    let thresholds = Thresholds {
        t_xy: empirical_quantile(&r1_vals(p_xy), 1.0 / 3.0)?,
        t_xz_lo: empirical_quantile(&r1_vals(p_xz), 2.0 / 3.0)?,
        t_xz_hi: empirical_quantile(&r1_vals(p_xz), 5.0 / 6.0)?,
        t_yz_lo: empirical_quantile(&r1_vals(p_yz), 2.0 / 3.0)?,
        t_yz_hi: empirical_quantile(&r1_vals(p_yz), 5.0 / 6.0)?,
    };
    let upper = cfg.use_upper_window;
    let genes: Vec<usize> = part
        .r2()
        .iter()
        .copied()
        .filter(|&g| {
            tbl.first_half(g, p_xy) <= thresholds.t_xy
                && tbl.first_half(g, p_xz) >= thresholds.t_xz_lo
                && (!upper || tbl.first_half(g, p_xz) <= thresholds.t_xz_hi)
                && tbl.first_half(g, p_yz) >= thresholds.t_yz_lo
                && (!upper || tbl.first_half(g, p_yz) <= thresholds.t_yz_hi)
        })
        .collect();
    if genes.is_empty() {
        return Err(ReductionError::EmptySelection(x, y));
    }
    Ok(SelectedSet { pair, apart, genes, thresholds })
}

/// Difference estimate for a selected set: average the second-half
/// p-distances over the set for each cross pair, clamp into
/// `[0, clamp_max]` (counting clamp events), and take the difference of
/// log corrections. Returns the estimate and the clamp count.
pub fn estimate_delta(
    tbl: &PDistanceTable,
    sel: &SelectedSet,
    clamp_max: f64,
) -> Result<(f64, u32), ReductionError> {
    let (x, y) = sel.pair;
    let z = sel.apart;
    let mut clamps = 0u32;
    let mut mean_corrected = |a: TaxonId, b: TaxonId| -> Result<f64, ReductionError> {
        let idx = tbl.pair_index(a, b);
        let mean = sel.genes.iter().map(|&g| tbl.second_half(g, idx)).sum::<f64>()
            / sel.genes.len() as f64;
        if !mean.is_finite() {
            return Err(ReductionError::EstimationFailure { pair: (a, b), value: mean });
        }
        let clamped = if mean > clamp_max {
            clamps += 1;
            clamp_max
        } else {
            mean
        };
        crate::seqevo::distance_of_p(clamped)
            .map_err(|_| ReductionError::EstimationFailure { pair: (a, b), value: clamped })
    };
    let d_xz = mean_corrected(x, z)?;
    let d_yz = mean_corrected(y, z)?;
    Ok((d_xz - d_yz, clamps))
}

/// Antisymmetric root-distance difference estimates over three taxa.
/// Two pairs are estimated directly; the third is defined by additivity,
/// so `delta(1,2) = delta(1,0) - delta(2,0)` holds bit-exactly.
#[derive(Clone, Debug)]
pub struct DeltaEstimates {
    /// Values for the ordered pairs (0,1), (0,2), (1,2).
    d: [f64; 3],
    pub selected: Vec<SelectedSet>,
    pub clamp_events: u32,
}

impl DeltaEstimates {
    /// Build from the two directly estimated pairs (0,1) and (0,2); the
    /// (1,2) entry is derived by additivity.
    pub fn from_direct(d01: f64, d02: f64, selected: Vec<SelectedSet>, clamp_events: u32) -> Self {
        DeltaEstimates { d: [d01, d02, d02 - d01], selected, clamp_events }
    }

    /// Exact differences (no estimation), for oracle transform runs.
    pub fn oracle(d01: f64, d02: f64) -> Self {
        DeltaEstimates::from_direct(d01, d02, Vec::new(), 0)
    }

    /// Signed difference estimate for the ordered pair (x, y).
    pub fn delta(&self, x: TaxonId, y: TaxonId) -> f64 {
        debug_assert!(x < 3 && y < 3 && x != y);
        let v = match (x.min(y), x.max(y)) {
            (0, 1) => self.d[0],
            (0, 2) => self.d[1],
            _ => self.d[2],
        };
        if x < y {
            v
        } else {
            -v
        }
    }
}

/// Output of the end-to-end reduction.
pub struct ReductionOutput {
    /// Transformed data over the quantile genes (Q1 order then Q2 order).
    pub noisy: SequenceDataset,
    /// How many leading genes of `noisy` belong to Q1.
    pub q1_len: usize,
    pub deltas: DeltaEstimates,
    /// Taxon whose sequences pass through unchanged.
    pub reference_taxon: TaxonId,
    pub clamp_events: u32,
    /// Partition reshuffles consumed before success.
    pub retries_used: u32,
}

/// Stochastic Farris transform with the given difference estimates: pick
/// the reference taxon z maximizing `delta(z,x) + delta(z,y)` (ties to the
/// lowest id), keep its sequences, and pass every other taxon's sites
/// through an independent mod-4 noise channel of strength
/// `p(max(delta(z,x), 0))` — each nonzero noise symbol with probability
/// p/3.
///
/// Gene and taxon streams are split off `key`, so the transform is a pure
/// function of the key regardless of gene count or evaluation order.
pub fn stochastic_farris_transform(
    data: &SequenceDataset,
    deltas: &DeltaEstimates,
    key: StreamKey,
) -> Result<(SequenceDataset, TaxonId), ReductionError> {
    let n = data.num_taxa();
    if n != 3 {
        return Err(ReductionError::NotThreeTaxa(n));
    }
    let score = |z: TaxonId| {
        let others: Vec<TaxonId> = (0..3).filter(|&t| t != z).collect();
        deltas.delta(z, others[0]) + deltas.delta(z, others[1])
    };
    // first maximal index, so ties resolve to the lowest taxon id
    let mut reference = 0;
    for z in 1..3 {
        if score(z) > score(reference) {
            reference = z;
        }
    }
    let mut strength = [0.0f64; 3];
    for (t, s) in strength.iter_mut().enumerate() {
        if t != reference {
            // residual negatives are estimation error; clamp to zero
            let d = deltas.delta(reference, t).max(0.0);
            *s = p_of_distance(d).expect("clamped difference is nonnegative");
        }
    }
    let mut out = SequenceDataset::new(data.taxa().to_vec(), data.sites(), data.seed());
    for gene in 0..data.num_genes() {
        let gene_key = key.child(domain::TRANSFORM).child(gene as u64);
        let mut seqs: Vec<PackedSeq> = Vec::with_capacity(3);
        for (t, &p) in strength.iter().enumerate() {
            if t == reference || p == 0.0 {
                seqs.push(data.seq(gene, t).clone());
                continue;
            }
            let mut rng = gene_key.child(t as u64).rng();
            let mut symbols = data.seq(gene, t).symbols();
            for s in symbols.iter_mut() {
                let u: f64 = rng.random();
                if u < p {
                    let eps: u8 = rng.random_range(1..4);
                    *s = (*s + eps) % 4;
                }
            }
            seqs.push(PackedSeq::from_symbols(&symbols));
        }
        out.push_gene(seqs).expect("taxon count and site count preserved");
    }
    Ok((out, reference))
}

/// The reduction end to end on a three-taxon dataset: p-distance table,
/// the two directly estimated pairs ((0,1) with z=2, then (0,2) with z=1),
/// the third pair by additivity, then the stochastic Farris transform over
/// the quantile genes.
pub fn run_reduction(
    data: &SequenceDataset,
    part: &GenePartition,
    cfg: &ReductionConfig,
    key: StreamKey,
) -> Result<ReductionOutput, ReductionError> {
    let n = data.num_taxa();
    if n != 3 {
        return Err(ReductionError::NotThreeTaxa(n));
    }
    let tbl = p_distances(data, &[(0, 1), (0, 2), (1, 2)]);
    let sel01 = select_topology_fixed_genes(&tbl, part, (0, 1), 2, cfg)?;
    let sel02 = select_topology_fixed_genes(&tbl, part, (0, 2), 1, cfg)?;
    let (d01, c1) = estimate_delta(&tbl, &sel01, cfg.clamp_max)?;
    let (d02, c2) = estimate_delta(&tbl, &sel02, cfg.clamp_max)?;
    let deltas = DeltaEstimates::from_direct(d01, d02, vec![sel01, sel02], c1 + c2);
    let mq: Vec<usize> = part.q1().iter().chain(part.q2()).copied().collect();
    let q_data = data.restrict_genes(&mq).expect("partition indices are in range");
    let (noisy, reference_taxon) = stochastic_farris_transform(&q_data, &deltas, key)?;
    let clamp_events = deltas.clamp_events;
    Ok(ReductionOutput {
        noisy,
        q1_len: part.q1().len(),
        deltas,
        reference_taxon,
        clamp_events,
        retries_used: 0,
    })
}

/// [`run_reduction`] with the empty-selection retry policy: the partition
/// is redrawn from the configured fractions (up to `cfg.retries` extra
/// times) before giving up.
pub fn run_reduction_with_retries(
    data: &SequenceDataset,
    cfg: &ReductionConfig,
    key: StreamKey,
) -> Result<ReductionOutput, ReductionError> {
    let m = data.num_genes();
    let mut last_err = None;
    for attempt in 0..=cfg.retries {
        let attempt_key = key.child(domain::ATTEMPT).child(attempt as u64);
        let mut rng = attempt_key.child(domain::PARTITION).rng();
        let part = GenePartition::from_fractions(m, &cfg.fractions, &mut rng)?;
        match run_reduction(data, &part, cfg, attempt_key) {
            Ok(mut out) => {
                out.retries_used = attempt;
                return Ok(out);
            }
            Err(e @ ReductionError::EmptySelection(..)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(ReductionError::RetriesExhausted {
        retries: cfg.retries,
        source: Box::new(last_err.expect("loop ran at least once")),
    })
}
