//! Jukes-Cantor sequence evolution and the distance/disagreement transform
//! pair.
//!
//! `p(d) = (3/4)(1 - exp(-4d/3))` maps a mutation-weighted distance to the
//! expected fraction of differing sites; `distance_of_p` is its inverse
//! (the usual log correction). Site evolution draws the root uniformly and
//! pushes each site through an independent channel per edge: the edge
//! "fires" with probability `(4/3) p(delta)` and resamples the state
//! uniformly over all four symbols, which makes the leaf disagreement
//! across an edge exactly `p(delta)` and reconciles the resample-uniform
//! and choose-among-remaining formulations.

mod dataset;

pub use dataset::{
    p_distances, DatasetError, PDistanceTable, SequenceDataset, DATASET_FORMAT_VERSION,
};

use crate::trees::GeneTree;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeqEvoError {
    #[error("distance must be nonnegative and finite, got {0}")]
    BadDistance(f64),
    #[error("disagreement probability {0} outside [0, {max})", max = MAX_INVERTIBLE_P)]
    BadProbability(f64),
    #[error("channel probabilities must lie in [0, 3/4], got {0}")]
    BadChannel(f64),
}

/// Saturation limit of the JC disagreement probability.
pub const P_SATURATION: f64 = 0.75;

/// Domain guard for the log correction: values this close to 3/4 would map
/// to distances beyond ~15.5 and amplify noise without bound.
pub const MAX_INVERTIBLE_P: f64 = P_SATURATION - 1e-9;

/// Disagreement probability across a channel of weighted length `d`.
pub fn p_of_distance(d: f64) -> Result<f64, SeqEvoError> {
    if !(d.is_finite() && d >= 0.0) {
        return Err(SeqEvoError::BadDistance(d));
    }
    Ok(0.75 * -(-4.0 * d / 3.0).exp_m1())
}

/// Inverse of [`p_of_distance`]; the caller decides any clamping policy for
/// estimates near saturation.
///
/// Near saturation `1 - 4p/3` is formed as `(3/4 - p) * 4/3`: the
/// subtraction is exact there (Sterbenz), which keeps the round trip with
/// [`p_of_distance`] at the precision the `f64` representation of `p`
/// admits.
pub fn distance_of_p(p: f64) -> Result<f64, SeqEvoError> {
    if !(p.is_finite() && (0.0..MAX_INVERTIBLE_P).contains(&p)) {
        return Err(SeqEvoError::BadProbability(p));
    }
    Ok(if p < 0.375 {
        -0.75 * (-4.0 * p / 3.0).ln_1p()
    } else {
        -0.75 * ((0.75 - p) * (4.0 / 3.0)).ln()
    })
}

/// Serial composition of two JC channels:
/// `p1 + p2 - (4/3) p1 p2`, so that `compose(p(a), p(b)) = p(a + b)`.
pub fn compose_channels(p1: f64, p2: f64) -> Result<f64, SeqEvoError> {
    for p in [p1, p2] {
        if !(p.is_finite() && (0.0..=P_SATURATION).contains(&p)) {
            return Err(SeqEvoError::BadChannel(p));
        }
    }
    Ok(p1 + p2 - 4.0 / 3.0 * p1 * p2)
}

/// 2-bit packed symbol sequence over {0,1,2,3} = {A,T,G,C}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedSeq {
    bytes: Vec<u8>,
    len: usize,
}

pub const DNA_SYMBOLS: [char; 4] = ['A', 'T', 'G', 'C'];

impl PackedSeq {
    pub fn from_symbols(symbols: &[u8]) -> Self {
        let mut bytes = vec![0u8; symbols.len().div_ceil(4)];
        for (i, &s) in symbols.iter().enumerate() {
            debug_assert!(s < 4);
            bytes[i / 4] |= (s & 0b11) << ((i % 4) * 2);
        }
        PackedSeq { bytes, len: symbols.len() }
    }

    pub(crate) fn from_raw(bytes: Vec<u8>, len: usize) -> Self {
        PackedSeq { bytes, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> u8 {
        (self.bytes[i / 4] >> ((i % 4) * 2)) & 0b11
    }

    pub fn symbols(&self) -> Vec<u8> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn to_dna_string(&self) -> String {
        (0..self.len).map(|i| DNA_SYMBOLS[self.get(i) as usize]).collect()
    }

    /// Number of differing sites. Padding bits are zero in both sequences,
    /// so whole-byte XOR popcount needs no tail mask.
    pub fn hamming(&self, other: &PackedSeq) -> u32 {
        assert_eq!(self.len, other.len);
        self.bytes
            .iter()
            .zip(&other.bytes)
            .map(|(&a, &b)| {
                let x = a ^ b;
                (((x >> 1) | x) & 0b0101_0101).count_ones()
            })
            .sum()
    }

    /// Differing sites within `[start, end)`.
    pub fn hamming_range(&self, other: &PackedSeq, start: usize, end: usize) -> u32 {
        assert_eq!(self.len, other.len);
        assert!(start <= end && end <= self.len);
        let lane_mask = |from: usize, to: usize| -> u8 {
            // mask of 2-bit lanes [from, to) within a byte
            let mut m = 0u8;
            for lane in from..to {
                m |= 0b11 << (lane * 2);
            }
            m
        };
        let (b0, r0) = (start / 4, start % 4);
        let (b1, r1) = (end / 4, end % 4);
        let diff = |a: u8, b: u8, mask: u8| -> u32 {
            let x = (a ^ b) & mask;
            (((x >> 1) | x) & 0b0101_0101).count_ones()
        };
        if b0 == b1 {
            if start == end {
                return 0;
            }
            return diff(self.bytes[b0], other.bytes[b0], lane_mask(r0, r1));
        }
        let mut total = 0u32;
        if r0 != 0 {
            total += diff(self.bytes[b0], other.bytes[b0], lane_mask(r0, 4));
        } else {
            total += diff(self.bytes[b0], other.bytes[b0], 0xff);
        }
        for i in (b0 + 1)..b1 {
            total += diff(self.bytes[i], other.bytes[i], 0xff);
        }
        if r1 != 0 {
            total += diff(self.bytes[b1], other.bytes[b1], lane_mask(0, r1));
        }
        total
    }
}

/// Evolve `k` sites down a gene tree: uniform root sequence, then one
/// channel per edge in preorder. Per site the edge fires with probability
/// `1 - exp(-4 delta / 3)` and the state resamples uniformly over the four
/// symbols. Draw order is fixed (sites in order within each edge), so the
/// output is a pure function of `(tree, k, rng stream)`.
///
/// Returns one sequence per taxon, indexed by taxon id.
pub fn evolve_sequences<R: Rng + ?Sized>(g: &GeneTree, k: usize, rng: &mut R) -> Vec<PackedSeq> {
    let topo = g.topology();
    let nv = topo.node_count();
    let mut seqs: Vec<Vec<u8>> = vec![Vec::new(); nv];
    let root = topo.root();
    seqs[root] = (0..k).map(|_| rng.random_range(0..4u8)).collect();
    // preorder, children in stored order
    let mut order = Vec::with_capacity(nv);
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        order.push(v);
        for &c in topo.children(v).iter().rev() {
            stack.push(c);
        }
    }
    for &v in &order {
        if v == root {
            continue;
        }
        let fire = 1.0 - (-4.0 * g.delta(v) / 3.0).exp();
        let parent = topo.parent(v).unwrap();
        let mut out = seqs[parent].clone();
        if fire > 0.0 {
            for site in out.iter_mut() {
                let u: f64 = rng.random();
                if u < fire {
                    *site = rng.random_range(0..4u8);
                }
            }
        }
        seqs[v] = out;
    }
    let n = topo.num_taxa();
    (0..n)
        .map(|t| PackedSeq::from_symbols(&seqs[topo.leaf_node(t)]))
        .collect()
}
