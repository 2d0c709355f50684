//! Sequence dataset container: the n x m x k character array, its binary
//! file format (for harness reuse), FASTA-like emission, and per-gene
//! p-distance tables.

use super::PackedSeq;
use crate::trees::{Taxon, TaxonId};
use std::io::{self, Read, Write};
use thiserror::Error;

pub const DATASET_FORMAT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"CFDS";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a coalfarris dataset (bad magic)")]
    BadMagic,
    #[error("unsupported dataset format version {0}")]
    BadVersion(u16),
    #[error("corrupt dataset: {0}")]
    Corrupt(String),
    #[error("gene index {0} out of range")]
    GeneOutOfRange(usize),
    #[error("taxon index {0} out of range")]
    TaxonOutOfRange(usize),
    #[error("dataset row has wrong site count")]
    WrongSites,
}

/// `m` genes by `n` taxa by `k` sites of 2-bit symbols, gene-major.
#[derive(Clone, Debug)]
pub struct SequenceDataset {
    taxa: Vec<Taxon>,
    sites: usize,
    seed: u64,
    rows: Vec<PackedSeq>, // rows[gene * n + taxon]
}

impl SequenceDataset {
    pub fn new(taxa: Vec<Taxon>, sites: usize, seed: u64) -> Self {
        SequenceDataset { taxa, sites, seed, rows: Vec::new() }
    }

    pub fn push_gene(&mut self, seqs: Vec<PackedSeq>) -> Result<(), DatasetError> {
        if seqs.len() != self.taxa.len() {
            return Err(DatasetError::Corrupt(format!(
                "expected {} sequences per gene, got {}",
                self.taxa.len(),
                seqs.len()
            )));
        }
        if seqs.iter().any(|s| s.len() != self.sites) {
            return Err(DatasetError::WrongSites);
        }
        self.rows.extend(seqs);
        Ok(())
    }

    pub fn num_taxa(&self) -> usize {
        self.taxa.len()
    }

    pub fn num_genes(&self) -> usize {
        self.rows.len() / self.taxa.len().max(1)
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn taxa(&self) -> &[Taxon] {
        &self.taxa
    }

    pub fn seq(&self, gene: usize, taxon: TaxonId) -> &PackedSeq {
        &self.rows[gene * self.taxa.len() + taxon]
    }

    pub fn disagreement_count(&self, gene: usize, a: TaxonId, b: TaxonId) -> u32 {
        self.seq(gene, a).hamming(self.seq(gene, b))
    }

    pub fn disagreement_count_range(
        &self,
        gene: usize,
        a: TaxonId,
        b: TaxonId,
        start: usize,
        end: usize,
    ) -> u32 {
        self.seq(gene, a).hamming_range(self.seq(gene, b), start, end)
    }

    /// New dataset over a subset of taxa (re-indexed densely, labels kept).
    pub fn restrict_taxa(&self, ids: &[TaxonId]) -> Result<SequenceDataset, DatasetError> {
        for &t in ids {
            if t >= self.taxa.len() {
                return Err(DatasetError::TaxonOutOfRange(t));
            }
        }
        let taxa: Vec<Taxon> = ids
            .iter()
            .enumerate()
            .map(|(new_id, &old)| Taxon { id: new_id, label: self.taxa[old].label.clone() })
            .collect();
        let mut out = SequenceDataset::new(taxa, self.sites, self.seed);
        for g in 0..self.num_genes() {
            let seqs: Vec<PackedSeq> = ids.iter().map(|&t| self.seq(g, t).clone()).collect();
            out.push_gene(seqs)?;
        }
        Ok(out)
    }

    /// New dataset keeping the given genes, in the given order.
    pub fn restrict_genes(&self, genes: &[usize]) -> Result<SequenceDataset, DatasetError> {
        let n = self.taxa.len();
        let mut out = SequenceDataset::new(self.taxa.clone(), self.sites, self.seed);
        for &g in genes {
            if g >= self.num_genes() {
                return Err(DatasetError::GeneOutOfRange(g));
            }
            out.rows.extend((0..n).map(|t| self.seq(g, t).clone()));
        }
        Ok(out)
    }

    /// Binary container: magic, version, n, m, k, seed, taxon labels, then
    /// the packed rows gene-major. Little-endian throughout.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), DatasetError> {
        w.write_all(MAGIC)?;
        w.write_all(&DATASET_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.taxa.len() as u32).to_le_bytes())?;
        w.write_all(&(self.num_genes() as u64).to_le_bytes())?;
        w.write_all(&(self.sites as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for t in &self.taxa {
            let bytes = t.label.as_bytes();
            w.write_all(&(bytes.len() as u16).to_le_bytes())?;
            w.write_all(bytes)?;
        }
        for row in &self.rows {
            w.write_all(row.bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<SequenceDataset, DatasetError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DatasetError::BadMagic);
        }
        let version = read_u16(&mut r)?;
        if version != DATASET_FORMAT_VERSION {
            return Err(DatasetError::BadVersion(version));
        }
        let n = read_u32(&mut r)? as usize;
        let m = read_u64(&mut r)? as usize;
        let k = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let mut taxa = Vec::with_capacity(n);
        for id in 0..n {
            let len = read_u16(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            let label = String::from_utf8(buf)
                .map_err(|_| DatasetError::Corrupt("taxon label is not utf-8".into()))?;
            taxa.push(Taxon { id, label });
        }
        let bytes_per_row = k.div_ceil(4);
        // zero the padding lanes of the final byte so whole-byte hamming
        // stays correct even for hand-made files
        let tail_lanes = k % 4;
        let tail_mask: u8 = if tail_lanes == 0 { 0xff } else { (1 << (tail_lanes * 2)) - 1 };
        let mut rows = Vec::with_capacity(m * n);
        for _ in 0..m * n {
            let mut buf = vec![0u8; bytes_per_row];
            r.read_exact(&mut buf)?;
            if let Some(last) = buf.last_mut() {
                *last &= tail_mask;
            }
            rows.push(PackedSeq::from_raw(buf, k));
        }
        Ok(SequenceDataset { taxa, sites: k, seed, rows })
    }

    /// FASTA-like emission of one gene: a `>label` line per taxon.
    pub fn write_fasta<W: Write>(&self, gene: usize, mut w: W) -> Result<(), DatasetError> {
        if gene >= self.num_genes() {
            return Err(DatasetError::GeneOutOfRange(gene));
        }
        for t in 0..self.taxa.len() {
            writeln!(w, ">{}", self.taxa[t].label)?;
            writeln!(w, "{}", self.seq(gene, t).to_dna_string())?;
        }
        Ok(())
    }
}

fn read_u16<R: Read>(r: &mut R) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Per-gene disagreement counts for full sequences and the two half-splits
/// (first floor(k/2) sites vs the rest). Counts are kept as integers;
/// fractions are derived views, so `full = lo + hi` holds bit-exactly.
#[derive(Clone, Debug)]
pub struct PDistanceTable {
    pairs: Vec<(TaxonId, TaxonId)>,
    num_genes: usize,
    k: usize,
    k_lo: usize,
    lo: Vec<u32>, // [gene * pairs + pair]
    hi: Vec<u32>,
}

impl PDistanceTable {
    /// Synthetic table from raw half-counts (test oracles only).
    #[cfg(test)]
    pub(crate) fn from_counts_for_tests(
        pairs: Vec<(TaxonId, TaxonId)>,
        k: usize,
        lo: Vec<u32>,
        hi: Vec<u32>,
    ) -> Self {
        let num_genes = lo.len() / pairs.len();
        assert_eq!(lo.len(), hi.len());
        PDistanceTable { pairs, num_genes, k, k_lo: k / 2, lo, hi }
    }

    pub fn pairs(&self) -> &[(TaxonId, TaxonId)] {
        &self.pairs
    }

    pub fn num_genes(&self) -> usize {
        self.num_genes
    }

    pub fn sites(&self) -> usize {
        self.k
    }

    pub fn pair_index(&self, a: TaxonId, b: TaxonId) -> usize {
        let key = (a.min(b), a.max(b));
        self.pairs
            .iter()
            .position(|&p| p == key)
            .expect("pair not present in table")
    }

    pub fn full_count(&self, gene: usize, pair: usize) -> u32 {
        self.lo[gene * self.pairs.len() + pair] + self.hi[gene * self.pairs.len() + pair]
    }

    pub fn lo_count(&self, gene: usize, pair: usize) -> u32 {
        self.lo[gene * self.pairs.len() + pair]
    }

    pub fn hi_count(&self, gene: usize, pair: usize) -> u32 {
        self.hi[gene * self.pairs.len() + pair]
    }

    /// Full-length p-distance `(1/k) sum 1{differs}`.
    pub fn full(&self, gene: usize, pair: usize) -> f64 {
        self.full_count(gene, pair) as f64 / self.k as f64
    }

    /// First-half p-distance over the first floor(k/2) sites.
    pub fn first_half(&self, gene: usize, pair: usize) -> f64 {
        self.lo_count(gene, pair) as f64 / self.k_lo as f64
    }

    /// Second-half p-distance over the remaining sites.
    pub fn second_half(&self, gene: usize, pair: usize) -> f64 {
        self.hi_count(gene, pair) as f64 / (self.k - self.k_lo) as f64
    }
}

/// Compute the p-distance table for the given unordered taxon pairs.
pub fn p_distances(data: &SequenceDataset, pairs: &[(TaxonId, TaxonId)]) -> PDistanceTable {
    let pairs: Vec<(TaxonId, TaxonId)> = pairs.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    let m = data.num_genes();
    let k = data.sites();
    let k_lo = k / 2;
    let mut lo = Vec::with_capacity(m * pairs.len());
    let mut hi = Vec::with_capacity(m * pairs.len());
    for gene in 0..m {
        for &(a, b) in &pairs {
            let c_lo = data.disagreement_count_range(gene, a, b, 0, k_lo);
            let c_hi = data.disagreement_count_range(gene, a, b, k_lo, k);
            lo.push(c_lo);
            hi.push(c_hi);
        }
    }
    PDistanceTable { pairs, num_genes: m, k, k_lo, lo, hi }
}
