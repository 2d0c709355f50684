//! Assemble per-triplet calls into a full rooted species-tree topology.
//!
//! Inference runs the reduction plus quantile test once per leaf triple,
//! each with its own partition reshuffle and disjoint substreams keyed on
//! the sorted triple (an independence approximation: the same sequence
//! data backs every triple). Assembly is the classical rooted-triple
//! cluster construction: for the current taxon set, every call xy|z with
//! all three taxa present links x and y; the connected components become
//! the subtrees, and a single component that cannot split witnesses an
//! inconsistency.

use crate::reduction::{run_reduction_with_retries, ReductionConfig, ReductionError};
use crate::seqevo::SequenceDataset;
use crate::streams::{domain, StreamKey};
use crate::trees::{RootedTopology, Shape, Taxon, TaxonId, TreeError, TripletTopology};
use crate::triplet_test::quantile_triplet_test;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("no tree displays the given triples; {witness:?} conflict")]
    Inconsistent { witness: Vec<([TaxonId; 3], TripletTopology)> },
    #[error("triple {0:?} has taxa outside the taxon set")]
    UnknownTriple([TaxonId; 3]),
    #[error("duplicate call for triple {0:?}")]
    DuplicateTriple([TaxonId; 3]),
    #[error("call {call:?} names different taxa than its triple {triple:?}")]
    CallTaxaMismatch { triple: [TaxonId; 3], call: TripletTopology },
    #[error("assembly needs at least 2 taxa")]
    TooFewTaxa,
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// One inferred triple: the call and, when it came from a quantile test,
/// the similarity margin between the best and second-best pair.
#[derive(Clone, Debug)]
pub struct TripletCall {
    pub topology: TripletTopology,
    pub margin: Option<f64>,
}

/// Calls indexed by sorted taxon triple; at most one call per triple,
/// unresolved entries permitted.
#[derive(Clone, Debug, Default)]
pub struct TripletSet {
    calls: BTreeMap<[TaxonId; 3], TripletCall>,
}

impl TripletSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        triple: [TaxonId; 3],
        call: TripletCall,
    ) -> Result<(), BuildError> {
        let key = sorted3(triple);
        if let TripletTopology::Resolved { cherry, apart } = call.topology {
            if sorted3([cherry.0, cherry.1, apart]) != key {
                return Err(BuildError::CallTaxaMismatch { triple: key, call: call.topology });
            }
        }
        if self.calls.contains_key(&key) {
            return Err(BuildError::DuplicateTriple(key));
        }
        self.calls.insert(key, call);
        Ok(())
    }

    pub fn get(&self, triple: [TaxonId; 3]) -> Option<&TripletCall> {
        self.calls.get(&sorted3(triple))
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[TaxonId; 3], &TripletCall)> {
        self.calls.iter()
    }

    /// Resolved calls only.
    pub fn resolved(&self) -> impl Iterator<Item = (&[TaxonId; 3], &TripletCall)> {
        self.calls.iter().filter(|(_, c)| c.topology.is_resolved())
    }

    pub fn num_unresolved(&self) -> usize {
        self.calls.values().filter(|c| !c.topology.is_resolved()).count()
    }
}

fn sorted3(mut t: [TaxonId; 3]) -> [TaxonId; 3] {
    t.sort_unstable();
    t
}

/// Pipeline constants for per-triple inference.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub reduction: ReductionConfig,
    pub c3: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { reduction: ReductionConfig::default(), c3: 1.0 }
    }
}

/// Run reduction + quantile test for one taxon triple of a larger dataset.
/// Failures come back as `Ok` with an unresolved call only from the caller
/// side; here they are real errors.
pub fn infer_triplet(
    data: &SequenceDataset,
    triple: [TaxonId; 3],
    cfg: &PipelineConfig,
    key: StreamKey,
) -> Result<TripletCall, ReductionError> {
    let ids = sorted3(triple);
    let sub = data
        .restrict_taxa(&ids)
        .map_err(|_| ReductionError::NotThreeTaxa(data.num_taxa()))?;
    let out = run_reduction_with_retries(&sub, &cfg.reduction, key)?;
    let q1: Vec<usize> = (0..out.q1_len).collect();
    let q2: Vec<usize> = (out.q1_len..out.noisy.num_genes()).collect();
    let (local, state) =
        quantile_triplet_test(&out.noisy, &q1, &q2, data.num_genes(), cfg.c3)
            .expect("reduction output is a valid 3-taxon dataset");
    let mut sims = state.similarities;
    sims.sort_by(|a, b| b.total_cmp(a));
    let margin = sims[0] - sims[1];
    Ok(TripletCall { topology: local.relabel(&ids), margin: Some(margin) })
}

/// Infer every leaf triple; per-triple failures are recorded as unresolved
/// calls rather than propagated.
pub fn infer_all_triplets(
    data: &SequenceDataset,
    cfg: &PipelineConfig,
    key: StreamKey,
) -> TripletSet {
    let n = data.num_taxa();
    let mut set = TripletSet::new();
    for x in 0..n {
        for y in (x + 1)..n {
            for z in (y + 1)..n {
                let triple = [x, y, z];
                let triple_key = key
                    .child(domain::TRIPLE)
                    .child(x as u64)
                    .child(y as u64)
                    .child(z as u64);
                let call = match infer_triplet(data, triple, cfg, triple_key) {
                    Ok(call) => call,
                    Err(_) => TripletCall { topology: TripletTopology::Unresolved, margin: None },
                };
                set.insert(triple, call).expect("triples enumerated once");
            }
        }
    }
    set
}

/// Rooted-triple consistency construction. Returns a rooted binary
/// topology displaying every resolved input triple, or the conflicting
/// triples when none exists. Under-determined multifurcations are resolved
/// deterministically (components combined in sorted order), which cannot
/// violate any input triple.
pub fn build_from_triplets(
    triples: &TripletSet,
    taxa: &[Taxon],
) -> Result<RootedTopology, BuildError> {
    let n = taxa.len();
    if n < 2 {
        return Err(BuildError::TooFewTaxa);
    }
    let constraints: Vec<TripleConstraint> = triples
        .resolved()
        .map(|(key, call)| match call.topology {
            TripletTopology::Resolved { cherry, apart } => (*key, (cherry.0, cherry.1, apart)),
            TripletTopology::Unresolved => unreachable!(),
        })
        .collect();
    for (key, _) in &constraints {
        if key.iter().any(|&t| t >= n) {
            return Err(BuildError::UnknownTriple(*key));
        }
    }
    let all: Vec<TaxonId> = (0..n).collect();
    let shape = build_rec(&all, &constraints, triples)?;
    Ok(RootedTopology::from_shape(&shape, taxa.to_vec())?)
}

/// A resolved triple as (sorted key, (cherry lo, cherry hi, apart)).
type TripleConstraint = ([TaxonId; 3], (TaxonId, TaxonId, TaxonId));

fn build_rec(
    taxa: &[TaxonId],
    constraints: &[TripleConstraint],
    triples: &TripletSet,
) -> Result<Shape, BuildError> {
    if taxa.len() == 1 {
        return Ok(Shape::Leaf(taxa[0]));
    }
    // union-find over the current taxon set
    let index: BTreeMap<TaxonId, usize> =
        taxa.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let mut dsu: Vec<usize> = (0..taxa.len()).collect();
    fn find(dsu: &mut [usize], mut i: usize) -> usize {
        while dsu[i] != i {
            dsu[i] = dsu[dsu[i]];
            i = dsu[i];
        }
        i
    }
    let contained: Vec<&TripleConstraint> = constraints
        .iter()
        .filter(|(key, _)| key.iter().all(|t| index.contains_key(t)))
        .collect();
    for (_, (x, y, _z)) in &contained {
        let (a, b) = (index[x], index[y]);
        let (ra, rb) = (find(&mut dsu, a), find(&mut dsu, b));
        if ra != rb {
            dsu[ra] = rb;
        }
    }
    let mut components: BTreeMap<usize, Vec<TaxonId>> = BTreeMap::new();
    for (i, &t) in taxa.iter().enumerate() {
        components.entry(find(&mut dsu, i)).or_default().push(t);
    }
    if components.len() == 1 {
        // cannot split: for two taxa that is simply a cherry, otherwise the
        // contained triples are jointly unsatisfiable
        if taxa.len() == 2 {
            return Ok(Shape::Node(vec![Shape::Leaf(taxa[0]), Shape::Leaf(taxa[1])]));
        }
        let witness: Vec<([TaxonId; 3], TripletTopology)> = contained
            .iter()
            .map(|(key, _)| (*key, triples.get(*key).unwrap().topology))
            .collect();
        return Err(BuildError::Inconsistent { witness });
    }
    let mut parts: Vec<Vec<TaxonId>> = components.into_values().collect();
    parts.sort_by_key(|p| p[0]);
    let mut shapes = Vec::with_capacity(parts.len());
    for p in &parts {
        shapes.push(build_rec(p, constraints, triples)?);
    }
    // combine components pairwise left-to-right into a binary comb
    let mut acc = shapes.remove(0);
    for s in shapes {
        acc = Shape::Node(vec![acc, s]);
    }
    Ok(acc)
}

/// Assemble from a raw call list. Two calls on the same triple that agree
/// collapse to one; two that disagree are a direct contradiction and come
/// back as [`BuildError::Inconsistent`] with both as the witness.
pub fn build_from_triplet_calls(
    calls: &[([TaxonId; 3], TripletTopology)],
    taxa: &[Taxon],
) -> Result<RootedTopology, BuildError> {
    let mut set = TripletSet::new();
    for (triple, topo) in calls {
        let key = sorted3(*triple);
        if let Some(existing) = set.calls.get(&key) {
            if existing.topology != *topo {
                return Err(BuildError::Inconsistent {
                    witness: vec![(key, existing.topology), (key, *topo)],
                });
            }
            continue;
        }
        set.insert(key, TripletCall { topology: *topo, margin: None })?;
    }
    build_from_triplets(&set, taxa)
}

/// Assembly with the majority-repair heuristic: on inconsistency, drop the
/// lowest-margin resolved call (missing margins count as lowest) and retry
/// until a tree exists or no calls remain. Returns the tree and the triples
/// dropped, in drop order.
pub fn build_with_repair(
    triples: &TripletSet,
    taxa: &[Taxon],
) -> Result<(RootedTopology, Vec<[TaxonId; 3]>), BuildError> {
    let mut working = triples.clone();
    let mut dropped = Vec::new();
    loop {
        match build_from_triplets(&working, taxa) {
            Ok(t) => return Ok((t, dropped)),
            Err(BuildError::Inconsistent { .. }) => {
                let weakest = working
                    .resolved()
                    .min_by(|(_, a), (_, b)| {
                        let ma = a.margin.unwrap_or(f64::NEG_INFINITY);
                        let mb = b.margin.unwrap_or(f64::NEG_INFINITY);
                        ma.total_cmp(&mb)
                    })
                    .map(|(key, _)| *key);
                match weakest {
                    Some(key) => {
                        working.calls.insert(
                            key,
                            TripletCall { topology: TripletTopology::Unresolved, margin: None },
                        );
                        dropped.push(key);
                    }
                    None => {
                        return Err(BuildError::Inconsistent { witness: vec![] });
                    }
                }
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taxa(n: usize) -> Vec<Taxon> {
        (0..n).map(|i| Taxon { id: i, label: format!("{}", i + 1) }).collect()
    }

    fn resolved_call(a: TaxonId, b: TaxonId, z: TaxonId) -> TripletCall {
        TripletCall { topology: TripletTopology::resolved(a, b, z), margin: None }
    }

    #[test]
    fn single_triple_builds_cherry_plus_outgroup() {
        let mut set = TripletSet::new();
        set.insert([0, 1, 2], resolved_call(0, 1, 2)).unwrap();
        let t = build_from_triplets(&set, &taxa(3)).unwrap();
        assert_eq!(t.canonical_newick(), "((1,2),3);");
    }

    #[test]
    fn balanced_four_taxon_set() {
        let mut set = TripletSet::new();
        set.insert([0, 1, 2], resolved_call(0, 1, 2)).unwrap();
        set.insert([0, 1, 3], resolved_call(0, 1, 3)).unwrap();
        set.insert([0, 2, 3], resolved_call(2, 3, 0)).unwrap();
        set.insert([1, 2, 3], resolved_call(2, 3, 1)).unwrap();
        let t = build_from_triplets(&set, &taxa(4)).unwrap();
        assert_eq!(t.canonical_newick(), "((1,2),(3,4));");
        // the output displays every input triple
        for (key, call) in set.resolved() {
            assert_eq!(t.triplet(key[0], key[1], key[2]).unwrap(), call.topology);
        }
    }

    #[test]
    fn direct_contradiction_is_inconsistent() {
        // {12|3, 13|2} over the same taxa
        let calls = [
            ([0usize, 1, 2], TripletTopology::resolved(0, 1, 2)),
            ([0usize, 1, 2], TripletTopology::resolved(0, 2, 1)),
        ];
        assert!(matches!(
            build_from_triplet_calls(&calls, &taxa(3)),
            Err(BuildError::Inconsistent { witness }) if witness.len() == 2
        ));
        let mut set = TripletSet::new();
        set.insert([0, 1, 2], resolved_call(0, 1, 2)).unwrap();
        assert!(set.insert([1, 0, 2], resolved_call(0, 2, 1)).is_err());
        let mut set = TripletSet::new();
        set.insert([0, 1, 2], resolved_call(0, 1, 2)).unwrap();
        set.insert([0, 1, 3], resolved_call(0, 2, 1)).unwrap_err();
        // a real two-triple contradiction over four taxa
        let mut set = TripletSet::new();
        set.insert([0, 1, 2], resolved_call(0, 1, 2)).unwrap();
        set.insert([0, 1, 3], resolved_call(0, 3, 1)).unwrap();
        set.insert([1, 2, 3], resolved_call(1, 2, 3)).unwrap();
        set.insert([0, 2, 3], resolved_call(0, 2, 3)).unwrap();
        match build_from_triplets(&set, &taxa(4)) {
            Err(BuildError::Inconsistent { witness }) => assert!(!witness.is_empty()),
            other => panic!("expected inconsistency, got {:?}", other.map(|t| t.canonical_newick())),
        }
    }

    #[test]
    fn repair_drops_lowest_margin_call() {
        let mut set = TripletSet::new();
        set.insert(
            [0, 1, 2],
            TripletCall { topology: TripletTopology::resolved(0, 1, 2), margin: Some(0.5) },
        )
        .unwrap();
        set.insert(
            [0, 1, 3],
            TripletCall { topology: TripletTopology::resolved(0, 3, 1), margin: Some(0.01) },
        )
        .unwrap();
        set.insert(
            [1, 2, 3],
            TripletCall { topology: TripletTopology::resolved(1, 2, 3), margin: Some(0.4) },
        )
        .unwrap();
        set.insert(
            [0, 2, 3],
            TripletCall { topology: TripletTopology::resolved(0, 2, 3), margin: Some(0.3) },
        )
        .unwrap();
        let (t, dropped) = build_with_repair(&set, &taxa(4)).unwrap();
        assert_eq!(dropped, vec![[0usize, 1, 3]]);
        for (key, call) in set.resolved() {
            if key == &[0, 1, 3] {
                continue;
            }
            assert_eq!(t.triplet(key[0], key[1], key[2]).unwrap(), call.topology);
        }
    }

    #[test]
    fn unresolved_triples_are_ignored_by_assembly() {
        let mut set = TripletSet::new();
        set.insert([0, 1, 2], resolved_call(0, 1, 2)).unwrap();
        set.insert(
            [0, 1, 3],
            TripletCall { topology: TripletTopology::Unresolved, margin: None },
        )
        .unwrap();
        assert_eq!(set.num_unresolved(), 1);
        let t = build_from_triplets(&set, &taxa(4)).unwrap();
        // taxon 3 is unconstrained; the tree still displays the one call
        assert_eq!(
            t.triplet(0, 1, 2).unwrap(),
            TripletTopology::resolved(0, 1, 2)
        );
    }
}
