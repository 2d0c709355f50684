//! The multispecies coalescent: gene-tree sampling and its analytic
//! companions (gene-tree log density, pairwise-excess mixture densities and
//! quantiles) used as test oracles.
//!
//! Sampling walks the species tree from the leaves up. Within each branch
//! (population), lineages that entered from below merge pairwise at unit
//! exponential rate in coalescent time; edge lengths accumulate as
//! `mu * elapsed`. The population above the root has unbounded duration, so
//! coalescence there runs until one lineage remains, and the leftover root
//! edge is contracted in the finished gene tree.

mod density;

pub use density::{
    mixture_quantile, pairwise_excess_density, quantile_gap, DensityError, MixtureDensity,
    MixtureSegment, QuantileGap,
};

use crate::streams::exp_draw;
use crate::trees::{GeneTree, RootedTopology, SpeciesPhylogeny, TaxonId, TreeError};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MscError {
    #[error("coalescence times for population {pop:?} are not sorted within [0, {tau}]")]
    InconsistentTimes { pop: Population, tau: f64 },
    #[error("population {pop:?} has {coalescences} coalescences for {entering} entering lineages")]
    TooManyCoalescences { pop: Population, entering: usize, coalescences: usize },
    #[error("root population must coalesce down to one lineage ({entering} entering, {coalescences} coalescences)")]
    IncompleteRoot { entering: usize, coalescences: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// A population of the species tree: the branch above a vertex, or the
/// unbounded population above the root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Population {
    Edge(usize),
    Root,
}

/// One lineage of a working forest: a finished subtree plus the length
/// accumulated on its root edge so far.
#[derive(Debug)]
pub struct Lineage {
    node: BuildNode,
    pending: f64,
}

impl Lineage {
    /// Accumulated root-edge length (exposed for distributional tests).
    pub fn pending(&self) -> f64 {
        self.pending
    }
}

#[derive(Debug)]
struct BuildNode {
    taxon: Option<TaxonId>,
    children: Vec<(BuildNode, f64)>,
    population: Option<Population>,
}

/// A root-extended forest in the sense of the coalescent process: each tree
/// carries a root edge whose length grows as its lineage survives
/// populations.
#[derive(Debug, Default)]
pub struct Forest {
    lineages: Vec<Lineage>,
}

impl Forest {
    /// Single-lineage forest for one leaf, with an empty root edge.
    pub fn leaf(taxon: TaxonId) -> Self {
        Forest {
            lineages: vec![Lineage {
                node: BuildNode { taxon: Some(taxon), children: vec![], population: None },
                pending: 0.0,
            }],
        }
    }

    pub fn num_lineages(&self) -> usize {
        self.lineages.len()
    }

    pub fn lineages(&self) -> &[Lineage] {
        &self.lineages
    }

    fn union(mut a: Forest, mut b: Forest) -> Forest {
        a.lineages.append(&mut b.lineages);
        a
    }

    /// Extend every root edge by `amount`.
    fn extend_all(&mut self, amount: f64) {
        for l in &mut self.lineages {
            l.pending += amount;
        }
    }
}

/// One population step of the coalescent: merge the union of `f1` and `f2`
/// inside a population of duration `tau` (possibly infinite) and rate `mu`.
/// While more than one lineage remains, a uniformly random pair and an
/// Exp(k choose 2) waiting time are drawn; if the time exceeds the remaining
/// duration every root edge is extended by `mu * remaining` and the forest
/// returned, otherwise the pair merges after extending all edges by
/// `mu * t`. A single entering lineage just crosses the population.
pub fn coalesce<R: Rng + ?Sized>(f1: Forest, f2: Forest, tau: f64, mu: f64, rng: &mut R) -> Forest {
    coalesce_in(f1, f2, tau, mu, Population::Root, rng)
}

pub(crate) fn coalesce_in<R: Rng + ?Sized>(
    f1: Forest,
    f2: Forest,
    tau: f64,
    mu: f64,
    pop: Population,
    rng: &mut R,
) -> Forest {
    let mut f = Forest::union(f1, f2);
    let mut remaining = tau;
    while f.num_lineages() > 1 {
        let k = f.num_lineages();
        // pair first, then the waiting time, as in the process definition
        let i = rng.random_range(0..k);
        let mut j = rng.random_range(0..k - 1);
        if j >= i {
            j += 1;
        }
        let rate = (k * (k - 1) / 2) as f64;
        let t = exp_draw(rng, rate);
        if t >= remaining {
            f.extend_all(mu * remaining);
            return f;
        }
        remaining -= t;
        f.extend_all(mu * t);
        let (lo, hi) = (i.min(j), i.max(j));
        let b = f.lineages.swap_remove(hi);
        let a = f.lineages.swap_remove(lo);
        f.lineages.push(Lineage {
            node: BuildNode {
                taxon: None,
                children: vec![(a.node, a.pending), (b.node, b.pending)],
                population: Some(pop),
            },
            pending: 0.0,
        });
    }
    if remaining.is_finite() {
        f.extend_all(mu * remaining);
    }
    f
}

/// A sampled gene tree together with, for every internal vertex, the
/// population its coalescence occurred in.
pub struct SampledGeneTree {
    pub tree: GeneTree,
    /// Indexed by gene-tree vertex; `None` for leaves.
    pub populations: Vec<Option<Population>>,
}

impl SampledGeneTree {
    /// Population of the coalescence joining taxa `a` and `b`.
    pub fn pair_population(&self, a: TaxonId, b: TaxonId) -> Population {
        let topo = self.tree.topology();
        let w = topo.lca(topo.leaf_node(a), topo.leaf_node(b));
        self.populations[w].expect("lca of two leaves is internal")
    }

    /// Whether the coalescences of (a,c) and (b,c) are the same event.
    pub fn shared_cross_coalescence(&self, a: TaxonId, b: TaxonId, c: TaxonId) -> bool {
        let topo = self.tree.topology();
        let wac = topo.lca(topo.leaf_node(a), topo.leaf_node(c));
        let wbc = topo.lca(topo.leaf_node(b), topo.leaf_node(c));
        wac == wbc
    }
}

/// Sample one gene tree from the multispecies coalescent on `s`.
pub fn sample_gene_tree<R: Rng + ?Sized>(s: &SpeciesPhylogeny, rng: &mut R) -> GeneTree {
    sample_gene_tree_traced(s, rng).tree
}

/// Sample one gene tree, recording per-coalescence populations.
pub fn sample_gene_tree_traced<R: Rng + ?Sized>(
    s: &SpeciesPhylogeny,
    rng: &mut R,
) -> SampledGeneTree {
    let topo = s.topology();
    let forest = msc_at(s, topo, topo.root(), rng);
    debug_assert_eq!(forest.num_lineages(), 1);
    let root_node = forest.lineages.into_iter().next().unwrap().node;
    // flatten into an arena, dropping the root edge (contracted)
    #[derive(Default)]
    struct Arena {
        parent: Vec<Option<usize>>,
        children: Vec<Vec<usize>>,
        node_taxon: Vec<Option<TaxonId>>,
        delta: Vec<f64>,
        populations: Vec<Option<Population>>,
    }
    fn flatten(b: &BuildNode, par: Option<usize>, edge: f64, a: &mut Arena) -> usize {
        let id = a.parent.len();
        a.parent.push(par);
        a.children.push(vec![]);
        a.node_taxon.push(b.taxon);
        a.delta.push(edge);
        a.populations.push(b.population);
        for (c, len) in &b.children {
            let cid = flatten(c, Some(id), *len, a);
            a.children[id].push(cid);
        }
        id
    }
    let mut arena = Arena::default();
    flatten(&root_node, None, 0.0, &mut arena);
    let topo =
        RootedTopology::from_parts(arena.parent, arena.children, 0, arena.node_taxon, s.taxa().to_vec())
            .expect("sampled gene tree is a valid rooted binary tree");
    let tree = GeneTree::new(topo, arena.delta).expect("sampled branch lengths are nonnegative");
    SampledGeneTree { tree, populations: arena.populations }
}

fn msc_at<R: Rng + ?Sized>(
    s: &SpeciesPhylogeny,
    topo: &RootedTopology,
    v: usize,
    rng: &mut R,
) -> Forest {
    if let Some(t) = topo.taxon_of(v) {
        let mut f = Forest::leaf(t);
        f.extend_all(s.mu(v) * s.tau(v));
        return f;
    }
    let ch = topo.children(v);
    let f1 = msc_at(s, topo, ch[0], rng);
    let f2 = msc_at(s, topo, ch[1], rng);
    if v == topo.root() {
        coalesce_in(f1, f2, f64::INFINITY, s.root_mu(), Population::Root, rng)
    } else {
        coalesce_in(f1, f2, s.tau(v), s.mu(v), Population::Edge(v), rng)
    }
}

/// Per-gene coalescent excess: for every leaf pair, `gamma` is twice the
/// weighted height between divergence and coalescence and `z = gamma / 2`,
/// so the gene metric reconstructs as `mu_ab + 2 z_ab`.
pub struct CoalescentExcess {
    n: usize,
    z: Vec<f64>,
}

impl CoalescentExcess {
    pub fn from_sample(s: &SpeciesPhylogeny, g: &GeneTree) -> Self {
        let mu = s.species_metric();
        let d = g.gene_metric();
        let n = s.num_taxa();
        let mut z = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    z[a * n + b] = (d.get(a, b) - mu.get(a, b)) / 2.0;
                }
            }
        }
        CoalescentExcess { n, z }
    }

    pub fn z(&self, a: TaxonId, b: TaxonId) -> f64 {
        self.z[a * self.n + b]
    }

    pub fn gamma(&self, a: TaxonId, b: TaxonId) -> f64 {
        2.0 * self.z(a, b)
    }
}

/// Sorted coalescence times for a density evaluation: per-branch times (in
/// coalescent units, measured from the bottom of the branch) and the root
/// population's times.
#[derive(Clone, Debug, Default)]
pub struct CoalescenceTimes {
    /// Indexed by species-tree vertex (the branch above it).
    pub per_edge: Vec<Vec<f64>>,
    pub root: Vec<f64>,
}

/// Log density of a coalescent history on `s`: the sum over populations and
/// inter-event intervals of `-C(k,2) * dt`, where `k` is the number of
/// lineages alive in the interval. The final interval of a bounded branch
/// runs to the branch top with the surviving-lineage rate; the root
/// population must end with a single lineage.
pub fn gene_tree_log_density(
    s: &SpeciesPhylogeny,
    times: &CoalescenceTimes,
) -> Result<f64, MscError> {
    let topo = s.topology();
    let nv = topo.node_count();
    if times.per_edge.len() != nv {
        return Err(TreeError::Malformed.into());
    }
    // lineages leaving the branch above v
    let mut out = vec![0usize; nv];
    let mut order: Vec<usize> = (0..nv).collect();
    order.sort_by_key(|&v| std::cmp::Reverse(topo.depth(v)));
    let mut logp = 0.0;
    for &v in &order {
        if v == topo.root() {
            continue;
        }
        let entering = if topo.is_leaf(v) {
            1
        } else {
            let ch = topo.children(v);
            out[ch[0]] + out[ch[1]]
        };
        let pop = Population::Edge(v);
        let tau = s.tau(v);
        let ts = &times.per_edge[v];
        logp += population_log_density(entering, ts, tau, pop)?;
        out[v] = entering - ts.len();
    }
    let ch = topo.children(topo.root());
    let entering = out[ch[0]] + out[ch[1]];
    if times.root.len() + 1 != entering {
        return Err(MscError::IncompleteRoot {
            entering,
            coalescences: times.root.len(),
        });
    }
    logp += population_log_density(entering, &times.root, f64::INFINITY, Population::Root)?;
    Ok(logp)
}

/// Log density contribution of a single population: `entering` lineages,
/// sorted coalescence times `ts` within `[0, tau]`.
pub fn population_log_density(
    entering: usize,
    ts: &[f64],
    tau: f64,
    pop: Population,
) -> Result<f64, MscError> {
    if ts.len() + 1 > entering {
        return Err(MscError::TooManyCoalescences {
            pop,
            entering,
            coalescences: ts.len(),
        });
    }
    let mut prev = 0.0;
    let mut k = entering;
    let mut logp = 0.0;
    for &t in ts {
        if !(t >= prev && t <= tau) {
            return Err(MscError::InconsistentTimes { pop, tau });
        }
        let rate = (k * (k - 1) / 2) as f64;
        logp -= rate * (t - prev);
        prev = t;
        k -= 1;
    }
    if tau.is_finite() {
        let rate = (k * (k - 1) / 2) as f64;
        logp -= rate * (tau - prev);
    }
    Ok(logp)
}

#[cfg(test)]
mod tests;
