//! Core tree data model: species phylogenies (coalescent-unit lengths plus
//! per-branch mutation rates), gene trees (mutation-weighted lengths), leaf
//! metrics, the classical Farris transform, and rooted-triplet restriction.

mod json;
mod newick;

pub use json::{gene_from_json, gene_to_json, species_from_json, species_to_json};
pub use newick::{
    gene_to_newick, parse_gene_newick, parse_gene_newick_with_taxa, parse_species_newick,
    species_to_newick, NewickError,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TaxonId = usize;

/// A labelled leaf. Ids are dense `0..n` within a tree; matching between a
/// species tree and its gene trees is by label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxon {
    pub id: TaxonId,
    pub label: String,
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("tree must have at least 2 leaves, got {0}")]
    TooFewLeaves(usize),
    #[error("root must have exactly 2 children, got {0}")]
    BadRootDegree(usize),
    #[error("internal vertex {0} has {1} children; binary trees need exactly 2")]
    NotBinary(usize, usize),
    #[error("malformed tree structure (cycle, orphan, or unreachable vertex)")]
    Malformed,
    #[error("duplicate taxon label `{0}`")]
    DuplicateLabel(String),
    #[error("unknown taxon id {0}")]
    UnknownTaxon(TaxonId),
    #[error("taxa in a triple must be distinct")]
    NotDistinct,
    #[error("branch length above vertex {node} must be positive and finite, got {value}")]
    BadBranchLength { node: usize, value: f64 },
    #[error("mutation rate above vertex {node} must be positive and finite, got {value}")]
    BadRate { node: usize, value: f64 },
    #[error("gene branch length above vertex {node} must be nonnegative and finite, got {value}")]
    BadGeneLength { node: usize, value: f64 },
    #[error("distance matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("negative distance at ({0}, {1})")]
    NegativeDistance(usize, usize),
    #[error("nonzero diagonal entry at {0}")]
    NonzeroDiagonal(usize),
    #[error("root-distance vector has {got} entries, expected {expected}")]
    RootDistanceLen { got: usize, expected: usize },
    #[error("root distances must be finite and nonnegative")]
    BadRootDistance,
    #[error("taxon label mismatch between trees: `{0}`")]
    LabelMismatch(String),
    #[error("invalid regime bounds: {0}")]
    BadRegime(String),
}

/// Rooted binary topology over a dense taxon set. Branch lengths live on the
/// owning tree types; this carries structure only and is the output type of
/// triplet assembly.
#[derive(Clone, Debug)]
pub struct RootedTopology {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<u32>,
    root: usize,
    node_taxon: Vec<Option<TaxonId>>,
    taxon_node: Vec<usize>,
    taxa: Vec<Taxon>,
}

/// Nested shape used to construct topologies programmatically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Shape {
    Leaf(TaxonId),
    Node(Vec<Shape>),
}

impl RootedTopology {
    pub fn from_shape(shape: &Shape, taxa: Vec<Taxon>) -> Result<Self, TreeError> {
        let mut parent = Vec::new();
        let mut children: Vec<Vec<usize>> = Vec::new();
        let mut node_taxon = Vec::new();
        fn walk(
            s: &Shape,
            par: Option<usize>,
            parent: &mut Vec<Option<usize>>,
            children: &mut Vec<Vec<usize>>,
            node_taxon: &mut Vec<Option<TaxonId>>,
        ) -> usize {
            let id = parent.len();
            parent.push(par);
            children.push(Vec::new());
            node_taxon.push(None);
            match s {
                Shape::Leaf(t) => node_taxon[id] = Some(*t),
                Shape::Node(cs) => {
                    for c in cs {
                        let cid = walk(c, Some(id), parent, children, node_taxon);
                        children[id].push(cid);
                    }
                }
            }
            id
        }
        let root = walk(shape, None, &mut parent, &mut children, &mut node_taxon);
        Self::from_parts(parent, children, root, node_taxon, taxa)
    }

    pub(crate) fn from_parts(
        parent: Vec<Option<usize>>,
        children: Vec<Vec<usize>>,
        root: usize,
        node_taxon: Vec<Option<TaxonId>>,
        taxa: Vec<Taxon>,
    ) -> Result<Self, TreeError> {
        let nv = parent.len();
        if children.len() != nv || node_taxon.len() != nv {
            return Err(TreeError::Malformed);
        }
        let n = taxa.len();
        if n < 2 {
            return Err(TreeError::TooFewLeaves(n));
        }
        for (i, t) in taxa.iter().enumerate() {
            if t.id != i {
                return Err(TreeError::Malformed);
            }
            if taxa[..i].iter().any(|u| u.label == t.label) {
                return Err(TreeError::DuplicateLabel(t.label.clone()));
            }
        }
        // degree checks
        if children[root].len() != 2 {
            return Err(TreeError::BadRootDegree(children[root].len()));
        }
        for v in 0..nv {
            match (node_taxon[v], children[v].len()) {
                (Some(_), 0) => {}
                (None, 2) => {}
                (None, c) => return Err(TreeError::NotBinary(v, c)),
                (Some(_), _) => return Err(TreeError::Malformed),
            }
        }
        // connectivity + depth, iteratively from the root
        let mut depth = vec![u32::MAX; nv];
        let mut stack = vec![root];
        let mut seen = 0usize;
        depth[root] = 0;
        while let Some(v) = stack.pop() {
            seen += 1;
            for &c in &children[v] {
                if parent[c] != Some(v) || depth[c] != u32::MAX {
                    return Err(TreeError::Malformed);
                }
                depth[c] = depth[v] + 1;
                stack.push(c);
            }
        }
        if seen != nv || parent[root].is_some() {
            return Err(TreeError::Malformed);
        }
        // taxon mapping: dense, each exactly once
        let mut taxon_node = vec![usize::MAX; n];
        let mut count = 0usize;
        for (v, tx) in node_taxon.iter().enumerate() {
            if let Some(t) = *tx {
                if t >= n || taxon_node[t] != usize::MAX {
                    return Err(TreeError::Malformed);
                }
                taxon_node[t] = v;
                count += 1;
            }
        }
        if count != n {
            return Err(TreeError::Malformed);
        }
        Ok(RootedTopology {
            parent,
            children,
            depth,
            root,
            node_taxon,
            taxon_node,
            taxa,
        })
    }

    pub fn num_taxa(&self) -> usize {
        self.taxa.len()
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn taxa(&self) -> &[Taxon] {
        &self.taxa
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        self.node_taxon[v].is_some()
    }

    pub fn taxon_of(&self, v: usize) -> Option<TaxonId> {
        self.node_taxon[v]
    }

    pub fn leaf_node(&self, t: TaxonId) -> usize {
        self.taxon_node[t]
    }

    pub fn depth(&self, v: usize) -> u32 {
        self.depth[v]
    }

    pub fn lca(&self, mut u: usize, mut v: usize) -> usize {
        while self.depth[u] > self.depth[v] {
            u = self.parent[u].unwrap();
        }
        while self.depth[v] > self.depth[u] {
            v = self.parent[v].unwrap();
        }
        while u != v {
            u = self.parent[u].unwrap();
            v = self.parent[v].unwrap();
        }
        u
    }

    /// The induced rooted triple on three distinct leaves. Always resolved
    /// for a binary tree: the pair with the strictly deepest LCA is the
    /// cherry.
    pub fn triplet(&self, x: TaxonId, y: TaxonId, z: TaxonId) -> Result<TripletTopology, TreeError> {
        let n = self.num_taxa();
        for t in [x, y, z] {
            if t >= n {
                return Err(TreeError::UnknownTaxon(t));
            }
        }
        if x == y || y == z || x == z {
            return Err(TreeError::NotDistinct);
        }
        let (nx, ny, nz) = (self.leaf_node(x), self.leaf_node(y), self.leaf_node(z));
        let dxy = self.depth[self.lca(nx, ny)];
        let dxz = self.depth[self.lca(nx, nz)];
        let dyz = self.depth[self.lca(ny, nz)];
        Ok(if dxy > dxz && dxy > dyz {
            TripletTopology::resolved(x, y, z)
        } else if dxz > dxy && dxz > dyz {
            TripletTopology::resolved(x, z, y)
        } else if dyz > dxy && dyz > dxz {
            TripletTopology::resolved(y, z, x)
        } else {
            TripletTopology::Unresolved
        })
    }

    /// Canonical topology-only Newick: children ordered by smallest
    /// descendant label, so equal topologies serialize identically.
    pub fn canonical_newick(&self) -> String {
        fn emit(t: &RootedTopology, v: usize) -> (String, String) {
            if let Some(tx) = t.node_taxon[v] {
                let label = t.taxa[tx].label.clone();
                return (label.clone(), label);
            }
            let mut rendered: Vec<(String, String)> =
                t.children[v].iter().map(|&c| emit(t, c)).collect();
            rendered.sort_by(|a, b| a.0.cmp(&b.0));
            let min = rendered[0].0.clone();
            let body = rendered
                .iter()
                .map(|(_, s)| s.as_str())
                .collect::<Vec<_>>()
                .join(",");
            (min, format!("({})", body))
        }
        let (_, mut s) = emit(self, self.root);
        s.push(';');
        s
    }

    pub fn same_topology(&self, other: &RootedTopology) -> bool {
        self.canonical_newick() == other.canonical_newick()
    }
}

/// Rooted triple over a taxon set: `cherry.0` and `cherry.1` are closer to
/// each other than either is to `apart`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TripletTopology {
    Resolved { cherry: (TaxonId, TaxonId), apart: TaxonId },
    Unresolved,
}

impl TripletTopology {
    pub fn resolved(a: TaxonId, b: TaxonId, apart: TaxonId) -> Self {
        let cherry = if a <= b { (a, b) } else { (b, a) };
        TripletTopology::Resolved { cherry, apart }
    }

    pub fn is_resolved(&self) -> bool {
        matches!(self, TripletTopology::Resolved { .. })
    }

    /// Render as `x,y|z` with taxon labels (`unresolved` otherwise).
    pub fn format_with(&self, taxa: &[Taxon]) -> String {
        match self {
            TripletTopology::Resolved { cherry, apart } => format!(
                "{},{}|{}",
                taxa[cherry.0].label, taxa[cherry.1].label, taxa[*apart].label
            ),
            TripletTopology::Unresolved => "unresolved".to_owned(),
        }
    }

    /// Remap taxon ids (used when a triple was inferred on a restricted
    /// dataset with local ids).
    pub fn relabel(&self, map: &[TaxonId]) -> Self {
        match self {
            TripletTopology::Resolved { cherry, apart } => {
                TripletTopology::resolved(map[cherry.0], map[cherry.1], map[*apart])
            }
            TripletTopology::Unresolved => TripletTopology::Unresolved,
        }
    }
}

/// Species phylogeny: rooted binary tree whose every non-root vertex `v`
/// carries the coalescent-unit length `tau` and mutation rate `mu` of the
/// branch above `v`. The population above the root has no duration (the
/// coalescent runs to completion there) but needs a mutation rate to weight
/// coalescence heights; that is `root_mu`.
#[derive(Clone, Debug)]
pub struct SpeciesPhylogeny {
    topo: RootedTopology,
    tau: Vec<f64>,
    mu: Vec<f64>,
    root_mu: f64,
}

impl SpeciesPhylogeny {
    pub fn new(
        topo: RootedTopology,
        tau: Vec<f64>,
        mu: Vec<f64>,
        root_mu: f64,
    ) -> Result<Self, TreeError> {
        let nv = topo.node_count();
        if tau.len() != nv || mu.len() != nv {
            return Err(TreeError::Malformed);
        }
        for v in 0..nv {
            if v == topo.root() {
                continue;
            }
            if !(tau[v].is_finite() && tau[v] > 0.0) {
                return Err(TreeError::BadBranchLength { node: v, value: tau[v] });
            }
            if !(mu[v].is_finite() && mu[v] > 0.0) {
                return Err(TreeError::BadRate { node: v, value: mu[v] });
            }
        }
        if !(root_mu.is_finite() && root_mu > 0.0) {
            return Err(TreeError::BadRate { node: topo.root(), value: root_mu });
        }
        Ok(SpeciesPhylogeny { topo, tau, mu, root_mu })
    }

    pub fn topology(&self) -> &RootedTopology {
        &self.topo
    }

    pub fn taxa(&self) -> &[Taxon] {
        self.topo.taxa()
    }

    pub fn num_taxa(&self) -> usize {
        self.topo.num_taxa()
    }

    /// Coalescent-unit length of the branch above `v`.
    pub fn tau(&self, v: usize) -> f64 {
        self.tau[v]
    }

    /// Mutation rate of the branch above `v`.
    pub fn mu(&self, v: usize) -> f64 {
        self.mu[v]
    }

    pub fn root_mu(&self) -> f64 {
        self.root_mu
    }

    /// Mutation-weighted leaf metric: d(a,b) = sum of tau_e * mu_e over the
    /// unique a-b path.
    pub fn species_metric(&self) -> DistanceMatrix {
        self.species_metric_with_root().0
    }

    /// The leaf metric together with the weighted root-to-leaf distances.
    pub fn species_metric_with_root(&self) -> (DistanceMatrix, Vec<f64>) {
        let weighted = |v: usize| self.tau[v] * self.mu[v];
        let dw = self.node_depths(weighted);
        let n = self.num_taxa();
        let root_dists: Vec<f64> = (0..n).map(|t| dw[self.topo.leaf_node(t)]).collect();
        (self.metric_from_depths(&dw), root_dists)
    }

    fn node_depths(&self, edge_len: impl Fn(usize) -> f64) -> Vec<f64> {
        let nv = self.topo.node_count();
        let mut dw = vec![0.0f64; nv];
        let mut stack = vec![self.topo.root()];
        while let Some(v) = stack.pop() {
            for &c in self.topo.children(v) {
                dw[c] = dw[v] + edge_len(c);
                stack.push(c);
            }
        }
        dw
    }

    fn metric_from_depths(&self, dw: &[f64]) -> DistanceMatrix {
        let n = self.num_taxa();
        DistanceMatrix::from_fn(n, |a, b| {
            let (na, nb) = (self.topo.leaf_node(a), self.topo.leaf_node(b));
            let w = self.topo.lca(na, nb);
            dw[na] + dw[nb] - 2.0 * dw[w]
        })
    }

    /// The species tree restricted to three leaves.
    pub fn restrict_to_triplet(
        &self,
        x: TaxonId,
        y: TaxonId,
        z: TaxonId,
    ) -> Result<TripletTopology, TreeError> {
        self.topo.triplet(x, y, z)
    }
}

/// Gene tree: rooted binary tree over the species' leaf set with
/// mutation-weighted branch lengths `delta` (edge above each vertex).
#[derive(Clone, Debug)]
pub struct GeneTree {
    topo: RootedTopology,
    delta: Vec<f64>,
}

impl GeneTree {
    pub fn new(topo: RootedTopology, delta: Vec<f64>) -> Result<Self, TreeError> {
        if delta.len() != topo.node_count() {
            return Err(TreeError::Malformed);
        }
        for (v, d) in delta.iter().enumerate() {
            if v == topo.root() {
                continue;
            }
            if !(d.is_finite() && *d >= 0.0) {
                return Err(TreeError::BadGeneLength { node: v, value: *d });
            }
        }
        Ok(GeneTree { topo, delta })
    }

    pub fn topology(&self) -> &RootedTopology {
        &self.topo
    }

    pub fn taxa(&self) -> &[Taxon] {
        self.topo.taxa()
    }

    pub fn delta(&self, v: usize) -> f64 {
        self.delta[v]
    }

    /// Gene metric: d(a,b) = sum of delta_e over the unique a-b path.
    pub fn gene_metric(&self) -> DistanceMatrix {
        let nv = self.topo.node_count();
        let mut dw = vec![0.0f64; nv];
        let mut stack = vec![self.topo.root()];
        while let Some(v) = stack.pop() {
            for &c in self.topo.children(v) {
                dw[c] = dw[v] + self.delta[c];
                stack.push(c);
            }
        }
        let n = self.topo.num_taxa();
        DistanceMatrix::from_fn(n, |a, b| {
            let (na, nb) = (self.topo.leaf_node(a), self.topo.leaf_node(b));
            let w = self.topo.lca(na, nb);
            dw[na] + dw[nb] - 2.0 * dw[w]
        })
    }
}

/// Symmetric nonnegative leaf-pair distances with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn zeros(n: usize) -> Self {
        DistanceMatrix { n, d: vec![0.0; n * n] }
    }

    /// Build from a symmetric function; `f` is called once per unordered
    /// pair.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for a in 0..n {
            for b in (a + 1)..n {
                let v = f(a, b);
                m.d[a * n + b] = v;
                m.d[b * n + a] = v;
            }
        }
        m
    }

    /// Validating constructor for externally supplied raw values
    /// (row-major, length n*n). Rejects asymmetric or negative input.
    pub fn try_from_raw(n: usize, values: &[f64]) -> Result<Self, TreeError> {
        if values.len() != n * n {
            return Err(TreeError::Malformed);
        }
        for a in 0..n {
            if values[a * n + a] != 0.0 {
                return Err(TreeError::NonzeroDiagonal(a));
            }
            for b in 0..n {
                let v = values[a * n + b];
                if !v.is_finite() || v < 0.0 {
                    return Err(TreeError::NegativeDistance(a, b));
                }
                if v != values[b * n + a] {
                    return Err(TreeError::Asymmetric(a, b));
                }
            }
        }
        Ok(DistanceMatrix { n, d: values.to_vec() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.d[a * self.n + b]
    }

    pub fn set(&mut self, a: usize, b: usize, v: f64) {
        self.d[a * self.n + b] = v;
        self.d[b * self.n + a] = v;
    }

    /// Three-point condition: for every triple the two largest pairwise
    /// distances differ by at most `tol`.
    pub fn is_ultrametric(&self, tol: f64) -> bool {
        let n = self.n;
        for a in 0..n {
            for b in (a + 1)..n {
                for c in (b + 1)..n {
                    let mut t = [self.get(a, b), self.get(a, c), self.get(b, c)];
                    t.sort_by(|x, y| x.total_cmp(y));
                    if (t[2] - t[1]).abs() > tol {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Four-point condition for tree metrics, checked exhaustively over
    /// quadruples: the two largest of the three pair-sums agree within
    /// `tol`.
    pub fn satisfies_four_point(&self, tol: f64) -> bool {
        let n = self.n;
        for a in 0..n {
            for b in (a + 1)..n {
                for c in (b + 1)..n {
                    for d in (c + 1)..n {
                        let mut s = [
                            self.get(a, b) + self.get(c, d),
                            self.get(a, c) + self.get(b, d),
                            self.get(a, d) + self.get(b, c),
                        ];
                        s.sort_by(|x, y| x.total_cmp(y));
                        if (s[2] - s[1]).abs() > tol {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }
}

/// Classical Farris transform. `root_dists[x]` supplies the weighted
/// distance from the reference vertex (the root here) to leaf `x`; the
/// base leaf is the argmax. Output is ultrametric whenever the input is a
/// tree metric with consistent root distances.
pub fn classical_farris(
    mu: &DistanceMatrix,
    root_dists: &[f64],
) -> Result<DistanceMatrix, TreeError> {
    let n = mu.n();
    if root_dists.len() != n {
        return Err(TreeError::RootDistanceLen { got: root_dists.len(), expected: n });
    }
    if root_dists.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(TreeError::BadRootDistance);
    }
    let top = root_dists.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DistanceMatrix::from_fn(n, |x, y| {
        mu.get(x, y) + 2.0 * top - root_dists[x] - root_dists[y]
    }))
}

/// Branch-length and rate bounds defining the tree class experiments draw
/// from: internal edges in (f, g), leaf edges in (f', g'), rates in
/// (mu_lower, mu_upper).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub f: f64,
    pub g: f64,
    pub f_prime: f64,
    pub g_prime: f64,
    pub mu_lower: f64,
    pub mu_upper: f64,
}

impl RegimeConfig {
    pub fn validate(&self) -> Result<(), TreeError> {
        if !(0.0 < self.f && self.f < self.g) {
            return Err(TreeError::BadRegime(format!(
                "need 0 < f < g, got f={} g={}",
                self.f, self.g
            )));
        }
        if !(0.0 < self.f_prime && self.f_prime < self.g_prime) {
            return Err(TreeError::BadRegime(format!(
                "need 0 < f' < g', got f'={} g'={}",
                self.f_prime, self.g_prime
            )));
        }
        if !(0.0 < self.mu_lower && self.mu_lower < self.mu_upper) {
            return Err(TreeError::BadRegime(format!(
                "need 0 < mu_lower < mu_upper, got {} {}",
                self.mu_lower, self.mu_upper
            )));
        }
        Ok(())
    }
}

/// Random species phylogeny with `n` leaves: uniform random topology by
/// repeated edge subdivision (including above the root), lengths and rates
/// drawn uniformly within the regime bounds. Leaves are labelled "1".."n".
pub fn random_species_tree<R: Rng + ?Sized>(
    n: usize,
    regime: &RegimeConfig,
    rng: &mut R,
) -> Result<SpeciesPhylogeny, TreeError> {
    if n < 2 {
        return Err(TreeError::TooFewLeaves(n));
    }
    regime.validate()?;
    // grow the shape: nodes as parent/children lists
    let mut parent: Vec<Option<usize>> = vec![None, Some(0), Some(0)];
    let mut children: Vec<Vec<usize>> = vec![vec![1, 2], vec![], vec![]];
    let mut node_taxon: Vec<Option<TaxonId>> = vec![None, Some(0), Some(1)];
    let mut root = 0usize;
    for t in 2..n {
        // pick an attachment edge: above any non-root node, or above the root
        let non_root: Vec<usize> = (0..parent.len()).filter(|&v| parent[v].is_some()).collect();
        let choice = rng.random_range(0..non_root.len() + 1);
        let leaf = parent.len() + 1;
        if choice == non_root.len() {
            // new root above the old one
            let new_root = parent.len();
            parent.push(None);
            children.push(vec![root, leaf]);
            node_taxon.push(None);
            parent.push(Some(new_root));
            children.push(vec![]);
            node_taxon.push(Some(t));
            parent[root] = Some(new_root);
            root = new_root;
        } else {
            let v = non_root[choice];
            let p = parent[v].unwrap();
            let mid = parent.len();
            parent.push(Some(p));
            children.push(vec![v, leaf]);
            node_taxon.push(None);
            parent.push(Some(mid));
            children.push(vec![]);
            node_taxon.push(Some(t));
            let slot = children[p].iter().position(|&c| c == v).unwrap();
            children[p][slot] = mid;
            parent[v] = Some(mid);
        }
    }
    let taxa: Vec<Taxon> = (0..n)
        .map(|i| Taxon { id: i, label: format!("{}", i + 1) })
        .collect();
    let topo = RootedTopology::from_parts(parent, children, root, node_taxon, taxa)?;
    let nv = topo.node_count();
    let mut tau = vec![f64::NAN; nv];
    let mut mu = vec![f64::NAN; nv];
    for v in 0..nv {
        if v == topo.root() {
            continue;
        }
        let (lo, hi) = if topo.is_leaf(v) {
            (regime.f_prime, regime.g_prime)
        } else {
            (regime.f, regime.g)
        };
        tau[v] = rng.random_range(lo..hi);
        mu[v] = rng.random_range(regime.mu_lower..regime.mu_upper);
    }
    tau[topo.root()] = 0.0;
    mu[topo.root()] = 0.0;
    let root_mu = rng.random_range(regime.mu_lower..regime.mu_upper);
    SpeciesPhylogeny::new(topo, tau, mu, root_mu)
}
