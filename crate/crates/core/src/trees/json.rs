//! JSON sidecar tree format for machine use (one nested node object per
//! vertex; species branches carry `tau` and `mu`, gene branches `delta`).

use super::{GeneTree, RootedTopology, SpeciesPhylogeny, Taxon, TaxonId, TreeError};
use serde::{Deserialize, Serialize};

pub const TREE_JSON_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct TreeJson {
    pub format_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root_mu: Option<f64>,
    pub root: NodeJson,
}

#[derive(Serialize, Deserialize)]
pub struct NodeJson {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NodeJson>,
}

fn species_node(s: &SpeciesPhylogeny, v: usize) -> NodeJson {
    let topo = s.topology();
    let root = v == topo.root();
    NodeJson {
        label: topo.taxon_of(v).map(|t| topo.taxa()[t].label.clone()),
        tau: (!root).then(|| s.tau(v)),
        mu: (!root).then(|| s.mu(v)),
        delta: None,
        children: topo.children(v).iter().map(|&c| species_node(s, c)).collect(),
    }
}

pub fn species_to_json(s: &SpeciesPhylogeny) -> TreeJson {
    TreeJson {
        format_version: TREE_JSON_VERSION,
        root_mu: Some(s.root_mu()),
        root: species_node(s, s.topology().root()),
    }
}

fn gene_node(g: &GeneTree, v: usize) -> NodeJson {
    let topo = g.topology();
    let root = v == topo.root();
    NodeJson {
        label: topo.taxon_of(v).map(|t| topo.taxa()[t].label.clone()),
        tau: None,
        mu: None,
        delta: (!root).then(|| g.delta(v)),
        children: topo.children(v).iter().map(|&c| gene_node(g, c)).collect(),
    }
}

pub fn gene_to_json(g: &GeneTree) -> TreeJson {
    TreeJson {
        format_version: TREE_JSON_VERSION,
        root_mu: None,
        root: gene_node(g, g.topology().root()),
    }
}

struct Collected {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    node_taxon: Vec<Option<TaxonId>>,
    tau: Vec<Option<f64>>,
    mu: Vec<Option<f64>>,
    delta: Vec<Option<f64>>,
    taxa: Vec<Taxon>,
}

fn collect(node: &NodeJson, parent: Option<usize>, c: &mut Collected) -> Result<usize, TreeError> {
    let id = c.parent.len();
    c.parent.push(parent);
    c.children.push(vec![]);
    c.node_taxon.push(None);
    c.tau.push(node.tau);
    c.mu.push(node.mu);
    c.delta.push(node.delta);
    if node.children.is_empty() {
        let label = node.label.clone().unwrap_or_default();
        if c.taxa.iter().any(|t| t.label == label) {
            return Err(TreeError::DuplicateLabel(label));
        }
        let t = c.taxa.len();
        c.taxa.push(Taxon { id: t, label });
        c.node_taxon[id] = Some(t);
    } else {
        for ch in &node.children {
            let cid = collect(ch, Some(id), c)?;
            c.children[id].push(cid);
        }
    }
    Ok(id)
}

pub fn species_from_json(j: &TreeJson) -> Result<SpeciesPhylogeny, TreeError> {
    let mut c = Collected {
        parent: vec![],
        children: vec![],
        node_taxon: vec![],
        tau: vec![],
        mu: vec![],
        delta: vec![],
        taxa: vec![],
    };
    let root = collect(&j.root, None, &mut c)?;
    let nv = c.parent.len();
    let mut tau = vec![0.0f64; nv];
    let mut mu = vec![0.0f64; nv];
    for v in 0..nv {
        if v == root {
            continue;
        }
        tau[v] = c.tau[v].ok_or(TreeError::BadBranchLength { node: v, value: f64::NAN })?;
        mu[v] = c.mu[v].ok_or(TreeError::BadRate { node: v, value: f64::NAN })?;
    }
    let topo = RootedTopology::from_parts(c.parent, c.children, root, c.node_taxon, c.taxa)?;
    SpeciesPhylogeny::new(topo, tau, mu, j.root_mu.unwrap_or(1.0))
}

pub fn gene_from_json(j: &TreeJson) -> Result<GeneTree, TreeError> {
    let mut c = Collected {
        parent: vec![],
        children: vec![],
        node_taxon: vec![],
        tau: vec![],
        mu: vec![],
        delta: vec![],
        taxa: vec![],
    };
    let root = collect(&j.root, None, &mut c)?;
    let nv = c.parent.len();
    let mut delta = vec![0.0f64; nv];
    for (v, d) in delta.iter_mut().enumerate() {
        if v == root {
            continue;
        }
        *d = c.delta[v].ok_or(TreeError::BadGeneLength { node: v, value: f64::NAN })?;
    }
    let topo = RootedTopology::from_parts(c.parent, c.children, root, c.node_taxon, c.taxa)?;
    GeneTree::new(topo, delta)
}
