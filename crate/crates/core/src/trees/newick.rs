//! Newick serialization.
//!
//! Grammar (no whitespace): `tree := subtree ";"`,
//! `subtree := label (":" length attr?)? | "(" subtree ("," subtree)+ ")" (":" length attr?)?`,
//! `attr := "[&mu=" float "]"`.
//!
//! Species trees carry the coalescent length `tau` as the branch length and
//! the mutation rate in the `[&mu=…]` attribute; the root may carry a bare
//! `[&mu=…]` for the root-population rate (emitted only when it differs
//! from 1). Gene trees carry `delta` as the branch length and no
//! attributes.

use super::{GeneTree, RootedTopology, SpeciesPhylogeny, Taxon, TaxonId, TreeError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NewickError {
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("missing branch length at offset {offset}")]
    MissingLength { offset: usize },
    #[error("missing mu attribute on species-tree branch at offset {offset}")]
    MissingMu { offset: usize },
    #[error("unexpected mu attribute on gene-tree branch at offset {offset}")]
    UnexpectedMu { offset: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

struct RawNode {
    label: Option<String>,
    length: Option<f64>,
    mu: Option<f64>,
    children: Vec<RawNode>,
    offset: usize,
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, NewickError> {
        Err(NewickError::Parse { offset: self.pos, message: message.into() })
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), NewickError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected '{}'", c as char))
        }
    }

    fn subtree(&mut self) -> Result<RawNode, NewickError> {
        let offset = self.pos;
        let mut node = if self.peek() == Some(b'(') {
            self.pos += 1;
            let mut children = vec![self.subtree()?];
            while self.peek() == Some(b',') {
                self.pos += 1;
                children.push(self.subtree()?);
            }
            if self.peek() != Some(b')') {
                return self.err("expected ',' or ')'");
            }
            self.pos += 1;
            if children.len() < 2 {
                return self.err("internal vertex needs at least 2 children");
            }
            let label = self.maybe_label();
            RawNode { label, length: None, mu: None, children, offset }
        } else {
            let label = self.maybe_label();
            if label.is_none() {
                return self.err("expected leaf label or '('");
            }
            RawNode { label, length: None, mu: None, children: vec![], offset }
        };
        if self.peek() == Some(b':') {
            self.pos += 1;
            node.length = Some(self.number()?);
        }
        if self.peek() == Some(b'[') {
            node.mu = Some(self.mu_attr()?);
        }
        Ok(node)
    }

    fn maybe_label(&mut self) -> Option<String> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            match c {
                b'(' | b')' | b',' | b':' | b';' | b'[' => break,
                _ => self.pos += 1,
            }
        }
        if self.pos == start {
            None
        } else {
            Some(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
        }
    }

    fn number(&mut self) -> Result<f64, NewickError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            match c {
                b'0'..=b'9' | b'.' | b'-' | b'+' | b'e' | b'E' => self.pos += 1,
                _ => break,
            }
        }
        if self.pos == start {
            return self.err("expected a number");
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<f64>().map_err(|_| NewickError::Parse {
            offset: start,
            message: format!("invalid number `{}`", text),
        })
    }

    fn mu_attr(&mut self) -> Result<f64, NewickError> {
        for c in *b"[&mu=" {
            self.expect(c)?;
        }
        let v = self.number()?;
        self.expect(b']')?;
        Ok(v)
    }

    fn tree(&mut self) -> Result<RawNode, NewickError> {
        let node = self.subtree()?;
        self.expect(b';')?;
        if self.pos != self.bytes.len() {
            return self.err("trailing characters after ';'");
        }
        Ok(node)
    }
}

fn parse_raw(text: &str) -> Result<RawNode, NewickError> {
    Parser { bytes: text.trim().as_bytes(), pos: 0 }.tree()
}

fn collect_leaf_labels(raw: &RawNode, out: &mut Vec<(String, usize)>) {
    if raw.children.is_empty() {
        out.push((raw.label.clone().unwrap_or_default(), raw.offset));
    } else {
        for c in &raw.children {
            collect_leaf_labels(c, out);
        }
    }
}

/// Assign taxon ids in leaf-encounter order, or reuse `known` labels.
fn taxa_for(raw: &RawNode, known: Option<&[Taxon]>) -> Result<Vec<Taxon>, NewickError> {
    let mut labels = Vec::new();
    collect_leaf_labels(raw, &mut labels);
    match known {
        None => {
            let mut taxa: Vec<Taxon> = Vec::new();
            for (label, offset) in labels {
                if label.is_empty() {
                    return Err(NewickError::Parse { offset, message: "unlabelled leaf".into() });
                }
                if taxa.iter().any(|t| t.label == label) {
                    return Err(TreeError::DuplicateLabel(label).into());
                }
                taxa.push(Taxon { id: taxa.len(), label });
            }
            Ok(taxa)
        }
        Some(known) => {
            if labels.len() != known.len() {
                return Err(TreeError::LabelMismatch(format!(
                    "expected {} leaves, found {}",
                    known.len(),
                    labels.len()
                ))
                .into());
            }
            let mut seen = vec![false; known.len()];
            for (label, _offset) in &labels {
                match known.iter().find(|t| &t.label == label) {
                    Some(t) if !seen[t.id] => seen[t.id] = true,
                    _ => return Err(TreeError::LabelMismatch(label.clone()).into()),
                }
            }
            Ok(known.to_vec())
        }
    }
}

struct Arena {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    node_taxon: Vec<Option<TaxonId>>,
    length: Vec<Option<f64>>,
    mu: Vec<Option<f64>>,
    offset: Vec<usize>,
}

fn build_arena(raw: &RawNode, taxa: &[Taxon]) -> Arena {
    let mut a = Arena {
        parent: vec![],
        children: vec![],
        node_taxon: vec![],
        length: vec![],
        mu: vec![],
        offset: vec![],
    };
    fn walk(raw: &RawNode, parent: Option<usize>, taxa: &[Taxon], a: &mut Arena) -> usize {
        let id = a.parent.len();
        a.parent.push(parent);
        a.children.push(vec![]);
        a.node_taxon.push(None);
        a.length.push(raw.length);
        a.mu.push(raw.mu);
        a.offset.push(raw.offset);
        if raw.children.is_empty() {
            let label = raw.label.as_deref().unwrap_or("");
            let t = taxa.iter().find(|t| t.label == label).map(|t| t.id);
            a.node_taxon[id] = t;
        } else {
            for c in &raw.children {
                let cid = walk(c, Some(id), taxa, a);
                a.children[id].push(cid);
            }
        }
        id
    }
    walk(raw, None, taxa, &mut a);
    a
}

/// Parse a species tree: every non-root branch needs a length (tau) and a
/// `[&mu=…]` attribute.
pub fn parse_species_newick(text: &str) -> Result<SpeciesPhylogeny, NewickError> {
    let raw = parse_raw(text)?;
    let taxa = taxa_for(&raw, None)?;
    let a = build_arena(&raw, &taxa);
    let nv = a.parent.len();
    let root = 0usize;
    let mut tau = vec![0.0f64; nv];
    let mut mu = vec![0.0f64; nv];
    for v in 0..nv {
        if v == root {
            continue;
        }
        tau[v] = a.length[v].ok_or(NewickError::MissingLength { offset: a.offset[v] })?;
        mu[v] = a.mu[v].ok_or(NewickError::MissingMu { offset: a.offset[v] })?;
    }
    let root_mu = a.mu[root].unwrap_or(1.0);
    if a.length[root].is_some() {
        return Err(NewickError::Parse {
            offset: a.offset[root],
            message: "root must not carry a branch length".into(),
        });
    }
    let topo = RootedTopology::from_parts(a.parent, a.children, root, a.node_taxon, taxa)?;
    Ok(SpeciesPhylogeny::new(topo, tau, mu, root_mu)?)
}

/// Parse a gene tree; taxon ids follow leaf-encounter order.
pub fn parse_gene_newick(text: &str) -> Result<GeneTree, NewickError> {
    parse_gene_impl(text, None)
}

/// Parse a gene tree against a known taxon set (label-matched bijection).
pub fn parse_gene_newick_with_taxa(text: &str, taxa: &[Taxon]) -> Result<GeneTree, NewickError> {
    parse_gene_impl(text, Some(taxa))
}

fn parse_gene_impl(text: &str, known: Option<&[Taxon]>) -> Result<GeneTree, NewickError> {
    let raw = parse_raw(text)?;
    let taxa = taxa_for(&raw, known)?;
    let a = build_arena(&raw, &taxa);
    let nv = a.parent.len();
    let root = 0usize;
    let mut delta = vec![0.0f64; nv];
    for (v, d) in delta.iter_mut().enumerate() {
        if a.mu[v].is_some() {
            return Err(NewickError::UnexpectedMu { offset: a.offset[v] });
        }
        if v == root {
            continue;
        }
        *d = a.length[v].ok_or(NewickError::MissingLength { offset: a.offset[v] })?;
    }
    let topo = RootedTopology::from_parts(a.parent, a.children, root, a.node_taxon, taxa)?;
    Ok(GeneTree::new(topo, delta)?)
}

fn fmt_f64(v: f64) -> String {
    format!("{}", v)
}

/// Canonical species-tree serialization (child order as stored; the root
/// attribute appears only for a non-default root rate).
pub fn species_to_newick(s: &SpeciesPhylogeny) -> String {
    let topo = s.topology();
    fn emit(s: &SpeciesPhylogeny, topo: &RootedTopology, v: usize, out: &mut String) {
        if let Some(t) = topo.taxon_of(v) {
            out.push_str(&topo.taxa()[t].label);
        } else {
            out.push('(');
            for (i, &c) in topo.children(v).iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                emit(s, topo, c, out);
            }
            out.push(')');
        }
        if v != topo.root() {
            out.push(':');
            out.push_str(&fmt_f64(s.tau(v)));
            out.push_str(&format!("[&mu={}]", fmt_f64(s.mu(v))));
        }
    }
    let mut out = String::new();
    emit(s, topo, topo.root(), &mut out);
    if s.root_mu() != 1.0 {
        out.push_str(&format!("[&mu={}]", fmt_f64(s.root_mu())));
    }
    out.push(';');
    out
}

pub fn gene_to_newick(g: &GeneTree) -> String {
    let topo = g.topology();
    fn emit(g: &GeneTree, topo: &RootedTopology, v: usize, out: &mut String) {
        if let Some(t) = topo.taxon_of(v) {
            out.push_str(&topo.taxa()[t].label);
        } else {
            out.push('(');
            for (i, &c) in topo.children(v).iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                emit(g, topo, c, out);
            }
            out.push(')');
        }
        if v != topo.root() {
            out.push(':');
            out.push_str(&fmt_f64(g.delta(v)));
        }
    }
    let mut out = String::new();
    emit(g, topo, topo.root(), &mut out);
    out.push(';');
    out
}
