//! Quantitative bipolar argumentation trees.
//!
//! A [`QafModel`] is a tree of arguments rooted at the global concept. Leaves are
//! features whose strength comes straight from the (preprocessed) instance; every
//! internal node carries a base score and aggregates its children through signed
//! edge weights. Edges are stored child → parent.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CamError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Edges whose magnitude falls below this after training are pruned.
pub const PRUNE_EPS: f64 = 1e-12;

const NORM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Feature,
    Concept,
    Root,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Feature => "feature",
            NodeKind::Concept => "concept",
            NodeKind::Root => "root",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArgumentNode {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meaning: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_score: Option<f64>,
    pub round: u32,
    /// Display suffix for raw feature values (e.g. `%`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl ArgumentNode {
    pub fn feature(id: impl Into<String>) -> Self {
        let id = id.into();
        ArgumentNode {
            label: id.clone(),
            id,
            kind: NodeKind::Feature,
            description: None,
            meaning: None,
            base_score: None,
            round: 0,
            unit: None,
        }
    }

    pub fn concept(id: impl Into<String>, round: u32, base_score: f64) -> Self {
        let id = id.into();
        ArgumentNode {
            label: id.clone(),
            id,
            kind: NodeKind::Concept,
            description: None,
            meaning: None,
            base_score: Some(base_score),
            round,
            unit: None,
        }
    }

    pub fn root(id: impl Into<String>, base_score: f64) -> Self {
        let id = id.into();
        ArgumentNode {
            label: id.clone(),
            id,
            kind: NodeKind::Root,
            description: None,
            meaning: None,
            base_score: Some(base_score),
            round: 0,
            unit: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }

    pub fn with_meaning(mut self, meaning: Vec<f64>) -> Self {
        self.meaning = Some(meaning);
        self
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = Some(unit.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub child: String,
    pub parent: String,
    pub weight: f64,
}

impl Edge {
    pub fn new(child: impl Into<String>, parent: impl Into<String>, weight: f64) -> Self {
        Edge {
            child: child.into(),
            parent: parent.into(),
            weight,
        }
    }
}

/// An edge removed because its trained weight was (numerically) zero.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrunedEdge {
    pub child: String,
    pub parent: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Support,
    Attack,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Support => 1,
            Polarity::Attack => -1,
        }
    }

    fn of(weight: f64) -> Option<Self> {
        if weight > 0.0 {
            Some(Polarity::Support)
        } else if weight < 0.0 {
            Some(Polarity::Attack)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnknownRoot { root: String },
    RootKind { node: String },
    ExtraRoot { node: String },
    DanglingEdge { child: String, parent: String },
    RootHasParent,
    MultipleParents { node: String, parents: Vec<String> },
    MissingParent { node: String },
    Cycle { nodes: Vec<String> },
    FeatureWithChildren { node: String },
    ConceptArity { node: String, children: usize },
    BaseScoreOnFeature { node: String },
    MissingBaseScore { node: String },
    BaseScoreRange { node: String, value: f64 },
    NonFiniteWeight { child: String, parent: String },
    ZeroWeight { child: String, parent: String },
    MeaningDimension { node: String, expected: usize, found: usize },
    MeaningNorm { node: String, norm: f64 },
    FeatureOrder { detail: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Nodes detached by weight pruning. Informational, not a violation.
    pub inert: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// The argumentation tree `<A, E, β, ω>` rooted at the global concept.
///
/// Immutable once built; use [`QafModel::from_parts`] to assemble one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelDocument", try_from = "ModelDocument")]
pub struct QafModel {
    embedding_dim: usize,
    feature_order: Vec<String>,
    nodes: Vec<ArgumentNode>,
    edges: Vec<Edge>,
    pruned: Vec<PrunedEdge>,
    root: String,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    schema_version: u32,
    embedding_dim: usize,
    feature_order: Vec<String>,
    nodes: Vec<ArgumentNode>,
    edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pruned: Vec<PrunedEdge>,
    root: String,
}

impl From<QafModel> for ModelDocument {
    fn from(m: QafModel) -> Self {
        ModelDocument {
            schema_version: SCHEMA_VERSION,
            embedding_dim: m.embedding_dim,
            feature_order: m.feature_order,
            nodes: m.nodes,
            edges: m.edges,
            pruned: m.pruned,
            root: m.root,
        }
    }
}

impl TryFrom<ModelDocument> for QafModel {
    type Error = CamError;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(CamError::SchemaVersion {
                found: doc.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let mut model = QafModel::from_parts(
            doc.root,
            doc.nodes,
            doc.edges,
            doc.embedding_dim,
            doc.feature_order,
        )?;
        model.pruned = doc.pruned;
        Ok(model)
    }
}

impl QafModel {
    /// Assembles a model. Only id uniqueness is enforced here; structural
    /// invariants are checked by [`QafModel::validate`].
    pub fn from_parts(
        root: impl Into<String>,
        nodes: Vec<ArgumentNode>,
        edges: Vec<Edge>,
        embedding_dim: usize,
        feature_order: Vec<String>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(CamError::InvalidModel(format!("duplicate node id `{}`", n.id)));
            }
        }
        Ok(QafModel {
            embedding_dim,
            feature_order,
            nodes,
            edges,
            pruned: Vec::new(),
            root: root.into(),
            index,
        })
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn feature_order(&self) -> &[String] {
        &self.feature_order
    }

    pub fn nodes(&self) -> &[ArgumentNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn pruned(&self) -> &[PrunedEdge] {
        &self.pruned
    }

    pub fn node(&self, id: &str) -> Option<&ArgumentNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn root_node(&self) -> Option<&ArgumentNode> {
        self.node(&self.root)
    }

    fn require(&self, id: &str) -> Result<&ArgumentNode> {
        self.node(id).ok_or_else(|| CamError::NodeNotFound(id.to_string()))
    }

    /// Incoming edges of `id`, in insertion order.
    pub fn child_edges<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.parent == id)
    }

    pub fn children(&self, id: &str) -> Result<Vec<&str>> {
        self.require(id)?;
        Ok(self.edges.iter().filter(|e| e.parent == id).map(|e| e.child.as_str()).collect())
    }

    pub fn parent_edge(&self, id: &str) -> Option<&Edge> {
        self.edges.iter().find(|e| e.child == id)
    }

    pub fn edge(&self, child: &str, parent: &str) -> Option<&Edge> {
        self.edges.iter().find(|e| e.child == child && e.parent == parent)
    }

    /// Children of `a` connected through a negative weight.
    pub fn attackers(&self, a: &str) -> Result<Vec<&str>> {
        self.require(a)?;
        Ok(self
            .edges
            .iter()
            .filter(|e| e.parent == a && e.weight < 0.0)
            .map(|e| e.child.as_str())
            .collect())
    }

    /// Children of `a` connected through a positive weight.
    pub fn supporters(&self, a: &str) -> Result<Vec<&str>> {
        self.require(a)?;
        Ok(self
            .edges
            .iter()
            .filter(|e| e.parent == a && e.weight > 0.0)
            .map(|e| e.child.as_str())
            .collect())
    }

    /// Whether `a` ultimately pushes the root up (support) or down (attack).
    pub fn root_polarity(&self, a: &str) -> Result<Polarity> {
        self.require(a)?;
        if a == self.root {
            return Err(CamError::Structure("the root has no polarity".into()));
        }
        let mut polarity = Polarity::Support;
        let mut current = a;
        let mut steps = 0;
        while current != self.root {
            let edge = self
                .parent_edge(current)
                .ok_or_else(|| CamError::Structure(format!("`{current}` is not connected to the root")))?;
            let step = Polarity::of(edge.weight).ok_or_else(|| CamError::ZeroWeightPath(a.to_string()))?;
            if step == Polarity::Attack {
                polarity = match polarity {
                    Polarity::Support => Polarity::Attack,
                    Polarity::Attack => Polarity::Support,
                };
            }
            current = &edge.parent;
            steps += 1;
            if steps > self.nodes.len() {
                return Err(CamError::Structure(format!("cycle above `{a}`")));
            }
        }
        Ok(polarity)
    }

    /// Nodes ordered children-first, so a single sweep evaluates the tree.
    /// Nodes detached from the root (inert) come after their subtrees as well.
    pub fn bottom_up_order(&self) -> Result<Vec<usize>> {
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        let mut has_parent = vec![false; self.nodes.len()];
        for e in &self.edges {
            let (c, p) = match (self.node_index(&e.child), self.node_index(&e.parent)) {
                (Some(c), Some(p)) => (c, p),
                _ => {
                    return Err(CamError::InvalidModel(format!(
                        "edge {} -> {} references an unknown node",
                        e.child, e.parent
                    )))
                }
            };
            if has_parent[c] {
                return Err(CamError::InvalidModel(format!("`{}` has several parents", e.child)));
            }
            has_parent[c] = true;
            children[p].push(c);
        }
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut state = vec![0u8; self.nodes.len()];
        for start in 0..self.nodes.len() {
            if has_parent[start] {
                continue;
            }
            // iterative post-order
            let mut stack = vec![(start, 0usize)];
            state[start] = 1;
            while let Some((node, next)) = stack.pop() {
                if next < children[node].len() {
                    stack.push((node, next + 1));
                    let c = children[node][next];
                    if state[c] != 0 {
                        return Err(CamError::InvalidModel("cycle detected".into()));
                    }
                    state[c] = 1;
                    stack.push((c, 0));
                } else {
                    state[node] = 2;
                    order.push(node);
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(CamError::InvalidModel("cycle detected".into()));
        }
        Ok(order)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let v = &mut report.violations;

        match self.node(&self.root) {
            None => v.push(Violation::UnknownRoot { root: self.root.clone() }),
            Some(n) if n.kind != NodeKind::Root => v.push(Violation::RootKind { node: n.id.clone() }),
            _ => {}
        }
        for n in &self.nodes {
            if n.kind == NodeKind::Root && n.id != self.root {
                v.push(Violation::ExtraRoot { node: n.id.clone() });
            }
        }

        let inert: HashSet<&str> = self.pruned.iter().map(|p| p.child.as_str()).collect();
        let mut parents: HashMap<&str, Vec<&str>> = HashMap::new();
        let mut arity: HashMap<&str, usize> = HashMap::new();
        for e in &self.edges {
            if self.node(&e.child).is_none() || self.node(&e.parent).is_none() {
                v.push(Violation::DanglingEdge {
                    child: e.child.clone(),
                    parent: e.parent.clone(),
                });
                continue;
            }
            parents.entry(&e.child).or_default().push(&e.parent);
            *arity.entry(&e.parent).or_default() += 1;
            if !e.weight.is_finite() {
                v.push(Violation::NonFiniteWeight {
                    child: e.child.clone(),
                    parent: e.parent.clone(),
                });
            } else if e.weight == 0.0 {
                v.push(Violation::ZeroWeight {
                    child: e.child.clone(),
                    parent: e.parent.clone(),
                });
            }
        }
        for p in &self.pruned {
            *arity.entry(&p.parent).or_default() += 1;
        }

        for n in &self.nodes {
            let id = n.id.as_str();
            let ps = parents.get(id).map(Vec::as_slice).unwrap_or(&[]);
            if id == self.root {
                if !ps.is_empty() {
                    v.push(Violation::RootHasParent);
                }
            } else if ps.len() > 1 {
                v.push(Violation::MultipleParents {
                    node: n.id.clone(),
                    parents: ps.iter().map(|s| s.to_string()).collect(),
                });
            } else if ps.is_empty() && !inert.contains(id) {
                v.push(Violation::MissingParent { node: n.id.clone() });
            }

            let k = arity.get(id).copied().unwrap_or(0);
            match n.kind {
                NodeKind::Feature => {
                    if k > 0 {
                        v.push(Violation::FeatureWithChildren { node: n.id.clone() });
                    }
                    if n.base_score.is_some() {
                        v.push(Violation::BaseScoreOnFeature { node: n.id.clone() });
                    }
                }
                NodeKind::Concept | NodeKind::Root => {
                    if n.kind == NodeKind::Concept && k != 2 {
                        v.push(Violation::ConceptArity {
                            node: n.id.clone(),
                            children: k,
                        });
                    }
                    match n.base_score {
                        None => v.push(Violation::MissingBaseScore { node: n.id.clone() }),
                        Some(b) if !(b > 0.0 && b < 1.0) => v.push(Violation::BaseScoreRange {
                            node: n.id.clone(),
                            value: b,
                        }),
                        _ => {}
                    }
                }
            }
            if let Some(m) = &n.meaning {
                if m.len() != self.embedding_dim {
                    v.push(Violation::MeaningDimension {
                        node: n.id.clone(),
                        expected: self.embedding_dim,
                        found: m.len(),
                    });
                } else {
                    let norm = crate::numeric::norm(m);
                    if !((norm - 1.0).abs() <= NORM_TOL) {
                        v.push(Violation::MeaningNorm { node: n.id.clone(), norm });
                    }
                }
            }
        }

        // cycles: follow first parents
        let mut reported: HashSet<String> = HashSet::new();
        for n in &self.nodes {
            let mut seen: Vec<&str> = vec![n.id.as_str()];
            let mut current = n.id.as_str();
            while let Some(&p) = parents.get(current).and_then(|ps| ps.first()) {
                if let Some(pos) = seen.iter().position(|s| *s == p) {
                    let mut cycle: Vec<String> = seen[pos..].iter().map(|s| s.to_string()).collect();
                    cycle.sort();
                    if reported.insert(cycle[0].clone()) {
                        v.push(Violation::Cycle { nodes: cycle });
                    }
                    break;
                }
                seen.push(p);
                current = p;
            }
        }

        let mut order_seen = HashSet::new();
        for f in &self.feature_order {
            match self.node(f) {
                None => v.push(Violation::FeatureOrder {
                    detail: format!("`{f}` is not a node"),
                }),
                Some(n) if n.kind != NodeKind::Feature => v.push(Violation::FeatureOrder {
                    detail: format!("`{f}` is not a feature"),
                }),
                _ => {}
            }
            if !order_seen.insert(f.as_str()) {
                v.push(Violation::FeatureOrder {
                    detail: format!("`{f}` listed twice"),
                });
            }
        }
        for n in self.nodes.iter().filter(|n| n.kind == NodeKind::Feature) {
            if !order_seen.contains(n.id.as_str()) {
                v.push(Violation::FeatureOrder {
                    detail: format!("feature `{}` missing from feature_order", n.id),
                });
            }
        }

        report.inert = self.pruned.iter().map(|p| p.child.clone()).collect();
        report
    }

    /// Serializes to the JSON model document. Refuses invalid models.
    pub fn to_json(&self) -> Result<String> {
        let report = self.validate();
        if !report.is_valid() {
            return Err(CamError::InvalidModel(format!("{:?}", report.violations)));
        }
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        serde_json::from_str(doc).map_err(|e| CamError::Schema(e.to_string()))
    }

    // -- construction helpers used by the learner and the pipeline --

    pub(crate) fn node_mut(&mut self, id: &str) -> Option<&mut ArgumentNode> {
        self.index.get(id).map(|&i| &mut self.nodes[i])
    }

    pub(crate) fn push_node(&mut self, node: ArgumentNode) -> Result<()> {
        if self.index.contains_key(&node.id) {
            return Err(CamError::InvalidModel(format!("duplicate node id `{}`", node.id)));
        }
        self.index.insert(node.id.clone(), self.nodes.len());
        self.nodes.push(node);
        Ok(())
    }

    pub(crate) fn push_edge(&mut self, edge: Edge) {
        self.edges.push(edge);
    }

    pub(crate) fn edge_mut(&mut self, child: &str, parent: &str) -> Option<&mut Edge> {
        self.edges.iter_mut().find(|e| e.child == child && e.parent == parent)
    }

    pub(crate) fn remove_edge(&mut self, child: &str, parent: &str) -> Option<Edge> {
        let pos = self.edges.iter().position(|e| e.child == child && e.parent == parent)?;
        Some(self.edges.remove(pos))
    }

    /// Drops near-zero edges, recording their children as inert.
    pub(crate) fn prune_zero_edges(&mut self) {
        let mut kept = Vec::with_capacity(self.edges.len());
        for e in self.edges.drain(..) {
            if e.weight.abs() < PRUNE_EPS {
                log::info!("pruning zero-weight edge {} -> {}", e.child, e.parent);
                self.pruned.push(PrunedEdge {
                    child: e.child,
                    parent: e.parent,
                });
            } else {
                kept.push(e);
            }
        }
        self.edges = kept;
    }
}
