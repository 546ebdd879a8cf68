//! Semantic mining: pair up frontier nodes whose meaning vectors are close and
//! abstract each pair into a concept candidate.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CamError, Result};
use crate::numeric::{dot, norm};
use crate::qaf::{ArgumentNode, Edge};

pub const DEFAULT_THRESHOLD: f64 = 0.55;

const NORM_TOL: f64 = 1e-9;

/// Meaning vectors keyed by node id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub provenance: String,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, provenance: impl Into<String>) -> Self {
        EmbeddingTable {
            dim,
            provenance: provenance.into(),
            vectors: BTreeMap::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CamError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: EmbeddingTable = serde_json::from_str(text).map_err(|e| CamError::Schema(e.to_string()))?;
        table.check()?;
        Ok(table)
    }

    /// Every vector has the declared dimension and unit norm.
    pub fn check(&self) -> Result<()> {
        for (id, v) in &self.vectors {
            if v.len() != self.dim {
                return Err(CamError::Dimension {
                    expected: self.dim,
                    found: v.len(),
                });
            }
            let n = norm(v);
            if !n.is_finite() || (n - 1.0).abs() > NORM_TOL {
                return Err(CamError::DegenerateVector(id.clone()));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.vectors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| CamError::MissingMeaning(id.to_string()))
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(CamError::Dimension {
                expected: self.dim,
                found: v.len(),
            });
        }
        self.vectors.insert(id.into(), v);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub label: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub unit: Option<String>,
}

/// Human-provided names for features and concepts, keyed by node id.
pub type LabelMap = BTreeMap<String, LabelEntry>;

pub fn load_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CamError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CamError::Schema(e.to_string()))
}

/// Concept ids look like `c<round>_<k>`.
pub fn is_concept_id(id: &str) -> bool {
    id.strip_prefix('c')
        .and_then(|rest| rest.split_once('_'))
        .is_some_and(|(r, k)| {
            !r.is_empty() && !k.is_empty() && r.bytes().all(|b| b.is_ascii_digit()) && k.bytes().all(|b| b.is_ascii_digit())
        })
}

pub fn concept_id(round: u32, k: usize) -> String {
    format!("c{round}_{k}")
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(CamError::Dimension {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || !nu.is_finite() {
        return Err(CamError::DegenerateVector("u".into()));
    }
    if nv == 0.0 || !nv.is_finite() {
        return Err(CamError::DegenerateVector("v".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptCandidate {
    pub id: String,
    pub children: [String; 2],
    pub meaning: Vec<f64>,
    pub similarity: f64,
    pub label: String,
}

/// Greedy disjoint pairing by descending similarity. Ties go to the
/// lexicographically smallest (min id, max id) pair. Each returned candidate
/// is named `c<round>_<k>` in selection order.
pub fn propose_groups(
    frontier: &[String],
    embeddings: &EmbeddingTable,
    threshold: f64,
    round: u32,
) -> Result<Vec<ConceptCandidate>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(CamError::Config(format!("threshold {threshold} outside (0, 1]")));
    }
    let vectors: Vec<&[f64]> = frontier.iter().map(|id| embeddings.get(id)).collect::<Result<_>>()?;

    let mut pairs: Vec<(f64, &str, &str)> = Vec::new();
    for i in 0..frontier.len() {
        for j in i + 1..frontier.len() {
            let s = cosine_similarity(vectors[i], vectors[j]).map_err(|_| {
                CamError::DegenerateVector(format!("{} / {}", frontier[i], frontier[j]))
            })?;
            if s >= threshold {
                let (a, b) = if frontier[i] <= frontier[j] {
                    (&frontier[i], &frontier[j])
                } else {
                    (&frontier[j], &frontier[i])
                };
                pairs.push((s, a, b));
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| x.1.cmp(y.1))
            .then_with(|| x.2.cmp(y.2))
    });

    let mut used = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (s, a, b) in pairs {
        if used.contains(a) || used.contains(b) {
            continue;
        }
        used.insert(a);
        used.insert(b);
        let meaning = mean_direction(embeddings.get(a)?, embeddings.get(b)?)
            .ok_or_else(|| CamError::DegenerateVector(format!("mean of {a} and {b}")))?;
        let id = concept_id(round, out.len());
        out.push(ConceptCandidate {
            label: id.clone(),
            id,
            children: [a.to_string(), b.to_string()],
            meaning,
            similarity: s,
        });
    }
    Ok(out)
}

fn mean_direction(u: &[f64], v: &[f64]) -> Option<Vec<f64>> {
    let mean: Vec<f64> = u.iter().zip(v).map(|(a, b)| (a + b) / 2.0).collect();
    let n = norm(&mean);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(mean.into_iter().map(|x| x / n).collect())
}

/// Longest common substring of two labels, used as a machine-made concept name.
fn common_label(a: &str, b: &str) -> Option<String> {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut best = (0, 0);
    let mut prev = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        let mut cur = vec![0usize; b.len() + 1];
        for j in 1..=b.len() {
            if a[i - 1] == b[j - 1] {
                cur[j] = prev[j - 1] + 1;
                if cur[j] > best.0 {
                    best = (cur[j], i);
                }
            }
        }
        prev = cur;
    }
    (best.0 >= 3).then(|| a[best.1 - best.0..best.1].iter().collect())
}

/// The concept node plus its two (untrained, weight 0) child edges.
#[derive(Clone, Debug, PartialEq)]
pub struct AbstractedConcept {
    pub node: ArgumentNode,
    pub edges: [Edge; 2],
}

/// Turns a candidate into a concept node. A label-map entry for the candidate id
/// overrides the name; if the embedding table also carries a vector for that id
/// (the embedded human description), it replaces the mean meaning.
///
/// `child_labels` supplies display labels of the two children for auto naming.
pub fn abstract_concept(
    candidate: &ConceptCandidate,
    round: u32,
    labels: Option<&LabelMap>,
    embeddings: &EmbeddingTable,
    child_labels: [&str; 2],
) -> Result<AbstractedConcept> {
    if let Some(map) = labels {
        if let Some(unknown) = map
            .keys()
            .find(|k| !embeddings.vectors.contains_key(*k) && !is_concept_id(k))
        {
            return Err(CamError::UnknownLabelNode(unknown.clone()));
        }
    }
    if candidate.children[0] == candidate.children[1] {
        return Err(CamError::Structure(format!("candidate {} pairs a node with itself", candidate.id)));
    }
    let entry = labels.and_then(|m| m.get(&candidate.id));
    let meaning = match (entry, embeddings.vectors.get(&candidate.id)) {
        (Some(_), Some(v)) => v.clone(),
        _ => candidate.meaning.clone(),
    };
    let mut node = ArgumentNode::concept(candidate.id.clone(), round, 0.5).with_meaning(meaning);
    match entry {
        Some(e) => {
            node.label = e.label.clone();
            node.description = e.description.clone();
        }
        None => {
            if let Some(name) = common_label(child_labels[0], child_labels[1]) {
                node.label = name;
            }
        }
    }
    let edges = [
        Edge::new(candidate.children[0].clone(), candidate.id.clone(), 0.0),
        Edge::new(candidate.children[1].clone(), candidate.id.clone(), 0.0),
    ];
    Ok(AbstractedConcept { node, edges })
}
