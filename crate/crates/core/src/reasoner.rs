//! Net-based gradual semantics over a [`QafModel`], plus AUC and the concept filter.
//!
//! Leaves take their strength from the instance. Every other node computes
//! `s(a) = φ(logit β(a) + Σ ω(b,a)·s(b))`. On a tree one children-first sweep
//! is exact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CamError, Result};
use crate::numeric::{logistic, logit};
use crate::qaf::{NodeKind, QafModel};

/// A model compiled for repeated evaluation.
#[derive(Clone, Debug)]
pub struct Evaluator {
    ids: Vec<String>,
    order: Vec<usize>,
    /// `logit β` for internal nodes.
    bias: Vec<f64>,
    /// `(child index, weight)` in edge-insertion order.
    inputs: Vec<Vec<(usize, f64)>>,
    /// Position in `feature_order` for features.
    slot: Vec<Option<usize>>,
    root: usize,
    n_features: usize,
}

impl Evaluator {
    pub fn new(model: &QafModel) -> Result<Self> {
        let order = model.bottom_up_order()?;
        let root = model
            .node_index(model.root())
            .ok_or_else(|| CamError::NodeNotFound(model.root().to_string()))?;
        let n = model.nodes().len();
        let mut bias = vec![0.0; n];
        let mut slot = vec![None; n];
        for (i, node) in model.nodes().iter().enumerate() {
            match node.kind {
                NodeKind::Feature => {
                    slot[i] = Some(model.feature_order().iter().position(|f| *f == node.id).ok_or_else(|| {
                        CamError::InvalidModel(format!("feature `{}` missing from feature_order", node.id))
                    })?);
                }
                NodeKind::Concept | NodeKind::Root => {
                    let beta = node
                        .base_score
                        .ok_or_else(|| CamError::InvalidModel(format!("`{}` has no base score", node.id)))?;
                    if !(beta > 0.0 && beta < 1.0) {
                        return Err(CamError::InvalidModel(format!("`{}` has base score {beta} outside (0,1)", node.id)));
                    }
                    bias[i] = logit(beta);
                }
            }
        }
        let mut inputs = vec![Vec::new(); n];
        for e in model.edges() {
            // bottom_up_order already rejected unknown endpoints
            let c = model.node_index(&e.child).expect("known child");
            let p = model.node_index(&e.parent).expect("known parent");
            inputs[p].push((c, e.weight));
        }
        Ok(Evaluator {
            ids: model.nodes().iter().map(|n| n.id.clone()).collect(),
            order,
            bias,
            inputs,
            slot,
            root,
            n_features: model.feature_order().len(),
        })
    }

    fn check_instance(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(CamError::Misaligned(format!(
                "instance has {} values, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(CamError::Misaligned(format!("coordinate {i} is {v}, outside [0,1]")));
        }
        Ok(())
    }

    /// Strength of every node, indexed like `model.nodes()`.
    pub fn strengths(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_instance(x)?;
        let mut s = vec![0.0; self.ids.len()];
        for &i in &self.order {
            s[i] = match self.slot[i] {
                Some(k) => x[k],
                None => {
                    let mut z = self.bias[i];
                    for &(c, w) in &self.inputs[i] {
                        z += w * s[c];
                    }
                    logistic(z)
                }
            };
        }
        Ok(s)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.strengths(x)?[self.root])
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Strength columns for the given node ids over a batch.
    pub fn columns(&self, ids: &[String], xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let idx: Vec<usize> = ids
            .iter()
            .map(|id| {
                self.ids
                    .iter()
                    .position(|n| n == id)
                    .ok_or_else(|| CamError::NodeNotFound(id.clone()))
            })
            .collect::<Result<_>>()?;
        let mut cols = vec![Vec::with_capacity(xs.len()); ids.len()];
        for x in xs {
            let s = self.strengths(x)?;
            for (col, &i) in cols.iter_mut().zip(&idx) {
                col.push(s[i]);
            }
        }
        Ok(cols)
    }
}

/// Strength of every node for one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrengthAssignment {
    pub instance: Vec<f64>,
    pub strengths: BTreeMap<String, f64>,
}

impl StrengthAssignment {
    pub fn get(&self, id: &str) -> Result<f64> {
        self.strengths
            .get(id)
            .copied()
            .ok_or_else(|| CamError::NodeNotFound(id.to_string()))
    }
}

pub fn evaluate(model: &QafModel, x: &[f64]) -> Result<StrengthAssignment> {
    let ev = Evaluator::new(model)?;
    let s = ev.strengths(x)?;
    Ok(StrengthAssignment {
        instance: x.to_vec(),
        strengths: ev.ids.iter().cloned().zip(s).collect(),
    })
}

pub fn predict(model: &QafModel, x: &[f64]) -> Result<f64> {
    Evaluator::new(model)?.predict(x)
}

pub fn predict_batch(model: &QafModel, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    Evaluator::new(model)?.predict_batch(xs)
}

/// Mann–Whitney AUC with average ranks for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CamError::Misaligned(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(CamError::UndefinedMetric("AUC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CamError::UndefinedMetric("NaN score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterDecision {
    Keep,
    Drop,
}

/// Keep a candidate iff it does not lower the evaluation AUC.
pub fn filter_concept(auc_candidate: f64, auc_org: f64) -> FilterDecision {
    if auc_candidate >= auc_org {
        FilterDecision::Keep
    } else {
        FilterDecision::Drop
    }
}
