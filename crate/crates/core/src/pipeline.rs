//! The construction loop: mine candidate concepts, fit each field-wise against
//! the current top layer, keep those that do not lower evaluation AUC, retrain
//! the top layer, and repeat on the new frontier.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{CamError, Result};
use crate::learner::{self, BaseFit, TrainConfig};
use crate::miner::{self, EmbeddingTable, LabelMap, DEFAULT_THRESHOLD};
use crate::preprocess::{self, PreprocessConfig, PreprocessModel, RawDataset, DEFAULT_TRAIN_FRACTION};
use crate::qaf::{ArgumentNode, Edge, QafModel};
use crate::reasoner::{self, Evaluator, FilterDecision};

pub const DEFAULT_MAX_ROUNDS: u32 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub threshold: f64,
    pub max_rounds: u32,
    pub train_fraction: f64,
    pub root_id: String,
    pub root_label: Option<String>,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            threshold: DEFAULT_THRESHOLD,
            max_rounds: DEFAULT_MAX_ROUNDS,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            root_id: "root".into(),
            root_label: None,
            train: TrainConfig::default(),
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl BuildConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(CamError::Config(format!("threshold {} outside (0, 1]", self.threshold)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CamError::Config(format!("train_fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.root_id.is_empty() || miner::is_concept_id(&self.root_id) {
            return Err(CamError::Config(format!("unusable root id `{}`", self.root_id)));
        }
        self.train.check()
    }
}

/// Outcome for one candidate. `RolledBack` means the filter kept it but the
/// combined top-layer retrain could not accommodate it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Drop,
    RolledBack,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub id: String,
    pub label: String,
    pub children: [String; 2],
    pub similarity: f64,
    pub auc_candidate: f64,
    pub auc_org: f64,
    pub decision: Decision,
    pub w_concept: f64,
    pub w_children: [f64; 2],
    pub b_concept: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    /// Which rows scored the filter.
    pub eval_split: String,
    pub frontier: Vec<String>,
    pub auc_org: f64,
    pub candidates: Vec<CandidateReport>,
    pub frontier_after: Vec<String>,
    pub consolidated_auc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoCandidates,
    NothingKept,
    MaxRounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub n: usize,
    pub positives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamModel {
    pub qaf: QafModel,
    pub preprocess: PreprocessModel,
    pub rounds: Vec<RoundReport>,
    pub stop_reason: StopReason,
    pub config: BuildConfig,
    pub seed: u64,
    pub train_size: usize,
    pub eval: Metrics,
    /// Eval AUC of the concept-free top layer fitted before any mining.
    pub base_eval_auc: f64,
}

impl CamModel {
    pub fn to_json(&self) -> Result<String> {
        let report = self.qaf.validate();
        if !report.is_valid() {
            return Err(CamError::InvalidModel(format!("{:?}", report.violations)));
        }
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        let cam: CamModel = serde_json::from_str(doc).map_err(|e| CamError::Schema(e.to_string()))?;
        if cam.qaf.feature_order() != cam.preprocess.column_names().as_slice() {
            return Err(CamError::Schema("feature_order differs from the preprocessing columns".into()));
        }
        Ok(cam)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CamError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Score one raw record given in column order.
    pub fn predict_raw(&self, row: &[String]) -> Result<f64> {
        reasoner::predict(&self.qaf, &self.preprocess.apply(row)?)
    }
}

/// The two halves of one seeded split, already preprocessed.
pub struct PreparedSplit {
    pub preprocess: PreprocessModel,
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<u8>,
    pub eval_x: Vec<Vec<f64>>,
    pub eval_y: Vec<u8>,
}

/// Drops entirely-missing rows, splits with `seed`, fits preprocessing on the training part.
pub fn prepare(dataset: &RawDataset, config: &BuildConfig, seed: u64) -> Result<PreparedSplit> {
    let mut data = dataset.clone();
    let dropped = data.drop_empty_rows(&config.preprocess.missing_sentinels);
    if dropped > 0 {
        log::info!("dropped {dropped} entirely empty rows");
    }
    let (train_idx, eval_idx) = preprocess::split_indices(data.len(), seed, config.train_fraction);
    let train = data.subset(&train_idx);
    let eval = data.subset(&eval_idx);
    train.require_both_classes("training split")?;
    eval.require_both_classes("evaluation split")?;
    let preprocess = PreprocessModel::fit(&train, &config.preprocess)?;
    Ok(PreparedSplit {
        train_x: preprocess.transform_dataset(&train)?,
        train_y: train.labels,
        eval_x: preprocess.transform_dataset(&eval)?,
        eval_y: eval.labels,
        preprocess,
    })
}

/// A concept accepted in some round, with its parameters frozen.
#[derive(Clone, Debug)]
struct FrozenConcept {
    node: ArgumentNode,
    edges: [Edge; 2],
}

struct State<'a> {
    features: &'a [String],
    feature_nodes: Vec<ArgumentNode>,
    root: ArgumentNode,
    dim: usize,
    concepts: Vec<FrozenConcept>,
}

impl State<'_> {
    /// Tree over `frontier` with the given top-layer fit written in.
    fn assemble(&self, concepts: &[FrozenConcept], fit: &BaseFit) -> Result<QafModel> {
        let mut nodes = vec![self.root.clone()];
        nodes.extend(self.feature_nodes.iter().cloned());
        nodes.extend(concepts.iter().map(|c| c.node.clone()));
        let mut edges: Vec<Edge> = concepts.iter().flat_map(|c| c.edges.iter().cloned()).collect();
        edges.extend(fit.frontier.iter().map(|id| Edge::new(id.clone(), self.root.id.clone(), 0.0)));
        let skeleton = QafModel::from_parts(self.root.id.clone(), nodes, edges, self.dim, self.features.to_vec())?;
        learner::instantiate_base(&skeleton, fit)
    }
}

fn eval_auc(model: &QafModel, xs: &[Vec<f64>], ys: &[u8]) -> Result<f64> {
    reasoner::auc(&reasoner::predict_batch(model, xs)?, ys)
}

/// Builds a model for one seed.
pub fn build(
    dataset: &RawDataset,
    embeddings: &EmbeddingTable,
    labels: Option<&LabelMap>,
    config: &BuildConfig,
    seed: u64,
) -> Result<CamModel> {
    config.check()?;
    embeddings.check()?;
    for c in &dataset.columns {
        embeddings.get(c)?;
    }
    let split = prepare(dataset, config, seed)?;
    let mut train_cfg = config.train.clone();
    train_cfg.seed = seed;

    let feature_nodes: Vec<ArgumentNode> = dataset
        .columns
        .iter()
        .map(|c| {
            let mut node = ArgumentNode::feature(c.clone()).with_meaning(embeddings.get(c)?.to_vec());
            if let Some(entry) = labels.and_then(|m| m.get(c)) {
                node.label = entry.label.clone();
                node.description = entry.description.clone();
                node.unit = entry.unit.clone();
            }
            Ok(node)
        })
        .collect::<Result<_>>()?;
    let mut root = ArgumentNode::root(config.root_id.clone(), 0.5);
    if let Some(l) = &config.root_label {
        root.label = l.clone();
    }
    let mut state = State {
        features: &dataset.columns,
        feature_nodes,
        root,
        dim: embeddings.dim,
        concepts: Vec::new(),
    };
    let mut table = embeddings.clone();

    // strength columns of every frontier member, train and eval
    let mut train_cols: HashMap<String, Vec<f64>> = HashMap::new();
    let mut eval_cols: HashMap<String, Vec<f64>> = HashMap::new();
    for (j, c) in dataset.columns.iter().enumerate() {
        train_cols.insert(c.clone(), split.train_x.iter().map(|x| x[j]).collect());
        eval_cols.insert(c.clone(), split.eval_x.iter().map(|x| x[j]).collect());
    }
    let gather = |cols: &HashMap<String, Vec<f64>>, frontier: &[String]| -> Vec<Vec<f64>> {
        frontier.iter().map(|id| cols[id].clone()).collect()
    };

    let mut frontier: Vec<String> = dataset.columns.clone();
    let mut org_fit = learner::train_base(&frontier, &gather(&train_cols, &frontier), &split.train_y, &train_cfg)?;
    let mut org_model = state.assemble(&[], &org_fit)?;
    let mut auc_org = eval_auc(&org_model, &split.eval_x, &split.eval_y)?;
    let base_eval_auc = auc_org;
    let mut rounds = Vec::new();
    let mut stop_reason = StopReason::MaxRounds;

    for round in 1..=config.max_rounds {
        let candidates = miner::propose_groups(&frontier, &table, config.threshold, round)?;
        let mut report = RoundReport {
            round,
            eval_split: format!(
                "held-out {:.0}% (seed {seed}, {} rows)",
                (1.0 - config.train_fraction) * 100.0,
                split.eval_y.len()
            ),
            frontier: frontier.clone(),
            auc_org,
            candidates: Vec::new(),
            frontier_after: frontier.clone(),
            consolidated_auc: auc_org,
        };
        if candidates.is_empty() {
            log::info!("round {round}: no candidate pairs above {}", config.threshold);
            rounds.push(report);
            stop_reason = StopReason::NoCandidates;
            break;
        }

        let train_frontier = gather(&train_cols, &frontier);
        let mut kept: Vec<(FrozenConcept, usize)> = Vec::new();
        for cand in &candidates {
            let child_labels = [label_of(&state, &cand.children[0]), label_of(&state, &cand.children[1])];
            let abstracted = miner::abstract_concept(cand, round, labels, &table, child_labels)?;
            let fit = learner::train_field_wise(
                &org_fit,
                &cand.id,
                [&cand.children[0], &cand.children[1]],
                &train_frontier,
                &split.train_y,
                &train_cfg,
            )?;
            let model_c = learner::instantiate_field_wise(&org_model, &fit, &abstracted)?;
            let auc_c = eval_auc(&model_c, &split.eval_x, &split.eval_y)?;
            let decision = match reasoner::filter_concept(auc_c, auc_org) {
                FilterDecision::Keep => Decision::Keep,
                FilterDecision::Drop => Decision::Drop,
            };
            log::info!("round {round}: {} {:?} auc {auc_c:.6} vs org {auc_org:.6}", cand.id, decision);
            if decision == Decision::Keep {
                let node = model_c.node(&cand.id).expect("attached").clone();
                let frozen = FrozenConcept {
                    node,
                    edges: [
                        Edge::new(cand.children[0].clone(), cand.id.clone(), fit.w_children[0]),
                        Edge::new(cand.children[1].clone(), cand.id.clone(), fit.w_children[1]),
                    ],
                };
                kept.push((frozen, report.candidates.len()));
            }
            report.candidates.push(CandidateReport {
                id: cand.id.clone(),
                label: abstracted.node.label.clone(),
                children: cand.children.clone(),
                similarity: cand.similarity,
                auc_candidate: auc_c,
                auc_org,
                decision,
                w_concept: fit.w_concept,
                w_children: fit.w_children,
                b_concept: fit.b_concept,
                converged: fit.report.converged,
            });
        }
        if kept.is_empty() {
            rounds.push(report);
            stop_reason = StopReason::NothingKept;
            break;
        }

        let mut integrated = integrate(&state, &frontier, &kept, &mut train_cols, &mut eval_cols, &split, &train_cfg)?;
        log::info!("round {round}: top layer retrained over {:?}, auc {:.6}", integrated.frontier, integrated.auc);
        if integrated.auc < auc_org {
            log::info!(
                "round {round}: combined retrain auc {:.6} below org {auc_org:.6}; re-admitting greedily",
                integrated.auc
            );
            let mut order: Vec<usize> = (0..kept.len()).collect();
            order.sort_by(|&a, &b| {
                let ra = &report.candidates[kept[a].1];
                let rb = &report.candidates[kept[b].1];
                rb.auc_candidate.total_cmp(&ra.auc_candidate).then_with(|| ra.id.cmp(&rb.id))
            });
            let mut admitted: Vec<(FrozenConcept, usize)> = Vec::new();
            let mut best: Option<Integrated> = None;
            for i in order {
                let mut trial = admitted.clone();
                trial.push(kept[i].clone());
                // keep the original candidate order inside the frontier
                trial.sort_by_key(|t| t.1);
                let attempt = integrate(&state, &frontier, &trial, &mut train_cols, &mut eval_cols, &split, &train_cfg)?;
                if attempt.auc >= auc_org {
                    admitted = trial;
                    best = Some(attempt);
                } else {
                    report.candidates[kept[i].1].decision = Decision::RolledBack;
                }
            }
            match best {
                Some(b) => {
                    kept = admitted;
                    integrated = b;
                }
                None => {
                    rounds.push(report);
                    stop_reason = StopReason::NothingKept;
                    break;
                }
            }
        }

        for (c, _) in &kept {
            table.insert(c.node.id.clone(), c.node.meaning.clone().expect("concepts carry meaning"))?;
            state.concepts.push(c.clone());
        }
        frontier = integrated.frontier;
        org_fit = integrated.fit;
        org_model = integrated.model;
        auc_org = integrated.auc;
        report.frontier_after = frontier.clone();
        report.consolidated_auc = auc_org;
        rounds.push(report);
    }

    let eval = Metrics {
        auc: auc_org,
        n: split.eval_y.len(),
        positives: split.eval_y.iter().filter(|&&y| y == 1).count(),
    };
    Ok(CamModel {
        qaf: org_model,
        preprocess: split.preprocess,
        rounds,
        stop_reason,
        config: config.clone(),
        seed,
        train_size: split.train_y.len(),
        eval,
        base_eval_auc,
    })
}

fn label_of<'s>(state: &'s State<'_>, id: &str) -> &'s str {
    state
        .feature_nodes
        .iter()
        .chain(state.concepts.iter().map(|c| &c.node))
        .find(|n| n.id == id)
        .map(|n| n.label.as_str())
        .unwrap_or("")
}

struct Integrated {
    frontier: Vec<String>,
    fit: BaseFit,
    model: QafModel,
    auc: f64,
}

/// Puts each concept in place of its first child in the frontier, drops the
/// second child, materializes the new columns and retrains the top layer.
fn integrate(
    state: &State<'_>,
    frontier: &[String],
    kept: &[(FrozenConcept, usize)],
    train_cols: &mut HashMap<String, Vec<f64>>,
    eval_cols: &mut HashMap<String, Vec<f64>>,
    split: &PreparedSplit,
    cfg: &TrainConfig,
) -> Result<Integrated> {
    let mut next: Vec<String> = Vec::with_capacity(frontier.len());
    for id in frontier {
        match kept.iter().find(|(c, _)| c.edges[0].child == *id || c.edges[1].child == *id) {
            Some((c, _)) => {
                if !next.contains(&c.node.id) {
                    next.push(c.node.id.clone());
                }
            }
            None => next.push(id.clone()),
        }
    }

    let mut concepts = state.concepts.clone();
    concepts.extend(kept.iter().map(|(c, _)| c.clone()));
    // any top-layer weights will do for reading out subtree strengths
    let probe = BaseFit {
        frontier: next.clone(),
        weights: vec![1.0; next.len()],
        bias: 0.0,
        report: Default::default(),
    };
    let probe_model = state.assemble(&concepts, &probe)?;
    let ev = Evaluator::new(&probe_model)?;
    let new_ids: Vec<String> = kept
        .iter()
        .map(|(c, _)| c.node.id.clone())
        .filter(|id| !train_cols.contains_key(id))
        .collect();
    if !new_ids.is_empty() {
        for (id, col) in new_ids.iter().zip(ev.columns(&new_ids, &split.train_x)?) {
            train_cols.insert(id.clone(), col);
        }
        for (id, col) in new_ids.iter().zip(ev.columns(&new_ids, &split.eval_x)?) {
            eval_cols.insert(id.clone(), col);
        }
    }

    let cols: Vec<Vec<f64>> = next.iter().map(|id| train_cols[id].clone()).collect();
    let fit = learner::train_base(&next, &cols, &split.train_y, cfg)?;
    let model = state.assemble(&concepts, &fit)?;
    let auc = eval_auc(&model, &split.eval_x, &split.eval_y)?;
    Ok(Integrated {
        frontier: next,
        fit,
        model,
        auc,
    })
}

/// AUC of the model's predictions over a labeled raw split.
pub fn evaluate_model(cam: &CamModel, split: &RawDataset) -> Result<Metrics> {
    let xs = cam.preprocess.transform_dataset(split)?;
    let scores = reasoner::predict_batch(&cam.qaf, &xs)?;
    Ok(Metrics {
        auc: reasoner::auc(&scores, &split.labels)?,
        n: split.len(),
        positives: split.positives(),
    })
}

/// The evaluation half of the split `build` used for `seed`.
pub fn eval_split(dataset: &RawDataset, config: &BuildConfig, seed: u64) -> RawDataset {
    let mut data = dataset.clone();
    data.drop_empty_rows(&config.preprocess.missing_sentinels);
    let (_, eval_idx) = preprocess::split_indices(data.len(), seed, config.train_fraction);
    data.subset(&eval_idx)
}

/// Eval AUC of the concept-free logistic model for one seed.
pub fn baseline_auc(dataset: &RawDataset, config: &BuildConfig, seed: u64) -> Result<f64> {
    let split = prepare(dataset, config, seed)?;
    let mut cfg = config.train.clone();
    cfg.seed = seed;
    let cols: Vec<Vec<f64>> = (0..dataset.columns.len())
        .map(|j| split.train_x.iter().map(|x| x[j]).collect())
        .collect();
    let fit = learner::train_base(&dataset.columns, &cols, &split.train_y, &cfg)?;
    let scores: Vec<f64> = split.eval_x.iter().map(|x| fit.forward(x)).collect();
    reasoner::auc(&scores, &split.eval_y)
}
