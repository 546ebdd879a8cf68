//! Field-wise learning.
//!
//! Stage one fits a logistic model from the current frontier to the root:
//! `S = φ(Σ wᵢ aᵢ + b_g)`. Stage two attaches a candidate concept over two
//! frontier members `a_j, a_k` and, with every stage-one parameter frozen, fits
//! only the concept block:
//! `S = φ(Σ_{i≠j,k} wᵢ aᵢ + b_g + w_c φ(w'_j a_j + w'_k a_k + b_c))`.
//!
//! Both stages minimize mean binary cross-entropy. Gradients are analytic.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CamError, Result};
use crate::miner::AbstractedConcept;
pub use crate::numeric::logistic;
use crate::numeric::{clamp_base_score, dot, norm, softplus};
use crate::qaf::{Edge, QafModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerMode {
    /// Full-batch BFGS to a gradient-norm tolerance.
    Exact,
    /// Fixed-step minibatch passes (field-wise stage only).
    Epochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: OptimizerMode,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: OptimizerMode::Exact,
            max_iterations: 500,
            tolerance: 1e-8,
            epochs: 5,
            batch_size: 256,
            step_size: 0.1,
            seed: 0,
            l2: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(CamError::Config("tolerance must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CamError::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(CamError::Config("l2 must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub loss_trace: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A differentiable mean loss over rows of a fixed design.
pub trait Objective {
    fn dim(&self) -> usize;
    fn rows(&self) -> usize;
    /// Loss and gradient over `rows` (all rows when `None`).
    fn loss_grad(&self, theta: &[f64], rows: Option<&[usize]>) -> (f64, Vec<f64>);
}

fn bce(z: f64, y: u8) -> f64 {
    softplus(z) - f64::from(y) * z
}

/// Stage-one objective. `theta = [w_1..w_q, b]`; `columns[j][r]` is the strength
/// of frontier member `j` on row `r`.
pub struct BaseObjective<'a> {
    pub columns: &'a [Vec<f64>],
    pub labels: &'a [u8],
    pub l2: f64,
}

impl BaseObjective<'_> {
    pub fn logit(&self, theta: &[f64], r: usize) -> f64 {
        let q = self.columns.len();
        let mut z = theta[q];
        for (w, col) in theta[..q].iter().zip(self.columns) {
            z += w * col[r];
        }
        z
    }
}

impl Objective for BaseObjective<'_> {
    fn dim(&self) -> usize {
        self.columns.len() + 1
    }

    fn rows(&self) -> usize {
        self.labels.len()
    }

    fn loss_grad(&self, theta: &[f64], rows: Option<&[usize]>) -> (f64, Vec<f64>) {
        let q = self.columns.len();
        let mut grad = vec![0.0; q + 1];
        let mut loss = 0.0;
        let mut count = 0usize;
        let mut visit = |r: usize| {
            let z = self.logit(theta, r);
            let y = self.labels[r];
            loss += bce(z, y);
            let resid = logistic(z) - f64::from(y);
            for (g, col) in grad[..q].iter_mut().zip(self.columns) {
                *g += resid * col[r];
            }
            grad[q] += resid;
            count += 1;
        };
        match rows {
            Some(rs) => rs.iter().copied().for_each(&mut visit),
            None => (0..self.labels.len()).for_each(&mut visit),
        }
        let n = count.max(1) as f64;
        loss /= n;
        grad.iter_mut().for_each(|g| *g /= n);
        if self.l2 > 0.0 {
            loss += 0.5 * self.l2 * dot(&theta[..q], &theta[..q]);
            for (g, w) in grad[..q].iter_mut().zip(&theta[..q]) {
                *g += self.l2 * w;
            }
        }
        (loss, grad)
    }
}

/// Stage-two objective over `theta = [w_c, w'_j, w'_k, b_c]` with the frozen
/// part of the logit precomputed per row.
pub struct FieldWiseObjective<'a> {
    pub offset: Vec<f64>,
    pub a_j: &'a [f64],
    pub a_k: &'a [f64],
    pub labels: &'a [u8],
    pub l2: f64,
}

impl FieldWiseObjective<'_> {
    pub fn logit(&self, theta: &[f64], r: usize) -> f64 {
        let inner = theta[1] * self.a_j[r] + theta[2] * self.a_k[r] + theta[3];
        self.offset[r] + theta[0] * logistic(inner)
    }
}

impl Objective for FieldWiseObjective<'_> {
    fn dim(&self) -> usize {
        4
    }

    fn rows(&self) -> usize {
        self.labels.len()
    }

    fn loss_grad(&self, theta: &[f64], rows: Option<&[usize]>) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; 4];
        let mut loss = 0.0;
        let mut count = 0usize;
        let mut visit = |r: usize| {
            let inner = theta[1] * self.a_j[r] + theta[2] * self.a_k[r] + theta[3];
            let h = logistic(inner);
            let z = self.offset[r] + theta[0] * h;
            let y = self.labels[r];
            loss += bce(z, y);
            let resid = logistic(z) - f64::from(y);
            let chain = resid * theta[0] * h * (1.0 - h);
            grad[0] += resid * h;
            grad[1] += chain * self.a_j[r];
            grad[2] += chain * self.a_k[r];
            grad[3] += chain;
            count += 1;
        };
        match rows {
            Some(rs) => rs.iter().copied().for_each(&mut visit),
            None => (0..self.labels.len()).for_each(&mut visit),
        }
        let n = count.max(1) as f64;
        loss /= n;
        grad.iter_mut().for_each(|g| *g /= n);
        if self.l2 > 0.0 {
            loss += 0.5 * self.l2 * dot(&theta[..3], &theta[..3]);
            for i in 0..3 {
                grad[i] += self.l2 * theta[i];
            }
        }
        (loss, grad)
    }
}

/// Full-batch BFGS with backtracking. Every accepted step does not increase
/// the loss, so the trace is nonincreasing.
pub fn minimize_bfgs(obj: &dyn Objective, x0: Vec<f64>, max_iterations: usize, tolerance: f64) -> (Vec<f64>, FitReport) {
    let d = x0.len();
    let mut x = x0;
    let (mut f, mut g) = obj.loss_grad(&x, None);
    let mut report = FitReport {
        loss_trace: vec![f],
        ..Default::default()
    };
    let mut h = identity(d);
    let mut scaled = false;

    for it in 0..max_iterations {
        let gn = norm(&g);
        if gn <= tolerance {
            report.converged = true;
            break;
        }
        let mut p: Vec<f64> = mat_vec(&h, &g).into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &p);
        if !(slope < 0.0) {
            h = identity(d);
            p = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + alpha * pi).collect();
            let (ft, gt) = obj.loss_grad(&trial, None);
            if ft.is_finite() {
                let armijo = ft <= f + 1e-4 * alpha * slope;
                // near the optimum loss differences drown in rounding; fall back to the gradient
                let flat = ft <= f && norm(&gt) < gn;
                if armijo || flat {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            log::debug!("line search stalled at iteration {it}, |g| = {gn:e}");
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                h = identity(d);
                h.iter_mut().for_each(|v| *v *= gamma);
                scaled = true;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        x = x_new;
        f = f_new;
        g = g_new;
        report.loss_trace.push(f);
        report.iterations = it + 1;
    }
    report.grad_norm = norm(&g);
    if report.grad_norm <= tolerance {
        report.converged = true;
    }
    (x, report)
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| dot(&m[i * d..(i + 1) * d], v)).collect()
}

/// H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let d = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..d {
        for j in 0..d {
            h[i * d + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Fixed-step minibatch descent with a seeded shuffle per epoch.
pub fn minimize_epochs(obj: &dyn Objective, x0: Vec<f64>, cfg: &TrainConfig) -> (Vec<f64>, FitReport) {
    let mut x = x0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..obj.rows()).collect();
    let (f0, _) = obj.loss_grad(&x, None);
    let mut report = FitReport {
        loss_trace: vec![f0],
        ..Default::default()
    };
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, g) = obj.loss_grad(&x, Some(batch));
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= cfg.step_size * gi;
            }
            report.iterations += 1;
        }
        report.loss_trace.push(obj.loss_grad(&x, None).0);
    }
    let (_, g) = obj.loss_grad(&x, None);
    report.grad_norm = norm(&g);
    report.converged = report.grad_norm <= cfg.tolerance;
    (x, report)
}

/// Stage-one fit: one weight per frontier member plus the root bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseFit {
    pub frontier: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub report: FitReport,
}

impl BaseFit {
    /// Training-side forward value `φ(Σ wᵢ aᵢ + b_g)`.
    pub fn forward(&self, row: &[f64]) -> f64 {
        let mut z = self.bias;
        for (w, a) in self.weights.iter().zip(row) {
            z += w * a;
        }
        logistic(z)
    }
}

/// Fits stage one on `columns` (one column per frontier id, aligned with `labels`).
/// Always full-batch BFGS, whatever `cfg.mode` says.
pub fn train_base(frontier: &[String], columns: &[Vec<f64>], labels: &[u8], cfg: &TrainConfig) -> Result<BaseFit> {
    cfg.check()?;
    if frontier.len() != columns.len() {
        return Err(CamError::Structure(format!(
            "{} frontier ids but {} columns",
            frontier.len(),
            columns.len()
        )));
    }
    check_design(columns, labels)?;
    let obj = BaseObjective {
        columns,
        labels,
        l2: cfg.l2,
    };
    let (theta, report) = minimize_bfgs(&obj, vec![0.0; frontier.len() + 1], cfg.max_iterations, cfg.tolerance);
    if !report.converged {
        log::warn!(
            "base fit did not reach |g| <= {:e} in {} iterations (|g| = {:e})",
            cfg.tolerance,
            report.iterations,
            report.grad_norm
        );
    }
    let q = frontier.len();
    Ok(BaseFit {
        frontier: frontier.to_vec(),
        weights: theta[..q].to_vec(),
        bias: theta[q],
        report,
    })
}

fn check_design(columns: &[Vec<f64>], labels: &[u8]) -> Result<()> {
    if let Some(c) = columns.iter().find(|c| c.len() != labels.len()) {
        return Err(CamError::Structure(format!(
            "column of length {} for {} labels",
            c.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(CamError::UndefinedMetric("training labels contain a single class".into()));
    }
    Ok(())
}

/// Stage-two fit for one candidate concept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldWiseFit {
    pub concept: String,
    /// Positions of the concept's children within the frontier.
    pub children: [usize; 2],
    pub frozen_weights: Vec<f64>,
    pub frozen_bias: f64,
    pub w_concept: f64,
    pub w_children: [f64; 2],
    pub b_concept: f64,
    pub report: FitReport,
}

impl FieldWiseFit {
    /// Training-side forward value over a frontier row.
    pub fn forward(&self, row: &[f64]) -> f64 {
        let mut z = self.frozen_bias;
        for (i, (w, a)) in self.frozen_weights.iter().zip(row).enumerate() {
            if i != self.children[0] && i != self.children[1] {
                z += w * a;
            }
        }
        let inner = self.w_children[0] * row[self.children[0]] + self.w_children[1] * row[self.children[1]] + self.b_concept;
        logistic(z + self.w_concept * logistic(inner))
    }

    pub fn theta(&self) -> [f64; 4] {
        [self.w_concept, self.w_children[0], self.w_children[1], self.b_concept]
    }
}

pub fn field_wise_objective<'a>(
    base: &BaseFit,
    children: [usize; 2],
    columns: &'a [Vec<f64>],
    labels: &'a [u8],
    l2: f64,
) -> FieldWiseObjective<'a> {
    let offset = (0..labels.len())
        .map(|r| {
            let mut z = base.bias;
            for (i, (w, col)) in base.weights.iter().zip(columns).enumerate() {
                if i != children[0] && i != children[1] {
                    z += w * col[r];
                }
            }
            z
        })
        .collect();
    FieldWiseObjective {
        offset,
        a_j: &columns[children[0]],
        a_k: &columns[children[1]],
        labels,
        l2,
    }
}

/// Fits `{w_c, w'_j, w'_k, b_c}` for the concept over `children`, starting from
/// `w_c = 0, b_c = 0` and the children's stage-one weights. The base fit is not touched.
pub fn train_field_wise(
    base: &BaseFit,
    concept: &str,
    children: [&str; 2],
    columns: &[Vec<f64>],
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<FieldWiseFit> {
    cfg.check()?;
    check_design(columns, labels)?;
    if columns.len() != base.frontier.len() {
        return Err(CamError::Structure("columns do not match the base frontier".into()));
    }
    let pos = |id: &str| {
        base.frontier
            .iter()
            .position(|f| f == id)
            .ok_or_else(|| CamError::Structure(format!("candidate child `{id}` is not in the frontier")))
    };
    let idx = [pos(children[0])?, pos(children[1])?];
    if idx[0] == idx[1] {
        return Err(CamError::Structure("candidate children must be distinct".into()));
    }
    let obj = field_wise_objective(base, idx, columns, labels, cfg.l2);
    let x0 = vec![0.0, base.weights[idx[0]], base.weights[idx[1]], 0.0];
    let (theta, report) = match cfg.mode {
        OptimizerMode::Exact => minimize_bfgs(&obj, x0, cfg.max_iterations, cfg.tolerance),
        OptimizerMode::Epochs => minimize_epochs(&obj, x0, cfg),
    };
    Ok(FieldWiseFit {
        concept: concept.to_string(),
        children: idx,
        frozen_weights: base.weights.clone(),
        frozen_bias: base.bias,
        w_concept: theta[0],
        w_children: [theta[1], theta[2]],
        b_concept: theta[3],
        report,
    })
}

/// Writes a stage-one fit into a model whose root children are exactly the
/// fit's frontier: `ω(aᵢ, root) = wᵢ`, `β(root) = φ(b_g)`. Zero weights are pruned.
pub fn instantiate_base(model: &QafModel, fit: &BaseFit) -> Result<QafModel> {
    let root = model.root().to_string();
    let children = model.children(&root)?;
    if children.len() != fit.frontier.len() || !fit.frontier.iter().all(|f| children.contains(&f.as_str())) {
        return Err(CamError::Structure(format!(
            "root children {children:?} differ from the fitted frontier {:?}",
            fit.frontier
        )));
    }
    let mut out = model.clone();
    for (id, &w) in fit.frontier.iter().zip(&fit.weights) {
        out.edge_mut(id, &root).expect("checked above").weight = w;
    }
    out.node_mut(&root).expect("root exists").base_score = Some(clamp_base_score(logistic(fit.bias)));
    out.prune_zero_edges();
    Ok(out)
}

/// Attaches a trained candidate to an instantiated stage-one model: the
/// children's direct root edges are replaced by the concept subtree.
pub fn instantiate_field_wise(org: &QafModel, fit: &FieldWiseFit, concept: &AbstractedConcept) -> Result<QafModel> {
    let root = org.root().to_string();
    let [j, k] = [&concept.edges[0].child, &concept.edges[1].child];
    let mut out = org.clone();
    for child in [j, k] {
        if out.remove_edge(child, &root).is_none() {
            return Err(CamError::Structure(format!("`{child}` is not a child of the root")));
        }
    }
    let mut node = concept.node.clone();
    node.base_score = Some(clamp_base_score(logistic(fit.b_concept)));
    let id = node.id.clone();
    out.push_node(node)?;
    out.push_edge(Edge::new(j.clone(), id.clone(), fit.w_children[0]));
    out.push_edge(Edge::new(k.clone(), id.clone(), fit.w_children[1]));
    out.push_edge(Edge::new(id, root, fit.w_concept));
    out.prune_zero_edges();
    Ok(out)
}
