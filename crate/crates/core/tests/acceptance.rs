//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
//! on any failure. Criteria that need the FICO CSV report FAIL when it is
//! absent but only fail the run when `CAM_ACCEPTANCE_STRICT` is set.

mod common;

use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use cam_core::config::RunConfig;
use cam_core::explainer::{dialogue_path, ExplainConfig};
use cam_core::learner::{
    field_wise_objective, instantiate_base, instantiate_field_wise, BaseFit, BaseObjective, FieldWiseFit, FitReport,
    Objective,
};
use cam_core::miner::{AbstractedConcept, EmbeddingTable};
use cam_core::numeric::mean_std;
use cam_core::pipeline::{baseline_auc, build, eval_split, evaluate_model, CamModel, Decision};
use cam_core::preprocess::RawDataset;
use cam_core::qaf::{ArgumentNode, Edge, QafModel};
use cam_core::reasoner::{auc, predict};
use cam_core::service::evaluate_record;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const CAM_TARGET: f64 = 80.20;
const LR_TARGET: f64 = 79.74;
const BAND: f64 = 1.5;
const MAX_STD: f64 = 2.0;
const MAX_RUNTIME: Duration = Duration::from_secs(300);

enum Outcome {
    Pass(String),
    Fail(String),
    /// Input data is not present.
    Unavailable(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

struct Fico {
    data: RawDataset,
    emb: EmbeddingTable,
    cfg: RunConfig,
}

fn fico() -> Option<Fico> {
    let csv = common::fico_csv()?;
    let cfg = RunConfig::load(common::fixture("fico/cam.json")).expect("fico config");
    let spec = cfg.dataset.as_ref().unwrap().spec();
    let data = RawDataset::from_csv(&csv, &spec).expect("fico csv");
    let emb = EmbeddingTable::load(common::fixture("fico/embeddings.json")).expect("fico embeddings");
    Some(Fico { data, emb, cfg })
}

struct FicoRuns {
    cams: Vec<CamModel>,
    elapsed: Duration,
}

fn fico_runs(f: &Fico) -> FicoRuns {
    let start = Instant::now();
    let cams = SEEDS
        .iter()
        .map(|&s| build(&f.data, &f.emb, None, &f.cfg.build, s).expect("fico build"))
        .collect();
    FicoRuns {
        cams,
        elapsed: start.elapsed(),
    }
}

fn fico_end_to_end(runs: Option<&FicoRuns>) -> Outcome {
    let Some(r) = runs else {
        return Outcome::Unavailable("FICO CSV not found (set CAM_FICO_CSV)".into());
    };
    let aucs: Vec<f64> = r.cams.iter().map(|c| 100.0 * c.eval.auc).collect();
    let (mean, std) = mean_std(&aucs);
    check(
        (mean - CAM_TARGET).abs() <= BAND && std <= MAX_STD && r.elapsed <= MAX_RUNTIME,
        format!("mean {mean:.2} std {std:.2} in {:.1}s (target {CAM_TARGET}±{BAND})", r.elapsed.as_secs_f64()),
    )
}

fn lr_baseline(f: Option<&Fico>) -> Outcome {
    let Some(f) = f else {
        return Outcome::Unavailable("FICO CSV not found (set CAM_FICO_CSV)".into());
    };
    let aucs: Vec<f64> = SEEDS
        .iter()
        .map(|&s| 100.0 * baseline_auc(&f.data, &f.cfg.build, s).expect("baseline"))
        .collect();
    let (mean, std) = mean_std(&aucs);
    check(
        (mean - LR_TARGET).abs() <= BAND,
        format!("mean {mean:.2} std {std:.2} (target {LR_TARGET}±{BAND})"),
    )
}

fn sound(cam: &CamModel) -> Result<(), String> {
    for r in &cam.rounds {
        for c in r.candidates.iter().filter(|c| c.decision == Decision::Keep) {
            if c.auc_candidate < r.auc_org {
                return Err(format!("seed {} {} kept at {} < {}", cam.seed, c.id, c.auc_candidate, r.auc_org));
            }
        }
    }
    if cam.eval.auc < cam.base_eval_auc {
        return Err(format!("seed {} final {} < round-0 {}", cam.seed, cam.eval.auc, cam.base_eval_auc));
    }
    Ok(())
}

fn filter_soundness(runs: Option<&FicoRuns>) -> Outcome {
    let mut cams = Vec::new();
    for seed in 0..5 {
        let data = common::synthetic_dataset(1500, 100 + seed);
        cams.push(build(&data, &common::synthetic_embeddings(true), None, &common::quick_config(), seed).unwrap());
    }
    let synthetic = cams.len();
    if let Some(r) = runs {
        cams.extend(r.cams.iter().cloned());
    }
    let kept: usize = cams
        .iter()
        .flat_map(|c| &c.rounds)
        .flat_map(|r| &r.candidates)
        .filter(|c| c.decision == Decision::Keep)
        .count();
    match cams.iter().map(sound).find_map(Result::err) {
        Some(e) => Outcome::Fail(e),
        None => Outcome::Pass(format!(
            "{} runs ({synthetic} synthetic{}), {kept} kept candidates",
            cams.len(),
            if runs.is_some() { ", FICO" } else { "; FICO absent" }
        )),
    }
}

fn random_base(rng: &mut ChaCha8Rng) -> (QafModel, BaseFit) {
    let q = rng.random_range(1..=12);
    let frontier: Vec<String> = (0..q).map(|i| format!("f{i}")).collect();
    let mut nodes = vec![ArgumentNode::root("root", 0.5)];
    nodes.extend(frontier.iter().map(|f| ArgumentNode::feature(f.clone())));
    let edges = frontier.iter().map(|f| Edge::new(f.clone(), "root", 0.0)).collect();
    let model = QafModel::from_parts("root", nodes, edges, 0, frontier.clone()).unwrap();
    let fit = BaseFit {
        weights: (0..q).map(|_| rng.random_range(-6.0..6.0)).collect(),
        bias: rng.random_range(-4.0..4.0),
        frontier,
        report: FitReport::default(),
    };
    (model, fit)
}

fn reasoner_trainer_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_base, mut worst_fw, mut n) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..50 {
        let (model, base) = random_base(&mut rng);
        let org = instantiate_base(&model, &base).unwrap();
        let q = base.frontier.len();

        let fw = (q >= 2).then(|| {
            let fit = FieldWiseFit {
                concept: "c1_0".into(),
                children: [0, 1],
                frozen_weights: base.weights.clone(),
                frozen_bias: base.bias,
                w_concept: rng.random_range(-6.0..6.0),
                w_children: [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)],
                b_concept: rng.random_range(-4.0..4.0),
                report: FitReport::default(),
            };
            let concept = AbstractedConcept {
                node: ArgumentNode::concept("c1_0", 1, 0.5),
                edges: [Edge::new("f0", "c1_0", 0.0), Edge::new("f1", "c1_0", 0.0)],
            };
            let m = instantiate_field_wise(&org, &fit, &concept).unwrap();
            (m, fit)
        });

        for _ in 0..1000 {
            let x: Vec<f64> = (0..q).map(|_| rng.random()).collect();
            worst_base = worst_base.max((predict(&org, &x).unwrap() - base.forward(&x)).abs());
            if let Some((m, fit)) = &fw {
                worst_fw = worst_fw.max((predict(m, &x).unwrap() - fit.forward(&x)).abs());
            }
            n += 1;
        }
    }
    check(
        worst_base <= 1e-9 && worst_fw <= 1e-9,
        format!("{n} instances, max |diff| {worst_base:.1e} (base) {worst_fw:.1e} (field-wise)"),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

fn central_difference(obj: &dyn Objective, theta: &[f64], h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let mut up = theta.to_vec();
            let mut down = theta.to_vec();
            up[i] += h;
            down[i] -= h;
            (obj.loss_grad(&up, None).0 - obj.loss_grad(&down, None).0) / (2.0 * h)
        })
        .collect()
}

fn gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 200;
    let q = 5;
    let columns: Vec<Vec<f64>> = (0..q).map(|_| (0..n).map(|_| rng.random()).collect()).collect();
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
    let base_obj = BaseObjective {
        columns: &columns,
        labels: &labels,
        l2: 0.0,
    };
    let (mut worst_base, mut worst_fw) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let theta: Vec<f64> = (0..=q).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = base_obj.loss_grad(&theta, None).1;
        worst_base = worst_base.max(rel_err(&g, &central_difference(&base_obj, &theta, 1e-5)));

        let base = BaseFit {
            frontier: (0..q).map(|i| format!("f{i}")).collect(),
            weights: theta[..q].to_vec(),
            bias: theta[q],
            report: FitReport::default(),
        };
        let fw_obj = field_wise_objective(&base, [1, 3], &columns, &labels, 0.0);
        let phi: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = fw_obj.loss_grad(&phi, None).1;
        worst_fw = worst_fw.max(rel_err(&g, &central_difference(&fw_obj, &phi, 1e-5)));
    }
    check(
        worst_base < 1e-4 && worst_fw < 1e-4,
        format!("100 points, max relative error {worst_base:.1e} (base) {worst_fw:.1e} (field-wise)"),
    )
}

/// (concordant + ties/2) / (P·N), computed by visiting every pair.
fn pairwise_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let (mut twice, mut pn) = (0u64, 0u64);
    for (i, &y) in labels.iter().enumerate() {
        if y != 1 {
            continue;
        }
        for (j, &z) in labels.iter().enumerate() {
            if z != 0 {
                continue;
            }
            pn += 1;
            twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    (pn > 0).then(|| twice as f64 / (2 * pn) as f64)
}

fn auc_enumeration() -> Outcome {
    const ALPHABET: [f64; 3] = [0.0, 0.5, 1.0];
    let mut sets = 0u64;
    for n in 1..=8usize {
        let mut scores = vec![0.0; n];
        let mut labels = vec![0u8; n];
        for s in 0..3usize.pow(n as u32) {
            let mut c = s;
            for v in scores.iter_mut() {
                *v = ALPHABET[c % 3];
                c /= 3;
            }
            for l in 0..(1u32 << n) {
                for (i, y) in labels.iter_mut().enumerate() {
                    *y = ((l >> i) & 1) as u8;
                }
                sets += 1;
                match (auc(&scores, &labels), pairwise_auc(&scores, &labels)) {
                    (Ok(a), Some(b)) if a == b => {}
                    (Err(_), None) => {}
                    (got, want) => {
                        return Outcome::Fail(format!("{scores:?} {labels:?}: rank {got:?} vs pairwise {want:?}"))
                    }
                }
            }
        }
    }
    Outcome::Pass(format!("{sets} labeled score sets, all exact"))
}

const TRANSCRIPT: &str = "\
user: Why is Risk evaluated as 0.92?
CAM: Because the supporting argument Installment is 0.69; and the supporting argument TradeRecord is 0.40.
user: Why is Installment evaluated as 0.69?
CAM: Because the supporting argument FractionInstall is 0.54; and the supporting argument InstallTrade is 0.30.
user: Why is FractionInstall evaluated as 0.54?
CAM: Because the supporting argument FractionInstallBurden is 1.0; and the supporting argument PercentInstallTrade is 0.22.
user: Why is FractionInstallBurden evaluated as 1?
CAM: Because in this case, FractionInstallBurden is 471%.
";

fn dialogue_fidelity() -> Outcome {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_cam"))
        .arg("--model")
        .arg(common::fixture("dialogue/model.json"))
        .arg("explain")
        .arg("--instance")
        .arg(common::fixture("dialogue/instance.json"))
        .env_remove("CAM_LOG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"Risk\nInstallment\nFractionInstall\nFractionInstallBurden\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    let transcript = String::from_utf8_lossy(&out.stdout);
    if !out.status.success() || transcript != TRANSCRIPT {
        return Outcome::Fail(format!("transcript differs:\n{transcript}{}", String::from_utf8_lossy(&out.stderr)));
    }

    let cam = CamModel::load(common::fixture("dialogue/model.json")).unwrap();
    let (s, raw) = evaluate_record(&cam, &common::dialogue_instance()).unwrap();
    let path = dialogue_path(&cam.qaf, &s, Some(&raw), &ExplainConfig::default()).unwrap();
    let labels: Vec<&str> = path.iter().map(|p| p.label.as_str()).collect();
    check(
        labels == ["Risk", "Installment", "FractionInstall", "FractionInstallBurden"],
        format!("4 turns verbatim, path {}", labels.join("→")),
    )
}

fn determinism() -> Outcome {
    let data = common::synthetic_dataset(1500, 21);
    let emb = common::synthetic_embeddings(true);
    for seed in [0, 3] {
        let a = build(&data, &emb, None, &common::quick_config(), seed).unwrap().to_json().unwrap();
        let b = build(&data, &emb, None, &common::quick_config(), seed).unwrap().to_json().unwrap();
        if a != b {
            return Outcome::Fail(format!("library documents differ for seed {seed}"));
        }
    }

    // and through the CLI, file on disk
    let dir = tempfile::tempdir().unwrap();
    let mut docs = Vec::new();
    for name in ["a.json", "b.json"] {
        let path = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_cam"))
            .arg("--config")
            .arg(common::fixture("toy/cam.json"))
            .arg("--model")
            .arg(&path)
            .args(["--seed", "2", "train"])
            .env_remove("CAM_LOG")
            .stdout(Stdio::null())
            .status()
            .unwrap();
        if !status.success() {
            return Outcome::Fail("cam train failed".into());
        }
        docs.push(std::fs::read(&path).unwrap());
    }
    check(docs[0] == docs[1], format!("byte-identical documents ({} bytes)", docs[0].len()))
}

fn serialization() -> Outcome {
    let mut worst = 0.0f64;
    let mut runs = 0;
    for seed in 0..3 {
        let data = common::synthetic_dataset(1200, 40 + seed);
        let cfg = common::quick_config();
        let cam = build(&data, &common::synthetic_embeddings(true), None, &cfg, seed).unwrap();
        let back = CamModel::from_json(&cam.to_json().unwrap()).unwrap();
        let split = eval_split(&data, &cfg, seed);
        let before = evaluate_model(&cam, &split).unwrap().auc;
        let after = evaluate_model(&back, &split).unwrap().auc;
        worst = worst.max((before - after).abs()).max((after - cam.eval.auc).abs());
        runs += 1;
    }
    check(worst <= 1e-12, format!("{runs} models, max |ΔAUC| {worst:.1e}"))
}

fn main() {
    let strict = std::env::var_os("CAM_ACCEPTANCE_STRICT").is_some();
    let fico = fico();
    let runs = fico.as_ref().map(fico_runs);

    let results: Vec<(&str, Outcome)> = vec![
        ("fico end-to-end", fico_end_to_end(runs.as_ref())),
        ("logistic baseline", lr_baseline(fico.as_ref())),
        ("filter soundness", filter_soundness(runs.as_ref())),
        ("reasoner-trainer equivalence", reasoner_trainer_equivalence()),
        ("gradient oracle", gradient_oracle()),
        ("auc enumeration", auc_enumeration()),
        ("dialogue fidelity", dialogue_fidelity()),
        ("determinism", determinism()),
        ("serialization", serialization()),
    ];

    let (mut failed, mut unavailable) = (0, 0);
    for (name, outcome) in &results {
        match outcome {
            Outcome::Pass(d) => println!("PASS {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
            Outcome::Unavailable(d) => {
                unavailable += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {} failed ({unavailable} for missing data)",
        results.len() - failed - unavailable,
        failed + unavailable
    );
    if failed > 0 || (strict && unavailable > 0) {
        std::process::exit(1);
    }
}
