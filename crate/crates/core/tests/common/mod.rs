#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use cam_core::miner::{EmbeddingTable, LabelEntry, LabelMap};
use cam_core::numeric::{logistic, logit};
use cam_core::pipeline::{BuildConfig, CamModel, Metrics, StopReason};
use cam_core::preprocess::{ColumnTransform, PreprocessModel, QuantileMap, RawDataset};
use cam_core::qaf::{ArgumentNode, Edge, QafModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture(rel: &str) -> PathBuf {
    repo_root().join("fixtures").join(rel)
}

/// Dialogue fixture features: (id, label, unit, raw value, weight, parent).
type Leaf = (&'static str, &'static str, Option<&'static str>, f64, f64, &'static str);

const LEAVES: &[Leaf] = &[
    ("NetFractionInstallBurden", "FractionInstallBurden", Some("%"), 471.0, 0.5, "c1_0"),
    ("PercentInstallTrades", "PercentInstallTrade", None, 22.0, 0.4, "c1_0"),
    ("NumInstallTradesWBalance", "NumInstallTradesWBalance", None, 60.0, 0.3, "c1_1"),
    ("NumRevolvingTradesWBalance", "NumRevolvingTradesWBalance", None, 50.0, -0.2, "c1_1"),
    ("NumTotalTrades", "NumTotalTrades", None, 70.0, 0.5, "c1_2"),
    ("NumSatisfactoryTrades", "NumSatisfactoryTrades", None, 40.0, -0.6, "c1_2"),
    ("ExternalRiskEstimate", "ExternalRiskEstimate", None, 30.0, -2.5, "root"),
    ("NumInqLast6M", "NumInqLast6M", None, 50.0, 0.8, "root"),
];

/// Concepts bottom-up: (id, label, round, target strength, weight, parent).
const CONCEPTS: &[(&str, &str, u32, f64, f64, &str)] = &[
    ("c1_0", "FractionInstall", 1, 0.54, 1.2, "c2_0"),
    ("c1_1", "InstallTrade", 1, 0.30, 0.8, "c2_0"),
    ("c1_2", "TradeRecord", 1, 0.40, 1.5, "root"),
    ("c2_0", "Installment", 2, 0.69, 2.0, "root"),
];

/// A hand-built model whose strengths on [`dialogue_instance`] are
/// Risk 0.92, Installment 0.69, FractionInstall 0.54, FractionInstallBurden 1.0.
/// Every raw value maps to raw/100 (values above 100 map to 1).
pub fn dialogue_model() -> CamModel {
    let mut strength: HashMap<&str, f64> = HashMap::new();
    for &(id, _, _, raw, _, _) in LEAVES {
        strength.insert(id, (raw / 100.0).min(1.0));
    }
    let alpha = |parent: &str, strength: &HashMap<&str, f64>| -> f64 {
        let mut a = 0.0;
        for &(id, _, _, _, w, p) in LEAVES {
            if p == parent {
                a += w * strength[id];
            }
        }
        for &(id, _, _, _, w, p) in CONCEPTS {
            if p == parent {
                a += w * strength[id];
            }
        }
        a
    };

    let mut nodes = Vec::new();
    let mut concept_nodes = Vec::new();
    for &(id, label, round, target, _, _) in CONCEPTS {
        // choose β so that φ(logit β + α) hits the target
        let beta = logistic(logit(target) - alpha(id, &strength));
        concept_nodes.push(ArgumentNode::concept(id, round, beta).with_label(label));
        let s = logistic(logit(beta) + alpha(id, &strength));
        strength.insert(id, s);
    }
    let root_beta = logistic(logit(0.92) - alpha("root", &strength));
    nodes.push(ArgumentNode::root("root", root_beta).with_label("Risk"));
    for &(id, label, unit, _, _, _) in LEAVES {
        let mut n = ArgumentNode::feature(id).with_label(label);
        if let Some(u) = unit {
            n = n.with_unit(u);
        }
        nodes.push(n);
    }
    nodes.extend(concept_nodes);

    let mut edges = Vec::new();
    for &(id, _, _, _, w, p) in LEAVES.iter().filter(|l| l.5 != "root") {
        edges.push(Edge::new(id, p, w));
    }
    for &(id, _, _, _, w, p) in CONCEPTS.iter().filter(|c| c.5 != "root") {
        edges.push(Edge::new(id, p, w));
    }
    for id in ["c2_0", "c1_2", "ExternalRiskEstimate", "NumInqLast6M"] {
        let w = LEAVES
            .iter()
            .find(|l| l.0 == id)
            .map(|l| l.4)
            .or_else(|| CONCEPTS.iter().find(|c| c.0 == id).map(|c| c.4))
            .unwrap();
        edges.push(Edge::new(id, "root", w));
    }
    let order: Vec<String> = LEAVES.iter().map(|l| l.0.to_string()).collect();
    let qaf = QafModel::from_parts("root", nodes, edges, 0, order.clone()).unwrap();
    assert!(qaf.validate().is_valid(), "{:?}", qaf.validate());

    let preprocess = PreprocessModel {
        columns: order
            .iter()
            .map(|c| ColumnTransform::Numeric {
                name: c.clone(),
                impute_mean: 50.0,
                quantiles: QuantileMap {
                    knots: vec![0.0, 100.0],
                    cdf: vec![0.0, 1.0],
                },
            })
            .collect(),
        missing_sentinels: vec![],
        smoothing: 10.0,
    };
    CamModel {
        qaf,
        preprocess,
        rounds: vec![],
        stop_reason: StopReason::NoCandidates,
        config: BuildConfig {
            root_label: Some("Risk".into()),
            ..Default::default()
        },
        seed: 0,
        train_size: 0,
        eval: Metrics {
            auc: 0.5,
            n: 0,
            positives: 0,
        },
        base_eval_auc: 0.5,
    }
}

pub fn dialogue_instance() -> HashMap<String, String> {
    LEAVES.iter().map(|l| (l.0.to_string(), format!("{}", l.3))).collect()
}

pub fn dialogue_instance_json() -> String {
    let features: serde_json::Map<String, serde_json::Value> = LEAVES
        .iter()
        .map(|l| (l.0.to_string(), serde_json::json!(l.3)))
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "features": features })).unwrap()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn basis(dim: usize, parts: &[(usize, f64)]) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for &(i, w) in parts {
        v[i] = w;
    }
    unit(&v)
}

pub const SYNTH_FEATURES: [&str; 6] = [
    "NumInqLast6M",
    "NumInqLast6Mexcl7days",
    "NumInstallTrades",
    "PercentInstallTrades",
    "AverageMInFile",
    "NetFractionRevolvingBurden",
];

/// Two near-duplicate pairs plus two unrelated features. `similar = false`
/// makes every pair orthogonal.
pub fn synthetic_embeddings(similar: bool) -> EmbeddingTable {
    let mut t = EmbeddingTable::new(8, "synthetic");
    let vecs = if similar {
        vec![
            basis(8, &[(0, 1.0), (1, 0.3)]),
            basis(8, &[(0, 1.0), (2, 0.3)]),
            basis(8, &[(3, 1.0), (4, 0.3)]),
            basis(8, &[(3, 1.0), (5, 0.3)]),
            basis(8, &[(6, 1.0)]),
            basis(8, &[(7, 1.0)]),
        ]
    } else {
        (0..6).map(|i| basis(8, &[(i, 1.0)])).collect()
    };
    for (id, v) in SYNTH_FEATURES.iter().zip(vecs) {
        t.insert(*id, v).unwrap();
    }
    t
}

pub fn synthetic_labels() -> LabelMap {
    let mut m = LabelMap::new();
    m.insert(
        "c1_0".into(),
        LabelEntry {
            label: "Inquiry".into(),
            description: None,
            unit: None,
        },
    );
    m
}

/// Risk rises sharply only when both members of a pair are high, which a
/// single logistic layer cannot express.
pub fn synthetic_dataset(n: usize, seed: u64) -> RawDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let inq = logistic(8.0 * (u[0] + u[1]) - 9.0);
        let inst = logistic(8.0 * (u[2] + u[3]) - 7.0);
        let z = -1.5 + 4.0 * inq - 3.0 * inst + 1.5 * u[4] - 1.0 * u[5];
        labels.push(u8::from(rng.random::<f64>() < logistic(z)));
        let mut row: Vec<String> = u.iter().map(|v| format!("{:.2}", v * 100.0)).collect();
        // a few missing cells
        if rng.random::<f64>() < 0.03 {
            row[5] = String::new();
        }
        rows.push(row);
    }
    RawDataset::new(SYNTH_FEATURES.iter().map(|s| s.to_string()).collect(), rows, labels).unwrap()
}

pub fn quick_config() -> BuildConfig {
    BuildConfig {
        root_label: Some("Risk".into()),
        ..Default::default()
    }
}

/// FICO HELOC data, when present.
pub fn fico_csv() -> Option<PathBuf> {
    if let Ok(p) = std::env::var("CAM_FICO_CSV") {
        let p = PathBuf::from(p);
        if p.is_file() {
            return Some(p);
        }
    }
    let p = fixture("fico/heloc_dataset_v1.csv");
    p.is_file().then_some(p)
}

/// Writes `data` as a CSV with a `RiskPerformance` column holding Bad/Good.
pub fn write_csv(data: &RawDataset, path: &std::path::Path) {
    let mut w = csv::Writer::from_path(path).unwrap();
    let mut header = data.columns.clone();
    header.push("RiskPerformance".into());
    w.write_record(&header).unwrap();
    for (row, y) in data.rows.iter().zip(&data.labels) {
        let mut rec = row.clone();
        rec.push(if *y == 1 { "Bad" } else { "Good" }.into());
        w.write_record(&rec).unwrap();
    }
    w.flush().unwrap();
}

/// Files of the committed toy example, regenerated when `CAM_REGEN_FIXTURES` is set.
pub fn toy_files() -> [(PathBuf, String); 3] {
    let dir = fixture("toy");
    let data = synthetic_dataset(600, 42);
    let tmp = tempfile::NamedTempFile::new().unwrap();
    write_csv(&data, tmp.path());
    let csv_text = std::fs::read_to_string(tmp.path()).unwrap();
    let emb = serde_json::to_string_pretty(&synthetic_embeddings(true)).unwrap() + "\n";
    let labels = serde_json::to_string_pretty(&synthetic_labels()).unwrap() + "\n";
    [(dir.join("data.csv"), csv_text), (dir.join("embeddings.json"), emb), (dir.join("labels.json"), labels)]
}
