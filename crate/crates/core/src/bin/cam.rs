use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use cam_core::config::{DatasetConfig, RunConfig};
use cam_core::explainer::{self, transcript_lines};
use cam_core::miner::{load_label_map, EmbeddingTable};
use cam_core::numeric::mean_std;
use cam_core::pipeline::{self, CamModel};
use cam_core::preprocess::{write_transformed_csv, RawDataset};
use cam_core::service::{self, evaluate_record, predict_record};
use cam_core::CamError;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "cam", version, about = "Build, query and explain concept-based argumentation models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Label column of --dataset when the config has none.
    #[arg(long, global = true)]
    label_column: Option<String>,
    #[arg(long, global = true)]
    positive_label: Option<String>,
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    port: Option<u16>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit preprocessing on one seed's training split and dump the transformed data.
    Preprocess {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build models for every seed, write the first one and all round reports.
    Train,
    /// AUC of a saved model on its own evaluation split.
    Evaluate,
    /// Score a CSV of raw rows; prints `row,score`.
    Predict {
        #[arg(long)]
        input: PathBuf,
        /// Print every node's strength as one JSON object per row instead.
        #[arg(long)]
        strengths: bool,
    },
    /// Read node names from stdin and answer "why" for one instance.
    Explain {
        /// JSON file `{"features": {...}}` with raw values.
        #[arg(long)]
        instance: PathBuf,
    },
    /// Serve the model over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

fn settings(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(path) = &common.dataset {
        match &mut cfg.dataset {
            Some(d) => d.path = path.clone(),
            None => {
                let label_column = common
                    .label_column
                    .clone()
                    .context("--dataset without a config needs --label-column")?;
                cfg.dataset = Some(DatasetConfig {
                    path: path.clone(),
                    label_column,
                    positive_label: common.positive_label.clone(),
                    features: None,
                });
            }
        }
    }
    if let Some(d) = &mut cfg.dataset {
        if let Some(l) = &common.label_column {
            d.label_column = l.clone();
        }
        if let Some(p) = &common.positive_label {
            d.positive_label = Some(p.clone());
        }
    }
    for (slot, flag) in [
        (&mut cfg.embeddings, &common.embeddings),
        (&mut cfg.labels, &common.labels),
        (&mut cfg.model, &common.model),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(t) = common.threshold {
        cfg.build.threshold = t;
    }
    if let Some(p) = common.port {
        cfg.port = p;
    }
    cfg.check()?;
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfig) -> anyhow::Result<RawDataset> {
    let d = cfg.dataset()?;
    Ok(RawDataset::from_csv(&d.path, &d.spec())?)
}

fn load_model(cfg: &RunConfig) -> anyhow::Result<CamModel> {
    Ok(CamModel::load(RunConfig::require(&cfg.model, "model")?)?)
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CamError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CamError::io(path, e))?;
    Ok(())
}

fn cmd_preprocess(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let data = load_dataset(cfg)?;
    let seed = cfg.seeds[0];
    let split = pipeline::prepare(&data, &cfg.build, seed)?;
    std::fs::create_dir_all(out).map_err(|e| CamError::io(out, e))?;
    write_file(&out.join("preprocess.json"), &serde_json::to_string_pretty(&split.preprocess)?)?;
    let cols = split.preprocess.column_names();
    for (name, xs, ys) in [("train.csv", &split.train_x, &split.train_y), ("eval.csv", &split.eval_x, &split.eval_y)] {
        let path = out.join(name);
        let f = std::fs::File::create(&path).map_err(|e| CamError::io(&path, e))?;
        write_transformed_csv(std::io::BufWriter::new(f), &cols, xs, ys)?;
    }
    println!(
        "seed {seed}: {} train rows, {} eval rows, {} columns -> {}",
        split.train_y.len(),
        split.eval_y.len(),
        cols.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> anyhow::Result<()> {
    let data = load_dataset(cfg)?;
    let embeddings_path = RunConfig::require(&cfg.embeddings, "embeddings")
        .map_err(|_| CamError::MissingMeaning("no embeddings file given".into()))?;
    let embeddings = EmbeddingTable::load(embeddings_path).map_err(|e| match e {
        CamError::Io { path, source } => CamError::MissingMeaning(format!("{path}: {source}")),
        other => other,
    })?;
    let labels = cfg.labels.as_deref().map(load_label_map).transpose()?;
    let model_path = RunConfig::require(&cfg.model, "model")?;

    let mut aucs = Vec::new();
    let mut reports = Vec::new();
    let mut first = None;
    for &seed in &cfg.seeds {
        let cam = pipeline::build(&data, &embeddings, labels.as_ref(), &cfg.build, seed)?;
        let root_children = cam.qaf.children(cam.qaf.root())?.len();
        println!(
            "seed {seed}: eval AUC {:.2} (logistic {:.2}), {} rounds, {root_children} top-layer nodes",
            cam.eval.auc * 100.0,
            cam.base_eval_auc * 100.0,
            cam.rounds.len()
        );
        aucs.push(cam.eval.auc * 100.0);
        reports.push(json!({
            "seed": seed,
            "eval": cam.eval,
            "base_eval_auc": cam.base_eval_auc,
            "stop_reason": cam.stop_reason,
            "rounds": cam.rounds,
        }));
        first.get_or_insert(cam);
    }
    let (mean, std) = mean_std(&aucs);
    println!("mean eval AUC {mean:.2} (std {std:.2}) over {} seeds", aucs.len());

    let cam = first.expect("at least one seed");
    write_file(model_path, &cam.to_json()?)?;
    if let Some(p) = cfg.reports_path() {
        write_file(&p, &serde_json::to_string_pretty(&reports)?)?;
    }
    println!("model (seed {}) written to {}", cam.seed, model_path.display());
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig) -> anyhow::Result<()> {
    let cam = load_model(cfg)?;
    let data = load_dataset(cfg)?;
    let split = pipeline::eval_split(&data, &cam.config, cam.seed);
    let m = pipeline::evaluate_model(&cam, &split)?;
    println!("{}", serde_json::to_string(&m)?);
    Ok(())
}

fn read_records(path: &Path) -> anyhow::Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| Ok(r?.iter().map(str::to_string).collect()))
        .collect::<anyhow::Result<_>>()?;
    Ok((header, rows))
}

fn cmd_predict(cfg: &RunConfig, input: &Path, strengths: bool) -> anyhow::Result<()> {
    let cam = load_model(cfg)?;
    let columns = cam.preprocess.column_names();
    let (header, rows) = read_records(input)?;
    let out = std::io::stdout();
    let mut out = out.lock();
    if !strengths {
        writeln!(out, "row,score")?;
    }
    for (i, row) in rows.iter().enumerate() {
        // extra columns (labels, ids) are ignored
        let record: HashMap<String, String> = header
            .iter()
            .zip(row)
            .filter(|(h, _)| columns.contains(h))
            .map(|(h, v)| (h.clone(), v.clone()))
            .collect();
        let p = predict_record(&cam, &record).with_context(|| format!("row {i}"))?;
        if strengths {
            writeln!(out, "{}", serde_json::to_string(&json!({"row": i, "score": p.score, "strengths": p.strengths}))?)?;
        } else {
            writeln!(out, "{i},{}", p.score)?;
        }
    }
    Ok(())
}

fn read_instance(path: &Path) -> anyhow::Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CamError::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let Some(features) = v.get("features").and_then(|f| f.as_object()) else {
        bail!("{}: expected an object with a `features` map", path.display());
    };
    features
        .iter()
        .map(|(k, v)| {
            let s = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Null => String::new(),
                other => bail!("feature `{k}` has non-scalar value {other}"),
            };
            Ok((k.clone(), s))
        })
        .collect()
}

fn cmd_explain(cfg: &RunConfig, instance: &Path) -> anyhow::Result<()> {
    let cam = load_model(cfg)?;
    let record = read_instance(instance)?;
    let (strengths, raw) = evaluate_record(&cam, &record)?;
    let stdin = std::io::stdin();
    let out = std::io::stdout();
    let mut out = out.lock();
    for line in stdin.lock().lines() {
        let line = line?;
        let query = line.trim();
        if query.is_empty() {
            continue;
        }
        if query == "quit" || query == "exit" {
            break;
        }
        let step = explainer::resolve_node(&cam.qaf, query)
            .and_then(|id| explainer::explain(&cam.qaf, &strengths, id, Some(&raw), &cfg.explain));
        match step {
            Ok(step) => {
                for l in transcript_lines(&step) {
                    writeln!(out, "{l}")?;
                }
            }
            Err(e) => {
                out.flush()?;
                eprintln!("error: {e}");
            }
        }
        out.flush()?;
    }
    Ok(())
}

fn cmd_serve(cfg: &RunConfig, host: std::net::IpAddr) -> anyhow::Result<()> {
    let cam = load_model(cfg)?;
    let addr = SocketAddr::new(host, cfg.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(cam, cfg.explain, addr))?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = settings(&cli.common)?;
    match cli.command {
        Command::Preprocess { out } => cmd_preprocess(&cfg, &out),
        Command::Train => cmd_train(&cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Predict { input, strengths } => cmd_predict(&cfg, &input, strengths),
        Command::Explain { instance } => cmd_explain(&cfg, &instance),
        Command::Serve { host } => cmd_serve(&cfg, host),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let missing = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<CamError>(), Some(CamError::MissingMeaning(_))));
            if missing {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
