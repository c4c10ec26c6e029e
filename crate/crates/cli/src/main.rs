use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use provgrad::config::{ConfigError, ExperimentConfig};
use provgrad::data::{generate_image_dataset, write_dataset, Split};
use provgrad::eval::{input_gradients_of, saliency_map, write_saliency_pgm};
use provgrad::experiment::{
    load_data, read_checkpoint, run_ablation_suite, write_ablation_csv, write_checkpoint, write_metrics_csv, RunSummary, RunTiming, SuiteOptions,
};
use provgrad::guidance::MaskMode;
use provgrad::train::{init_model, train, TrainData};
use serde_json::json;

const OUT_ROOT_ENV: &str = "PROVGRAD_OUT_ROOT";

#[derive(Parser)]
#[command(name = "provgrad", version, about = "Provenance-guided input-gradient training on toy data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train and test splits of the toy image dataset.
    Generate(Common),
    /// Train one model and write metrics, summary and checkpoint.
    Train(Common),
    /// Run the ablation grids and write one CSV row per run.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Parallel runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate a checkpoint written by `train`.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding model.bin, model.json and config.toml.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Export saliency maps of the first N test images as PGM.
        #[arg(long, default_value_t = 0)]
        saliency: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; relative paths are placed under $PROVGRAD_OUT_ROOT when set.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_mask_mode)]
    mask_mode: Option<MaskMode>,
}

fn parse_mask_mode(s: &str) -> Result<MaskMode, String> {
    s.parse()
}

/// Error reported as JSON on stderr.
struct Failure {
    kind: &'static str,
    message: String,
    code: u8,
    details: serde_json::Value,
}

impl Failure {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            code: 1,
            details: serde_json::Value::Null,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let kind = match e.downcast_ref::<ConfigError>() {
            Some(ConfigError::Invalid { .. }) => "invalid_config",
            Some(ConfigError::Parse(_)) => "config_parse",
            None => "runtime",
        };
        let mut f = Failure::new(kind, format!("{e:#}"));
        if let Some(ConfigError::Invalid { field, constraint }) = e.downcast_ref::<ConfigError>() {
            f.code = 2;
            f.details = json!({ "field": field, "constraint": constraint });
        } else if kind == "config_parse" {
            f.code = 2;
        }
        f
    }
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(alpha) = common.alpha {
        cfg.train.alpha = alpha;
    }
    if let Some(mode) = common.mask_mode {
        cfg.train.mask_mode = mode;
    }
    Ok(cfg.resolve()?)
}

fn out_dir(common: &Common, command: &str, cfg: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    let root = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from);
    let dir = match (&common.out, root) {
        (Some(out), Some(root)) if out.is_relative() => root.join(out),
        (Some(out), _) => out.clone(),
        (None, root) => root.unwrap_or_else(|| PathBuf::from("runs")).join(format!("{command}-{}", &cfg.content_hash()[..12])),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Timestamp and timings go here only; every other output is reproducible.
fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, outputs: &[&str], extra: serde_json::Value) -> anyhow::Result<()> {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = json!({
        "run_id": format!("{now}-s{}", cfg.seed),
        "command": command,
        "created_unix_secs": now,
        "config_hash": cfg.content_hash(),
        "config": cfg,
        "outputs": outputs.iter().map(|o| dir.join(o).display().to_string()).collect::<Vec<_>>(),
        "extra": extra,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

fn cmd_generate(common: &Common) -> Result<serde_json::Value, Failure> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, "generate", &cfg)?;
    let run = || -> anyhow::Result<()> {
        for split in [Split::Train, Split::Test] {
            let ds = generate_image_dataset(&cfg.data, split)?;
            let mut w = create(&dir.join(format!("{}.pgds", split.as_str())))?;
            write_dataset(&ds, &mut w)?;
            w.flush()?;
        }
        write_json(&dir.join("dataset.json"), &cfg.data)?;
        write_manifest(&dir, "generate", &cfg, &["train.pgds", "test.pgds", "dataset.json"], json!(null))
    };
    run()?;
    Ok(json!({ "command": "generate", "out": dir }))
}

fn cmd_train(common: &Common) -> Result<serde_json::Value, Failure> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, "train", &cfg)?;
    let (tr, te) = load_data(&cfg).map_err(anyhow::Error::from)?;
    let model = init_model(cfg.model_spec(), cfg.seed).map_err(anyhow::Error::from)?;
    let (model, report) = train(model, &tr, &te, &cfg.train).map_err(|e| {
        let mut f = Failure::new("training", e.to_string());
        if let provgrad::train::TrainError::NonFinite { term, epoch, step } = &e {
            f.details = json!({ "term": term, "epoch": epoch, "step": step });
        }
        f
    })?;
    let hash = cfg.content_hash();
    let write = || -> anyhow::Result<()> {
        let mut w = create(&dir.join("metrics.csv"))?;
        write_metrics_csv(&hash[..16], &report, &mut w)?;
        w.flush()?;
        write_json(&dir.join("summary.json"), &RunSummary::new(&cfg, &report))?;
        let (mut bin, mut idx) = (create(&dir.join("model.bin"))?, create(&dir.join("model.json"))?);
        write_checkpoint(&model, &mut bin, &mut idx)?;
        bin.flush()?;
        idx.flush()?;
        write_text(&dir.join("config.toml"), &cfg.to_toml())?;
        let outputs = ["metrics.csv", "summary.json", "model.bin", "model.json", "config.toml"];
        write_manifest(&dir, "train", &cfg, &outputs, json!({ "timing": RunTiming::new(&report) }))
    };
    write()?;
    let last = report.final_epoch();
    Ok(json!({
        "command": "train",
        "out": dir,
        "final_test_accuracy": last.test.accuracy,
        "final_worst_group_accuracy": last.test.worst_group_accuracy,
    }))
}

fn cmd_ablate(common: &Common, jobs: usize) -> Result<serde_json::Value, Failure> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, "ablate", &cfg)?;
    let cache = dir.join("runs");
    let started = std::time::Instant::now();
    let result = run_ablation_suite(
        &cfg,
        &SuiteOptions {
            jobs,
            cache_dir: Some(&cache),
        },
    )
    .map_err(anyhow::Error::from)?;
    let write = || -> anyhow::Result<()> {
        let mut w = create(&dir.join("ablation.csv"))?;
        write_ablation_csv(&result.rows, &mut w)?;
        w.flush()?;
        write_text(&dir.join("config.toml"), &cfg.to_toml())?;
        let extra = json!({
            "rows": result.rows.len(),
            "distinct_runs": result.records.len(),
            "reused_runs": result.reused,
            "wall_clock_secs": started.elapsed().as_secs_f64(),
        });
        write_manifest(&dir, "ablate", &cfg, &["ablation.csv", "config.toml", "runs"], extra)
    };
    write()?;
    let failures = result.failures();
    let summary = json!({
        "command": "ablate",
        "out": dir,
        "rows": result.rows.len(),
        "reused_runs": result.reused,
        "failed_runs": failures,
    });
    if failures > 0 {
        let failed: Vec<_> = result
            .rows
            .iter()
            .filter(|r| r.status != "ok")
            .map(|r| json!({ "suite": r.suite, "run": r.run, "error": r.error }))
            .collect();
        let mut f = Failure::new("failed_runs", format!("{failures} of {} runs failed", result.rows.len()));
        f.details = json!({ "failed": failed, "summary": summary });
        return Err(f);
    }
    Ok(summary)
}

fn cmd_eval(common: &Common, checkpoint: &Path, saliency: usize) -> Result<serde_json::Value, Failure> {
    let mut cfg = match &common.config {
        Some(_) => load_config(common)?,
        None => {
            let path = checkpoint.join("config.toml");
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::from)?;
            ExperimentConfig::from_toml(&text).map_err(anyhow::Error::from)?
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let cfg = cfg.resolve().map_err(anyhow::Error::from)?;
    let dir = out_dir(common, "eval", &cfg)?;
    let run = || -> anyhow::Result<serde_json::Value> {
        let bin = File::open(checkpoint.join("model.bin")).context("opening model.bin")?;
        let idx = File::open(checkpoint.join("model.json")).context("opening model.json")?;
        let model = read_checkpoint(BufReader::new(bin), BufReader::new(idx))?;
        let (_, test) = load_data(&cfg)?;
        let evaluation = test.evaluate(&model)?;
        write_json(&dir.join("eval.json"), &evaluation)?;
        let mut outputs = vec!["eval.json".to_string()];
        if let TrainData::Image(ds) = &test {
            let n = saliency.min(ds.len());
            let grads = input_gradients_of(&model, &ds.images[..n], &ds.labels[..n])?;
            for (i, g) in grads.iter().enumerate() {
                let name = format!("saliency_{i:04}.pgm");
                let mut w = create(&dir.join(&name))?;
                write_saliency_pgm(&saliency_map(g), &mut w)?;
                w.flush()?;
                outputs.push(name);
            }
        }
        let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
        write_manifest(&dir, "eval", &cfg, &refs, json!({ "checkpoint": checkpoint }))?;
        Ok(json!({ "command": "eval", "out": dir, "accuracy": evaluation.accuracy, "worst_group_accuracy": evaluation.worst_group_accuracy }))
    };
    Ok(run()?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = json!({ "error": { "kind": "usage", "message": e.to_string().trim_end() } });
            eprintln!("{err}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Generate(c) => cmd_generate(c),
        Command::Train(c) => cmd_train(c),
        Command::Ablate { common, jobs } => cmd_ablate(common, *jobs),
        Command::Eval { common, checkpoint, saliency } => cmd_eval(common, checkpoint, *saliency),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            let err = json!({ "error": { "kind": f.kind, "message": f.message, "details": f.details } });
            eprintln!("{err}");
            ExitCode::from(f.code)
        }
    }
}
