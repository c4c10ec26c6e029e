//! Whole experiments: data generation, training, the ablation suite and the
//! files they produce.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::data::{generate_image_dataset, generate_skeleton_dataset, DataError, Split};
use crate::guidance::MaskMode;
use crate::models::{ModelSpec, ToyModel};
use crate::tensor::{Tensor, TensorError};
use crate::train::{init_model, train, EpochMetrics, MaskPerturbation, MetricsReport, SynthesisMode, TrainData, TrainError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Train and test splits for the configured synthesis path.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(TrainData, TrainData)> {
    Ok(match cfg.train.synthesis {
        SynthesisMode::SkeletonMix => (
            TrainData::Skeleton(generate_skeleton_dataset(&cfg.skeleton, Split::Train)?),
            TrainData::Skeleton(generate_skeleton_dataset(&cfg.skeleton, Split::Test)?),
        ),
        _ => (
            TrainData::Image(generate_image_dataset(&cfg.data, Split::Train)?),
            TrainData::Image(generate_image_dataset(&cfg.data, Split::Test)?),
        ),
    })
}

/// Resolves, generates data, initializes and trains.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ToyModel, MetricsReport)> {
    let cfg = cfg.clone().resolve()?;
    let (tr, te) = load_data(&cfg)?;
    let model = init_model(cfg.model_spec(), cfg.seed)?;
    Ok(train(model, &tr, &te, &cfg.train)?)
}

/// One CSV row of the per-epoch metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run: String,
    pub epoch: usize,
    pub l_cls: f64,
    pub l_pg: f64,
    pub l_total: f64,
    pub guided_samples: usize,
    pub skipped_pairs: usize,
    pub realized_perturbation: Option<f64>,
    pub perturbation_failures: usize,
    pub test_accuracy: f64,
    pub worst_group_accuracy: f64,
    pub grad_mass_in_target: f64,
    pub zero_gradient_samples: usize,
    pub box_acc_0_3: Option<f64>,
    pub box_acc_0_5: Option<f64>,
    pub box_acc_0_7: Option<f64>,
    pub box_acc_mean: Option<f64>,
    pub peak_tape_bytes: usize,
}

impl MetricsRow {
    pub fn new(run: &str, e: &EpochMetrics) -> Self {
        let boxes = e.test.box_accuracy.as_ref();
        let at = |i: usize| boxes.map(|b| b.accuracy[i]);
        Self {
            run: run.to_string(),
            epoch: e.epoch,
            l_cls: e.l_cls,
            l_pg: e.l_pg,
            l_total: e.l_total,
            guided_samples: e.guided_samples,
            skipped_pairs: e.skipped_pairs,
            realized_perturbation: e.realized_perturbation,
            perturbation_failures: e.perturbation_failures,
            test_accuracy: e.test.accuracy,
            worst_group_accuracy: e.test.worst_group_accuracy,
            grad_mass_in_target: e.test.grad_mass.mean,
            zero_gradient_samples: e.test.grad_mass.zero_gradient,
            box_acc_0_3: at(0),
            box_acc_0_5: at(1),
            box_acc_0_7: at(2),
            box_acc_mean: boxes.map(|b| b.mean),
            peak_tape_bytes: e.peak_tape_bytes,
        }
    }
}

/// Per-epoch metrics CSV. Holds no wall-clock values, so identical runs
/// produce identical bytes.
pub fn write_metrics_csv(run: &str, report: &MetricsReport, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in &report.epochs {
        w.serialize(MetricsRow::new(run, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Run-level JSON summary. Wall-clock timings are kept out so the file is
/// reproducible; see [`RunTiming`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub library_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub best_epoch: usize,
    pub best: MetricsRow,
    #[serde(rename = "final")]
    pub last: MetricsRow,
}

impl RunSummary {
    pub fn new(cfg: &ExperimentConfig, report: &MetricsReport) -> Self {
        let hash = cfg.content_hash();
        let run = &hash[..16];
        Self {
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            best_epoch: report.best_epoch,
            best: MetricsRow::new(run, report.best()),
            last: MetricsRow::new(run, report.final_epoch()),
            config: cfg.clone(),
            config_hash: hash,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub epoch_wall_clock_secs: Vec<f64>,
    pub total_wall_clock_secs: f64,
}

impl RunTiming {
    pub fn new(report: &MetricsReport) -> Self {
        let epoch_wall_clock_secs: Vec<f64> = report.epochs.iter().map(|e| e.wall_clock_secs).collect();
        Self {
            total_wall_clock_secs: epoch_wall_clock_secs.iter().sum(),
            epoch_wall_clock_secs,
        }
    }
}

const CHECKPOINT_FORMAT: &str = "provgrad-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the binary file.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub tensors: Vec<CheckpointEntry>,
}

/// Writes parameters as concatenated little-endian f64 plus a JSON index.
pub fn write_checkpoint(model: &ToyModel, mut bin: impl Write, index: impl Write) -> Result<()> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, p) in model.named_params() {
        let bytes: Vec<u8> = p.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        bin.write_all(&bytes)?;
        tensors.push(CheckpointEntry {
            name: name.to_string(),
            shape: p.shape().to_vec(),
            offset,
            len: p.numel(),
        });
        offset += bytes.len();
    }
    let idx = CheckpointIndex {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        spec: model.spec().clone(),
        tensors,
    };
    serde_json::to_writer_pretty(index, &idx)?;
    Ok(())
}

pub fn read_checkpoint(mut bin: impl Read, index: impl Read) -> Result<ToyModel> {
    let idx: CheckpointIndex = serde_json::from_reader(index)?;
    if idx.format != CHECKPOINT_FORMAT || idx.version != CHECKPOINT_VERSION {
        return Err(ExperimentError::Checkpoint(format!("unsupported format {} v{}", idx.format, idx.version)));
    }
    let mut bytes = Vec::new();
    bin.read_to_end(&mut bytes)?;
    let mut named = Vec::with_capacity(idx.tensors.len());
    for t in &idx.tensors {
        let end = t.offset + t.len * 8;
        let raw = bytes
            .get(t.offset..end)
            .ok_or_else(|| ExperimentError::Checkpoint(format!("tensor `{}` out of bounds", t.name)))?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        named.push((t.name.clone(), Tensor::new(t.shape.clone(), data)?));
    }
    let reference = init_model(idx.spec.clone(), 0)?;
    let expected: Vec<(&str, &[usize])> = reference.named_params().map(|(n, p)| (n, p.shape())).collect();
    let got: Vec<(&str, &[usize])> = named.iter().map(|(n, p)| (n.as_str(), p.shape())).collect();
    if expected != got {
        return Err(ExperimentError::Checkpoint("tensors do not match the model spec".into()));
    }
    Ok(ToyModel::from_parts(idx.spec, named))
}

/// One configuration of the ablation suite.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub suite: &'static str,
    pub config: ExperimentConfig,
}

/// Expands the grids of `base.ablation` into runs: the α sweep, the mask
/// controls at the base α, and mask perturbations on the simulated-edit path.
pub fn ablation_runs(base: &ExperimentConfig) -> Vec<AblationRun> {
    let grid = &base.ablation;
    let mut runs = Vec::new();
    for &seed in &grid.seeds {
        let seeded = ExperimentConfig { seed, ..base.clone() };
        for &alpha in &grid.alphas {
            let mut c = seeded.clone();
            c.train.alpha = alpha;
            c.train.mask_mode = MaskMode::Provenance;
            c.train.mask_perturbation = None;
            runs.push(AblationRun { suite: "alpha", config: c });
        }
        for &mode in &grid.mask_modes {
            let mut c = seeded.clone();
            c.train.mask_mode = mode;
            c.train.mask_perturbation = None;
            runs.push(AblationRun { suite: "mask_mode", config: c });
        }
        for &delta in &grid.perturbations {
            let mut c = seeded.clone();
            c.train.synthesis = SynthesisMode::SimulatedEdit;
            c.train.mask_mode = MaskMode::Provenance;
            c.train.mask_perturbation = MaskPerturbation::from_signed(delta);
            runs.push(AblationRun {
                suite: "perturbation",
                config: c,
            });
        }
    }
    runs
}

/// Outcome of one run, cached on disk by config hash. Epoch wall-clock
/// values are zeroed so records are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub error: Option<String>,
    pub report: Option<MetricsReport>,
}

/// One CSV row per ablation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub suite: String,
    pub run: String,
    pub seed: u64,
    pub synthesis: String,
    pub alpha: f64,
    pub mask_mode: String,
    pub perturbation: f64,
    pub status: String,
    pub error: Option<String>,
    pub final_test_accuracy: Option<f64>,
    pub final_worst_group_accuracy: Option<f64>,
    pub final_grad_mass_in_target: Option<f64>,
    pub final_box_acc_0_3: Option<f64>,
    pub final_box_acc_0_5: Option<f64>,
    pub final_box_acc_0_7: Option<f64>,
    pub final_box_acc_mean: Option<f64>,
    pub first_l_pg: Option<f64>,
    pub final_l_pg: Option<f64>,
    pub final_l_cls: Option<f64>,
    pub realized_perturbation: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_test_accuracy: Option<f64>,
    pub best_worst_group_accuracy: Option<f64>,
}

impl AblationRow {
    fn new(run: &AblationRun, record: &RunRecord) -> Self {
        let t = &run.config.train;
        let report = record.report.as_ref();
        let last = report.map(|r| r.final_epoch());
        let best = report.map(|r| r.best());
        let boxes = last.and_then(|e| e.test.box_accuracy.as_ref());
        Self {
            suite: run.suite.to_string(),
            run: record.config_hash[..16].to_string(),
            seed: run.config.seed,
            synthesis: t.synthesis.as_str().to_string(),
            alpha: t.alpha,
            mask_mode: t.mask_mode.as_str().to_string(),
            perturbation: t.mask_perturbation.map_or(0.0, |p| p.signed()),
            status: if record.error.is_none() { "ok".into() } else { "failed".into() },
            error: record.error.clone(),
            final_test_accuracy: last.map(|e| e.test.accuracy),
            final_worst_group_accuracy: last.map(|e| e.test.worst_group_accuracy),
            final_grad_mass_in_target: last.map(|e| e.test.grad_mass.mean),
            final_box_acc_0_3: boxes.map(|b| b.accuracy[0]),
            final_box_acc_0_5: boxes.map(|b| b.accuracy[1]),
            final_box_acc_0_7: boxes.map(|b| b.accuracy[2]),
            final_box_acc_mean: boxes.map(|b| b.mean),
            first_l_pg: report.map(|r| r.epochs[0].l_pg),
            final_l_pg: last.map(|e| e.l_pg),
            final_l_cls: last.map(|e| e.l_cls),
            realized_perturbation: last.and_then(|e| e.realized_perturbation),
            best_epoch: report.map(|r| r.best_epoch),
            best_test_accuracy: best.map(|e| e.test.accuracy),
            best_worst_group_accuracy: best.map(|e| e.test.worst_group_accuracy),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions<'a> {
    /// Worker threads; 0 or 1 runs sequentially.
    pub jobs: usize,
    /// Directory of per-run records used to skip completed runs.
    pub cache_dir: Option<&'a Path>,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub rows: Vec<AblationRow>,
    pub records: BTreeMap<String, RunRecord>,
    /// Runs taken from the cache instead of being trained.
    pub reused: usize,
}

impl SuiteResult {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status != "ok").count()
    }
}

fn cached(dir: &Path, hash: &str) -> Option<RunRecord> {
    let text = std::fs::read_to_string(dir.join(format!("{hash}.json"))).ok()?;
    let record: RunRecord = serde_json::from_str(&text).ok()?;
    (record.config_hash == hash).then_some(record)
}

fn store(dir: &Path, record: &RunRecord) -> Result<()> {
    let path = dir.join(format!("{}.json", record.config_hash));
    let tmp = dir.join(format!("{}.json.tmp", record.config_hash));
    std::fs::write(&tmp, serde_json::to_vec(record)?)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Runs every distinct configuration once, in parallel when `jobs > 1`.
/// A failing run is recorded and the suite continues.
pub fn run_ablation_suite(base: &ExperimentConfig, opts: &SuiteOptions<'_>) -> Result<SuiteResult> {
    let runs: Vec<AblationRun> = ablation_runs(base)
        .into_iter()
        .map(|r| {
            let config = r.config.clone().resolve()?;
            Ok(AblationRun { suite: r.suite, config })
        })
        .collect::<std::result::Result<_, ConfigError>>()?;
    let mut unique: BTreeMap<String, ExperimentConfig> = BTreeMap::new();
    for r in &runs {
        unique.entry(r.config.content_hash()).or_insert_with(|| r.config.clone());
    }
    if let Some(dir) = opts.cache_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut records = BTreeMap::new();
    let mut todo = Vec::new();
    for (hash, cfg) in unique {
        match opts.cache_dir.and_then(|d| cached(d, &hash)) {
            Some(rec) => {
                records.insert(hash, rec);
            }
            None => todo.push((hash, cfg)),
        }
    }
    let reused = records.len();
    let execute = |(hash, cfg): &(String, ExperimentConfig)| -> Result<RunRecord> {
        let record = match run_experiment(cfg) {
            Ok((_, mut report)) => {
                for e in &mut report.epochs {
                    e.wall_clock_secs = 0.0;
                }
                RunRecord {
                    config_hash: hash.clone(),
                    error: None,
                    report: Some(report),
                }
            }
            Err(e) => RunRecord {
                config_hash: hash.clone(),
                error: Some(e.to_string()),
                report: None,
            },
        };
        if let Some(dir) = opts.cache_dir {
            store(dir, &record)?;
        }
        Ok(record)
    };
    let done: Vec<RunRecord> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| ExperimentError::Io(std::io::Error::other(e)))?;
        pool.install(|| todo.par_iter().map(execute).collect::<Result<_>>())?
    } else {
        todo.iter().map(execute).collect::<Result<_>>()?
    };
    for rec in done {
        records.insert(rec.config_hash.clone(), rec);
    }
    let rows = runs.iter().map(|r| AblationRow::new(r, &records[&r.config.content_hash()])).collect();
    Ok(SuiteResult { rows, records, reused })
}

pub fn write_ablation_csv(rows: &[AblationRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
