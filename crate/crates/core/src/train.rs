//! Training with per-batch synthesis and input-gradient guidance.

use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ImageDataset, SkeletonDataset};
use crate::eval::{evaluate_images, evaluate_skeletons, Evaluation};
use crate::guidance::{control_mask, input_gradients, provenance_loss_hard, soft_pair_loss, total_loss, GuidanceError, LabelMode, MaskMode};
use crate::models::{batch, ToyModel};
use crate::rng::stream;
use crate::synthesis::{cutmix, diff_mask, one_hot, perturb_mask, simulated_edit, skeleton_mask, Label, MorphMode, SynthesisError};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: `{field}` {constraint}")]
    InvalidConfig { field: &'static str, constraint: String },
    #[error("{term} became non-finite at epoch {epoch}, step {step}")]
    NonFinite { term: &'static str, epoch: usize, step: usize },
    #[error("dataset does not match synthesis mode {0:?}")]
    DatasetMismatch(SynthesisMode),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMode {
    Cutmix,
    SkeletonMix,
    SimulatedEdit,
}

impl SynthesisMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthesisMode::Cutmix => "cutmix",
            SynthesisMode::SkeletonMix => "skeleton_mix",
            SynthesisMode::SimulatedEdit => "simulated_edit",
        }
    }

    pub fn label_mode(self) -> LabelMode {
        match self {
            SynthesisMode::SimulatedEdit => LabelMode::HardSingle,
            SynthesisMode::Cutmix | SynthesisMode::SkeletonMix => LabelMode::SoftPair,
        }
    }
}

/// Morphological perturbation applied to every provenance mask before use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskPerturbation {
    pub mode: MorphMode,
    /// Requested relative area change magnitude.
    pub delta: f64,
}

impl MaskPerturbation {
    /// Signed delta: positive dilates, negative erodes.
    pub fn from_signed(delta: f64) -> Option<Self> {
        if delta > 0.0 {
            Some(Self { mode: MorphMode::Dilate, delta })
        } else if delta < 0.0 {
            Some(Self { mode: MorphMode::Erode, delta: -delta })
        } else {
            None
        }
    }

    pub fn signed(&self) -> f64 {
        match self.mode {
            MorphMode::Dilate => self.delta,
            MorphMode::Erode => -self.delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Probability that a batch sample is replaced by a synthetic one.
    pub mixing_probability: f64,
    pub alpha: f64,
    pub seed: u64,
    pub synthesis: SynthesisMode,
    pub mask_mode: MaskMode,
    /// Texture change applied by the simulated editor.
    pub edit_amplitude: f64,
    /// Skeleton mixing takes the first `P/T` skeletons from the partner.
    pub skeleton_t: usize,
    pub mask_perturbation: Option<MaskPerturbation>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            epochs: 10,
            batch_size: 32,
            mixing_probability: 0.5,
            alpha: 0.05,
            seed: 0,
            synthesis: SynthesisMode::SimulatedEdit,
            mask_mode: MaskMode::Provenance,
            edit_amplitude: 1.0,
            skeleton_t: 2,
            mask_perturbation: None,
        }
    }
}

fn invalid(field: &'static str, constraint: &str) -> TrainError {
    TrainError::InvalidConfig {
        field,
        constraint: constraint.to_string(),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight_decay", "must be finite and >= 0"));
        }
        if self.epochs < 1 {
            return Err(invalid("epochs", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.mixing_probability) {
            return Err(invalid("mixing_probability", "must be in [0, 1]"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", "must be finite and >= 0"));
        }
        if !(self.edit_amplitude > 0.0 && self.edit_amplitude.is_finite()) {
            return Err(invalid("edit_amplitude", "must be finite and > 0"));
        }
        if self.skeleton_t < 1 {
            return Err(invalid("skeleton_t", "must be at least 1"));
        }
        if let Some(p) = self.mask_perturbation {
            if !(p.delta >= 0.0 && p.delta.is_finite()) {
                return Err(invalid("mask_perturbation", "delta must be finite and >= 0"));
            }
            if self.synthesis == SynthesisMode::SkeletonMix {
                return Err(invalid("mask_perturbation", "applies to image masks only"));
            }
        }
        Ok(())
    }
}

/// Training or evaluation data for one synthesis path.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainData {
    Image(ImageDataset),
    Skeleton(SkeletonDataset),
}

impl TrainData {
    pub fn len(&self) -> usize {
        match self {
            TrainData::Image(d) => d.len(),
            TrainData::Skeleton(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &[Tensor] {
        match self {
            TrainData::Image(d) => &d.images,
            TrainData::Skeleton(d) => &d.inputs,
        }
    }

    pub fn labels(&self) -> &[usize] {
        match self {
            TrainData::Image(d) => &d.labels,
            TrainData::Skeleton(d) => &d.labels,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            TrainData::Image(d) => d.num_classes,
            TrainData::Skeleton(d) => d.num_classes,
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            TrainData::Image(d) => d.input_shape(),
            TrainData::Skeleton(d) => d.input_shape.clone(),
        }
    }

    pub fn evaluate(&self, model: &ToyModel) -> Result<Evaluation> {
        Ok(match self {
            TrainData::Image(d) => evaluate_images(model, d)?,
            TrainData::Skeleton(d) => evaluate_skeletons(model, d)?,
        })
    }
}

/// Metrics of one epoch. Loss terms are means over the epoch's steps; `l_pg`
/// averages only steps that had at least one guided sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_cls: f64,
    pub l_pg: f64,
    pub l_total: f64,
    /// Synthetic samples that contributed to L_PG.
    pub guided_samples: usize,
    /// Same-class soft pairs excluded from L_PG.
    pub skipped_pairs: usize,
    /// Mean realized relative area change of perturbed masks.
    pub realized_perturbation: Option<f64>,
    /// Masks left unperturbed because the perturbation was impossible.
    pub perturbation_failures: usize,
    pub test: Evaluation,
    pub peak_tape_bytes: usize,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epochs: Vec<EpochMetrics>,
    /// Epoch with the highest test accuracy (earliest on ties).
    pub best_epoch: usize,
}

impl MetricsReport {
    pub fn final_epoch(&self) -> &EpochMetrics {
        self.epochs.last().expect("at least one epoch")
    }

    pub fn best(&self) -> &EpochMetrics {
        &self.epochs[self.best_epoch]
    }
}

/// Model initialized from the `init` stream of `seed`.
pub fn init_model(spec: crate::models::ModelSpec, seed: u64) -> Result<ToyModel> {
    Ok(ToyModel::init(spec, &mut stream(seed, "init", 0))?)
}

/// Random cyclic permutation (Sattolo), so no element maps to itself.
pub fn derangement(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        p.swap(i, j);
    }
    p
}

/// Sample-level synthesis result for one batch.
struct GuidedRow {
    row: usize,
    class_a: usize,
    class_b: Option<usize>,
    mask: Tensor,
}

struct Batch {
    x: Tensor,
    probs: Vec<f64>,
    guided: Vec<GuidedRow>,
    /// Skeleton mixing in feature space: partner row and per-row mask.
    feature_mix: Option<(Vec<usize>, Vec<Tensor>)>,
    skipped_pairs: usize,
    realized: Vec<f64>,
    perturbation_failures: usize,
}

struct StepOutcome {
    l_cls: f64,
    l_pg: Option<f64>,
    l_total: f64,
    grads: Vec<Tensor>,
    tape_bytes: usize,
}

fn non_finite(term: &'static str, epoch: usize, step: usize) -> impl Fn(TensorError) -> TrainError {
    move |e| match e {
        TensorError::NonFinite { .. } => TrainError::NonFinite { term, epoch, step },
        other => TrainError::Tensor(other),
    }
}

fn guidance_err(term: &'static str, epoch: usize, step: usize) -> impl Fn(GuidanceError) -> TrainError {
    move |e| match e {
        GuidanceError::Tensor(t) => non_finite(term, epoch, step)(t),
        other => TrainError::Guidance(other),
    }
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    data: &'a TrainData,
    n: usize,
}

impl Trainer<'_> {
    fn build_batch(&self, idx: &[usize], step: usize, feature_shape: &[usize]) -> Result<Batch> {
        let cfg = self.cfg;
        let b = idx.len();
        let n = self.n;
        let mut pair_rng = stream(cfg.seed, "pairing", step as u64);
        let mut synth_rng = stream(cfg.seed, "synthesis", step as u64);
        let mut mask_rng = stream(cfg.seed, "masks", step as u64);
        let partner = derangement(b, &mut pair_rng);
        let synthetic: Vec<bool> = (0..b).map(|_| b >= 2 && synth_rng.gen_bool(cfg.mixing_probability)).collect();
        let inputs = self.data.inputs();
        let labels = self.data.labels();

        let mut xs: Vec<Tensor> = Vec::with_capacity(b);
        let mut probs = Vec::with_capacity(b * n);
        let mut guided = Vec::new();
        let mut skipped_pairs = 0;
        let mut realized = Vec::new();
        let mut perturbation_failures = 0;
        let mut mix_masks = Vec::new();

        for row in 0..b {
            let i = idx[row];
            let j = idx[partner[row]];
            let (ya, yb) = (labels[i], labels[j]);
            if !synthetic[row] {
                xs.push(inputs[i].clone());
                probs.extend(one_hot(ya, n));
                if cfg.synthesis == SynthesisMode::SkeletonMix {
                    mix_masks.push(Tensor::ones(feature_shape.to_vec())?);
                }
                continue;
            }
            let (mask, class_b) = match cfg.synthesis {
                SynthesisMode::Cutmix => {
                    let s = cutmix(&inputs[i], &one_hot(ya, n), &inputs[j], &one_hot(yb, n), &mut synth_rng)?;
                    xs.push(s.x);
                    probs.extend(s.label.to_probs(n));
                    (s.masks[0].clone(), Some(yb))
                }
                SynthesisMode::SimulatedEdit => {
                    let TrainData::Image(ds) = self.data else {
                        return Err(TrainError::DatasetMismatch(cfg.synthesis));
                    };
                    let (edited, _) = simulated_edit(&inputs[i], &ds.targets[i], cfg.edit_amplitude, &mut synth_rng)?;
                    let recovered = diff_mask(&inputs[i], &edited)?.mask;
                    xs.push(edited);
                    probs.extend(Label::Hard(ya).to_probs(n));
                    (recovered, None)
                }
                SynthesisMode::SkeletonMix => {
                    let [p, f, e] = feature_shape[..] else {
                        return Err(TrainError::DatasetMismatch(cfg.synthesis));
                    };
                    let m = skeleton_mask(p, f, e, cfg.skeleton_t)?;
                    let lambda = m.fraction();
                    xs.push(inputs[i].clone());
                    probs.extend(one_hot(ya, n).iter().zip(one_hot(yb, n)).map(|(a, b)| lambda * a + (1.0 - lambda) * b));
                    mix_masks.push(m.values().clone());
                    (m, Some(yb))
                }
            };
            if class_b == Some(ya) {
                skipped_pairs += 1;
                continue;
            }
            let mask = match cfg.mask_mode {
                MaskMode::Provenance => match cfg.mask_perturbation {
                    Some(p) if p.delta > 0.0 => match perturb_mask(&mask, p.mode, p.delta) {
                        Ok(pm) => {
                            realized.push(pm.realized_delta);
                            pm.mask
                        }
                        Err(SynthesisError::Saturated { .. } | SynthesisError::InvalidPerturbation(_)) => {
                            perturbation_failures += 1;
                            mask
                        }
                        Err(e) => return Err(e.into()),
                    },
                    _ => mask,
                },
                mode => control_mask(mask.shape(), mode, &mut mask_rng)?,
            };
            guided.push(GuidedRow {
                row,
                class_a: ya,
                class_b,
                mask: mask.values().clone(),
            });
        }
        let refs: Vec<&Tensor> = xs.iter().collect();
        let feature_mix = (cfg.synthesis == SynthesisMode::SkeletonMix).then(|| (partner, mix_masks));
        Ok(Batch {
            x: batch(&refs)?,
            probs,
            guided,
            feature_mix,
            skipped_pairs,
            realized,
            perturbation_failures,
        })
    }

    fn step(&self, model: &ToyModel, batch: &Batch, epoch: usize, step: usize) -> Result<StepOutcome> {
        let cfg = self.cfg;
        let tape = Tape::new();
        let params = model.leaves(&tape);
        let b = batch.x.shape()[0];
        let guide = !batch.guided.is_empty();
        let create_graph = cfg.alpha > 0.0;
        let fwd = non_finite("forward", epoch, step);

        let input = if guide && batch.feature_mix.is_none() { tape.leaf(batch.x.clone()) } else { tape.constant(batch.x.clone()) };
        let mut feats = model.features(&params, &input).map_err(&fwd)?;
        if let Some((partner, masks)) = &batch.feature_mix {
            let per = feats.numel() / b;
            let idx: Vec<usize> = partner.iter().flat_map(|&p| p * per..(p + 1) * per).collect();
            let other = feats.gather(Rc::from(idx), feats.shape()).map_err(&fwd)?;
            let refs: Vec<&Tensor> = masks.iter().collect();
            let m = batch_like(&refs, feats.shape())?;
            let keep = tape.constant(m.clone());
            let take = tape.constant(m.map(|v| 1.0 - v));
            let stacked = tape.stack(&[feats.mul(&keep)?, other.mul(&take)?]).map_err(&fwd)?;
            feats = stacked.max_axis(0).map_err(&fwd)?;
        }
        let logits = model.head(&params, &feats).map_err(&fwd)?;

        let n = model.num_classes();
        let targets = tape.constant(Tensor::new(vec![b, n], batch.probs.clone())?);
        let cls_err = non_finite("L_cls", epoch, step);
        let l_cls = logits
            .log_softmax()
            .and_then(|l| l.mul(&targets))
            .and_then(|l| l.sum())
            .and_then(|l| l.scale(-1.0 / b as f64))
            .map_err(&cls_err)?;

        let l_pg = if guide {
            Some(self.provenance_term(&logits, &feats, batch, create_graph, epoch, step)?)
        } else {
            None
        };
        let l_total = match &l_pg {
            Some(pg) if create_graph => total_loss(&l_cls, pg, cfg.alpha).map_err(guidance_err("L_total", epoch, step))?,
            _ => l_cls,
        };
        let grads = tape.grad(l_total, &params, false).map_err(non_finite("L_total", epoch, step))?;
        let grads: Vec<Tensor> = grads.iter().map(|g| (*g.value()).clone()).collect();
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite { term: "L_total", epoch, step });
        }
        Ok(StepOutcome {
            l_cls: l_cls.value().item(),
            l_pg: l_pg.map(|v| v.value().item()),
            l_total: l_total.value().item(),
            grads,
            tape_bytes: tape.bytes(),
        })
    }

    fn provenance_term<'t>(&self, logits: &Var<'t>, guide: &Var<'t>, rows_in: &Batch, create_graph: bool, epoch: usize, step: usize) -> Result<Var<'t>> {
        let err = guidance_err("L_PG", epoch, step);
        let labels_a: Vec<usize> = row_classes(rows_in, logits.shape()[0], |g| Some(g.class_a));
        let per = guide.numel() / logits.shape()[0];
        let rows: Vec<usize> = rows_in.guided.iter().map(|g| g.row).collect();
        let r = rows.len();
        let idx: Rc<[usize]> = rows.iter().flat_map(|&row| row * per..(row + 1) * per).collect();
        let mut sel_shape = guide.shape();
        sel_shape[0] = r;
        let refs: Vec<&Tensor> = rows_in.guided.iter().map(|g| &g.mask).collect();
        let masks = batch(&refs)?;

        let ga = input_gradients(logits, guide, &labels_a, create_graph).map_err(&err)?;
        let ga = ga.gather(Rc::clone(&idx), sel_shape.clone()).map_err(non_finite("L_PG", epoch, step))?;
        let sum = match self.cfg.synthesis.label_mode() {
            LabelMode::HardSingle => provenance_loss_hard(&ga, &masks).map_err(&err)?,
            LabelMode::SoftPair => {
                let labels_b = row_classes(rows_in, logits.shape()[0], |g| g.class_b);
                let gb = input_gradients(logits, guide, &labels_b, create_graph).map_err(&err)?;
                let gb = gb.gather(idx, sel_shape).map_err(non_finite("L_PG", epoch, step))?;
                soft_pair_loss(&ga, &gb, &masks, self.cfg.mask_mode).map_err(&err)?
            }
        };
        sum.scale(1.0 / r as f64).map_err(non_finite("L_PG", epoch, step))
    }
}

fn row_classes(batch: &Batch, b: usize, pick: impl Fn(&GuidedRow) -> Option<usize>) -> Vec<usize> {
    let mut classes = vec![0; b];
    for g in &batch.guided {
        classes[g.row] = pick(g).unwrap_or(0);
    }
    classes
}

fn batch_like(parts: &[&Tensor], shape: Vec<usize>) -> Result<Tensor> {
    Ok(batch(parts)?.reshape(shape)?)
}

/// Loss terms and parameter gradients of one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGradients {
    pub l_cls: f64,
    pub l_pg: Option<f64>,
    pub l_total: f64,
    pub grads: Vec<Tensor>,
}

/// Builds the synthetic batch of global step `step` from `indices` and
/// returns the exact loss and gradient the trainer would use. Synthesis does
/// not depend on the parameters, so repeated calls with perturbed parameters
/// see the same batch.
pub fn step_gradients(model: &ToyModel, data: &TrainData, cfg: &TrainConfig, indices: &[usize], step: usize) -> Result<StepGradients> {
    cfg.validate()?;
    let trainer = Trainer {
        cfg,
        data,
        n: model.num_classes(),
    };
    let batch = trainer.build_batch(indices, step, &model.feature_shape())?;
    let out = trainer.step(model, &batch, 0, step)?;
    Ok(StepGradients {
        l_cls: out.l_cls,
        l_pg: out.l_pg,
        l_total: out.l_total,
        grads: out.grads,
    })
}

/// SGD with momentum in place: `v ← μv + (g + λp)`, `p ← p − η v`.
pub fn sgd_update(params: &mut [Tensor], velocity: &mut [Tensor], grads: &[Tensor], cfg: &TrainConfig) -> Result<()> {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        let g = g.zip_map(p, "sgd", |g, p| g + cfg.weight_decay * p)?;
        *v = v.zip_map(&g, "sgd", |v, g| cfg.momentum * v + g)?;
        *p = p.zip_map(v, "sgd", |p, v| p - cfg.learning_rate * v)?;
    }
    Ok(())
}

/// Trains `model` for `cfg.epochs` epochs, evaluating on `test` after each.
pub fn train(mut model: ToyModel, train: &TrainData, test: &TrainData, cfg: &TrainConfig) -> Result<(ToyModel, MetricsReport)> {
    cfg.validate()?;
    let matches = matches!(
        (cfg.synthesis, train),
        (SynthesisMode::SkeletonMix, TrainData::Skeleton(_)) | (SynthesisMode::Cutmix | SynthesisMode::SimulatedEdit, TrainData::Image(_))
    );
    if !matches || train.input_shape() != model.spec().input_shape || train.is_empty() {
        return Err(TrainError::DatasetMismatch(cfg.synthesis));
    }
    let trainer = Trainer {
        cfg,
        data: train,
        n: model.num_classes(),
    };
    let feature_shape = model.feature_shape();
    let mut velocity: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect::<std::result::Result<_, _>>()?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(cfg.seed, "shuffle", epoch as u64));
        let (mut cls, mut pg, mut tot) = (0.0, 0.0, 0.0);
        let (mut steps, mut pg_steps, mut guided, mut skipped, mut failures, mut peak) = (0, 0, 0, 0, 0, 0);
        let mut realized = Vec::new();
        for idx in order.chunks(cfg.batch_size) {
            let batch = trainer.build_batch(idx, global_step, &feature_shape)?;
            let out = trainer.step(&model, &batch, epoch, global_step)?;
            let mut params = model.params().to_vec();
            sgd_update(&mut params, &mut velocity, &out.grads, cfg)?;
            model.set_params(params);
            cls += out.l_cls;
            tot += out.l_total;
            if let Some(v) = out.l_pg {
                pg += v;
                pg_steps += 1;
            }
            guided += batch.guided.len();
            skipped += batch.skipped_pairs;
            failures += batch.perturbation_failures;
            realized.extend(batch.realized);
            peak = peak.max(out.tape_bytes);
            steps += 1;
            global_step += 1;
        }
        let test_eval = test.evaluate(&model)?;
        epochs.push(EpochMetrics {
            epoch,
            l_cls: cls / steps as f64,
            l_pg: if pg_steps == 0 { 0.0 } else { pg / pg_steps as f64 },
            l_total: tot / steps as f64,
            guided_samples: guided,
            skipped_pairs: skipped,
            realized_perturbation: (!realized.is_empty()).then(|| realized.iter().sum::<f64>() / realized.len() as f64),
            perturbation_failures: failures,
            test: test_eval,
            peak_tape_bytes: peak,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        });
    }
    let mut best_epoch = 0;
    for (i, e) in epochs.iter().enumerate() {
        if e.test.accuracy > epochs[best_epoch].test.accuracy {
            best_epoch = i;
        }
    }
    Ok((model, MetricsReport { epochs, best_epoch }))
}
