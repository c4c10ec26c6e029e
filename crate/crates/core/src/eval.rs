//! Evaluation metrics: accuracy, worst-group accuracy, gradient mass inside
//! the target region and saliency-box localization accuracy.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{ImageDataset, SkeletonDataset};
use crate::guidance::{input_gradients, Result};
use crate::models::{batch, ToyModel};
use crate::synthesis::Rect;
use crate::tensor::{Tape, Tensor, Var};

/// IoU thresholds of the localization metric.
pub const BOX_DELTAS: [f64; 3] = [0.3, 0.5, 0.7];
/// Number of saliency quantile thresholds.
pub const SALIENCY_THRESHOLDS: usize = 20;

const CHUNK: usize = 256;

/// Logits for every input, `[n, N]` row-major.
pub fn logits(model: &ToyModel, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(CHUNK) {
        let refs: Vec<&Tensor> = chunk.iter().collect();
        let l = model.predict(&batch(&refs)?)?;
        out.extend(l.data().chunks(model.num_classes()).map(<[f64]>::to_vec));
    }
    Ok(out)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predictions(model: &ToyModel, inputs: &[Tensor]) -> Result<Vec<usize>> {
    Ok(logits(model, inputs)?.iter().map(|r| argmax(r)).collect())
}

pub fn accuracy(model: &ToyModel, inputs: &[Tensor], labels: &[usize]) -> Result<f64> {
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let pred = predictions(model, inputs)?;
    Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / inputs.len() as f64)
}

/// Minimum accuracy over the non-empty groups.
pub fn worst_group_accuracy(pred: &[usize], labels: &[usize], groups: &[usize]) -> f64 {
    let n_groups = groups.iter().max().map_or(0, |g| g + 1);
    let mut hits = vec![0usize; n_groups];
    let mut totals = vec![0usize; n_groups];
    for ((p, l), &g) in pred.iter().zip(labels).zip(groups) {
        totals[g] += 1;
        hits[g] += (p == l) as usize;
    }
    hits.iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&h, &t)| h as f64 / t as f64)
        .fold(f64::INFINITY, f64::min)
        .min(1.0)
}

/// Input gradient of `classes[i]`'s logit for each input.
pub fn input_gradients_of(model: &ToyModel, inputs: &[Tensor], classes: &[usize]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(inputs.len());
    for (chunk, cls) in inputs.chunks(CHUNK).zip(classes.chunks(CHUNK)) {
        let tape = Tape::new();
        let params: Vec<Var<'_>> = model.params().iter().map(|p| tape.constant(p.clone())).collect();
        let refs: Vec<&Tensor> = chunk.iter().collect();
        let x = tape.leaf(batch(&refs)?);
        let logits = model.head(&params, &model.features(&params, &x)?)?;
        let g = input_gradients(&logits, &x, cls, false)?.value();
        let per = g.numel() / chunk.len();
        for row in g.data().chunks(per) {
            out.push(Tensor::new(chunk[0].shape().to_vec(), row.to_vec())?);
        }
    }
    Ok(out)
}

/// `Σ_target |g| / Σ |g|`, where `inside[i]` marks target elements of `g`.
/// `None` when the gradient is identically zero.
pub fn grad_mass_ratio(grad: &[f64], inside: impl Fn(usize) -> bool) -> Option<f64> {
    let (mut target, mut total) = (0.0, 0.0);
    for (i, g) in grad.iter().enumerate() {
        total += g.abs();
        if inside(i) {
            target += g.abs();
        }
    }
    (total > 0.0).then(|| target / total)
}

/// Fraction of absolute input-gradient mass of `class` that falls inside the
/// H×W target mask (channels pooled). 0 when the gradient vanishes.
pub fn grad_mass_in_target(model: &ToyModel, x: &Tensor, class: usize, target: &crate::synthesis::ProvenanceMask) -> Result<f64> {
    let g = crate::guidance::input_gradient(model, x, class)?;
    let c = g.numel() / target.values().numel();
    Ok(grad_mass_ratio(g.data(), |i| target.get(i / c)).unwrap_or(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradMassSummary {
    pub mean: f64,
    /// Samples whose gradient was identically zero (counted as 0).
    pub zero_gradient: usize,
}

fn summarize(ratios: impl Iterator<Item = Option<f64>>) -> GradMassSummary {
    let (mut sum, mut n, mut zero) = (0.0, 0, 0);
    for r in ratios {
        n += 1;
        match r {
            Some(v) => sum += v,
            None => zero += 1,
        }
    }
    GradMassSummary {
        mean: if n == 0 { 0.0 } else { sum / n as f64 },
        zero_gradient: zero,
    }
}

/// Sum of |g| over channels, as an H×W map.
pub fn saliency_map(grad: &Tensor) -> Tensor {
    let s = grad.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    let data = grad.data().chunks(c).map(|px| px.iter().map(|v| v.abs()).sum()).collect();
    Tensor::new(vec![h, w], data).expect("h·w elements")
}

pub fn rect_iou(a: &Rect, b: &Rect) -> f64 {
    let top = a.top.max(b.top);
    let left = a.left.max(b.left);
    let bottom = a.bottom.min(b.bottom);
    let right = a.right.min(b.right);
    let inter = if bottom > top && right > left { (bottom - top) * (right - left) } else { 0 };
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Best IoU with `truth` over the quantile thresholds `q = 0, 0.05, …, 0.95`
/// of an H×W saliency map. The threshold for `q` is the `⌊q·(n−1)⌋`-th
/// smallest value; the region is every pixel with saliency ≥ threshold.
pub fn best_box_iou(saliency: &Tensor, truth: &Rect) -> f64 {
    let (h, w) = (saliency.shape()[0], saliency.shape()[1]);
    let values = saliency.data();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut best: f64 = 0.0;
    for k in 0..SALIENCY_THRESHOLDS {
        let q = k as f64 / SALIENCY_THRESHOLDS as f64;
        let thr = sorted[(q * (n - 1) as f64).floor() as usize];
        let bits: Vec<bool> = values.iter().map(|&v| v >= thr).collect();
        let iou = crate::data::bounding_box(&bits, h, w).map_or(0.0, |b| rect_iou(&b, truth));
        best = best.max(iou);
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxAccuracy {
    pub deltas: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub mean: f64,
}

/// Share of samples whose best box IoU reaches each δ.
pub fn box_accuracy_from_ious(ious: &[f64], deltas: &[f64]) -> BoxAccuracy {
    let accuracy: Vec<f64> = deltas
        .iter()
        .map(|&d| {
            if ious.is_empty() {
                0.0
            } else {
                ious.iter().filter(|&&v| v >= d).count() as f64 / ious.len() as f64
            }
        })
        .collect();
    let mean = accuracy.iter().sum::<f64>() / accuracy.len().max(1) as f64;
    BoxAccuracy {
        deltas: deltas.to_vec(),
        accuracy,
        mean,
    }
}

/// Saliency from the ground-truth class logit of each image.
pub fn box_localization_accuracy(model: &ToyModel, ds: &ImageDataset, deltas: &[f64]) -> Result<BoxAccuracy> {
    let grads = input_gradients_of(model, &ds.images, &ds.labels)?;
    let ious = box_ious(ds, &grads);
    Ok(box_accuracy_from_ious(&ious, deltas))
}

fn box_ious(ds: &ImageDataset, grads: &[Tensor]) -> Vec<f64> {
    grads
        .iter()
        .enumerate()
        .map(|(i, g)| ds.target_box(i).map_or(0.0, |b| best_box_iou(&saliency_map(g), &b)))
        .collect()
}

/// Test-set metrics of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub worst_group_accuracy: f64,
    pub grad_mass: GradMassSummary,
    /// Image data only.
    pub box_accuracy: Option<BoxAccuracy>,
}

pub fn evaluate_images(model: &ToyModel, ds: &ImageDataset) -> Result<Evaluation> {
    let pred = predictions(model, &ds.images)?;
    let groups: Vec<usize> = (0..ds.len()).map(|i| ds.group(i)).collect();
    let correct = pred.iter().zip(&ds.labels).filter(|(p, l)| p == l).count();
    let grads = input_gradients_of(model, &ds.images, &ds.labels)?;
    let grad_mass = summarize(grads.iter().zip(&ds.targets).map(|(g, t)| {
        let c = ds.channels;
        grad_mass_ratio(g.data(), |i| t.get(i / c))
    }));
    let ious = box_ious(ds, &grads);
    Ok(Evaluation {
        accuracy: correct as f64 / ds.len().max(1) as f64,
        worst_group_accuracy: worst_group_accuracy(&pred, &ds.labels, &groups),
        grad_mass,
        box_accuracy: Some(box_accuracy_from_ious(&ious, &BOX_DELTAS)),
    })
}

/// Groups are (class, actor skeleton); the target region is the actor.
pub fn evaluate_skeletons(model: &ToyModel, ds: &SkeletonDataset) -> Result<Evaluation> {
    let p = ds.input_shape[0];
    let per_skeleton: usize = ds.input_shape[1..].iter().product();
    let pred = predictions(model, &ds.inputs)?;
    let groups: Vec<usize> = ds.labels.iter().zip(&ds.actors).map(|(l, a)| l * p + a).collect();
    let correct = pred.iter().zip(&ds.labels).filter(|(p, l)| p == l).count();
    let grads = input_gradients_of(model, &ds.inputs, &ds.labels)?;
    let grad_mass = summarize(grads.iter().zip(&ds.actors).map(|(g, &a)| grad_mass_ratio(g.data(), |i| i / per_skeleton == a)));
    Ok(Evaluation {
        accuracy: correct as f64 / ds.len().max(1) as f64,
        worst_group_accuracy: worst_group_accuracy(&pred, &ds.labels, &groups),
        grad_mass,
        box_accuracy: None,
    })
}

/// Binary PGM (P5) of an H×W map scaled so its maximum is 255.
pub fn write_saliency_pgm(saliency: &Tensor, mut out: impl Write) -> std::io::Result<()> {
    let (h, w) = (saliency.shape()[0], saliency.shape()[1]);
    let max = saliency.data().iter().fold(0.0f64, |m, &v| m.max(v));
    write!(out, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = saliency
        .data()
        .iter()
        .map(|&v| if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 })
        .collect();
    out.write_all(&bytes)
}
