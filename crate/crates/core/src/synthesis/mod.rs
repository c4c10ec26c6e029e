//! Synthesis functions that produce training samples together with exact
//! per-element provenance masks.

mod cutmix;
mod edit;
mod mask;
mod morphology;
mod otsu;
mod skeleton;

pub use cutmix::{cutmix, cutmix_with_rect, Rect};
pub use edit::{diff_mask, difference_image, simulated_edit, EditProvenance};
pub use mask::{MaskRole, ProvenanceMask};
pub use morphology::{perturb_mask, MorphMode, PerturbedMask};
pub use otsu::{histogram, otsu_threshold};
pub use skeleton::{skeleton_feature_mix, skeleton_mask};

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{0}: label is not a valid one-hot vector")]
    InvalidLabel(&'static str),
    #[error("mask values must be exactly 0 or 1")]
    NotBinary,
    #[error("skeleton count {skeletons} is not divisible by T = {t}")]
    NotDivisible { skeletons: usize, t: usize },
    #[error("otsu: {0}")]
    Degenerate(String),
    #[error("perturb_mask: invalid request: {0}")]
    InvalidPerturbation(String),
    #[error("perturb_mask: mask saturated at realized delta {realized:+.4}")]
    Saturated { realized: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, SynthesisError>;

/// Supervisory label of a synthetic sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    /// Probability vector over classes (mixing methods).
    Soft(Vec<f64>),
    /// Single class index (editing methods).
    Hard(usize),
}

impl Label {
    /// Class probabilities as a dense vector.
    pub fn to_probs(&self, num_classes: usize) -> Vec<f64> {
        match self {
            Label::Soft(p) => p.clone(),
            Label::Hard(c) => {
                let mut v = vec![0.0; num_classes];
                v[*c] = 1.0;
                v
            }
        }
    }
}

/// Output of a synthesis function.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub x: Tensor,
    pub label: Label,
    /// One mask per contributing label, aligned with `classes`.
    pub masks: Vec<ProvenanceMask>,
    /// Class index each mask belongs to.
    pub classes: Vec<usize>,
    /// Realized mixing ratio; `None` for hard-label samples.
    pub lambda: Option<f64>,
}

pub fn one_hot(class: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[class] = 1.0;
    v
}

/// Class index of a one-hot vector.
pub(crate) fn one_hot_class(y: &[f64], op: &'static str) -> Result<usize> {
    let mut class = None;
    for (i, &v) in y.iter().enumerate() {
        if v == 1.0 {
            if class.is_some() {
                return Err(SynthesisError::InvalidLabel(op));
            }
            class = Some(i);
        } else if v != 0.0 {
            return Err(SynthesisError::InvalidLabel(op));
        }
    }
    class.ok_or(SynthesisError::InvalidLabel(op))
}

/// `λ·y_a + (1−λ)·y_b`.
pub(crate) fn mix_labels(y_a: &[f64], y_b: &[f64], lambda: f64) -> Vec<f64> {
    y_a.iter().zip(y_b).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect()
}

pub(crate) fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(SynthesisError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}
