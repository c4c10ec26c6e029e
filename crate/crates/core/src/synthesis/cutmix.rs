use rand::Rng;

use super::{check_same_shape, mix_labels, one_hot_class, MaskRole, ProvenanceMask, Result, SynthesisError, SyntheticSample, Label};
use crate::tensor::Tensor;

/// Half-open pixel rectangle `[top, bottom) × [left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top && row < self.bottom && col >= self.left && col < self.right
    }

    pub fn area(&self) -> usize {
        self.bottom.saturating_sub(self.top) * self.right.saturating_sub(self.left)
    }
}

fn image_dims(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(SynthesisError::ShapeMismatch {
            op,
            left: x.shape().to_vec(),
            right: vec![0, 0, 0],
        }),
    }
}

/// CutMix with a random square region: draws λ ~ U[0,1], sizes the pasted
/// square to area (1−λ)·H·W around a uniform random center (clipped), then
/// recomputes λ from the realized mask.
pub fn cutmix(x_a: &Tensor, y_a: &[f64], x_b: &Tensor, y_b: &[f64], rng: &mut impl Rng) -> Result<SyntheticSample> {
    check_same_shape("cutmix", x_a, x_b)?;
    let (h, w, _) = image_dims("cutmix", x_a)?;
    let lambda: f64 = rng.gen_range(0.0..=1.0);
    let side = ((1.0 - lambda) * (h * w) as f64).sqrt();
    let cy = rng.gen_range(0..h) as f64 + 0.5;
    let cx = rng.gen_range(0..w) as f64 + 0.5;
    let clip = |v: f64, hi: usize| v.round().clamp(0.0, hi as f64) as usize;
    let rect = Rect {
        top: clip(cy - side / 2.0, h),
        bottom: clip(cy + side / 2.0, h),
        left: clip(cx - side / 2.0, w),
        right: clip(cx + side / 2.0, w),
    };
    cutmix_with_rect(x_a, y_a, x_b, y_b, rect)
}

/// CutMix with a given pasted rectangle: `M = 0` inside it, 1 elsewhere.
pub fn cutmix_with_rect(x_a: &Tensor, y_a: &[f64], x_b: &Tensor, y_b: &[f64], rect: Rect) -> Result<SyntheticSample> {
    check_same_shape("cutmix", x_a, x_b)?;
    let (h, w, c) = image_dims("cutmix", x_a)?;
    if y_a.len() != y_b.len() {
        return Err(SynthesisError::InvalidLabel("cutmix"));
    }
    let class_a = one_hot_class(y_a, "cutmix")?;
    let class_b = one_hot_class(y_b, "cutmix")?;

    let mut bits = Vec::with_capacity(h * w);
    for r in 0..h {
        for col in 0..w {
            bits.push(!rect.contains(r, col));
        }
    }
    let m = ProvenanceMask::from_bools(&[h, w], &bits, MaskRole::MixOrigin)?;
    let mut data = Vec::with_capacity(h * w * c);
    for (p, &keep_a) in bits.iter().enumerate() {
        let src = if keep_a { x_a } else { x_b };
        data.extend_from_slice(&src.data()[p * c..(p + 1) * c]);
    }
    let lambda = m.fraction();
    Ok(SyntheticSample {
        x: Tensor::new(vec![h, w, c], data)?,
        label: Label::Soft(mix_labels(y_a, y_b, lambda)),
        masks: vec![m.clone(), m.complement()],
        classes: vec![class_a, class_b],
        lambda: Some(lambda),
    })
}
