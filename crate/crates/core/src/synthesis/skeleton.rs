use super::{check_same_shape, mix_labels, one_hot_class, Label, MaskRole, ProvenanceMask, Result, SynthesisError, SyntheticSample};
use crate::tensor::Tensor;

/// Spatio-temporal mask over `[P, F, E]` features that is 0 for every element
/// of skeletons `0..P/T` and 1 elsewhere.
pub fn skeleton_mask(p: usize, f: usize, e: usize, t: usize) -> Result<ProvenanceMask> {
    if t == 0 || p % t != 0 {
        return Err(SynthesisError::NotDivisible { skeletons: p, t });
    }
    let cut = p / t;
    let per = f * e;
    let bits: Vec<bool> = (0..p * per).map(|i| i / per >= cut).collect();
    ProvenanceMask::from_bools(&[p, f, e], &bits, MaskRole::MixOrigin)
}

/// Mixes two per-skeleton feature tensors: `X̃ = max(M ⊙ X_a, (1−M) ⊙ X_b)`.
///
/// Elements where both masked values are 0 stay 0; their provenance still
/// follows `M`.
pub fn skeleton_feature_mix(x_a: &Tensor, y_a: &[f64], x_b: &Tensor, y_b: &[f64], t: usize) -> Result<SyntheticSample> {
    check_same_shape("skeleton_feature_mix", x_a, x_b)?;
    let (p, f, e) = match *x_a.shape() {
        [p, f, e] => (p, f, e),
        _ => {
            return Err(SynthesisError::ShapeMismatch {
                op: "skeleton_feature_mix",
                left: x_a.shape().to_vec(),
                right: vec![0, 0, 0],
            })
        }
    };
    let class_a = one_hot_class(y_a, "skeleton_feature_mix")?;
    let class_b = one_hot_class(y_b, "skeleton_feature_mix")?;
    let m = skeleton_mask(p, f, e, t)?;
    let masked_a = m.values().zip_map(x_a, "mask", |m, x| m * x)?;
    let masked_b = m.values().zip_map(x_b, "mask", |m, x| (1.0 - m) * x)?;
    let mixed = masked_a.zip_map(&masked_b, "max", |a, b| if b > a { b } else { a })?;
    let lambda = m.fraction();
    Ok(SyntheticSample {
        x: mixed,
        label: Label::Soft(mix_labels(y_a, y_b, lambda)),
        masks: vec![m.clone(), m.complement()],
        classes: vec![class_a, class_b],
        lambda: Some(lambda),
    })
}
