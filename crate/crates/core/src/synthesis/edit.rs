use rand::Rng;

use super::{check_same_shape, otsu_threshold, MaskRole, ProvenanceMask, Result, SynthesisError};
use crate::tensor::Tensor;

/// Bins used for the Otsu threshold of a difference image.
pub const OTSU_BINS: usize = 256;

/// Provenance recovered from an (original, edited) pair.
#[derive(Debug, Clone)]
pub struct EditProvenance {
    /// 1 on unedited (target) pixels, 0 on edited pixels.
    pub mask: ProvenanceMask,
    pub threshold: Option<f64>,
    /// Set when the difference image is constant and nothing could be separated.
    pub degenerate: bool,
}

fn hwc(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [h, w, c] if c >= 1 => Ok((h, w, c)),
        _ => Err(SynthesisError::ShapeMismatch {
            op,
            left: x.shape().to_vec(),
            right: vec![0, 0, 0],
        }),
    }
}

/// Stand-in for a generative editor: replaces the texture of every
/// non-target pixel and leaves target pixels bit-identical.
///
/// Each edited pixel moves by a random sign times `amplitude·(0.5 + 0.5u)`,
/// u ~ U[0,1] per channel, so every edited pixel differs by at least
/// `amplitude / 2` in each channel. Returns the edited image and the
/// ground-truth edited region (1 = edited).
pub fn simulated_edit(x: &Tensor, target: &ProvenanceMask, amplitude: f64, rng: &mut impl Rng) -> Result<(Tensor, ProvenanceMask)> {
    let (h, w, c) = hwc("simulated_edit", x)?;
    if target.shape() != [h, w] {
        return Err(SynthesisError::ShapeMismatch {
            op: "simulated_edit",
            left: x.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    let mut data = x.data().to_vec();
    let mut edited = Vec::with_capacity(h * w);
    for p in 0..h * w {
        let is_target = target.get(p);
        edited.push(!is_target);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for ch in 0..c {
            let u: f64 = rng.gen();
            if !is_target {
                data[p * c + ch] += sign * amplitude * (0.5 + 0.5 * u);
            }
        }
    }
    let region = ProvenanceMask::from_bools(&[h, w], &edited, MaskRole::EditTarget)?;
    Ok((Tensor::new(vec![h, w, c], data)?, region))
}

/// `D(u,v) = (1/C)·Σ_c |x̃_uvc − x_uvc|` as an H×W tensor.
pub fn difference_image(x: &Tensor, x_tilde: &Tensor) -> Result<Tensor> {
    check_same_shape("diff_mask", x, x_tilde)?;
    let (h, w, c) = hwc("diff_mask", x)?;
    let d = x
        .data()
        .chunks(c)
        .zip(x_tilde.data().chunks(c))
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (q - p).abs()).sum::<f64>() / c as f64)
        .collect();
    Ok(Tensor::new(vec![h, w], d)?)
}

/// Provenance of an edit: `I = 0` where `D > τ` (Otsu), 1 elsewhere.
pub fn diff_mask(x: &Tensor, x_tilde: &Tensor) -> Result<EditProvenance> {
    let d = difference_image(x, x_tilde)?;
    let shape = d.shape().to_vec();
    match otsu_threshold(d.data(), OTSU_BINS) {
        Ok(tau) => {
            let bits: Vec<bool> = d.data().iter().map(|&v| v <= tau).collect();
            Ok(EditProvenance {
                mask: ProvenanceMask::from_bools(&shape, &bits, MaskRole::EditTarget)?,
                threshold: Some(tau),
                degenerate: false,
            })
        }
        Err(SynthesisError::Degenerate(_)) => Ok(EditProvenance {
            mask: ProvenanceMask::ones(&shape, MaskRole::EditTarget),
            threshold: None,
            degenerate: true,
        }),
        Err(e) => Err(e),
    }
}
