use super::{ProvenanceMask, Result, SynthesisError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphMode {
    Dilate,
    Erode,
}

#[derive(Debug, Clone)]
pub struct PerturbedMask {
    pub mask: ProvenanceMask,
    /// Signed relative change of the 1-region area.
    pub realized_delta: f64,
    pub iterations: usize,
    /// The realized change exceeds the requested magnitude.
    pub overshoot: bool,
}

const CROSS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// One step with the 3×3 cross element. Out-of-image neighbors are ignored,
/// so the image border neither grows nor erodes the region.
fn step(bits: &[bool], h: usize, w: usize, mode: MorphMode) -> Vec<bool> {
    let at = |r: isize, c: isize| -> Option<bool> {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            None
        } else {
            Some(bits[r as usize * w + c as usize])
        }
    };
    (0..h * w)
        .map(|p| {
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            let neighbors = CROSS.iter().filter_map(|(dr, dc)| at(r + dr, c + dc));
            match mode {
                MorphMode::Dilate => bits[p] || neighbors.into_iter().any(|b| b),
                MorphMode::Erode => bits[p] && neighbors.into_iter().all(|b| b),
            }
        })
        .collect()
}

/// Grows or shrinks the 1-region of a 2-d mask, one cross-element step at a
/// time, until its area has changed by at least `target_area_delta` of the
/// original area.
pub fn perturb_mask(mask: &ProvenanceMask, mode: MorphMode, target_area_delta: f64) -> Result<PerturbedMask> {
    if !(target_area_delta >= 0.0) || !target_area_delta.is_finite() {
        return Err(SynthesisError::InvalidPerturbation(format!("delta must be non-negative, got {target_area_delta}")));
    }
    if target_area_delta == 0.0 {
        return Ok(PerturbedMask {
            mask: mask.clone(),
            realized_delta: 0.0,
            iterations: 0,
            overshoot: false,
        });
    }
    let (h, w) = match *mask.shape() {
        [h, w] => (h, w),
        _ => return Err(SynthesisError::InvalidPerturbation(format!("expected a 2-d mask, got {:?}", mask.shape()))),
    };
    let original = mask.count_ones();
    if original == 0 || original == h * w {
        return Err(SynthesisError::InvalidPerturbation("mask needs both 0 and 1 elements".into()));
    }
    let mut bits = mask.bits();
    let mut area = original;
    let mut iterations = 0;
    let delta_of = |a: usize| (a as f64 - original as f64) / original as f64;
    while delta_of(area).abs() < target_area_delta {
        let next = step(&bits, h, w, mode);
        let next_area = next.iter().filter(|&&b| b).count();
        if next_area == area {
            return Err(SynthesisError::Saturated { realized: delta_of(area) });
        }
        bits = next;
        area = next_area;
        iterations += 1;
    }
    let realized = delta_of(area);
    Ok(PerturbedMask {
        mask: ProvenanceMask::from_bools(&[h, w], &bits, mask.role())?,
        realized_delta: realized,
        iterations,
        overshoot: realized.abs() > target_area_delta,
    })
}
