use super::{Result, SynthesisError};

/// Equal-width histogram over `[min, max]`. Returns `(counts, min, bin_width)`.
/// The maximum value lands in the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<(Vec<usize>, f64, f64)> {
    if bins < 2 {
        return Err(SynthesisError::Degenerate(format!("need at least 2 bins, got {bins}")));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() || !(hi > lo) {
        return Err(SynthesisError::Degenerate("fewer than two distinct values".into()));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[bin_of(v, lo, width, bins)] += 1;
    }
    Ok((counts, lo, width))
}

pub(crate) fn bin_of(v: f64, lo: f64, width: f64, bins: usize) -> usize {
    (((v - lo) / width).floor() as usize).min(bins - 1)
}

/// Otsu threshold over a `bins`-bin histogram of `values`.
///
/// Candidates are the interior bin edges; the returned edge maximizes the
/// between-class variance, ties going to the lowest edge. Values strictly
/// above the threshold form the upper class.
pub fn otsu_threshold(values: &[f64], bins: usize) -> Result<f64> {
    let (counts, lo, width) = histogram(values, bins)?;
    let total: usize = counts.iter().sum();
    let sum_all: f64 = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 * (lo + (i as f64 + 0.5) * width))
        .sum();
    let mut best_k = 1;
    let mut best = f64::NEG_INFINITY;
    let (mut n0, mut s0) = (0usize, 0.0);
    for k in 1..bins {
        n0 += counts[k - 1];
        s0 += counts[k - 1] as f64 * (lo + (k as f64 - 0.5) * width);
        let n1 = total - n0;
        let v = if n0 == 0 || n1 == 0 {
            0.0
        } else {
            let (w0, w1) = (n0 as f64 / total as f64, n1 as f64 / total as f64);
            let d = s0 / n0 as f64 - (sum_all - s0) / n1 as f64;
            w0 * w1 * d * d
        };
        if v > best {
            best = v;
            best_k = k;
        }
    }
    Ok(lo + best_k as f64 * width)
}
