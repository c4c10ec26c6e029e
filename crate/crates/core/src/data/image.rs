use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, Result, Split};
use crate::rng::stream;
use crate::synthesis::{MaskRole, ProvenanceMask, Rect};
use crate::tensor::Tensor;

/// Waterbirds-style toy image task.
///
/// The class is written into a square target patch near the image center;
/// the background carries an environment level that equals the class with
/// probability `rho_train` (train) or `rho_test` (test) and is uniform
/// otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyDatasetSpec {
    pub image_size: [usize; 2],
    pub channels: usize,
    pub num_classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub patch_size: usize,
    /// Maximum shift of the patch from the center, in pixels per axis.
    pub patch_jitter: usize,
    pub patch_amplitude: f64,
    pub background_amplitude: f64,
    pub noise_std: f64,
    pub rho_train: f64,
    pub rho_test: f64,
    pub seed: u64,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        Self {
            image_size: [16, 16],
            channels: 1,
            num_classes: 2,
            train_size: 512,
            test_size: 512,
            patch_size: 6,
            patch_jitter: 2,
            patch_amplitude: 1.0,
            background_amplitude: 0.5,
            noise_std: 0.5,
            rho_train: 1.0,
            rho_test: 0.0,
            seed: 0,
        }
    }
}

fn check(ok: bool, field: &'static str, constraint: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(DataError::InvalidSpec {
            field,
            constraint: constraint.to_string(),
        })
    }
}

impl ToyDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.image_size;
        check(h >= 1 && w >= 1, "image_size", "must be positive in both dimensions")?;
        check(self.channels >= 1, "channels", "must be at least 1")?;
        check((2..=16).contains(&self.num_classes), "num_classes", "must be in 2..=16")?;
        check(self.train_size >= 1, "train_size", "must be at least 1")?;
        check(self.test_size >= 1, "test_size", "must be at least 1")?;
        check(self.patch_size >= 1, "patch_size", "must be at least 1")?;
        check(
            self.patch_size + 2 * self.patch_jitter <= h.min(w),
            "patch_size",
            "plus twice the jitter must fit inside the image",
        )?;
        check(self.noise_std >= 0.0 && self.noise_std.is_finite(), "noise_std", "must be finite and non-negative")?;
        check(self.patch_amplitude.is_finite(), "patch_amplitude", "must be finite")?;
        check(self.background_amplitude.is_finite(), "background_amplitude", "must be finite")?;
        check((0.0..=1.0).contains(&self.rho_train), "rho_train", "must be in [0, 1]")?;
        check((0.0..=1.0).contains(&self.rho_test), "rho_test", "must be in [0, 1]")?;
        Ok(())
    }

    /// Signal level of class or environment `k` in [-1, 1].
    fn level(&self, k: usize) -> f64 {
        2.0 * k as f64 / (self.num_classes - 1) as f64 - 1.0
    }
}

/// Labeled images with ground-truth target masks and environment ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    /// 1 on the target patch.
    pub targets: Vec<ProvenanceMask>,
    /// Background environment of each image.
    pub envs: Vec<usize>,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.height, self.width, self.channels]
    }

    /// Number of (class, environment) groups.
    pub fn num_groups(&self) -> usize {
        self.num_classes * self.num_classes
    }

    pub fn group(&self, i: usize) -> usize {
        self.labels[i] * self.num_classes + self.envs[i]
    }

    /// Tightest box around the target mask.
    pub fn target_box(&self, i: usize) -> Option<Rect> {
        bounding_box(&self.targets[i].bits(), self.height, self.width)
    }

    /// Copy where pixels inside (`keep_target`) or outside the target are kept
    /// and the rest zeroed.
    pub fn masked_inputs(&self, keep_target: bool) -> ImageDataset {
        let mut out = self.clone();
        for (img, m) in out.images.iter_mut().zip(&self.targets) {
            let keep = if keep_target { m.clone() } else { m.complement() };
            *img = img.zip_map(&keep.expand_channels(self.channels), "mask", |x, k| x * k).expect("aligned");
        }
        out
    }
}

/// Tightest half-open box around the set bits of an H×W grid.
pub(crate) fn bounding_box(bits: &[bool], h: usize, w: usize) -> Option<Rect> {
    let mut rect: Option<Rect> = None;
    for r in 0..h {
        for c in 0..w {
            if !bits[r * w + c] {
                continue;
            }
            rect = Some(match rect {
                None => Rect {
                    top: r,
                    left: c,
                    bottom: r + 1,
                    right: c + 1,
                },
                Some(b) => Rect {
                    top: b.top.min(r),
                    left: b.left.min(c),
                    bottom: b.bottom.max(r + 1),
                    right: b.right.max(c + 1),
                },
            });
        }
    }
    rect
}

/// Generates one split. Sample `i` depends only on `(seed, split, i)`.
pub fn generate_image_dataset(spec: &ToyDatasetSpec, split: Split) -> Result<ImageDataset> {
    spec.validate()?;
    let [h, w] = spec.image_size;
    let (c, k, s, j) = (spec.channels, spec.num_classes, spec.patch_size, spec.patch_jitter as i64);
    let (n, rho) = match split {
        Split::Train => (spec.train_size, spec.rho_train),
        Split::Test => (spec.test_size, spec.rho_test),
    };
    let name = format!("dataset/{}", split.as_str());
    let mut ds = ImageDataset {
        height: h,
        width: w,
        channels: c,
        num_classes: k,
        images: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        targets: Vec::with_capacity(n),
        envs: Vec::with_capacity(n),
    };
    for i in 0..n {
        let mut rng = stream(spec.seed, &name, i as u64);
        let label = rng.gen_range(0..k);
        let env = if rng.gen_bool(rho) { label } else { rng.gen_range(0..k) };
        let top = ((h - s) / 2) as i64 + rng.gen_range(-j..=j);
        let left = ((w - s) / 2) as i64 + rng.gen_range(-j..=j);
        let (top, left) = (top as usize, left as usize);
        let patch = Rect {
            top,
            left,
            bottom: top + s,
            right: left + s,
        };
        let mut bits = Vec::with_capacity(h * w);
        let mut data = Vec::with_capacity(h * w * c);
        for r in 0..h {
            for col in 0..w {
                let inside = patch.contains(r, col);
                bits.push(inside);
                let base = if inside {
                    spec.patch_amplitude * spec.level(label)
                } else {
                    spec.background_amplitude * spec.level(env)
                };
                for _ in 0..c {
                    data.push(base + spec.noise_std * rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
        ds.images.push(Tensor::new(vec![h, w, c], data)?);
        ds.labels.push(label);
        ds.targets.push(ProvenanceMask::from_bools(&[h, w], &bits, MaskRole::EditTarget)?);
        ds.envs.push(env);
    }
    Ok(ds)
}
