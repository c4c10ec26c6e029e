use std::io::Write;

use super::{Result, SynthesisError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskRole {
    /// Marks elements taken from one mixing source.
    MixOrigin,
    /// Marks unedited target elements of an edited sample.
    EditTarget,
}

/// Binary mask aligned element-wise with a sample (H×W for images,
/// P×F×E for skeleton features).
#[derive(Debug, Clone, PartialEq)]
pub struct ProvenanceMask {
    values: Tensor,
    role: MaskRole,
}

impl ProvenanceMask {
    pub fn new(values: Tensor, role: MaskRole) -> Result<Self> {
        if values.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(SynthesisError::NotBinary);
        }
        Ok(Self { values, role })
    }

    pub fn from_bools(shape: &[usize], bits: &[bool], role: MaskRole) -> Result<Self> {
        let data = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self::new(Tensor::new(shape.to_vec(), data)?, role)
    }

    pub fn ones(shape: &[usize], role: MaskRole) -> Self {
        Self {
            values: Tensor::ones(shape.to_vec()).expect("positive shape"),
            role,
        }
    }

    pub fn zeros(shape: &[usize], role: MaskRole) -> Self {
        Self {
            values: Tensor::zeros(shape.to_vec()).expect("positive shape"),
            role,
        }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn role(&self) -> MaskRole {
        self.role
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }

    pub fn get(&self, i: usize) -> bool {
        self.values.data()[i] == 1.0
    }

    pub fn bits(&self) -> Vec<bool> {
        self.values.data().iter().map(|&v| v == 1.0).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.values.data().iter().filter(|&&v| v == 1.0).count()
    }

    /// Fraction of elements equal to 1.
    pub fn fraction(&self) -> f64 {
        self.count_ones() as f64 / self.values.numel() as f64
    }

    /// `1 − M`, same role.
    pub fn complement(&self) -> Self {
        Self {
            values: self.values.map(|v| 1.0 - v),
            role: self.role,
        }
    }

    /// Intersection over union of the 1-regions; two empty masks give 1.
    pub fn iou(&self, other: &ProvenanceMask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.values.data().iter().zip(other.values.data()) {
            let (a, b) = (*a == 1.0, *b == 1.0);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Repeats an H×W mask over `channels` trailing channels (H×W×C layout).
    pub fn expand_channels(&self, channels: usize) -> Tensor {
        let mut shape = self.values.shape().to_vec();
        let data = self
            .values
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, channels))
            .collect();
        shape.push(channels);
        Tensor::new(shape, data).expect("consistent shape")
    }

    /// Binary PGM (P5, maxval 255) of a 2-d mask; ones become 255.
    pub fn write_pgm(&self, mut out: impl Write) -> std::io::Result<()> {
        let shape = self.values.shape();
        let (h, w) = match shape {
            [h, w] => (*h, *w),
            [h, w, 1] => (*h, *w),
            _ => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    format!("PGM export needs a 2-d mask, got {shape:?}"),
                ))
            }
        };
        write!(out, "P5\n{w} {h}\n255\n")?;
        let bytes: Vec<u8> = self.values.data().iter().map(|&v| if v == 1.0 { 255 } else { 0 }).collect();
        out.write_all(&bytes)
    }
}
