//! Input-gradient guidance: per-class input gradients and the provenance
//! losses built from them.
//!
//! Losses here are unnormalized squared L2 norms summed over every element
//! (channels included). Given a batch, they return the sum of the per-sample
//! losses; the trainer divides by the number of contributing samples.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::ToyModel;
use crate::synthesis::{MaskRole, ProvenanceMask};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GuidanceError {
    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("control_mask: mode {0:?} is not a control mode")]
    NotAControl(MaskMode),
    #[error("alpha must be finite and non-negative, got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GuidanceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    SoftPair,
    HardSingle,
}

/// Which mask the penalty uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Provenance from synthesis.
    Provenance,
    /// i.i.d. Bernoulli(0.5) per element.
    Random,
    /// Penalize the whole input.
    Unmasked,
}

impl MaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskMode::Provenance => "provenance",
            MaskMode::Random => "random",
            MaskMode::Unmasked => "unmasked",
        }
    }
}

impl std::str::FromStr for MaskMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "provenance" => Ok(MaskMode::Provenance),
            "random" => Ok(MaskMode::Random),
            "unmasked" => Ok(MaskMode::Unmasked),
            other => Err(format!("unknown mask mode `{other}` (expected provenance, random or unmasked)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub alpha: f64,
    pub label_mode: LabelMode,
    pub mask_mode: MaskMode,
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(GuidanceError::InvalidAlpha(self.alpha));
        }
        Ok(())
    }
}

/// Gradient of `Σ_b logits[b, classes[b]]` with respect to `input`.
///
/// Samples do not interact in the forward pass, so row `b` of the result is
/// the input gradient of sample `b`'s own class logit.
pub fn input_gradients<'t>(logits: &Var<'t>, input: &Var<'t>, classes: &[usize], create_graph: bool) -> Result<Var<'t>> {
    let shape = logits.shape();
    let (b, n) = (shape[0], shape[1]);
    if classes.len() != b {
        return Err(TensorError::ShapeMismatch {
            op: "input_gradients",
            left: shape,
            right: vec![classes.len()],
        }
        .into());
    }
    let mut select = vec![0.0; b * n];
    for (row, &c) in classes.iter().enumerate() {
        if c >= n {
            return Err(GuidanceError::ClassOutOfRange { class: c, num_classes: n });
        }
        select[row * n + c] = 1.0;
    }
    let tape = logits.tape();
    let picked = logits.mul(&tape.constant(Tensor::new(vec![b, n], select)?))?.sum()?;
    Ok(tape.grad(picked, &[*input], create_graph)?[0])
}

/// Input gradient of one sample's class logit, `x` given without batch axis.
pub fn input_gradient(model: &ToyModel, x: &Tensor, class: usize) -> Result<Tensor> {
    let tape = Tape::new();
    let params: Vec<Var<'_>> = model.params().iter().map(|p| tape.constant(p.clone())).collect();
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let input = tape.leaf(x.reshape(shape)?);
    let feats = model.features(&params, &input)?;
    let logits = model.head(&params, &feats)?;
    let g = input_gradients(&logits, &input, &[class], false)?;
    Ok(g.value().reshape(x.shape().to_vec())?)
}

/// Brings an H×W (or B×H×W) mask to the gradient's shape, repeating it over a
/// trailing channel axis when needed.
fn align_mask(mask: &Tensor, grad_shape: &[usize]) -> Result<Tensor> {
    if mask.shape() == grad_shape {
        return Ok(mask.clone());
    }
    if grad_shape.len() == mask.shape().len() + 1 && grad_shape[..mask.shape().len()] == *mask.shape() {
        let c = *grad_shape.last().expect("non-empty");
        let data = mask.data().iter().flat_map(|&v| std::iter::repeat_n(v, c)).collect();
        return Ok(Tensor::new(grad_shape.to_vec(), data)?);
    }
    Err(TensorError::ShapeMismatch {
        op: "provenance_loss",
        left: grad_shape.to_vec(),
        right: mask.shape().to_vec(),
    }
    .into())
}

/// `‖(1−M) ⊙ g_a + M ⊙ g_b‖²`, one norm over the sum.
pub fn provenance_loss_soft<'t>(grad_a: &Var<'t>, grad_b: &Var<'t>, mask: &Tensor) -> Result<Var<'t>> {
    if grad_a.shape() != grad_b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "provenance_loss_soft",
            left: grad_a.shape(),
            right: grad_b.shape(),
        }
        .into());
    }
    let m = align_mask(mask, &grad_a.shape())?;
    let tape = grad_a.tape();
    let keep_b = tape.constant(m.clone());
    let keep_a = tape.constant(m.map(|v| 1.0 - v));
    Ok(keep_a.mul(grad_a)?.add(&keep_b.mul(grad_b)?)?.square()?.sum()?)
}

/// `‖(1−M) ⊙ g_y‖²`.
pub fn provenance_loss_hard<'t>(grad_y: &Var<'t>, mask: &Tensor) -> Result<Var<'t>> {
    let m = align_mask(mask, &grad_y.shape())?;
    let outside = grad_y.tape().constant(m.map(|v| 1.0 - v));
    Ok(outside.mul(grad_y)?.square()?.sum()?)
}

/// Soft-pair penalty for any mask mode. `Unmasked` penalizes both class
/// gradients over the whole input: `‖g_a‖² + ‖g_b‖²`.
pub fn soft_pair_loss<'t>(grad_a: &Var<'t>, grad_b: &Var<'t>, mask: &Tensor, mode: MaskMode) -> Result<Var<'t>> {
    match mode {
        MaskMode::Unmasked => Ok(grad_a.square()?.sum()?.add(&grad_b.square()?.sum()?)?),
        MaskMode::Provenance | MaskMode::Random => provenance_loss_soft(grad_a, grad_b, mask),
    }
}

/// `L_cls + α·L_PG`.
pub fn total_loss<'t>(cls_loss: &Var<'t>, pg_loss: &Var<'t>, alpha: f64) -> Result<Var<'t>> {
    if alpha == 0.0 {
        return Ok(*cls_loss);
    }
    Ok(cls_loss.add(&pg_loss.scale(alpha)?)?)
}

/// Replacement masks for the control runs: Bernoulli(0.5) for `Random`, all
/// zeros (penalize everywhere) for `Unmasked`.
pub fn control_mask(shape: &[usize], mode: MaskMode, rng: &mut impl Rng) -> Result<ProvenanceMask> {
    let n: usize = shape.iter().product();
    let role = MaskRole::MixOrigin;
    match mode {
        MaskMode::Random => {
            let bits: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            ProvenanceMask::from_bools(shape, &bits, role).map_err(|_| TensorError::InvalidShape {
                op: "control_mask",
                shape: shape.to_vec(),
                reason: "invalid mask shape".into(),
            }
            .into())
        }
        MaskMode::Unmasked => Ok(ProvenanceMask::zeros(shape, role)),
        MaskMode::Provenance => Err(GuidanceError::NotAControl(mode)),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::models::{Architecture, ModelSpec};
    use crate::tensor::finite_difference_oracle;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn soft(ga: &[f64], gb: &[f64], m: &[f64]) -> f64 {
        let tape = Tape::new();
        let n = ga.len();
        let a = tape.leaf(t(&[n], ga));
        let b = tape.leaf(t(&[n], gb));
        provenance_loss_soft(&a, &b, &t(&[n], m)).unwrap().value().item()
    }

    fn hard(g: &[f64], m: &[f64]) -> f64 {
        let tape = Tape::new();
        let n = g.len();
        let v = tape.leaf(t(&[n], g));
        provenance_loss_hard(&v, &t(&[n], m)).unwrap().value().item()
    }

    #[test]
    fn soft_hand_example() {
        assert_eq!(soft(&[3.0, 2.0], &[5.0, 7.0], &[1.0, 0.0]), 29.0);
        assert_eq!(soft(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]), 0.0);
        // g_a lives on M=1, g_b on M=0
        assert_eq!(soft(&[3.0, 0.0], &[0.0, 7.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn hard_hand_example() {
        assert_eq!(hard(&[4.0, 1.0, 2.0], &[1.0, 0.0, 0.0]), 5.0);
        assert_eq!(hard(&[4.0, 1.0, 2.0], &[1.0, 1.0, 1.0]), 0.0);
        assert_eq!(hard(&[4.0, 1.0, 2.0], &[0.0, 0.0, 0.0]), 21.0);
    }

    #[test]
    fn mask_broadcasts_over_channels() {
        let tape = Tape::new();
        let g = tape.leaf(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let m = t(&[1, 2], &[1.0, 0.0]);
        assert_eq!(provenance_loss_hard(&g, &m).unwrap().value().item(), 25.0);
        let bad = t(&[2, 1], &[1.0, 0.0]);
        assert!(matches!(provenance_loss_hard(&g, &bad), Err(GuidanceError::Tensor(TensorError::ShapeMismatch { .. }))));
    }

    proptest! {
        #[test]
        fn soft_loss_symmetry_and_scaling(
            ga in prop::collection::vec(-3.0f64..3.0, 6),
            gb in prop::collection::vec(-3.0f64..3.0, 6),
            bits in prop::collection::vec(any::<bool>(), 6),
            c in -4.0f64..4.0,
        ) {
            let m: Vec<f64> = bits.iter().map(|&b| b as u8 as f64).collect();
            let inv: Vec<f64> = m.iter().map(|v| 1.0 - v).collect();
            let base = soft(&ga, &gb, &m);
            prop_assert!(base >= 0.0);
            prop_assert_eq!(base, soft(&gb, &ga, &inv));
            let sa: Vec<f64> = ga.iter().map(|v| v * c).collect();
            let sb: Vec<f64> = gb.iter().map(|v| v * c).collect();
            let scaled = soft(&sa, &sb, &m);
            prop_assert!((scaled - c * c * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
            let h = hard(&ga, &m);
            prop_assert!(h >= 0.0);
            let hs = hard(&sa, &m);
            prop_assert!((hs - c * c * h).abs() <= 1e-9 * (1.0 + hs.abs()));
            let masked_zero = ga.iter().zip(&m).all(|(g, m)| *m == 1.0 || *g == 0.0);
            prop_assert_eq!(h == 0.0, masked_zero);
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        let tape = Tape::new();
        let cls = tape.leaf(Tensor::scalar(2.0));
        let pg = tape.leaf(Tensor::scalar(10.0));
        assert_eq!(total_loss(&cls, &pg, 0.05).unwrap().value().item(), 2.5);
        assert_eq!(total_loss(&cls, &pg, 0.0).unwrap().value().item(), 2.0);
    }

    #[test]
    fn control_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = control_mask(&[32, 32], MaskMode::Random, &mut rng).unwrap();
        // Binomial(1024, 0.5): σ = 16
        let ones = m.count_ones() as f64;
        assert!((ones - 512.0).abs() <= 48.0, "{ones}");
        let z = control_mask(&[3, 3], MaskMode::Unmasked, &mut rng).unwrap();
        assert_eq!(z.count_ones(), 0);
        assert_eq!(hard(&[4.0, 1.0, 2.0], &[0.0; 3]), 21.0);
        assert!(matches!(control_mask(&[2], MaskMode::Provenance, &mut rng), Err(GuidanceError::NotAControl(_))));
    }

    #[test]
    fn unmasked_soft_penalizes_both_gradients() {
        let tape = Tape::new();
        let a = tape.leaf(t(&[2], &[1.0, 2.0]));
        let b = tape.leaf(t(&[2], &[3.0, 4.0]));
        let l = soft_pair_loss(&a, &b, &t(&[2], &[1.0, 0.0]), MaskMode::Unmasked).unwrap();
        assert_eq!(l.value().item(), 30.0);
    }

    fn linear_model(rng: &mut ChaCha8Rng) -> ToyModel {
        ToyModel::init(
            ModelSpec {
                architecture: Architecture::Linear,
                input_shape: vec![2, 3, 1],
                num_classes: 3,
            },
            rng,
        )
        .unwrap()
    }

    #[test]
    fn linear_input_gradient_is_weight_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = linear_model(&mut rng);
        let w = &m.params()[0];
        for x in [Tensor::zeros(vec![2, 3, 1]).unwrap(), Tensor::full(vec![2, 3, 1], 3.5).unwrap()] {
            let g = input_gradient(&m, &x, 2).unwrap();
            let col: Vec<f64> = (0..6).map(|d| w.data()[d * 3 + 2]).collect();
            assert_eq!(g.data(), col.as_slice());
        }
        assert!(matches!(
            input_gradient(&m, &Tensor::zeros(vec![2, 3, 1]).unwrap(), 3),
            Err(GuidanceError::ClassOutOfRange { class: 3, num_classes: 3 })
        ));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = ToyModel::init(
            ModelSpec {
                architecture: Architecture::Mlp { hidden: vec![7] },
                input_shape: vec![3, 3, 2],
                num_classes: 3,
            },
            &mut rng,
        )
        .unwrap();
        let x = Tensor::new(vec![3, 3, 2], (0..18).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect()).unwrap();
        let g = input_gradient(&m, &x, 1).unwrap();
        let fd = finite_difference_oracle(
            |p: &Tensor| -> std::result::Result<f64, TensorError> { Ok(m.predict(&p.reshape(vec![1, 3, 3, 2])?)?.data()[1]) },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(g.max_abs_diff(&fd) < 1e-4);
    }

    #[test]
    fn dead_relu_path_has_zero_gradient() {
        // input 0 feeds only hidden unit 0, whose pre-activation is negative
        let spec = ModelSpec {
            architecture: Architecture::Mlp { hidden: vec![2] },
            input_shape: vec![1, 2, 1],
            num_classes: 2,
        };
        let m = ToyModel::from_parts(
            spec,
            vec![
                ("hidden0.weight".into(), t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])),
                ("hidden0.bias".into(), t(&[2], &[-10.0, 0.0])),
                ("head.weight".into(), t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])),
                ("head.bias".into(), t(&[2], &[0.0, 0.0])),
            ],
        );
        let g = input_gradient(&m, &t(&[1, 2, 1], &[1.0, 1.0]), 0).unwrap();
        assert_eq!(g.data(), &[0.0, 3.0]);
    }

    #[test]
    fn penalty_alone_decays_penalized_weights_geometrically() {
        // f_y = w·x, L = ‖(1−M)⊙w‖², GD: w ← w − η·2(1−M)⊙w = (1−2η) w off-mask
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = linear_model(&mut rng);
        let mask = t(&[2, 3], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let lr = 0.1;
        let mut w = m.params()[0].clone();
        let w0 = w.clone();
        let x = Tensor::zeros(vec![1, 2, 3, 1]).unwrap();
        for step in 1..=5 {
            let tape = Tape::new();
            let wv = tape.leaf(w.clone());
            let bv = tape.leaf(m.params()[1].clone());
            let model = ToyModel::from_parts(m.spec().clone(), vec![]);
            let input = tape.leaf(x.clone());
            let logits = model.head(&[wv, bv], &input).unwrap();
            let g = input_gradients(&logits, &input, &[0], true).unwrap();
            let loss = provenance_loss_hard(&g, &mask.reshape(vec![1, 2, 3]).unwrap()).unwrap();
            let dw = tape.grad(loss, &[wv], false).unwrap()[0].value();
            w = w.zip_map(&dw, "sgd", |a, d| a - lr * d).unwrap();
            for d in 0..6 {
                let want = if mask.data()[d] == 0.0 { w0.data()[d * 3] * (1.0 - 2.0 * lr).powi(step) } else { w0.data()[d * 3] };
                assert!((w.data()[d * 3] - want).abs() < 1e-12);
                // other classes' weights untouched
                assert_eq!(w.data()[d * 3 + 1], w0.data()[d * 3 + 1]);
            }
        }
    }
}
