use super::Tensor;

/// Central-difference estimate of the gradient of a scalar function.
///
/// Evaluates `f` at `x ± eps·e_i` for every element `i`. Test oracle; it does
/// not touch any tape.
pub fn finite_difference_oracle<E>(
    mut f: impl FnMut(&Tensor) -> Result<f64, E>,
    x: &Tensor,
    eps: f64,
) -> Result<Tensor, E> {
    assert!(eps > 0.0, "finite difference step must be positive");
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let v = x.data()[i];
        let hi = f(&x.with_element(i, v + eps))?;
        let lo = f(&x.with_element(i, v - eps))?;
        grad.push((hi - lo) / (2.0 * eps));
    }
    Ok(Tensor::new(x.shape().to_vec(), grad).expect("shape preserved"))
}
