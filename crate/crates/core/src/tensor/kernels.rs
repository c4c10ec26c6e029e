use super::{Result, Tensor, TensorError};

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// Splits a shape around `axis` into (outer, axis length, inner).
pub(crate) fn axis_split(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: format!("axis {axis} out of range"),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub(crate) fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(mismatch("matmul", a, b));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub(crate) fn transpose(a: &Tensor) -> Result<Tensor> {
    let s = a.shape();
    if s.len() != 2 {
        return Err(TensorError::InvalidShape {
            op: "transpose",
            shape: s.to_vec(),
            reason: "expected a 2-d tensor".into(),
        });
    }
    let (r, c) = (s[0], s[1]);
    let d = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

pub(crate) fn sum_axis(a: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_split("sum_axis", a.shape(), axis)?;
    let d = a.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..len {
            let base = (o * len + k) * inner;
            for i in 0..inner {
                out[o * inner + i] += d[base + i];
            }
        }
    }
    Tensor::new(reduced_shape(a.shape(), axis), out)
}

/// Maximum along `axis`, with flat source positions of the winners.
/// Ties go to the lowest index along the axis.
pub(crate) fn max_axis(a: &Tensor, axis: usize) -> Result<(Tensor, Vec<usize>)> {
    let (outer, len, inner) = axis_split("max_axis", a.shape(), axis)?;
    let d = a.data();
    let mut out = Vec::with_capacity(outer * inner);
    let mut arg = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let mut best = (o * len) * inner + i;
            for k in 1..len {
                let pos = (o * len + k) * inner + i;
                if d[pos] > d[best] {
                    best = pos;
                }
            }
            out.push(d[best]);
            arg.push(best);
        }
    }
    Ok((Tensor::new(reduced_shape(a.shape(), axis), out)?, arg))
}

/// Map from every input position of a `sum_axis` to the output position it feeds.
pub(crate) fn axis_broadcast_index(shape: &[usize], axis: usize) -> Result<Vec<usize>> {
    let (outer, len, inner) = axis_split("sum_axis", shape, axis)?;
    let mut idx = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        for _ in 0..len {
            for i in 0..inner {
                idx.push(o * inner + i);
            }
        }
    }
    Ok(idx)
}

pub(crate) fn gather(a: &Tensor, index: &[usize], shape: &[usize]) -> Result<Tensor> {
    let d = a.data();
    let mut out = Vec::with_capacity(index.len());
    for &i in index {
        out.push(*d.get(i).ok_or(TensorError::IndexOutOfRange {
            op: "gather",
            index: i,
            len: d.len(),
        })?);
    }
    Tensor::new(shape.to_vec(), out)
}

pub(crate) fn scatter_add(a: &Tensor, index: &[usize], shape: &[usize]) -> Result<Tensor> {
    if index.len() != a.numel() {
        return Err(TensorError::InvalidShape {
            op: "scatter_add",
            shape: a.shape().to_vec(),
            reason: format!("index has {} entries", index.len()),
        });
    }
    let len: usize = shape.iter().product();
    let mut out = vec![0.0; len];
    for (&i, &v) in index.iter().zip(a.data()) {
        if i >= len {
            return Err(TensorError::IndexOutOfRange {
                op: "scatter_add",
                index: i,
                len,
            });
        }
        out[i] += v;
    }
    Tensor::new(shape.to_vec(), out)
}

pub(crate) fn stack(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts[0];
    let mut data = Vec::with_capacity(first.numel() * parts.len());
    for p in parts {
        if p.shape() != first.shape() {
            return Err(mismatch("stack", first, p));
        }
        data.extend_from_slice(p.data());
    }
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(first.shape());
    Tensor::new(shape, data)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
