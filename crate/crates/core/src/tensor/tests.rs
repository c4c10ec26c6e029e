use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>())
}

/// Checks `grad` of `f(x)` against central differences at tolerance
/// max(1e-5, 1e-3·|value|).
fn check_op(name: &str, x: &Tensor, f: impl Fn(Var<'_>) -> Result<Var<'_>>) {
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(xv).unwrap();
    let g = tape.grad(out, &[xv], false).unwrap()[0].value();
    let fd = finite_difference_oracle(
        |p: &Tensor| {
            let tape = Tape::new();
            let v = tape.constant(p.clone());
            f(v).map(|o| o.value().item())
        },
        x,
        1e-6,
    )
    .unwrap();
    for (a, b) in g.data().iter().zip(fd.data()) {
        let tol = f64::max(1e-5, 1e-3 * b.abs());
        assert!((a - b).abs() <= tol, "{name}: analytic {a} vs numeric {b}");
    }
}

#[test]
fn elementwise_mul_is_mask_product() {
    let tape = Tape::new();
    let m = tape.constant(t(&[3], &[1.0, 0.0, 1.0]));
    let x = tape.constant(t(&[3], &[5.0, 6.0, 7.0]));
    assert_eq!(m.mul(&x).unwrap().value().data(), &[5.0, 0.0, 7.0]);
}

#[test]
fn max_over_stack_axis() {
    let tape = Tape::new();
    let a = tape.constant(t(&[2], &[1.0, 4.0]));
    let b = tape.constant(t(&[2], &[3.0, 2.0]));
    let s = tape.stack(&[a, b]).unwrap();
    assert_eq!(s.max_axis(0).unwrap().value().data(), &[3.0, 4.0]);
}

#[test]
fn conv2d_all_ones() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::ones(vec![1, 4, 4, 1]).unwrap());
    let k = tape.constant(Tensor::ones(vec![3, 3, 1, 1]).unwrap());
    let y = x.conv2d(&k, 0).unwrap();
    assert_eq!(y.shape(), vec![1, 2, 2, 1]);
    assert_eq!(y.value().data(), &[9.0; 4]);
}

#[test]
fn conv2d_padding_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[1, 5, 4, 2]);
    let k = random(&mut rng, &[3, 3, 2, 3]);
    let tape = Tape::new();
    let y = tape.constant(x.clone()).conv2d(&tape.constant(k.clone()), 1).unwrap();
    assert_eq!(y.shape(), vec![1, 5, 4, 3]);
    let (h, w, c, o) = (5i64, 4i64, 2, 3);
    let yv = y.value();
    for r in 0..h {
        for col in 0..w {
            for oc in 0..o {
                let mut acc = 0.0;
                for i in 0..3i64 {
                    for j in 0..3i64 {
                        let (rr, cc) = (r + i - 1, col + j - 1);
                        if rr < 0 || cc < 0 || rr >= h || cc >= w {
                            continue;
                        }
                        for ch in 0..c {
                            let xi = ((rr * w + cc) as usize) * c + ch;
                            let ki = ((i * 3 + j) as usize * c + ch) * o + oc;
                            acc += x.data()[xi] * k.data()[ki];
                        }
                    }
                }
                let yi = ((r * w + col) as usize) * o + oc;
                assert!((yv.data()[yi] - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn square_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = x.mul(&x).unwrap();
    let g = tape.grad(y, &[x], false).unwrap();
    assert_eq!(g[0].value().item(), 6.0);
}

#[test]
fn second_order_cubic() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(2.0));
    let y = x.mul(&x).unwrap().mul(&x).unwrap();
    let g = tape.grad(y, &[x], true).unwrap()[0];
    assert_eq!(g.value().item(), 12.0);
    let gg = tape.grad(g, &[x], false).unwrap()[0];
    assert_eq!(gg.value().item(), 12.0);
}

#[test]
fn second_order_polynomials_match_closed_form() {
    // f(x) = sum(a x^4 + b x^3 + c x^2), f'' = 12a x^2 + 6b x + 2c
    let (a, b, c) = (0.5, -1.25, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x0 = random(&mut rng, &[6]);
    let tape = Tape::new();
    let x = tape.leaf(x0.clone());
    let x2 = x.square().unwrap();
    let f = x2
        .square()
        .unwrap()
        .scale(a)
        .unwrap()
        .add(&x2.mul(&x).unwrap().scale(b).unwrap())
        .unwrap()
        .add(&x2.scale(c).unwrap())
        .unwrap()
        .sum()
        .unwrap();
    let g = tape.grad(f, &[x], true).unwrap()[0];
    // the Hessian is diagonal, so d(sum g)/dx_i = f''(x_i)
    let h = tape.grad(g.sum().unwrap(), &[x], false).unwrap()[0].value();
    for (xi, hi) in x0.data().iter().zip(h.data()) {
        let want = 12.0 * a * xi * xi + 6.0 * b * xi + 2.0 * c;
        assert!((hi - want).abs() < 1e-8, "{hi} vs {want}");
    }
}

#[test]
fn masked_sum_gradient_is_exact() {
    let tape = Tape::new();
    let mask = t(&[5], &[1.0, 0.0, 1.0, 1.0, 0.0]);
    let g = tape.leaf(t(&[5], &[0.3, -1.7, 2.2, 0.0, 9.1]));
    let inv = tape.constant(mask.map(|m| 1.0 - m));
    let s = inv.mul(&g).unwrap().sum().unwrap();
    let d = tape.grad(s, &[g], false).unwrap()[0].value();
    assert_eq!(d.data(), mask.map(|m| 1.0 - m).data());
}

#[test]
fn gradient_of_masked_sum_of_input() {
    let tape = Tape::new();
    let m = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let x = tape.leaf(t(&[2, 2], &[4.0, -3.0, 2.0, 8.0]));
    let s = tape.constant(m.clone()).mul(&x).unwrap().sum().unwrap();
    assert_eq!(tape.grad(s, &[x], false).unwrap()[0].value().as_ref(), &m);
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..5 {
        let x = random(&mut rng, &[3, 4]);
        let w = random(&mut rng, &[4, 2]);
        let c = random(&mut rng, &[3, 4]);
        let pos = x.map(|v| v.abs() + 0.5);
        let wv = w.clone();
        let cv = c.clone();
        check_op("add", &x, |v| v.add(&v.tape().constant(cv.clone()))?.square()?.sum());
        check_op("sub", &x, |v| v.tape().constant(cv.clone()).sub(&v)?.square()?.sum());
        check_op("mul", &x, |v| v.mul(&v.tape().constant(cv.clone()))?.mul(&v)?.sum());
        check_op("scale", &x, |v| v.scale(-2.5)?.square()?.sum());
        check_op("add_scalar", &x, |v| v.add_scalar(0.7)?.square()?.sum());
        check_op("square", &x, |v| v.square()?.sum());
        check_op("recip", &pos, |v| v.recip()?.sum());
        check_op("exp", &x, |v| v.exp()?.sum());
        check_op("log", &pos, |v| v.ln()?.sum());
        check_op("relu", &x, |v| v.relu()?.mul(&v.tape().constant(cv.clone()))?.sum());
        check_op("abs", &x, |v| v.abs()?.mul(&v.tape().constant(cv.clone()))?.sum());
        check_op("softplus", &x, |v| v.softplus()?.square()?.sum());
        check_op("sigmoid", &x, |v| v.sigmoid()?.square()?.sum());
        check_op("matmul", &x, |v| v.matmul(&v.tape().constant(wv.clone()))?.square()?.sum());
        check_op("transpose", &x, |v| v.transpose()?.matmul(&v)?.sum());
        check_op("reshape", &x, |v| v.reshape(vec![2, 6])?.square()?.sum_axis(0)?.square()?.sum());
        check_op("sum_axis", &x, |v| v.sum_axis(1)?.square()?.sum());
        check_op("max_axis", &x, |v| v.max_axis(0)?.square()?.sum());
        check_op("gather", &x, |v| v.gather(Rc::from(vec![0, 5, 5, 11, 2]), vec![5])?.square()?.sum());
        check_op("scatter_add", &x, |v| v.scatter_add(Rc::from((0..12).map(|i| i % 5).collect::<Vec<_>>()), vec![5])?.square()?.sum());
        check_op("stack", &x, |v| v.tape().stack(&[v, v.square()?])?.max_axis(0)?.sum());
        check_op("log_softmax", &x, |v| v.log_softmax()?.mul(&v.tape().constant(cv.clone()))?.sum());
        check_op("softmax", &x, |v| v.softmax()?.mul(&v.tape().constant(cv.clone()))?.sum());
        check_op("mean", &x, |v| v.square()?.mean());
        let img = random(&mut rng, &[2, 4, 4, 2]);
        let ker = random(&mut rng, &[3, 3, 2, 2]);
        check_op("conv2d", &img, |v| v.conv2d(&v.tape().constant(ker.clone()), 1)?.square()?.sum());
        check_op("conv2d_kernel", &ker, |k| k.tape().constant(img.clone()).conv2d(&k, 0)?.square()?.sum());
        check_op("max_pool2d", &img, |v| v.max_pool2d(2)?.square()?.sum());
        let _ = trial;
    }
}

#[test]
fn quadratic_finite_difference_is_exact() {
    let x = t(&[2], &[1.0, 2.0]);
    let g = finite_difference_oracle(|p: &Tensor| Ok::<_, TensorError>(p.data().iter().map(|v| v * v).sum()), &x, 1e-5).unwrap();
    assert!((g.data()[0] - 2.0).abs() < 1e-6);
    assert!((g.data()[1] - 4.0).abs() < 1e-6);
}

#[test]
fn relu_and_max_tie_rules() {
    let tape = Tape::new();
    let x = tape.leaf(t(&[3], &[0.0, 1.0, -1.0]));
    let y = x.relu().unwrap().sum().unwrap();
    assert_eq!(tape.grad(y, &[x], false).unwrap()[0].value().data(), &[0.0, 1.0, 0.0]);

    let tape = Tape::new();
    let x = tape.leaf(t(&[3, 1], &[2.0, 2.0, 1.0]));
    let y = x.max_axis(0).unwrap().sum().unwrap();
    assert_eq!(tape.grad(y, &[x], false).unwrap()[0].value().data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn shape_errors_name_the_op() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(vec![2, 3]).unwrap());
    let b = tape.leaf(Tensor::zeros(vec![3, 2]).unwrap());
    let err = a.add(&b).unwrap_err();
    assert_eq!(
        err,
        TensorError::ShapeMismatch {
            op: "add",
            left: vec![2, 3],
            right: vec![3, 2]
        }
    );
    assert!(err.to_string().contains("add"));
    let err = a.matmul(&a).unwrap_err();
    assert!(matches!(err, TensorError::ShapeMismatch { op: "matmul", .. }));
    // scalar broadcast is allowed
    let s = tape.leaf(Tensor::scalar(2.0));
    assert_eq!(a.add(&s).unwrap().shape(), vec![2, 3]);
}

#[test]
fn grad_errors() {
    let tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]));
    assert!(matches!(tape.grad(x, &[x], false), Err(TensorError::NotScalar(_))));
    let s = x.sum().unwrap();
    let c = tape.constant(Tensor::scalar(1.0));
    assert!(matches!(tape.grad(s, &[c], false), Err(TensorError::NotDifferentiable(_))));
    let other = Tape::new();
    let y = other.leaf(Tensor::scalar(1.0));
    assert!(matches!(tape.grad(s, &[y], false), Err(TensorError::NotOnTape(_))));
}

#[test]
fn unreachable_input_gets_zero_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]));
    let z = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
    let s = x.square().unwrap().sum().unwrap();
    let g = tape.grad(s, &[z], false).unwrap();
    assert_eq!(g[0].value().data(), &[0.0; 3]);
}

#[test]
fn non_finite_results_are_errors() {
    let tape = Tape::new();
    let x = tape.leaf(t(&[2], &[0.0, 1.0]));
    assert_eq!(x.ln().unwrap_err(), TensorError::NonFinite { op: "log" });
    assert_eq!(x.recip().unwrap_err(), TensorError::NonFinite { op: "recip" });
}

#[test]
fn gradients_without_create_graph_are_constants() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(2.0));
    let y = x.square().unwrap().mul(&x).unwrap();
    let g = tape.grad(y, &[x], false).unwrap()[0];
    assert!(!g.requires_grad());
    let g = tape.grad(y, &[x], true).unwrap()[0];
    assert!(g.requires_grad());
}

#[test]
fn replay_reproduces_recorded_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tape = Tape::new();
    let x = tape.leaf(random(&mut rng, &[4, 3]));
    let w = tape.leaf(random(&mut rng, &[3, 2]));
    let logits = x.matmul(&w).unwrap().relu().unwrap().log_softmax().unwrap();
    let loss = logits.sum().unwrap();
    let g = tape.grad(loss, &[x], true).unwrap()[0];
    let pen = g.square().unwrap().sum().unwrap();
    tape.grad(pen, &[w], false).unwrap();
    assert!(tape.replay_matches().unwrap());
}

#[test]
fn grads_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tape = Tape::new();
        let x = tape.leaf(random(&mut rng, &[5, 6]));
        let w = tape.leaf(random(&mut rng, &[6, 3]));
        let y = x.matmul(&w).unwrap().softplus().unwrap().sum().unwrap();
        let gx = tape.grad(y, &[x], true).unwrap()[0];
        let gw = tape.grad(gx.square().unwrap().sum().unwrap(), &[w], false).unwrap()[0];
        (gw.value().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), tape.len())
    };
    assert_eq!(run(), run());
}
