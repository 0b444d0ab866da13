use stylefusion_autodiff::check::{numeric_gradient, relative_error};
use stylefusion_autodiff::{Mat, Tape, Var};

fn lcg(seed: &mut u64) -> f64 {
    *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

fn random(rows: usize, cols: usize, seed: &mut u64) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| lcg(seed))
}

/// Checks the reverse-mode gradient of `f(inputs)` w.r.t. every input
/// against central differences.
fn check(inputs: Vec<Mat<f64>>, f: impl for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>) {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out);
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Mat::zeros(input.rows(), input.cols()));
        let numeric = numeric_gradient(input.data(), 1e-6, |x| {
            let t = Tape::new();
            let vs: Vec<_> = inputs
                .iter()
                .enumerate()
                .map(|(j, m)| if j == k { t.leaf(Mat::from_vec(m.rows(), m.cols(), x.to_vec()).unwrap()) } else { t.leaf(m.clone()) })
                .collect();
            f(&t, &vs).scalar()
        });
        for (a, n) in analytic.data().iter().zip(&numeric) {
            assert!(relative_error(*a, *n, 1e-6) < 1e-5, "input {k}: analytic {a} numeric {n}");
        }
    }
}

fn weights<'t>(tape: &'t Tape<f64>, rows: usize, cols: usize) -> Var<'t, f64> {
    let mut s = 99;
    tape.constant(random(rows, cols, &mut s))
}

#[test]
fn elementwise_ops() {
    let mut s = 1;
    let a = random(3, 4, &mut s);
    let b = random(3, 4, &mut s);
    check(vec![a.clone(), b.clone()], |t, v| {
        let w = weights(t, 3, 4);
        ((v[0] + v[1]) * w + (v[0] - v[1]).square() + v[0] * v[1]).sum()
    });
    check(vec![a.clone()], |t, v| {
        let w = weights(t, 3, 4);
        ((v[0].exp() + v[0].tanh() + v[0].sigmoid() + v[0].softplus()) * w).sum()
    });
    check(vec![a.clone()], |t, v| {
        let w = weights(t, 3, 4);
        ((v[0].relu() + v[0].leaky_relu(0.2) + v[0].abs() + v[0].clamp(-0.5, 0.5)) * w).sum()
    });
    check(vec![a.map(|x| x.abs() + 0.5)], |t, v| {
        let w = weights(t, 3, 4);
        (v[0].ln() * w).sum().add_scalar(1.0).scale(0.7)
    });
}

#[test]
fn broadcasting_ops() {
    let mut s = 2;
    check(vec![random(4, 3, &mut s), random(1, 3, &mut s), random(4, 1, &mut s)], |t, v| {
        let w = weights(t, 4, 3);
        (v[0].add_row(v[1]).mul_row(v[1]).add_col(v[2]).mul_col(v[2]) * w).sum()
    });
    check(vec![random(4, 3, &mut s)], |t, v| {
        let w = weights(t, 1, 3);
        let c = weights(t, 4, 1);
        (v[0].mean_rows() * w).sum() + (v[0].sum_rows() * w).sum() + (v[0].sum_cols() * c).sum() + v[0].mean()
    });
}

#[test]
fn matrix_products() {
    let mut s = 3;
    check(vec![random(3, 5, &mut s), random(5, 2, &mut s), random(4, 5, &mut s)], |t, v| {
        let w = weights(t, 3, 2);
        let w2 = weights(t, 3, 4);
        (v[0].matmul(v[1]) * w).sum() + (v[0].matmul_t(v[2]) * w2).sum() + (v[0].transpose().square()).sum()
    });
}

#[test]
fn row_normalizers() {
    let mut s = 4;
    check(vec![random(3, 6, &mut s)], |t, v| {
        let w = weights(t, 3, 6);
        (v[0].softmax_rows() * w).sum() + (v[0].log_softmax_rows() * w).sum() + (v[0].layer_norm(1e-5) * w).sum()
    });
}

#[test]
fn structural_ops() {
    let mut s = 5;
    check(vec![random(4, 3, &mut s), random(4, 2, &mut s), random(2, 3, &mut s)], |t, v| {
        let cat = t.concat_cols(&[v[0], v[1]]);
        let rows = t.concat_rows(&[v[0], v[2]]);
        let w = weights(t, 4, 5);
        let w2 = weights(t, 6, 3);
        let w3 = weights(t, 5, 3);
        let w4 = weights(t, 2, 2);
        (cat * w).sum()
            + (rows * w2).sum()
            + (v[0].gather_rows(&[0, 0, 3, 1, 3]) * w3).sum()
            + (v[1].slice_rows(1, 3).slice_cols(0, 2) * w4).sum()
            + (v[0].shift_rows(1) * weights(t, 4, 3)).sum()
            + (v[0].shift_rows(-2) * weights(t, 4, 3)).sum()
    });
}

#[test]
fn gradient_reversal_negates() {
    let mut s = 6;
    let x = random(2, 3, &mut s);
    let tape = Tape::new();
    let v = tape.leaf(x.clone());
    let r = v.grad_reverse(0.5);
    assert_eq!(r.value(), x);
    let w = weights(&tape, 2, 3);
    let out = (r * w).sum();
    let g = tape.backward(out);
    let wv = w.value();
    for (a, b) in g.wrt(v).unwrap().data().iter().zip(wv.data()) {
        assert_eq!(*a, -0.5 * b);
    }
}

#[test]
fn detach_blocks_gradient() {
    let tape = Tape::<f64>::new();
    let v = tape.leaf(Mat::row_vector(vec![1.0, 2.0]));
    let out = (v.detach() * v).sum();
    let g = tape.backward(out);
    assert_eq!(g.wrt(v).unwrap().data(), &[1.0, 2.0]);
}
