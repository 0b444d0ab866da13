use stylefusion::fusion::{FusionBlock, FusionDims};
use stylefusion::nn::{seeded_rng, Builder, Ctx};
use stylefusion::FusionVariant;
use stylefusion_autodiff::check::{central_difference, numeric_gradient, relative_error};
use stylefusion_autodiff::{Mat, ParamStore, Scalar, Tape};

pub const DIMS: FusionDims = FusionDims { d_model: 8, d_style: 4, d_spk: 4, heads: 2, kernel: 5 };

pub fn block(variant: FusionVariant, seed: u64) -> (ParamStore<f64>, FusionBlock) {
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(seed);
    let b = FusionBlock::new(&mut Builder::new(&mut store, &mut rng), "blk", variant, DIMS).unwrap();
    (store, b)
}

pub fn wave(rows: usize, cols: usize, phase: f64) -> Mat<f64> {
    Mat::from_fn(rows, cols, |r, c| ((r * cols + c) as f64 * 0.731 + phase).sin())
}

pub fn run<T: Scalar>(store: &ParamStore<T>, b: &FusionBlock, w: &Mat<T>, style: &Mat<T>, spk: &Mat<T>) -> Mat<T> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store);
    b.forward(ctx, tape.constant(w.clone()), tape.constant(style.clone()), tape.constant(spk.clone())).unwrap().value()
}

/// Reverse-mode gradient of `sum(out * R)` computed in precision `T`,
/// against central differences of the same function evaluated in double
/// precision on the `T`-rounded inputs. Covers the input frames, both
/// embeddings and a sample of every parameter array.
pub fn gradient_check<T: Scalar>(variant: FusionVariant, tol: f64, floor: f64) {
    let (store64, b) = block(variant, 21);
    let store: ParamStore<T> = store64.cast();
    let w: Mat<T> = wave(4, 8, 0.1).cast();
    let style: Mat<T> = wave(1, 4, 0.9).cast();
    let spk: Mat<T> = wave(1, 4, -1.3).cast();
    let readout: Mat<T> = wave(4, 8, 2.2).cast();

    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let (wv, sv, pv) = (tape.leaf(w.clone()), tape.leaf(style.clone()), tape.leaf(spk.clone()));
    let out = b.forward(ctx, wv, sv, pv).unwrap();
    let total = (out * tape.constant(readout.clone())).sum();
    let grads = tape.backward(total);

    let oracle: ParamStore<f64> = store.cast();
    let (w, style, spk, readout): (Mat<f64>, Mat<f64>, Mat<f64>, Mat<f64>) = (w.cast(), style.cast(), spk.cast(), readout.cast());
    let loss = |store: &ParamStore<f64>, w: &Mat<f64>, style: &Mat<f64>, spk: &Mat<f64>| -> f64 {
        let out = run(store, &b, w, style, spk);
        out.data().iter().zip(readout.data()).map(|(o, r)| o * r).sum()
    };

    let h = 1e-3;
    let compare = |what: &str, analytic: &[T], numeric: &[f64]| {
        for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            let e = relative_error(a.as_f64(), *n, floor);
            assert!(e < tol, "{variant} {what}[{i}]: analytic {a} numeric {n} rel {e}");
        }
    };

    let gs = grads.wrt(sv).unwrap();
    let gp = grads.wrt(pv).unwrap();
    assert!(gs.max_abs() > T::zero() && gp.max_abs() > T::zero(), "{variant}: control gradient vanished");
    let ns = numeric_gradient(style.data(), h, |x| loss(&oracle, &w, &Mat::from_vec(1, 4, x.to_vec()).unwrap(), &spk));
    compare("style", gs.data(), &ns);
    let np = numeric_gradient(spk.data(), h, |x| loss(&oracle, &w, &style, &Mat::from_vec(1, 4, x.to_vec()).unwrap()));
    compare("speaker", gp.data(), &np);
    let nw = numeric_gradient(w.data(), h, |x| loss(&oracle, &Mat::from_vec(4, 8, x.to_vec()).unwrap(), &style, &spk));
    compare("frames", grads.wrt(wv).unwrap().data(), &nw);

    for id in store.ids() {
        let value = oracle.get(id).clone();
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Mat::zeros(value.rows(), value.cols()));
        let step = (value.len() / 3).max(1);
        let mut work = value.data().to_vec();
        for i in (0..value.len()).step_by(step) {
            let n = central_difference(&mut work, i, h, |x| {
                let mut s = oracle.clone();
                *s.get_mut(id) = Mat::from_vec(value.rows(), value.cols(), x.to_vec()).unwrap();
                loss(&s, &w, &style, &spk)
            });
            compare(store.name(id), &analytic.data()[i..=i], &[n]);
        }
    }
}
