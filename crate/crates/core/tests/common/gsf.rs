use stylefusion::gsf_encoder::{combine_style, combine_style_values, grl, grl_backward, grl_forward, FrontendItem, GsfEncoder};
use stylefusion::nn::{seeded_rng, Builder, Ctx};
use stylefusion::RunConfig;
use stylefusion_autodiff::{Mat, ParamStore, Scalar, Tape};

pub fn small_cfg() -> RunConfig {
    RunConfig { n_fft: 62, ..RunConfig::desk() }
}

pub fn encoder<T: Scalar>(cfg: &RunConfig, seed: u64) -> (ParamStore<T>, GsfEncoder) {
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(seed);
    let enc = GsfEncoder::new(&mut Builder::new(&mut store, &mut rng), cfg).unwrap();
    (store, enc)
}

pub fn clip(frames: usize, bins: usize, phase: f32) -> Mat<f32> {
    Mat::from_fn(frames, bins, |r, c| 1.0 + ((r * 13 + c * 5) as f32 * 0.17 + phase).sin())
}

/// Gated style combination on the tape and on plain slices, both compared
/// bit for bit with a scalar loop.
pub fn check_combination(a: &[f32], p: &[f32], gate: f32) {
    let tape = Tape::<f32>::new();
    let out = combine_style(tape.constant(Mat::row_vector(a.to_vec())), tape.constant(Mat::row_vector(p.to_vec())), gate).unwrap().value();
    let mut oracle = vec![0.0f32; a.len()];
    for i in 0..a.len() {
        oracle[i] = gate * a[i] + p[i];
    }
    assert!(out.data().iter().zip(&oracle).all(|(x, y)| x.to_bits() == y.to_bits()), "{:?} vs {oracle:?}", out.data());
    let plain = combine_style_values(a, p, gate).unwrap();
    assert!(plain.iter().zip(&oracle).all(|(x, y)| x.to_bits() == y.to_bits()));
}

pub fn check_grl_exact() {
    let x = Mat::from_fn(3, 4, |r, c| (r as f32 - 1.0) * 0.5 + c as f32);
    assert_eq!(grl_forward(&x).data(), x.data());
    let g = grl_backward(&x, 1.0);
    assert!(g.data().iter().zip(x.data()).all(|(a, b)| *a == -*b));

    let tape = Tape::<f32>::new();
    let v = tape.leaf(x.clone());
    let w = tape.constant(Mat::from_fn(3, 4, |r, c| (r * 4 + c) as f32 * 0.1 - 0.3));
    let y = grl(v, 1.0);
    assert_eq!(y.value().data(), x.data());
    let grads = tape.backward((y * w).sum());
    assert!(grads.wrt(v).unwrap().data().iter().zip(w.value().data()).all(|(a, b)| *a == -*b));
}

/// With zeroed classifier weights every head predicts uniformly, so each
/// cross-entropy is `ln K`; the total is exactly the sum of the four terms.
pub fn check_frontend_additivity() {
    let cfg = small_cfg();
    let (mut store, enc) = encoder::<f32>(&cfg, 4);
    for head in [&enc.text_style_head, &enc.audio_style_head, &enc.spk_head, &enc.style_grl_head] {
        let m = store.get_mut(head.w);
        *m = Mat::zeros(m.rows(), m.cols());
    }
    let style_ref = clip(12, 32, 0.0);
    let spk_ref = clip(9, 32, 1.0);
    let item = FrontendItem {
        prompt: "sound gloomy and slow",
        style_ref: &style_ref,
        speaker_ref: &spk_ref,
        style_label: 1,
        speaker_label: 3,
        gate: 1.0,
    };
    let tape = Tape::new();
    let (terms, controls) = enc.frontend_losses(Ctx::new(&tape, &store), &[item, item]).unwrap();
    let r = terms.report();
    let ln4 = 4f64.ln();
    for v in [r.text_style, r.audio_style, r.style_grl] {
        assert!((v - ln4).abs() < 1e-6, "{v}");
    }
    assert!((r.spk - 6f64.ln()).abs() < 1e-6);
    assert_eq!(r.total_gsfenc, r.text_style + r.audio_style + r.spk + r.style_grl);
    let parts = terms.text_style.scalar() + terms.audio_style.scalar() + terms.spk.scalar() + terms.style_grl.scalar();
    assert_eq!(terms.total.scalar(), parts);
    assert_eq!(controls.len(), 2);
}
