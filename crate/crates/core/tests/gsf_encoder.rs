mod common;

use common::gsf::*;
use proptest::prelude::*;
use stylefusion::corpus::{generate_corpus, CorpusParams};
use stylefusion::gsf_encoder::{combine_style, grl, GsfEncoder};
use stylefusion::nn::{cross_entropy, Ctx};
use stylefusion::spectrogram::repeat_frames;
use stylefusion::RunConfig;
use stylefusion_autodiff::check::{central_difference, relative_error};
use stylefusion_autodiff::{Mat, ParamStore, Tape};

proptest! {
    #[test]
    fn combination_matches_scalar_loop(
        a in prop::collection::vec(-10.0f32..10.0, 16),
        p in prop::collection::vec(-10.0f32..10.0, 16),
        gate in 0u8..2,
    ) {
        check_combination(&a, &p, gate as f32);
    }
}

#[test]
fn gate_extremes() {
    let tape = Tape::<f32>::new();
    let a = tape.constant(Mat::row_vector(vec![0.25, -3.0, 7.5]));
    let p = tape.constant(Mat::row_vector(vec![1.0, 2.0, -0.5]));
    assert_eq!(combine_style(a, p, 0.0).unwrap().value().data(), &[1.0, 2.0, -0.5]);
    assert_eq!(combine_style(a, p, 1.0).unwrap().value().data(), &[1.25, -1.0, 7.0]);
}

#[test]
fn grl_is_identity_forward_and_negation_backward() {
    check_grl_exact();
}

/// Reverse-mode gradients of `CE(head(GRL(enc(x))))` in single precision
/// against `-lambda` times double-precision central differences of
/// `CE(head(enc(x)))`.
#[test]
fn grl_reverses_encoder_gradients() {
    let cfg = RunConfig { grl_lambda: 0.7, ..small_cfg() };
    let (store64, enc) = encoder::<f64>(&cfg, 3);
    let store: ParamStore<f32> = store64.cast();
    let oracle: ParamStore<f64> = store.cast();
    let spec = clip(10, 32, 0.3);

    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let e = enc.encode_speaker(ctx, &spec).unwrap();
    let loss = cross_entropy(enc.style_grl_head.forward(ctx, grl(e, 0.7)), 2);
    let grads = tape.backward(loss);

    let plain = |s: &ParamStore<f64>| {
        let t = Tape::new();
        let c = Ctx::new(&t, s);
        let e = enc.encode_speaker(c, &spec).unwrap();
        cross_entropy(enc.style_grl_head.forward(c, e), 2).scalar()
    };
    let params = [enc.speaker.out.w, enc.speaker.l2.w, enc.speaker.l1.b.unwrap()];
    for id in params {
        let value = oracle.get(id).clone();
        let analytic = grads.param(id).unwrap();
        let mut work = value.data().to_vec();
        for i in (0..value.len()).step_by(value.len() / 7 + 1) {
            let n = central_difference(&mut work, i, 1e-4, |x| {
                let mut s = oracle.clone();
                *s.get_mut(id) = Mat::from_vec(value.rows(), value.cols(), x.to_vec()).unwrap();
                plain(&s)
            });
            let e = relative_error(analytic.data()[i] as f64, -0.7 * n, 1e-4);
            assert!(e < 1e-3, "{}[{i}]: {} vs {}", store.name(id), analytic.data()[i], -0.7 * n);
        }
    }
    // Head parameters sit before the reversal and keep their sign.
    let head_grad = grads.param(enc.style_grl_head.w).unwrap();
    let t = Tape::new();
    let c = Ctx::new(&t, &store);
    let e = enc.encode_speaker(c, &spec).unwrap();
    let unreversed = t.backward(cross_entropy(enc.style_grl_head.forward(c, e), 2));
    assert_eq!(head_grad.data(), unreversed.param(enc.style_grl_head.w).unwrap().data());
}

#[test]
fn uniform_heads_give_log_k_and_losses_add_exactly() {
    check_frontend_additivity();
}

#[test]
fn pooling_ignores_frame_duplication() {
    let cfg = small_cfg();
    let (store, enc) = encoder::<f64>(&cfg, 5);
    let spec = clip(11, 32, 0.7);
    let doubled = repeat_frames(&spec, 2);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    for (a, b) in [
        (enc.encode_style_audio(ctx, &spec).unwrap(), enc.encode_style_audio(ctx, &doubled).unwrap()),
        (enc.encode_speaker(ctx, &spec).unwrap(), enc.encode_speaker(ctx, &doubled).unwrap()),
    ] {
        for (x, y) in a.value().data().iter().zip(b.value().data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

fn head_loss(store: &ParamStore<f32>, enc: &GsfEncoder, embs: &[Mat<f32>], labels: &[usize]) -> f64 {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store);
    embs.iter()
        .zip(labels)
        .map(|(e, &l)| cross_entropy(enc.style_grl_head.forward(ctx, tape.constant(e.clone())), l).value().get(0, 0) as f64)
        .sum::<f64>()
        / labels.len() as f64
}

/// Fits the adversarial style head on fixed speaker embeddings, then takes
/// one small reversed-gradient step on the speaker encoder alone. The head's
/// cross-entropy on the re-embedded batch rises.
#[test]
fn one_reversed_step_raises_adversary_loss() {
    let cfg = RunConfig { speakers: 2, ..RunConfig::desk() };
    let corpus = generate_corpus(&CorpusParams::new(2, 4, 2, 9));
    let (mut store, enc) = encoder::<f32>(&cfg, 6);
    let labels: Vec<usize> = corpus.utterances.iter().map(|u| u.style_id as usize).collect();
    let embed = |store: &ParamStore<f32>| -> Vec<Mat<f32>> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store);
        corpus.utterances.iter().map(|u| enc.encode_speaker(ctx, &u.spectrogram).unwrap().value()).collect()
    };

    let embs = embed(&store);
    let untrained = head_loss(&store, &enc, &embs, &labels);
    let head = [enc.style_grl_head.w, enc.style_grl_head.b.unwrap()];
    for _ in 0..400 {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let mut loss = None;
        for (e, &l) in embs.iter().zip(&labels) {
            let ce = cross_entropy(enc.style_grl_head.forward(ctx, tape.constant(e.clone())), l);
            loss = Some(match loss {
                Some(acc) => acc + ce,
                None => ce,
            });
        }
        let grads = tape.backward(loss.unwrap());
        for id in head {
            let g = grads.param(id).unwrap().clone();
            store.get_mut(id).axpy(-0.05, &g);
        }
    }
    let before = head_loss(&store, &enc, &embs, &labels);
    assert!(before < untrained, "head did not fit: {untrained} -> {before}");

    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let mut loss = None;
    for (u, &l) in corpus.utterances.iter().zip(&labels) {
        let e = enc.encode_speaker(ctx, &u.spectrogram).unwrap();
        let ce = cross_entropy(enc.style_grl_head.forward(ctx, grl(e, 1.0)), l);
        loss = Some(match loss {
            Some(acc) => acc + ce,
            None => ce,
        });
    }
    let grads = tape.backward(loss.unwrap());
    let encoder_ids: Vec<_> = store.ids().filter(|id| store.name(*id).starts_with("gsf_encoder/speaker/")).collect();
    let norm: f32 =
        encoder_ids.iter().filter_map(|id| grads.param(*id)).map(|g| g.data().iter().map(|x| x * x).sum::<f32>()).sum::<f32>().sqrt();
    for id in encoder_ids {
        if let Some(g) = grads.param(id) {
            let g = g.clone();
            store.get_mut(id).axpy(-0.05 / norm, &g);
        }
    }
    let after = head_loss(&store, &enc, &embed(&store), &labels);
    assert!(after > before, "adversary loss {before} -> {after}");
}
