use stylefusion::backbone::{best_path, gaussian_kl, gaussian_kl_var, AcousticFlow, Alignment, DurationFlow};
use stylefusion::corpus::{generate_corpus, CorpusParams};
use stylefusion::model::{normal_mat, StyleFusionModel, SynthRequest, TrainItem, UtteranceNoise};
use stylefusion::nn::{seeded_rng, Builder, Ctx};
use stylefusion::train::{Dataset, Trainer};
use stylefusion::{FusionVariant, RunConfig};
use stylefusion_autodiff::check::{central_difference, relative_error};
use stylefusion_autodiff::{Mat, ParamStore, Scalar, Tape};

pub fn tiny_cfg() -> RunConfig {
    RunConfig {
        d_model: 16,
        d_style: 8,
        d_spk: 8,
        latent_channels: 4,
        text_layers: 1,
        flow_layers: 2,
        enc_hidden: 16,
        dur_hidden: 8,
        n_fft: 62,
        hop: 16,
        n_mels: 8,
        ..RunConfig::desk()
    }
}

pub fn wave<T: Scalar>(rows: usize, cols: usize, phase: f64) -> Mat<T> {
    Mat::from_fn(rows, cols, |r, c| T::lit(((r * 7 + c * 3) as f64 * 0.37 + phase).sin()))
}

pub fn clip(frames: usize, bins: usize, phase: f32) -> Mat<f32> {
    Mat::from_fn(frames, bins, |r, c| 1.0 + ((r * 13 + c * 5) as f32 * 0.17 + phase).sin())
}

/// Acoustic flow with its zero-initialized output layers replaced by small
/// random weights, so that every coupling actually transforms.
pub fn flow<T: Scalar>(channels: usize, layers: usize, variant: FusionVariant, seed: u64) -> (ParamStore<T>, AcousticFlow) {
    let cfg = tiny_cfg();
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(seed);
    let f =
        AcousticFlow::new(&mut Builder::new(&mut store, &mut rng), channels, layers, variant, StyleFusionModel::fusion_dims(&cfg)).unwrap();
    for l in &f.layers {
        for id in [l.post.w, l.post.b.unwrap()] {
            let (r, c) = store.get(id).shape();
            *store.get_mut(id) = normal_mat(&mut rng, r, c, 0.2);
        }
    }
    (store, f)
}

pub fn max_rel(a: &Mat<impl Scalar>, b: &Mat<impl Scalar>) -> f64 {
    let scale = b.data().iter().map(|x| x.as_f64().abs()).fold(0.0, f64::max);
    a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max) / scale
}

pub fn acoustic_roundtrip<T: Scalar>() -> f64 {
    let mut worst: f64 = 0.0;
    for (i, v) in FusionVariant::ALL.into_iter().enumerate() {
        let (store, f) = flow::<T>(8, 4, v, 3 + i as u64);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let z = wave::<T>(7, 8, 0.3 * i as f64);
        let (style, spk) = (ctx.constant(wave(1, 8, 1.1)), ctx.constant(wave(1, 8, -0.4)));
        let (fz, _) = f.forward(ctx, ctx.constant(z.clone()), style, spk).unwrap();
        assert!(max_rel(&fz.value(), &z) > 1e-2, "{v}: flow is close to identity");
        let back = f.inverse(ctx, fz, style, spk).unwrap().value();
        worst = worst.max(max_rel(&back, &z));
    }
    worst
}

pub fn duration_flow<T: Scalar>(seed: u64) -> (ParamStore<T>, DurationFlow) {
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(seed);
    let f = DurationFlow::new(&mut Builder::new(&mut store, &mut rng), 6, 8, 3).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (r, c) = store.get(id).shape();
        *store.get_mut(id) = normal_mat(&mut rng, r, c, 0.3);
    }
    (store, f)
}

pub fn duration_roundtrip<T: Scalar>() -> f64 {
    let (store, f) = duration_flow::<T>(4);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let x = wave::<T>(5, 2, 0.8);
    let g = ctx.constant(wave(5, 6, -0.2));
    let (e, _) = f.forward(ctx, ctx.constant(x.clone()), g);
    assert!(max_rel(&e.value(), &x) > 1e-2);
    max_rel(&f.inverse(ctx, e, g).value(), &x)
}

pub fn check_pass_through() {
    for v in FusionVariant::ALL {
        let (store, f) = flow::<f32>(8, 2, v, 9);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let x = wave::<f32>(6, 8, 0.5);
        let out = f.layers[0].forward(ctx, ctx.constant(x.clone()), ctx.constant(wave(1, 8, 0.2)), ctx.constant(wave(1, 8, 0.7))).unwrap();
        let y = out.unpermuted.value();
        for r in 0..6 {
            for c in 0..4 {
                assert_eq!(y.get(r, c).to_bits(), x.get(r, c).to_bits());
            }
        }
        assert_ne!(y.row(0)[4..], x.row(0)[4..]);
    }
}

/// `ln |det A|` by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        let pivot = a[k][k];
        acc += pivot.abs().ln();
        for i in k + 1..n {
            let f = a[i][k] / pivot;
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    acc
}

pub fn check_acoustic_logdet() {
    for (channels, v) in [(4, FusionVariant::Hctscm), (6, FusionVariant::Tscm), (2, FusionVariant::Concat)] {
        let (store, f) = flow::<f64>(channels, 3, v, 17);
        let frames = 3;
        let style = wave::<f64>(1, 8, 0.4);
        let spk = wave::<f64>(1, 8, -0.9);
        let run = |x: &[f64]| -> (Vec<f64>, f64) {
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &store);
            let z = ctx.constant(Mat::from_vec(frames, channels, x.to_vec()).unwrap());
            let (fz, logdet) = f.forward(ctx, z, ctx.constant(style.clone()), ctx.constant(spk.clone())).unwrap();
            (fz.value().into_vec(), logdet.scalar())
        };
        let z0 = wave::<f64>(frames, channels, 0.6).into_vec();
        let (_, logdet) = run(&z0);
        let n = z0.len();
        let h = 1e-5;
        let mut jac = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut p = z0.clone();
            p[j] += h;
            let mut m = z0.clone();
            m[j] -= h;
            let (fp, fm) = (run(&p).0, run(&m).0);
            for i in 0..n {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let numeric = log_abs_det(jac);
        assert!(logdet.abs() > 1e-2, "{v}: logdet {logdet} too small to test");
        assert!((numeric - logdet).abs() < 1e-3, "{v} C={channels}: logdet {logdet} vs numeric {numeric}");
    }
}

pub fn check_duration_logdet() {
    let (store, f) = duration_flow::<f64>(8);
    let tokens = 3;
    let g = wave::<f64>(tokens, 6, 0.3);
    let run = |x: &[f64]| -> (Vec<f64>, f64) {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let (e, logdet) = f.forward(ctx, ctx.constant(Mat::from_vec(tokens, 2, x.to_vec()).unwrap()), ctx.constant(g.clone()));
        (e.value().into_vec(), logdet.scalar())
    };
    let x0 = wave::<f64>(tokens, 2, -0.7).into_vec();
    let n = x0.len();
    let h = 1e-5;
    let mut jac = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut p = x0.clone();
        p[j] += h;
        let mut m = x0.clone();
        m[j] -= h;
        let (fp, fm) = (run(&p).0, run(&m).0);
        for i in 0..n {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let (_, logdet) = run(&x0);
    assert!((log_abs_det(jac) - logdet).abs() < 1e-3);
}

/// Every way to split `frames` into `tokens` positive durations.
pub fn compositions(frames: usize, tokens: usize) -> Vec<Vec<usize>> {
    if tokens == 1 {
        return vec![vec![frames]];
    }
    (1..=frames + 1 - tokens)
        .flat_map(|first| {
            compositions(frames - first, tokens - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

pub fn path_score(ll: &Mat<f64>, path: &[usize]) -> f64 {
    path.iter().enumerate().map(|(f, &i)| ll.get(i, f)).sum()
}

/// Maximum-likelihood monotonic alignment against exhaustive enumeration of
/// all duration compositions. `ll` is tokens x frames.
pub fn check_alignment(ll: &Mat<f64>) {
    let (tokens, frames) = ll.shape();
    let got = best_path(ll).unwrap();
    let best = compositions(frames, tokens)
        .into_iter()
        .map(Alignment::from_durations)
        .max_by(|a, b| path_score(ll, &a.path).total_cmp(&path_score(ll, &b.path)))
        .unwrap();
    assert_eq!(got.durations.iter().sum::<usize>(), frames);
    assert!(got.durations.iter().all(|&d| d >= 1));
    assert!((path_score(ll, &got.path) - path_score(ll, &best.path)).abs() < 1e-12);
    assert_eq!(got, best);
}

pub fn check_kl_hand_values() {
    assert_eq!(gaussian_kl(&[0.3, -1.0], &[0.2, -0.5], &[0.3, -1.0], &[0.2, -0.5]), 0.0);
    let half_per_dim = gaussian_kl(&[1.0, -1.0, 1.0], &[0.0; 3], &[0.0; 3], &[0.0; 3]);
    assert!((half_per_dim - 1.5).abs() < 1e-15);

    let tape = Tape::<f64>::new();
    let c = |v: Vec<f64>| tape.constant(Mat::row_vector(v));
    let same = gaussian_kl_var(c(vec![0.4, 2.0]), c(vec![-0.3, 0.1]), c(vec![0.4, 2.0]), c(vec![-0.3, 0.1]));
    assert!(same.scalar().abs() < 1e-15);
    let shifted = gaussian_kl_var(c(vec![1.0, 0.0]), c(vec![0.0, 0.0]), c(vec![0.0, 1.0]), c(vec![0.0, 0.0]));
    assert!((shifted.scalar() - 1.0).abs() < 1e-15);
}

/// The full training loss of one utterance, differentiated in single
/// precision and checked against double-precision central differences on 20
/// randomly chosen parameter entries. The alignment is held fixed so that
/// the loss is a smooth function of the parameters.
///
/// Below the gradient reversal layer the backward pass follows the
/// adversarial objective, not the total loss: the adversary's term reaches
/// the speaker encoder scaled by `-lambda`. The oracle for those parameters
/// is therefore the derivative of `total - (1 + lambda) * w * style_grl`,
/// where `w` is the front-end weight.
pub fn check_end_to_end_gradients() {
    let cfg = tiny_cfg();
    let (model, store) = StyleFusionModel::build::<f32>(&cfg).unwrap();
    let bins = cfg.n_bins();
    let target = clip(14, bins, 0.2);
    let speaker_ref = clip(11, bins, 2.0);
    let item =
        TrainItem { text: "a cat", prompt: "a happy voice", target: &target, speaker_ref: &speaker_ref, style_label: 1, speaker_label: 2 };
    let mut rng = seeded_rng(12);
    let noise = UtteranceNoise::<f32>::draw(&mut rng, 14, 5, cfg.latent_channels, 1.0);
    assert_eq!(noise.gate, 1.0);

    let tape = Tape::new();
    let terms = model.utterance_terms(Ctx::new(&tape, &store), &item, &noise, None).unwrap();
    let alignment = terms.alignment.clone();
    let grads = tape.backward(terms.total);

    let oracle: ParamStore<f64> = store.cast();
    let noise64 = noise.cast::<f64>();
    let reversal = (1.0 + cfg.grl_lambda) * cfg.frontend_weight;
    let objective = |s: &ParamStore<f64>, below_grl: bool| -> f64 {
        let tape = Tape::new();
        let r = model.utterance_terms(Ctx::new(&tape, s), &item, &noise64, Some(&alignment)).unwrap().report();
        if below_grl {
            r.total - reversal * r.style_grl
        } else {
            r.total
        }
    };

    let ids: Vec<_> = store.ids().collect();
    let speaker_ids: Vec<_> = ids.iter().copied().filter(|&id| store.name(id).starts_with("gsf_encoder/speaker/")).collect();
    assert!(!speaker_ids.is_empty());
    let mut pick = seeded_rng(99);
    for n in 0..20 {
        // Every fourth entry comes from the speaker encoder so the reversal
        // path is always exercised.
        let pool = if n % 4 == 0 { &speaker_ids } else { &ids };
        let id = pool[rand::Rng::random_range(&mut pick, 0..pool.len())];
        let below_grl = store.name(id).starts_with("gsf_encoder/speaker/");
        let value = oracle.get(id).clone();
        let i = rand::Rng::random_range(&mut pick, 0..value.len());
        let analytic = grads.param(id).map(|g| g.data()[i] as f64).unwrap_or(0.0);
        let mut work = value.data().to_vec();
        let numeric = central_difference(&mut work, i, 1e-3, |x| {
            let mut s = oracle.clone();
            *s.get_mut(id) = Mat::from_vec(value.rows(), value.cols(), x.to_vec()).unwrap();
            objective(&s, below_grl)
        });
        let e = relative_error(analytic, numeric, 1e-2);
        assert!(e < 1e-2, "{}[{i}]: analytic {analytic} numeric {numeric} rel {e}", store.name(id));
    }
}

/// Training on a single utterance drives its reconstruction loss below a
/// fifth of the initial value within 500 steps.
pub fn single_utterance_overfit() -> (f64, f64) {
    let corpus = generate_corpus(&CorpusParams::new(1, 1, 1, 3));
    let cfg = RunConfig { speakers: 1, styles: 1, batch_size: 1, ..RunConfig::desk() };
    let data = Dataset::new(corpus.utterances.clone(), &corpus.manifest.registry).unwrap();
    let mut tr = Trainer::new(&cfg).unwrap();
    let initial = tr.evaluate(&data, &[0], 1).unwrap().recon;
    tr.train(&data, 500, |_| {}).unwrap();
    let last = tr.evaluate(&data, &[0], 1).unwrap().recon;
    (initial, last)
}

pub fn check_synthesis_determinism() {
    let cfg = tiny_cfg();
    let (model, store) = StyleFusionModel::build::<f32>(&cfg).unwrap();
    let speaker_ref = clip(12, cfg.n_bins(), 0.7);
    let style_ref = clip(9, cfg.n_bins(), -0.4);
    let req = SynthRequest {
        text: "hello there",
        speaker_ref: &speaker_ref,
        prompt: Some("a sad voice"),
        style_ref: Some(&style_ref),
        seed: 4,
        temperature: 0.667,
        gate: None,
    };
    let a = model.synthesize(&store, &req).unwrap();
    let b = model.synthesize(&store, &req).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.durations.len(), "hello there".chars().count());
    assert_eq!(a.spectrogram.rows(), a.durations.iter().sum::<usize>());
    assert_eq!(a.spectrogram.cols(), cfg.n_bins());
    let c = model.synthesize(&store, &SynthRequest { seed: 5, ..req }).unwrap();
    assert_ne!(a.spectrogram, c.spectrogram);
    assert!(model.synthesize(&store, &SynthRequest { temperature: f64::NAN, ..req }).is_err());
}
