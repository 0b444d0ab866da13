use stylefusion::checkpoint::Checkpoint;
use stylefusion::corpus::{generate_corpus, CorpusParams};
use stylefusion::model::SynthRequest;
use stylefusion::train::{Dataset, Trainer};
use stylefusion::RunConfig;

fn trained() -> (RunConfig, Trainer) {
    let cfg = RunConfig {
        d_model: 16,
        d_style: 8,
        d_spk: 8,
        latent_channels: 4,
        text_layers: 1,
        flow_layers: 2,
        enc_hidden: 16,
        dur_hidden: 8,
        batch_size: 2,
        ..RunConfig::desk()
    };
    let corpus = generate_corpus(&CorpusParams::new(2, 4, 2, 1));
    let data = Dataset::new(corpus.utterances, &corpus.manifest.registry).unwrap();
    let mut tr = Trainer::new(&cfg).unwrap();
    tr.train(&data, 3, |_| {}).unwrap();
    (cfg, tr)
}

#[test]
fn roundtrip_is_bit_exact() {
    let (cfg, tr) = trained();
    let ck = Checkpoint::new(&cfg, tr.store.clone(), Some(tr.adam.clone()), tr.step);
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.meta, ck.meta);
    assert_eq!(back.meta.config_hash, cfg.hash());
    assert_eq!(back.meta.seed, cfg.seed);
    assert_eq!(back.meta.step, 3);
    for ((na, a), (nb, b)) in tr.store.iter().zip(back.store.iter()) {
        assert_eq!(na, nb);
        assert_eq!(a.shape(), b.shape());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{na}");
    }
    let adam = back.adam.as_ref().unwrap();
    assert_eq!(adam.step, tr.adam.step);
    for (a, b) in tr.adam.m.iter().chain(&tr.adam.v).zip(adam.m.iter().chain(&adam.v)) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(back.to_bytes().unwrap(), bytes);
}

#[test]
fn restored_model_synthesizes_identically() {
    let (cfg, tr) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/model.ckpt");
    Checkpoint::new(&cfg, tr.store.clone(), None, tr.step).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert!(back.adam.is_none());
    let model = back.model().unwrap();
    let reference = stylefusion_autodiff::Mat::from_fn(20, cfg.n_bins(), |r, c| 1.0 + ((r + 2 * c) as f32 * 0.1).sin());
    let req = SynthRequest {
        text: "good day",
        speaker_ref: &reference,
        prompt: Some("an angry voice"),
        style_ref: None,
        seed: 8,
        temperature: 0.667,
        gate: None,
    };
    assert_eq!(model.synthesize(&back.store, &req).unwrap(), tr.model.synthesize(&tr.store, &req).unwrap());
}

#[test]
fn sections_follow_the_model_layout() {
    let (cfg, tr) = trained();
    let ck = Checkpoint::new(&cfg, tr.store.clone(), Some(tr.adam.clone()), tr.step);
    let sections = ck.sections();
    for s in [
        "gsf_encoder",
        "fusion/text0",
        "fusion/flow1",
        "fusion/dur",
        "text_encoder",
        "duration_flow",
        "acoustic_flow",
        "posterior",
        "decoder",
        "optimizer",
    ] {
        assert!(sections.iter().any(|x| x == s), "missing section {s}: {sections:?}");
    }
}

#[test]
fn truncated_or_mismatched_checkpoints_are_rejected() {
    let (cfg, tr) = trained();
    let mut ck = Checkpoint::new(&cfg, tr.store, None, tr.step);
    let bytes = ck.to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
    ck.meta.config.latent_channels = 6;
    assert!(ck.model().is_err());
}
