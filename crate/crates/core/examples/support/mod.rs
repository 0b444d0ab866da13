//! Setup shared by the examples.
//!
//! Examples that need a trained model take an optional checkpoint path as
//! their first argument. Without one they train the desk configuration for
//! `STYLEFUSION_EXAMPLE_STEPS` steps (default 300), which takes well under a
//! minute and is enough to see the pipeline move, not to score well.
#![allow(dead_code)]

use std::path::Path;

use stylefusion::checkpoint::Checkpoint;
use stylefusion::corpus::{generate_corpus, Corpus, CorpusParams};
use stylefusion::model::StyleFusionModel;
use stylefusion::train::{Dataset, Trainer};
use stylefusion::RunConfig;
use stylefusion_autodiff::ParamStore;

pub struct Data {
    pub corpus: Corpus,
    pub train: Dataset,
    pub held: Dataset,
}

/// The 6-speaker, 4-style, 10-utterance corpus with its held-out split.
pub fn desk_data(cfg: &RunConfig) -> Data {
    let corpus = generate_corpus(&CorpusParams::new(cfg.speakers, cfg.styles, cfg.utterances_per_cell, cfg.seed));
    let all = Dataset::new(corpus.utterances.clone(), &corpus.manifest.registry).expect("corpus is consistent");
    let (tr, ho) = corpus.split(cfg.heldout_per_cell);
    Data { train: all.subset(&tr), held: all.subset(&ho), corpus }
}

pub fn example_steps() -> usize {
    std::env::var("STYLEFUSION_EXAMPLE_STEPS").ok().and_then(|v| v.parse().ok()).unwrap_or(300)
}

pub fn train(cfg: &RunConfig, data: &Data, steps: usize) -> Trainer {
    let mut trainer = Trainer::new(cfg).expect("valid config");
    trainer
        .train(&data.train, steps, |r| {
            if r.step % 100 == 0 || r.step == steps {
                println!("step {:>5}  total {:>9.4}  recon {:.4}  kl {:.4}", r.step, r.losses.total, r.losses.recon, r.losses.kl);
            }
        })
        .expect("training runs");
    trainer
}

/// Loads the checkpoint named by the first argument, or trains briefly.
pub fn model_and_data() -> (RunConfig, StyleFusionModel, ParamStore<f32>, Data) {
    if let Some(path) = std::env::args().nth(1) {
        let ck = Checkpoint::load(Path::new(&path)).expect("readable checkpoint");
        let cfg = ck.meta.config.clone();
        let model = ck.model().expect("checkpoint matches its config");
        println!("loaded {path} (config {}, step {})", ck.meta.config_hash, ck.meta.step);
        let data = desk_data(&cfg);
        return (cfg, model, ck.store, data);
    }
    let cfg = RunConfig::desk();
    let data = desk_data(&cfg);
    let steps = example_steps();
    println!("no checkpoint given, training {steps} steps");
    let t = train(&cfg, &data, steps);
    (cfg, t.model, t.store, data)
}
