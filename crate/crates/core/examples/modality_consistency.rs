//! Style accuracy when the prompt and the style reference agree, when one
//! of them is neutral, and when they contradict. Optional argument:
//! checkpoint.

use stylefusion::corpus::Valence;
use stylefusion::eval::{consistency_gap, modality_consistency, train_style_probe};

mod support;

fn main() {
    let (cfg, model, store, data) = support::model_and_data();
    let probe = train_style_probe(&data.train, cfg.styles).unwrap();
    let valences: Vec<Valence> = data.corpus.styles().iter().map(|s| s.valence).collect();
    let names: Vec<String> = data.corpus.styles().iter().map(|s| s.style_name.clone()).collect();
    let cases = modality_consistency(&model, &store, &data.held, &valences, &names, &probe, 20, cfg.seed).unwrap();
    for c in &cases {
        println!("{:<52} {:>5.1} %", c.label, c.emo_acc);
    }
    println!("consistent minus contradictory: {:.1} points", consistency_gap(&cases));
}
