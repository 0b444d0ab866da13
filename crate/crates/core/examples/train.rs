//! Trains the desk configuration on the synthetic corpus and saves a
//! checkpoint. Arguments: output path (default `desk.ckpt`), step count
//! (default 2000, about a minute and a half per thousand steps on one core).

use std::path::PathBuf;

use stylefusion::checkpoint::Checkpoint;
use stylefusion::RunConfig;

mod support;

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "desk.ckpt".into()));
    let steps: usize = std::env::args().nth(2).map(|s| s.parse().expect("step count")).unwrap_or(2000);
    let cfg = RunConfig { steps, ..RunConfig::desk() };
    let data = support::desk_data(&cfg);
    println!("{} training and {} held-out utterances, config {}", data.train.len(), data.held.len(), cfg.hash());
    let everything: Vec<usize> = (0..data.train.len()).collect();
    let trainer = support::train(&cfg, &data, steps);
    let last = trainer.evaluate(&data.train, &everything, 1).unwrap();
    println!("training-set losses after {steps} steps: {last:?}");
    Checkpoint::new(&cfg, trainer.store.clone(), Some(trainer.adam.clone()), trainer.step).save(&out).unwrap();
    println!("saved {}", out.display());
}
