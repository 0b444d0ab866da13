//! Objective metrics on the held-out split: MCD, speaker similarity and
//! style accuracy by an independent probe. Optional argument: checkpoint.

use stylefusion::eval::{evaluate_synthesis, format_table, probe_items, train_style_probe};

mod support;

fn main() {
    let (cfg, model, store, data) = support::model_and_data();
    let probe = train_style_probe(&data.train, cfg.styles).unwrap();
    println!("style probe on real held-out recordings: {:.1} %", probe.accuracy(&probe_items(&data.held)).unwrap());
    let report = evaluate_synthesis(&model, &store, &data.held, &probe, cfg.seed).unwrap();
    let rows: Vec<Vec<String>> = report
        .breakdown
        .iter()
        .take(8)
        .map(|m| {
            vec![
                m.id.clone(),
                format!("{:.3}", m.mcd),
                format!("{:.4}", m.secs),
                m.intended_style.to_string(),
                m.predicted_style.to_string(),
            ]
        })
        .collect();
    print!("{}", format_table(&["utterance", "MCD", "SECS", "intended", "predicted"], &rows));
    println!("mean over {}: MCD {:.3}  SECS {:.4}  EMO-Acc {:.1} %", report.breakdown.len(), report.mcd, report.secs, report.emo_acc);
}
