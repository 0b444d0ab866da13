//! Trains one model per fusion variant under the same seed and budget and
//! compares them. Argument: step count (default 100).

use stylefusion::eval::{ablate_fusion, format_table};
use stylefusion::{FusionVariant, RunConfig};

mod support;

fn main() {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().expect("step count")).unwrap_or(100);
    let cfg = RunConfig::desk();
    let data = support::desk_data(&cfg);
    let rows = ablate_fusion(&cfg, &FusionVariant::ALL, &data.train, &data.held, steps).unwrap();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.fusion.name().into(),
                format!("{:.3}", r.mcd),
                format!("{:.4}", r.secs),
                format!("{:.1}", r.emo_acc),
                format!("{:.3}", r.reference_secs),
            ]
        })
        .collect();
    print!("{}", format_table(&["fusion", "MCD", "SECS", "EMO-Acc", "reference SECS"], &table));
}
