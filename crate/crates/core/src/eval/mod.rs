//! Objective evaluation: cepstral distortion, speaker similarity, style
//! accuracy through an independent probe, embedding exports, the fusion
//! ablation and the prompt/audio consistency study.

pub mod embed;
pub mod experiments;
pub mod mcd;
pub mod metrics;
pub mod probe;
pub mod report;

pub use embed::{export_embeddings, parse_sites, site_features, EmbeddingDump, EmbeddingRow, Site};
pub use experiments::{
    ablate_fusion, consistency_gap, disentanglement, evaluate_synthesis, modality_consistency, probe_items, reference_secs,
    train_style_probe, AblationRow, CaseResult, ConsistencyCase, Disentanglement,
};
pub use mcd::{cepstrum, dtw_path, mcd, MCD_SCALE, N_CEPS};
pub use metrics::{cosine, emo_acc, secs, speaker_embedding, style_features, MetricReport, StyleProbe, UtteranceMetric};
pub use probe::{nearest_centroid_accuracy, percent_correct, LinearProbe, ProbeOptions};
pub use report::{format_table, to_jsonl, write_text};
