//! Utterance-level feature dumps from the fusion block of the last acoustic
//! flow layer.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use stylefusion_autodiff::{Mat, ParamStore, Scalar, Tape};

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::model::StyleFusionModel;
use crate::nn::Ctx;

/// Where inside the fusion block features are captured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    /// Block input.
    Input,
    /// After the speaker-conditioned FFN1 and attention.
    PostSpeaker,
    /// Block output, after the style-conditioned FFN2 and LN.
    PostStyle,
}

impl Site {
    pub const ALL: [Site; 3] = [Site::Input, Site::PostSpeaker, Site::PostStyle];

    pub fn name(self) -> &'static str {
        match self {
            Site::Input => "input",
            Site::PostSpeaker => "post_speaker",
            Site::PostStyle => "post_style",
        }
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "input" => Ok(Site::Input),
            "post_speaker" => Ok(Site::PostSpeaker),
            "post_style" => Ok(Site::PostStyle),
            _ => Err(Error::UnknownSite(s.to_string())),
        }
    }
}

/// Comma-separated site list.
pub fn parse_sites(list: &str) -> Result<Vec<Site>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(Site::from_str).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub utterance_id: String,
    pub site: Site,
    pub vector: Vec<f64>,
    pub speaker_id: u32,
    pub style_id: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDump {
    pub rows: Vec<EmbeddingRow>,
}

fn frame_mean<T: Scalar>(m: &Mat<T>) -> Vec<f64> {
    m.mean_rows().data().iter().map(|x| x.as_f64()).collect()
}

/// Frame means at every site for one utterance. The utterance is its own
/// prompt, style and speaker reference, and the flow runs on the posterior
/// mean.
pub fn site_features<T: Scalar>(model: &StyleFusionModel, store: &ParamStore<T>, u: &Utterance) -> Result<[Vec<f64>; 3]> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store);
    let (style, speaker) = model.gsf.control(ctx, Some(&u.prompt), Some(&u.spectrogram), &u.spectrogram, None)?;
    let control = tape.concat_cols(&[style, speaker]);
    let (z, _) = model.posterior.stats(ctx, &u.spectrogram, control)?;
    let (_, _, traces) = model.flow.forward_traced(ctx, z, style, speaker)?;
    let last = traces.last().ok_or_else(|| Error::Config("acoustic flow has no layers".into()))?;
    Ok([frame_mean(&last.input.value()), frame_mean(&last.post_speaker.value()), frame_mean(&last.post_style.value())])
}

pub fn export_embeddings<T: Scalar>(
    model: &StyleFusionModel,
    store: &ParamStore<T>,
    utterances: &[Utterance],
    sites: &[Site],
) -> Result<EmbeddingDump> {
    let mut rows = Vec::with_capacity(utterances.len() * sites.len());
    for u in utterances {
        let feats = site_features(model, store, u)?;
        for &site in sites {
            let idx = Site::ALL.iter().position(|&s| s == site).expect("site listed in ALL");
            rows.push(EmbeddingRow {
                utterance_id: u.id.clone(),
                site,
                vector: feats[idx].clone(),
                speaker_id: u.speaker_id,
                style_id: u.style_id,
            });
        }
    }
    Ok(EmbeddingDump { rows })
}

impl EmbeddingDump {
    /// Vectors and (speaker, style) ids of one site, in row order.
    pub fn site(&self, site: Site) -> (Vec<Vec<f64>>, Vec<u32>, Vec<u32>) {
        let rows: Vec<&EmbeddingRow> = self.rows.iter().filter(|r| r.site == site).collect();
        (
            rows.iter().map(|r| r.vector.clone()).collect(),
            rows.iter().map(|r| r.speaker_id).collect(),
            rows.iter().map(|r| r.style_id).collect(),
        )
    }

    /// Header `utterance_id site speaker_id style_id v0 v1 ...`, one row per
    /// line, tab-separated. `header_comment` (e.g. config hash and seed) goes
    /// on a leading `#` line.
    pub fn to_tsv(&self, header_comment: &str) -> String {
        let dim = self.rows.iter().map(|r| r.vector.len()).max().unwrap_or(0);
        let mut out = String::new();
        if !header_comment.is_empty() {
            let _ = writeln!(out, "# {header_comment}");
        }
        out.push_str("utterance_id\tsite\tspeaker_id\tstyle_id");
        for i in 0..dim {
            let _ = write!(out, "\tv{i}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}\t{}\t{}\t{}", r.utterance_id, r.site.name(), r.speaker_id, r.style_id);
            for v in &r.vector {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_tsv(&self, path: &Path, header_comment: &str) -> Result<()> {
        std::fs::write(path, self.to_tsv(header_comment)).map_err(|e| Error::io(path, e))
    }
}
