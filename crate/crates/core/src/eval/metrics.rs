//! Speaker similarity, style accuracy and the per-utterance report.

use serde::{Deserialize, Serialize};
use stylefusion_autodiff::{ParamStore, Scalar, Tape};

use super::probe::{percent_correct, LinearProbe, ProbeOptions};
use crate::error::{Error, Result};
use crate::gsf_encoder::GsfEncoder;
use crate::nn::Ctx;
use crate::spectrogram::{mel_filterbank, Spectrogram};

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Speaker embedding of a spectrogram as `f64`.
pub fn speaker_embedding<T: Scalar>(encoder: &GsfEncoder, store: &ParamStore<T>, spec: &Spectrogram) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let e = encoder.encode_speaker(Ctx::new(&tape, store), spec)?;
    Ok(e.value().data().iter().map(|x| x.as_f64()).collect())
}

/// Cosine similarity of the speaker embeddings of two spectrograms.
pub fn secs<T: Scalar>(reference: &Spectrogram, hypothesis: &Spectrogram, encoder: &GsfEncoder, store: &ParamStore<T>) -> Result<f64> {
    Ok(cosine(&speaker_embedding(encoder, store, reference)?, &speaker_embedding(encoder, store, hypothesis)?))
}

/// Percentage of predictions equal to the intended style.
pub fn emo_acc(predicted: &[usize], intended: &[usize]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::Empty("synthesized set"));
    }
    if predicted.len() != intended.len() {
        return Err(Error::Dimension { sublayer: "style predictions".into(), expected: intended.len(), got: predicted.len() });
    }
    Ok(percent_correct(predicted, intended))
}

const BANDS: usize = 16;

/// Sample rate assumed when placing the mel bands of the style features.
pub const FEATURE_SAMPLE_RATE: u32 = 16_000;

/// Hand-crafted style features of a spectrogram: speaking rate (frames per
/// character), log energy per utterance quarter, frame-to-frame flux and
/// the mean profile of a 16-band log-mel spectrogram. Flux and profile are
/// taken on mel bands so that they describe band energies and do not hinge
/// on individual harmonic bins.
pub fn style_features(spec: &Spectrogram, n_chars: usize) -> Vec<f64> {
    let frames = spec.rows().max(1);
    let energy: Vec<f64> = (0..spec.rows()).map(|r| (spec.row(r).iter().map(|&x| x as f64).sum::<f64>() + 1e-6).ln()).collect();
    let mut f = vec![(frames as f64 / n_chars.max(1) as f64).ln()];
    for q in 0..4 {
        let lo = q * frames / 4;
        let hi = ((q + 1) * frames / 4).max(lo + 1).min(frames);
        let seg = &energy[lo.min(energy.len())..hi.min(energy.len())];
        f.push(if seg.is_empty() { 0.0 } else { seg.iter().sum::<f64>() / seg.len() as f64 });
    }
    let fb = mel_filterbank(spec.cols().max(2), FEATURE_SAMPLE_RATE, BANDS);
    let logs: Vec<Vec<f64>> = (0..spec.rows())
        .map(|r| {
            let row = spec.row(r);
            (0..BANDS).map(|m| (row.iter().enumerate().map(|(k, &x)| x as f64 * fb.get(k, m) as f64).sum::<f64>() + 1e-3).ln()).collect()
        })
        .collect();
    let flux = if logs.len() > 1 {
        logs.windows(2).map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).sum::<f64>() / BANDS as f64).sum::<f64>()
            / (logs.len() - 1) as f64
    } else {
        0.0
    };
    f.push(flux);
    for m in 0..BANDS {
        f.push(logs.iter().map(|row| row[m]).sum::<f64>() / logs.len().max(1) as f64);
    }
    f
}

/// Style classifier trained on ground-truth corpus audio only. It stands in
/// for an external emotion recognizer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StyleProbe {
    probe: Option<LinearProbe>,
}

impl StyleProbe {
    pub fn untrained() -> Self {
        Self { probe: None }
    }

    /// `items` are (spectrogram, character count, style label).
    pub fn train(items: &[(&Spectrogram, usize, usize)], classes: usize) -> Result<Self> {
        let x: Vec<Vec<f64>> = items.iter().map(|(s, n, _)| style_features(s, *n)).collect();
        let y: Vec<usize> = items.iter().map(|t| t.2).collect();
        let probe = LinearProbe::fit(&x, &y, classes, ProbeOptions { iterations: 800, ..ProbeOptions::default() })?;
        Ok(Self { probe: Some(probe) })
    }

    pub fn is_trained(&self) -> bool {
        self.probe.is_some()
    }

    pub fn predict(&self, spec: &Spectrogram, n_chars: usize) -> Result<usize> {
        self.probe.as_ref().ok_or(Error::UntrainedProbe)?.predict(&style_features(spec, n_chars))
    }

    pub fn accuracy(&self, items: &[(&Spectrogram, usize, usize)]) -> Result<f64> {
        let preds = items.iter().map(|(s, n, _)| self.predict(s, *n)).collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = items.iter().map(|t| t.2).collect();
        emo_acc(&preds, &labels)
    }
}

/// Scores of one synthesized utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMetric {
    pub id: String,
    pub mcd: f64,
    pub secs: f64,
    pub intended_style: usize,
    pub predicted_style: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mcd: f64,
    pub secs: f64,
    pub emo_acc: f64,
    pub breakdown: Vec<UtteranceMetric>,
}

impl MetricReport {
    /// Aggregates are means of the breakdown (accuracy as a percentage).
    pub fn from_breakdown(breakdown: Vec<UtteranceMetric>) -> Result<Self> {
        if breakdown.is_empty() {
            return Err(Error::Empty("metric breakdown"));
        }
        let n = breakdown.len() as f64;
        let mcd = breakdown.iter().map(|m| m.mcd).sum::<f64>() / n;
        let secs = breakdown.iter().map(|m| m.secs).sum::<f64>() / n;
        let preds: Vec<usize> = breakdown.iter().map(|m| m.predicted_style).collect();
        let intended: Vec<usize> = breakdown.iter().map(|m| m.intended_style).collect();
        Ok(Self { mcd, secs, emo_acc: emo_acc(&preds, &intended)?, breakdown })
    }
}
