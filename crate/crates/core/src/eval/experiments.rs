//! Experiments on trained models: synthesis metrics, disentanglement probes,
//! the modality-consistency study and the fusion ablation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stylefusion_autodiff::{ParamStore, Scalar, Tape};

use super::embed::site_features;
use super::mcd::mcd;
use super::metrics::{emo_acc, secs, MetricReport, StyleProbe, UtteranceMetric};
use super::probe::{nearest_centroid_accuracy, LinearProbe, ProbeOptions};
use crate::config::{FusionVariant, RunConfig};
use crate::corpus::{augment_prompt, derive_seed, PromptLexicon, PromptStrategy, Valence, PHRASES};
use crate::error::{Error, Result};
use crate::model::{StyleFusionModel, SynthRequest};
use crate::nn::Ctx;
use crate::train::{Dataset, Trainer};

/// Trains the ground-truth style probe on `data`.
pub fn train_style_probe(data: &Dataset, classes: usize) -> Result<StyleProbe> {
    let items: Vec<_> = data.utterances.iter().zip(&data.style_labels).map(|(u, &l)| (&u.spectrogram, u.text.chars().count(), l)).collect();
    StyleProbe::train(&items, classes)
}

pub fn probe_items(data: &Dataset) -> Vec<(&crate::spectrogram::Spectrogram, usize, usize)> {
    data.utterances.iter().zip(&data.style_labels).map(|(u, &l)| (&u.spectrogram, u.text.chars().count(), l)).collect()
}

/// Synthesizes every utterance of `data` from its text, its own prompt and
/// spectrogram as style references and another utterance of the same
/// speaker as speaker reference, then scores the result against the
/// recording.
pub fn evaluate_synthesis<T: Scalar>(
    model: &StyleFusionModel,
    store: &ParamStore<T>,
    data: &Dataset,
    probe: &StyleProbe,
    seed: u64,
) -> Result<MetricReport> {
    if !probe.is_trained() {
        return Err(Error::UntrainedProbe);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut breakdown = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let u = &data.utterances[i];
        let r = data.speaker_ref(i, &mut rng);
        let out = model.synthesize(
            store,
            &SynthRequest {
                text: &u.text,
                speaker_ref: &data.utterances[r].spectrogram,
                prompt: Some(&u.prompt),
                style_ref: Some(&u.spectrogram),
                seed: derive_seed(seed, i as u64),
                temperature: model.cfg.temperature,
                gate: None,
            },
        )?;
        breakdown.push(UtteranceMetric {
            id: u.id.clone(),
            mcd: mcd(&u.spectrogram, &out.spectrogram)?,
            secs: secs(&u.spectrogram, &out.spectrogram, &model.gsf, store)?,
            intended_style: data.style_labels[i],
            predicted_style: probe.predict(&out.spectrogram, u.text.chars().count())?,
        });
    }
    MetricReport::from_breakdown(breakdown)
}

/// Probe results on the learned embeddings. Accuracies are percentages on
/// held-out utterances of training speakers, probes fit on the training
/// split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disentanglement {
    pub style_on_style: f64,
    pub style_on_speaker: f64,
    pub style_chance: f64,
    pub speaker_centroid: f64,
    pub speaker_probe_input: f64,
    pub speaker_probe_post_speaker: f64,
    pub speaker_probe_post_style: f64,
}

struct Embedded {
    style: Vec<Vec<f64>>,
    speaker: Vec<Vec<f64>>,
    sites: [Vec<Vec<f64>>; 3],
}

fn embed_all<T: Scalar>(model: &StyleFusionModel, store: &ParamStore<T>, data: &Dataset) -> Result<Embedded> {
    let mut e = Embedded { style: Vec::new(), speaker: Vec::new(), sites: [Vec::new(), Vec::new(), Vec::new()] };
    for u in &data.utterances {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store);
        let (style, _) = model.gsf.control(ctx, Some(&u.prompt), Some(&u.spectrogram), &u.spectrogram, None)?;
        let speaker = model.gsf.encode_speaker(ctx, &u.spectrogram)?;
        e.style.push(style.value().data().iter().map(|x| x.as_f64()).collect());
        e.speaker.push(speaker.value().data().iter().map(|x| x.as_f64()).collect());
        let [a, b, c] = site_features(model, store, u)?;
        e.sites[0].push(a);
        e.sites[1].push(b);
        e.sites[2].push(c);
    }
    Ok(e)
}

pub fn disentanglement<T: Scalar>(
    model: &StyleFusionModel,
    store: &ParamStore<T>,
    train: &Dataset,
    heldout: &Dataset,
) -> Result<Disentanglement> {
    let n_styles = model.cfg.styles;
    let n_speakers = model.cfg.speakers;
    let tr = embed_all(model, store, train)?;
    let ho = embed_all(model, store, heldout)?;
    let probe = |x: &[Vec<f64>], y: &[usize], xt: &[Vec<f64>], yt: &[usize], k: usize| -> Result<f64> {
        LinearProbe::fit(x, y, k, ProbeOptions::default())?.accuracy(xt, yt)
    };
    let (sy, sy_t) = (&train.style_labels, &heldout.style_labels);
    let (sp, sp_t) = (&train.speaker_labels, &heldout.speaker_labels);
    Ok(Disentanglement {
        style_on_style: probe(&tr.style, sy, &ho.style, sy_t, n_styles)?,
        style_on_speaker: probe(&tr.speaker, sy, &ho.speaker, sy_t, n_styles)?,
        style_chance: 100.0 / n_styles as f64,
        speaker_centroid: nearest_centroid_accuracy(&tr.speaker, sp, &ho.speaker, sp_t, n_speakers)?,
        speaker_probe_input: probe(&tr.sites[0], sp, &ho.sites[0], sp_t, n_speakers)?,
        speaker_probe_post_speaker: probe(&tr.sites[1], sp, &ho.sites[1], sp_t, n_speakers)?,
        speaker_probe_post_style: probe(&tr.sites[2], sp, &ho.sites[2], sp_t, n_speakers)?,
    })
}

/// Prompt/audio pairings of the consistency study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyCase {
    NeutralPromptEmotionalAudio,
    EmotionalPromptNeutralAudio,
    EmotionalPromptEmotionalAudio,
    NegativePromptPositiveAudio,
    PositivePromptNegativeAudio,
}

impl ConsistencyCase {
    pub const ALL: [ConsistencyCase; 5] = [
        ConsistencyCase::NeutralPromptEmotionalAudio,
        ConsistencyCase::EmotionalPromptNeutralAudio,
        ConsistencyCase::EmotionalPromptEmotionalAudio,
        ConsistencyCase::NegativePromptPositiveAudio,
        ConsistencyCase::PositivePromptNegativeAudio,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ConsistencyCase::NeutralPromptEmotionalAudio => "neutral text prompt + emotional audio prompt",
            ConsistencyCase::EmotionalPromptNeutralAudio => "emotional text prompt + neutral audio prompt",
            ConsistencyCase::EmotionalPromptEmotionalAudio => "emotional text prompt + emotional audio prompt",
            ConsistencyCase::NegativePromptPositiveAudio => "negative text prompt + positive audio prompt",
            ConsistencyCase::PositivePromptNegativeAudio => "positive text prompt + negative audio prompt",
        }
    }

    pub fn is_contradictory(self) -> bool {
        matches!(self, ConsistencyCase::NegativePromptPositiveAudio | ConsistencyCase::PositivePromptNegativeAudio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: ConsistencyCase,
    pub label: String,
    pub n: usize,
    pub emo_acc: f64,
}

/// Runs the five consistency cases with `n` syntheses each. References come
/// from `data`; style labels index `styles` (registry order). The intended
/// style is the emotional one when the other modality is neutral, the
/// shared one when both agree and the text prompt's one when they
/// contradict.
#[allow(clippy::too_many_arguments)]
pub fn modality_consistency<T: Scalar>(
    model: &StyleFusionModel,
    store: &ParamStore<T>,
    data: &Dataset,
    valences: &[Valence],
    style_names: &[String],
    probe: &StyleProbe,
    n: usize,
    seed: u64,
) -> Result<Vec<CaseResult>> {
    if !probe.is_trained() {
        return Err(Error::UntrainedProbe);
    }
    let of = |v: Valence| -> Vec<usize> { (0..valences.len()).filter(|&i| valences[i] == v).collect() };
    let (neutral, positive, negative) = (of(Valence::Neutral), of(Valence::Positive), of(Valence::Negative));
    let emotional: Vec<usize> = positive.iter().chain(&negative).copied().collect();
    if neutral.is_empty() || positive.is_empty() || negative.is_empty() {
        return Err(Error::Config("consistency study needs neutral, positive and negative styles".into()));
    }
    let by_style: Vec<Vec<usize>> = (0..valences.len()).map(|s| (0..data.len()).filter(|&i| data.style_labels[i] == s).collect()).collect();
    if by_style.iter().any(Vec::is_empty) {
        return Err(Error::Empty("reference utterances for a style"));
    }
    let lexicon = PromptLexicon::builtin();
    let mut results = Vec::with_capacity(ConsistencyCase::ALL.len());
    for (ci, case) in ConsistencyCase::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ci as u64));
        let mut preds = Vec::with_capacity(n);
        let mut intended = Vec::with_capacity(n);
        for k in 0..n {
            let pick = |rng: &mut ChaCha8Rng, v: &[usize]| v[rng.random_range(0..v.len())];
            let (prompt_style, audio_style, target) = match case {
                ConsistencyCase::NeutralPromptEmotionalAudio => {
                    let e = pick(&mut rng, &emotional);
                    (pick(&mut rng, &neutral), e, e)
                }
                ConsistencyCase::EmotionalPromptNeutralAudio => {
                    let e = pick(&mut rng, &emotional);
                    (e, pick(&mut rng, &neutral), e)
                }
                ConsistencyCase::EmotionalPromptEmotionalAudio => {
                    let e = pick(&mut rng, &emotional);
                    (e, e, e)
                }
                ConsistencyCase::NegativePromptPositiveAudio => {
                    let p = pick(&mut rng, &negative);
                    (p, pick(&mut rng, &positive), p)
                }
                ConsistencyCase::PositivePromptNegativeAudio => {
                    let p = pick(&mut rng, &positive);
                    (p, pick(&mut rng, &negative), p)
                }
            };
            let strategy = PromptStrategy::ALL[rng.random_range(0..3)];
            let prompt = augment_prompt(&style_names[prompt_style], &lexicon, strategy, rng.random())?;
            let style_ref = &data.utterances[pick(&mut rng, &by_style[audio_style])].spectrogram;
            let speaker_ref = &data.utterances[rng.random_range(0..data.len())].spectrogram;
            let text = PHRASES[rng.random_range(0..PHRASES.len())];
            let out = model.synthesize(
                store,
                &SynthRequest {
                    text,
                    speaker_ref,
                    prompt: Some(&prompt),
                    style_ref: Some(style_ref),
                    seed: derive_seed(seed ^ 0xC0_5157, (ci * n + k) as u64),
                    temperature: model.cfg.temperature,
                    gate: None,
                },
            )?;
            preds.push(probe.predict(&out.spectrogram, text.chars().count())?);
            intended.push(target);
        }
        results.push(CaseResult { case, label: case.label().to_string(), n, emo_acc: emo_acc(&preds, &intended)? });
    }
    Ok(results)
}

/// Mean accuracy of the agreeing case minus the mean of the two
/// contradicting cases.
pub fn consistency_gap(results: &[CaseResult]) -> f64 {
    let consistent: Vec<f64> =
        results.iter().filter(|r| r.case == ConsistencyCase::EmotionalPromptEmotionalAudio).map(|r| r.emo_acc).collect();
    let contra: Vec<f64> = results.iter().filter(|r| r.case.is_contradictory()).map(|r| r.emo_acc).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    mean(&consistent) - mean(&contra)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub fusion: FusionVariant,
    pub mcd: f64,
    pub secs: f64,
    pub emo_acc: f64,
    /// Published speaker similarity of the corresponding system, for context.
    pub reference_secs: f64,
}

/// Published T+A speaker similarity per fusion variant.
pub fn reference_secs(v: FusionVariant) -> f64 {
    match v {
        FusionVariant::Hctscm => 0.810,
        FusionVariant::Tscm => 0.755,
        FusionVariant::Concat => 0.742,
    }
}

/// Trains one model per variant with identical data, seed and step budget
/// and evaluates each on `heldout`.
pub fn ablate_fusion(
    cfg: &RunConfig,
    variants: &[FusionVariant],
    train: &Dataset,
    heldout: &Dataset,
    steps: usize,
) -> Result<Vec<AblationRow>> {
    let probe = train_style_probe(train, cfg.styles)?;
    variants
        .iter()
        .map(|&fusion| {
            let vcfg = RunConfig { fusion, ..cfg.clone() };
            let mut trainer = Trainer::new(&vcfg)?;
            trainer.train(train, steps, |r| log::debug!("{} step {} total {:.4}", fusion.name(), r.step, r.losses.total))?;
            let report = evaluate_synthesis(&trainer.model, &trainer.store, heldout, &probe, cfg.seed)?;
            Ok(AblationRow { fusion, mcd: report.mcd, secs: report.secs, emo_acc: report.emo_acc, reference_secs: reference_secs(fusion) })
        })
        .collect()
}
