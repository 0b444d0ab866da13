//! Training loop.
//!
//! Every utterance of a batch is differentiated on its own tape in parallel;
//! gradients are then summed in batch order so a run is bit-reproducible
//! regardless of the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stylefusion_autodiff::{accumulate, Adam, Mat, ParamStore, Tape};

use crate::config::RunConfig;
use crate::corpus::{Registry, Utterance};
use crate::error::{Error, Result};
use crate::model::{LossReport, StyleFusionModel, TrainItem, UtteranceNoise};
use crate::nn::Ctx;

/// Utterances with class labels and same-speaker reference pools.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    pub speaker_labels: Vec<usize>,
    pub style_labels: Vec<usize>,
    by_speaker: Vec<Vec<usize>>,
}

impl Dataset {
    /// Labels are positions in the registry's speaker and style lists.
    pub fn new(utterances: Vec<Utterance>, registry: &Registry) -> Result<Self> {
        let mut speaker_labels = Vec::with_capacity(utterances.len());
        let mut style_labels = Vec::with_capacity(utterances.len());
        let mut by_speaker = vec![Vec::new(); registry.speakers.len()];
        for (i, u) in utterances.iter().enumerate() {
            let spk = registry.speakers.iter().position(|s| s.speaker_id == u.speaker_id).ok_or(Error::UnknownSpeakerId(u.speaker_id))?;
            let sty = registry.styles.iter().position(|s| s.style_id == u.style_id).ok_or(Error::UnknownStyleId(u.style_id))?;
            speaker_labels.push(spk);
            style_labels.push(sty);
            by_speaker[spk].push(i);
        }
        Ok(Self { utterances, speaker_labels, style_labels, by_speaker })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut by_speaker = vec![Vec::new(); self.by_speaker.len()];
        for (j, &i) in indices.iter().enumerate() {
            by_speaker[self.speaker_labels[i]].push(j);
        }
        Dataset {
            utterances: indices.iter().map(|&i| self.utterances[i].clone()).collect(),
            speaker_labels: indices.iter().map(|&i| self.speaker_labels[i]).collect(),
            style_labels: indices.iter().map(|&i| self.style_labels[i]).collect(),
            by_speaker,
        }
    }

    /// Another utterance of the same speaker, or `i` itself if it is the
    /// speaker's only one.
    pub fn speaker_ref(&self, i: usize, rng: &mut ChaCha8Rng) -> usize {
        let pool = &self.by_speaker[self.speaker_labels[i]];
        if pool.len() < 2 {
            return i;
        }
        loop {
            let j = pool[rng.random_range(0..pool.len())];
            if j != i {
                return j;
            }
        }
    }

    pub fn item(&self, i: usize, speaker_ref: usize) -> TrainItem<'_> {
        let u = &self.utterances[i];
        TrainItem {
            text: &u.text,
            prompt: &u.prompt,
            target: &u.spectrogram,
            speaker_ref: &self.utterances[speaker_ref].spectrogram,
            style_label: self.style_labels[i],
            speaker_label: self.speaker_labels[i],
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(flatten)]
    pub losses: LossReport,
    pub grad_norm: f64,
}

/// Model, parameters, optimizer and sampling state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: StyleFusionModel,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub rng: ChaCha8Rng,
    pub step: usize,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let (model, store) = StyleFusionModel::build::<f32>(cfg)?;
        Ok(Self::from_parts(model, store))
    }

    pub fn from_parts(model: StyleFusionModel, store: ParamStore<f32>) -> Self {
        let mut adam = Adam::new(&store, model.cfg.learning_rate as f32);
        if model.cfg.grad_clip > 0.0 {
            adam.clip_norm = Some(model.cfg.grad_clip as f32);
        }
        let rng = ChaCha8Rng::seed_from_u64(model.cfg.seed ^ 0x7EA1_0000);
        Self { model, store, adam, rng, step: 0 }
    }

    /// Mean loss and parameter gradients over `batch` (dataset indices,
    /// speaker-reference indices, noise).
    pub fn batch_gradients(
        &self,
        data: &Dataset,
        batch: &[(usize, usize, UtteranceNoise<f32>)],
    ) -> Result<(LossReport, Vec<Option<Mat<f32>>>)> {
        let n_params = self.store.len();
        let per_item = batch
            .par_iter()
            .map(|(i, r, noise)| {
                let tape = Tape::new();
                let terms = self.model.utterance_terms(Ctx::new(&tape, &self.store), &data.item(*i, *r), noise, None)?;
                let report = terms.report();
                let grads = tape.backward(terms.total).into_param_vec(n_params);
                Ok((report, grads))
            })
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / batch.len() as f32;
        let mut total: Vec<Option<Mat<f32>>> = (0..n_params).map(|_| None).collect();
        let mut reports = Vec::with_capacity(batch.len());
        for (report, grads) in per_item {
            accumulate(&mut total, grads);
            reports.push(report);
        }
        for g in total.iter_mut().flatten() {
            *g = g.map(|x| x * scale);
        }
        Ok((LossReport::mean(&reports), total))
    }

    /// Draws a batch: indices with replacement, speaker references and noise.
    pub fn draw_batch(&mut self, data: &Dataset) -> Vec<(usize, usize, UtteranceNoise<f32>)> {
        let cfg = &self.model.cfg;
        (0..cfg.batch_size)
            .map(|_| {
                let i = self.rng.random_range(0..data.len());
                let r = data.speaker_ref(i, &mut self.rng);
                let u = &data.utterances[i];
                let tokens = u.text.chars().count();
                let noise = UtteranceNoise::draw(&mut self.rng, u.spectrogram.rows(), tokens, cfg.latent_channels, cfg.gate_prob);
                (i, r, noise)
            })
            .collect()
    }

    pub fn train_step(&mut self, data: &Dataset) -> Result<StepRecord> {
        if data.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let batch = self.draw_batch(data);
        let (losses, grads) = self.batch_gradients(data, &batch)?;
        let grad_norm = Adam::grad_norm(&grads) as f64;
        if !losses.total.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Diverged { step: self.step + 1 });
        }
        self.adam.update(&mut self.store, &grads);
        self.step += 1;
        Ok(StepRecord { step: self.step, losses, grad_norm })
    }

    /// Runs `steps` updates, handing each record to `on_step`.
    pub fn train(&mut self, data: &Dataset, steps: usize, mut on_step: impl FnMut(&StepRecord)) -> Result<Vec<StepRecord>> {
        let mut log = Vec::with_capacity(steps);
        for _ in 0..steps {
            let rec = self.train_step(data)?;
            on_step(&rec);
            log.push(rec);
        }
        Ok(log)
    }

    /// Loss on a fixed draw from `data`, independent of the trainer's own
    /// sampling state.
    pub fn evaluate(&self, data: &Dataset, indices: &[usize], seed: u64) -> Result<LossReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = &self.model.cfg;
        let batch: Vec<_> = indices
            .iter()
            .map(|&i| {
                let r = data.speaker_ref(i, &mut rng);
                let u = &data.utterances[i];
                let noise =
                    UtteranceNoise::draw(&mut rng, u.spectrogram.rows(), u.text.chars().count(), cfg.latent_channels, cfg.gate_prob);
                (i, r, noise)
            })
            .collect();
        let reports = batch
            .par_iter()
            .map(|(i, r, noise)| {
                let tape = Tape::new();
                Ok(self.model.utterance_terms(Ctx::new(&tape, &self.store), &data.item(*i, *r), noise, None)?.report())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LossReport::mean(&reports))
    }
}
