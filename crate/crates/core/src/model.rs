//! The complete model: front-end encoder plus backbone, its training
//! objective and the inference path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use stylefusion_autodiff::{Mat, ParamStore, Scalar, Tape, Var};

use crate::backbone::{
    expand, flow_kl, monotonic_align, AcousticFlow, Alignment, ContentFrames, Decoder, DurationPredictor, PosteriorEncoder, TextEncoder,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionDims;
use crate::gsf_encoder::{FrontendItem, FrontendTerms, GsfEncoder};
use crate::nn::{seeded_rng, Builder, Ctx};
use crate::spectrogram::mel_filterbank;

#[derive(Debug, Clone)]
pub struct StyleFusionModel {
    pub cfg: RunConfig,
    pub gsf: GsfEncoder,
    pub text: TextEncoder,
    pub duration: DurationPredictor,
    pub flow: AcousticFlow,
    pub posterior: PosteriorEncoder,
    pub decoder: Decoder,
}

/// One training utterance with its references.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub text: &'a str,
    pub prompt: &'a str,
    /// Target spectrogram, also the style reference.
    pub target: &'a Mat<f32>,
    /// Another utterance of the same speaker.
    pub speaker_ref: &'a Mat<f32>,
    pub style_label: usize,
    pub speaker_label: usize,
}

/// Every random draw of one training utterance.
#[derive(Debug, Clone)]
pub struct UtteranceNoise<T> {
    pub gate: f64,
    pub posterior_eps: Mat<T>,
    pub dur_aux: Mat<T>,
}

impl<T: Scalar> UtteranceNoise<T> {
    pub fn draw(rng: &mut ChaCha8Rng, frames: usize, tokens: usize, channels: usize, gate_prob: f64) -> Self {
        let gate = if rand::Rng::random_bool(rng, gate_prob) { 1.0 } else { 0.0 };
        Self { gate, posterior_eps: normal_mat(rng, frames, channels, 1.0), dur_aux: normal_mat(rng, tokens, 1, 1.0) }
    }

    pub fn cast<U: Scalar>(&self) -> UtteranceNoise<U> {
        UtteranceNoise { gate: self.gate, posterior_eps: self.posterior_eps.cast(), dur_aux: self.dur_aux.cast() }
    }
}

/// Standard-normal matrix times `scale`.
pub fn normal_mat<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat<T> {
    Mat::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z * scale)
    })
}

/// Loss terms of one utterance on a tape.
#[derive(Clone, Debug)]
pub struct LossTerms<'t, T: Scalar> {
    pub frontend: FrontendTerms<'t, T>,
    pub recon: Var<'t, T>,
    pub kl: Var<'t, T>,
    pub dur: Var<'t, T>,
    pub syn: Var<'t, T>,
    pub total: Var<'t, T>,
    pub alignment: Alignment,
}

/// Named scalar losses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub text_style: f64,
    pub audio_style: f64,
    pub spk: f64,
    pub style_grl: f64,
    pub gsfenc: f64,
    pub recon: f64,
    pub kl: f64,
    pub dur: f64,
    pub syn: f64,
    pub total: f64,
}

impl LossReport {
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut m = LossReport::default();
        for r in reports {
            m.text_style += r.text_style / n;
            m.audio_style += r.audio_style / n;
            m.spk += r.spk / n;
            m.style_grl += r.style_grl / n;
            m.gsfenc += r.gsfenc / n;
            m.recon += r.recon / n;
            m.kl += r.kl / n;
            m.dur += r.dur / n;
            m.syn += r.syn / n;
            m.total += r.total / n;
        }
        m
    }
}

impl<T: Scalar> LossTerms<'_, T> {
    pub fn report(&self) -> LossReport {
        let f = self.frontend.report();
        LossReport {
            text_style: f.text_style,
            audio_style: f.audio_style,
            spk: f.spk,
            style_grl: f.style_grl,
            gsfenc: f.total_gsfenc,
            recon: self.recon.scalar().as_f64(),
            kl: self.kl.scalar().as_f64(),
            dur: self.dur.scalar().as_f64(),
            syn: self.syn.scalar().as_f64(),
            total: self.total.scalar().as_f64(),
        }
    }
}

/// Inference inputs.
#[derive(Debug, Clone, Copy)]
pub struct SynthRequest<'a> {
    pub text: &'a str,
    pub speaker_ref: &'a Mat<f32>,
    pub prompt: Option<&'a str>,
    pub style_ref: Option<&'a Mat<f32>>,
    pub seed: u64,
    pub temperature: f64,
    /// Replaces the 0/1 gate chosen from the presence of `style_ref`.
    pub gate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub spectrogram: Mat<f32>,
    pub durations: Vec<usize>,
}

impl StyleFusionModel {
    /// Builds the model and its initial parameters from `cfg.seed`.
    pub fn build<T: Scalar>(cfg: &RunConfig) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(cfg.seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let dims = Self::fusion_dims(cfg);
        let model = Self {
            cfg: cfg.clone(),
            gsf: GsfEncoder::new(&mut b, cfg)?,
            text: TextEncoder::new(
                &mut b,
                cfg.text_layers,
                cfg.fusion,
                dims,
                cfg.latent_channels,
                cfg.text_max_len,
                (cfg.logstd_min, cfg.logstd_max),
            )?,
            duration: DurationPredictor::new(&mut b, cfg.fusion, dims, cfg.dur_hidden)?,
            flow: AcousticFlow::new(&mut b, cfg.latent_channels, cfg.flow_layers, cfg.fusion, dims)?,
            posterior: PosteriorEncoder::new(
                &mut b,
                cfg.n_bins(),
                cfg.enc_hidden,
                cfg.d_style + cfg.d_spk,
                cfg.latent_channels,
                cfg.conv_kernel,
                cfg.logstd_min,
                cfg.logstd_max,
            )?,
            decoder: Decoder::new(
                &mut b,
                cfg.latent_channels,
                cfg.enc_hidden,
                mel_filterbank(cfg.n_bins(), cfg.sample_rate, cfg.n_mels),
                cfg.conv_kernel,
            )?,
        };
        Ok((model, store))
    }

    pub fn fusion_dims(cfg: &RunConfig) -> FusionDims {
        FusionDims { d_model: cfg.d_model, d_style: cfg.d_style, d_spk: cfg.d_spk, heads: cfg.attn_heads, kernel: cfg.conv_kernel }
    }

    pub fn text_encode<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        text: &str,
        style: Var<'t, T>,
        speaker: Var<'t, T>,
    ) -> Result<ContentFrames<'t, T>> {
        self.text.encode(ctx, text, style, speaker)
    }

    /// Loss terms for one utterance. With `alignment` given the search is
    /// skipped, which freezes the only non-differentiable step.
    pub fn utterance_terms<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        item: &TrainItem<'_>,
        noise: &UtteranceNoise<T>,
        alignment: Option<&Alignment>,
    ) -> Result<LossTerms<'t, T>> {
        let cfg = &self.cfg;
        let front = FrontendItem {
            prompt: item.prompt,
            style_ref: item.target,
            speaker_ref: item.speaker_ref,
            style_label: item.style_label,
            speaker_label: item.speaker_label,
            gate: noise.gate,
        };
        let (frontend, controls) = self.gsf.frontend_losses(ctx, &[front])?;
        let (style, speaker) = controls[0];

        let content = self.text.encode(ctx, item.text, style, speaker)?;
        let frames = item.target.rows();
        if frames < content.tokens() {
            return Err(Error::Alignment { tokens: content.tokens(), frames });
        }
        let control = ctx.tape.concat_cols(&[style, speaker]);
        let post = self.posterior.encode(ctx, item.target, control, noise.posterior_eps.clone())?;
        let (fz, logdet) = self.flow.forward(ctx, post.z, style, speaker)?;

        let alignment = match alignment {
            Some(a) => a.clone(),
            None => monotonic_align(&content.prior_mean.value(), &content.prior_logstd.value(), &fz.value())?,
        };
        if alignment.frames() != frames || alignment.durations.len() != content.tokens() {
            return Err(Error::Alignment { tokens: content.tokens(), frames });
        }
        let m_p = expand(content.prior_mean, &alignment);
        let logs_p = expand(content.prior_logstd, &alignment);
        let per_frame = T::lit(1.0 / frames as f64);
        let kl = flow_kl(fz, post.logstd, m_p, logs_p, logdet).scale(per_frame);

        let mel_target = ctx.constant(self.decoder.log_mel_of::<T>(item.target));
        let recon = (self.decoder.log_mel(ctx, self.decoder.forward(ctx, post.z)) - mel_target).abs().mean();

        let g = self.duration.condition(ctx, content.h, style, speaker)?;
        let dur = self.duration.nll(ctx, g, &alignment.durations, &noise.dur_aux)?;

        let syn = recon.scale(T::lit(cfg.recon_weight)) + kl.scale(T::lit(cfg.kl_weight)) + dur.scale(T::lit(cfg.dur_weight));
        let total = frontend.total.scale(T::lit(cfg.frontend_weight)) + syn;
        Ok(LossTerms { frontend, recon, kl, dur, syn, total, alignment })
    }

    /// Mean loss report over `batch` with noise drawn from `seed`.
    pub fn elbo_losses<T: Scalar>(&self, store: &ParamStore<T>, batch: &[TrainItem<'_>], seed: u64) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reports = Vec::with_capacity(batch.len());
        for item in batch {
            let tokens = crate::text::encode(item.text)?.len();
            let noise = UtteranceNoise::draw(&mut rng, item.target.rows(), tokens, self.cfg.latent_channels, self.cfg.gate_prob);
            let tape = Tape::new();
            reports.push(self.utterance_terms(Ctx::new(&tape, store), item, &noise, None)?.report());
        }
        Ok(LossReport::mean(&reports))
    }

    /// Inference from given control embeddings.
    pub fn synthesize_with_control<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        text: &str,
        style: Var<'t, T>,
        speaker: Var<'t, T>,
        seed: u64,
        temperature: f64,
    ) -> Result<SynthOutput> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let content = self.text.encode(ctx, text, style, speaker)?;
        let n = content.tokens();
        let g = self.duration.condition(ctx, content.h, style, speaker)?;
        let durations = self.duration.sample(ctx, g, normal_mat(&mut rng, n, 2, temperature));
        let alignment = Alignment::from_durations(durations);
        let m_p = expand(content.prior_mean, &alignment);
        let logs_p = expand(content.prior_logstd, &alignment);
        let eps = ctx.constant(normal_mat(&mut rng, alignment.frames(), self.cfg.latent_channels, temperature));
        let fz = m_p + logs_p.exp() * eps;
        let z = self.flow.inverse(ctx, fz, style, speaker)?;
        let spec = Decoder::magnitude(&self.decoder.forward(ctx, z).value());
        Ok(SynthOutput { spectrogram: spec, durations: alignment.durations })
    }

    pub fn synthesize<T: Scalar>(&self, store: &ParamStore<T>, req: &SynthRequest<'_>) -> Result<SynthOutput> {
        if !req.temperature.is_finite() || req.temperature < 0.0 {
            return Err(Error::Config(format!("temperature must be finite and nonnegative, got {}", req.temperature)));
        }
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store);
        let (style, speaker) = self.gsf.control(ctx, req.prompt, req.style_ref, req.speaker_ref, req.gate)?;
        self.synthesize_with_control(ctx, req.text, style, speaker, req.seed, req.temperature)
    }
}
