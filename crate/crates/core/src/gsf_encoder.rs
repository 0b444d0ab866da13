//! Multimodal front end: prompt text, style-reference audio and
//! speaker-reference audio become a style embedding and a speaker
//! embedding.
//!
//! The final style embedding is `gate * emb_style_audio + emb_style_prompt`
//! where the gate is a per-utterance Bernoulli draw during training and, at
//! inference, 1 exactly when a style reference is supplied. A style head on
//! the gradient-reversed speaker embedding pushes style information out of
//! the speaker space.

use stylefusion_autodiff::{Mat, Scalar, Var};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fusion::SelfAttention;
use crate::nn::{cross_entropy, swish, Builder, Conv1d, Ctx, Linear};
use crate::text;

/// Shortest reference clip the audio encoders accept.
pub const MIN_REF_FRAMES: usize = 8;

const LEVEL_FLOOR: f64 = 1e-8;
const SHAPE_FLOOR: f64 = 1e-3;

/// Character encoder: embedding, two conv + attention layers, mean pool.
#[derive(Debug, Clone)]
pub struct PromptEncoder {
    pub embed: stylefusion_autodiff::ParamId,
    pub convs: Vec<Conv1d>,
    pub attns: Vec<SelfAttention>,
    pub out: Linear,
    pub max_len: usize,
}

/// Frame-wise MLP over log spectra, pooled over time.
///
/// Every frame is divided by its mean magnitude before the log, so the input
/// is the same for any gain applied to the frame. The style encoder feeds the
/// log level back in as one extra channel and pools with mean and log
/// standard deviation, so loudness and its variation reach the embedding;
/// the speaker encoder sees spectral shape only and pools with the mean.
#[derive(Debug, Clone)]
pub struct FrameEncoder {
    pub l1: Linear,
    pub l2: Linear,
    pub out: Linear,
    pub n_bins: usize,
    pub energy_channel: bool,
    pub std_pooling: bool,
}

#[derive(Debug, Clone)]
pub struct GsfEncoder {
    pub prompt: PromptEncoder,
    pub style_audio: FrameEncoder,
    pub speaker: FrameEncoder,
    pub text_style_head: Linear,
    pub audio_style_head: Linear,
    pub spk_head: Linear,
    pub style_grl_head: Linear,
    pub d_style: usize,
    pub d_spk: usize,
    pub n_styles: usize,
    pub n_speakers: usize,
    pub grl_lambda: f64,
}

/// The three per-modality embeddings before combination.
#[derive(Clone, Copy, Debug)]
pub struct ModalityEmbeddings<'t, T: Scalar> {
    pub style_prompt: Var<'t, T>,
    pub style_audio: Option<Var<'t, T>>,
    pub speaker: Var<'t, T>,
}

/// One supervised front-end example.
#[derive(Debug, Clone, Copy)]
pub struct FrontendItem<'a> {
    pub prompt: &'a str,
    pub style_ref: &'a Mat<f32>,
    pub speaker_ref: &'a Mat<f32>,
    pub style_label: usize,
    pub speaker_label: usize,
    pub gate: f64,
}

/// Tape values of the four front-end losses, averaged over a batch.
#[derive(Clone, Copy, Debug)]
pub struct FrontendTerms<'t, T: Scalar> {
    pub text_style: Var<'t, T>,
    pub audio_style: Var<'t, T>,
    pub spk: Var<'t, T>,
    pub style_grl: Var<'t, T>,
    pub total: Var<'t, T>,
}

/// Scalar summary of [`FrontendTerms`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrontEndLosses {
    pub text_style: f64,
    pub audio_style: f64,
    pub spk: f64,
    pub style_grl: f64,
    pub total_gsfenc: f64,
}

impl FrontEndLosses {
    pub fn new(text_style: f64, audio_style: f64, spk: f64, style_grl: f64) -> Self {
        Self { text_style, audio_style, spk, style_grl, total_gsfenc: text_style + audio_style + spk + style_grl }
    }
}

impl PromptEncoder {
    fn new<T: Scalar>(b: &mut Builder<'_, T>, width: usize, heads: usize, d_style: usize, max_len: usize) -> Result<Self> {
        let mut s = b.sub("prompt");
        let embed = s.param("embed", text::vocab_size(), width, crate::nn::Init::Normal(0.5))?;
        let mut convs = Vec::new();
        let mut attns = Vec::new();
        for i in 0..2 {
            convs.push(Conv1d::new(&mut s, &format!("conv{i}"), width, width, 3)?);
            attns.push(SelfAttention::new(&mut s, &format!("msa{i}"), width, heads)?);
        }
        let out = Linear::new(&mut s, "out", width, d_style)?;
        Ok(Self { embed, convs, attns, out, max_len })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, prompt: &str) -> Result<Var<'t, T>> {
        let ids = text::encode(prompt)?;
        if ids.is_empty() {
            return Err(Error::Empty("prompt"));
        }
        if ids.len() > self.max_len {
            return Err(Error::TooLong { what: "prompt", len: ids.len(), max: self.max_len });
        }
        let mut h = ctx.p(self.embed).gather_rows(&ids);
        for (conv, attn) in self.convs.iter().zip(&self.attns) {
            h = h + swish(conv.forward(ctx, h));
            h = attn.forward(ctx, h);
        }
        Ok(self.out.forward(ctx, h.mean_rows()))
    }
}

impl FrameEncoder {
    fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        n_bins: usize,
        hidden: usize,
        d_out: usize,
        energy_channel: bool,
        std_pooling: bool,
    ) -> Result<Self> {
        let mut s = b.sub(name);
        let pooled = if std_pooling { 2 * hidden } else { hidden };
        Ok(Self {
            l1: Linear::new(&mut s, "l1", n_bins + usize::from(energy_channel), hidden)?,
            l2: Linear::new(&mut s, "l2", hidden, hidden)?,
            out: Linear::new(&mut s, "out", pooled, d_out)?,
            n_bins,
            energy_channel,
            std_pooling,
        })
    }

    /// Validated log features of a reference clip.
    pub fn features<T: Scalar>(&self, spec: &Mat<f32>) -> Result<Mat<T>> {
        if spec.cols() != self.n_bins {
            return Err(Error::BinMismatch { expected: self.n_bins, got: spec.cols() });
        }
        if spec.rows() < MIN_REF_FRAMES {
            return Err(Error::TooFewFrames { frames: spec.rows(), min: MIN_REF_FRAMES });
        }
        let width = self.n_bins + usize::from(self.energy_channel);
        let mut out = Mat::zeros(spec.rows(), width);
        for r in 0..spec.rows() {
            let row = spec.row(r);
            let level = row.iter().map(|&v| v as f64).sum::<f64>() / row.len() as f64 + LEVEL_FLOOR;
            let dst = out.row_mut(r);
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = T::lit((v as f64 / level + SHAPE_FLOOR).ln());
            }
            if self.energy_channel {
                dst[self.n_bins] = T::lit(level.ln());
            }
        }
        Ok(out)
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, spec: &Mat<f32>) -> Result<Var<'t, T>> {
        let x = ctx.constant(self.features(spec)?);
        Ok(self.forward_features(ctx, x))
    }

    pub fn forward_features<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let h = swish(self.l1.forward(ctx, x));
        let h = swish(self.l2.forward(ctx, h));
        let mean = h.mean_rows();
        let pooled = if self.std_pooling {
            let var = h.add_row(mean.scale(T::lit(-1.0))).square().mean_rows();
            ctx.tape.concat_cols(&[mean, var.add_scalar(T::lit(1e-4)).ln().scale(T::lit(0.5))])
        } else {
            mean
        };
        self.out.forward(ctx, pooled)
    }
}

impl GsfEncoder {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &RunConfig) -> Result<Self> {
        let mut s = b.sub("gsf_encoder");
        let n_bins = cfg.n_bins();
        let prompt = PromptEncoder::new(&mut s, cfg.d_model, cfg.attn_heads, cfg.d_style, cfg.prompt_max_len)?;
        let style_audio = FrameEncoder::new(&mut s, "style_audio", n_bins, cfg.enc_hidden, cfg.d_style, true, true)?;
        let speaker = FrameEncoder::new(&mut s, "speaker", n_bins, cfg.enc_hidden, cfg.d_spk, false, false)?;
        let mut h = s.sub("heads");
        Ok(Self {
            prompt,
            style_audio,
            speaker,
            text_style_head: Linear::new(&mut h, "text_style", cfg.d_style, cfg.styles)?,
            audio_style_head: Linear::new(&mut h, "audio_style", cfg.d_style, cfg.styles)?,
            spk_head: Linear::new(&mut h, "spk", cfg.d_spk, cfg.speakers)?,
            style_grl_head: Linear::new(&mut h, "style_grl", cfg.d_spk, cfg.styles)?,
            d_style: cfg.d_style,
            d_spk: cfg.d_spk,
            n_styles: cfg.styles,
            n_speakers: cfg.speakers,
            grl_lambda: cfg.grl_lambda,
        })
    }

    pub fn encode_prompt<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, prompt: &str) -> Result<Var<'t, T>> {
        self.prompt.forward(ctx, prompt)
    }

    pub fn encode_style_audio<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, spec: &Mat<f32>) -> Result<Var<'t, T>> {
        self.style_audio.forward(ctx, spec)
    }

    pub fn encode_speaker<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, spec: &Mat<f32>) -> Result<Var<'t, T>> {
        self.speaker.forward(ctx, spec)
    }

    /// All three modality embeddings; the style-audio one only when a
    /// reference is given.
    pub fn encode_modalities<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        prompt: Option<&str>,
        style_ref: Option<&Mat<f32>>,
        speaker_ref: &Mat<f32>,
    ) -> Result<ModalityEmbeddings<'t, T>> {
        let style_prompt = match prompt {
            Some(p) => self.encode_prompt(ctx, p)?,
            None => ctx.zeros(1, self.d_style),
        };
        let style_audio = style_ref.map(|s| self.encode_style_audio(ctx, s)).transpose()?;
        Ok(ModalityEmbeddings { style_prompt, style_audio, speaker: self.encode_speaker(ctx, speaker_ref)? })
    }

    /// Inference-time control pair `(style, speaker)`: gate 1 iff a style
    /// reference is given, `gate_override` replaces that choice. At least
    /// one of prompt and style reference is required.
    pub fn control<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        prompt: Option<&str>,
        style_ref: Option<&Mat<f32>>,
        speaker_ref: &Mat<f32>,
        gate_override: Option<f64>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        if prompt.is_none() && style_ref.is_none() {
            return Err(Error::MissingInput("style prompt or style reference (--prompt / --style-ref)".into()));
        }
        let m = self.encode_modalities(ctx, prompt, style_ref, speaker_ref)?;
        let gate = gate_override.unwrap_or(if style_ref.is_some() { 1.0 } else { 0.0 });
        let audio = m.style_audio.unwrap_or_else(|| ctx.zeros(1, self.d_style));
        Ok((combine_style(audio, m.style_prompt, T::lit(gate))?, m.speaker))
    }

    /// Mean of the four cross-entropy losses over `batch`, plus the
    /// combined control pair of each item.
    pub fn frontend_losses<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        batch: &[FrontendItem<'_>],
    ) -> Result<(FrontendTerms<'t, T>, Vec<(Var<'t, T>, Var<'t, T>)>)> {
        if batch.is_empty() {
            return Err(Error::Empty("front-end batch"));
        }
        let mut parts: Vec<[Var<'t, T>; 4]> = Vec::with_capacity(batch.len());
        let mut controls = Vec::with_capacity(batch.len());
        for item in batch {
            if item.style_label >= self.n_styles {
                return Err(Error::LabelOutOfRange { label: item.style_label, classes: self.n_styles });
            }
            if item.speaker_label >= self.n_speakers {
                return Err(Error::LabelOutOfRange { label: item.speaker_label, classes: self.n_speakers });
            }
            let prompt = self.encode_prompt(ctx, item.prompt)?;
            let audio = self.encode_style_audio(ctx, item.style_ref)?;
            let speaker = self.encode_speaker(ctx, item.speaker_ref)?;
            parts.push([
                cross_entropy(self.text_style_head.forward(ctx, prompt), item.style_label),
                cross_entropy(self.audio_style_head.forward(ctx, audio), item.style_label),
                cross_entropy(self.spk_head.forward(ctx, speaker), item.speaker_label),
                cross_entropy(self.style_grl_head.forward(ctx, grl(speaker, T::lit(self.grl_lambda))), item.style_label),
            ]);
            controls.push((combine_style(audio, prompt, T::lit(item.gate))?, speaker));
        }
        let scale = T::lit(1.0 / batch.len() as f64);
        let mean = |k: usize| {
            let sum = parts.iter().skip(1).fold(parts[0][k], |acc, p| acc + p[k]);
            if batch.len() == 1 {
                sum
            } else {
                sum.scale(scale)
            }
        };
        let (text_style, audio_style, spk, style_grl) = (mean(0), mean(1), mean(2), mean(3));
        let total = text_style + audio_style + spk + style_grl;
        Ok((FrontendTerms { text_style, audio_style, spk, style_grl, total }, controls))
    }
}

impl<T: Scalar> FrontendTerms<'_, T> {
    pub fn report(&self) -> FrontEndLosses {
        FrontEndLosses::new(
            self.text_style.scalar().as_f64(),
            self.audio_style.scalar().as_f64(),
            self.spk.scalar().as_f64(),
            self.style_grl.scalar().as_f64(),
        )
    }
}

/// `gate * style_audio + style_prompt`, elementwise.
pub fn combine_style<'t, T: Scalar>(style_audio: Var<'t, T>, style_prompt: Var<'t, T>, gate: T) -> Result<Var<'t, T>> {
    if style_audio.shape() != style_prompt.shape() {
        return Err(Error::Dimension { sublayer: "style combination".into(), expected: style_prompt.cols(), got: style_audio.cols() });
    }
    Ok(style_audio.scale(gate) + style_prompt)
}

/// [`combine_style`] on plain vectors.
pub fn combine_style_values<T: Scalar>(style_audio: &[T], style_prompt: &[T], gate: T) -> Result<Vec<T>> {
    if style_audio.len() != style_prompt.len() {
        return Err(Error::Dimension { sublayer: "style combination".into(), expected: style_prompt.len(), got: style_audio.len() });
    }
    Ok(style_audio.iter().zip(style_prompt).map(|(&a, &p)| a * gate + p).collect())
}

/// Gradient reversal on the tape.
pub fn grl<'t, T: Scalar>(x: Var<'t, T>, lambda: T) -> Var<'t, T> {
    x.grad_reverse(lambda)
}

/// Forward map of the reversal layer: the identity.
pub fn grl_forward<T: Scalar>(x: &Mat<T>) -> Mat<T> {
    x.clone()
}

/// Backward map of the reversal layer: `-lambda * upstream`.
pub fn grl_backward<T: Scalar>(upstream: &Mat<T>, lambda: T) -> Mat<T> {
    upstream.map(|g| -(lambda * g))
}

#[cfg(test)]
mod tests {
    use stylefusion_autodiff::{ParamStore, Tape};

    use super::*;
    use crate::nn::seeded_rng;

    fn encoder() -> (ParamStore<f64>, GsfEncoder) {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(5);
        let cfg = RunConfig { n_fft: 62, ..RunConfig::desk() };
        let enc = GsfEncoder::new(&mut Builder::new(&mut store, &mut rng), &cfg).unwrap();
        (store, enc)
    }

    #[test]
    fn prompt_limits() {
        let (store, enc) = encoder();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        assert!(matches!(enc.encode_prompt(ctx, ""), Err(Error::Empty(_))));
        assert!(matches!(enc.encode_prompt(ctx, &"a".repeat(65)), Err(Error::TooLong { .. })));
        let a = enc.encode_prompt(ctx, "sound cheerful").unwrap().value();
        let b = enc.encode_prompt(ctx, "sound cheerful").unwrap().value();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.shape(), (1, 16));
    }

    #[test]
    fn audio_preconditions() {
        let (store, enc) = encoder();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        assert!(matches!(enc.encode_speaker(ctx, &Mat::zeros(7, 32)), Err(Error::TooFewFrames { .. })));
        assert!(matches!(enc.encode_style_audio(ctx, &Mat::zeros(9, 31)), Err(Error::BinMismatch { .. })));
        let z = enc.encode_speaker(ctx, &Mat::zeros(9, 32)).unwrap().value();
        assert!(z.is_finite());
        assert!(enc.encode_style_audio(ctx, &Mat::zeros(9, 32)).unwrap().value().is_finite());
    }

    #[test]
    fn control_requires_a_style_input() {
        let (store, enc) = encoder();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let err = enc.control(ctx, None, None, &Mat::zeros(9, 32), None).unwrap_err();
        assert_eq!(err.kind(), "missing_input");
    }

    #[test]
    fn label_out_of_range() {
        let (store, enc) = encoder();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let spec = Mat::filled(9, 32, 0.5f32);
        let item = FrontendItem { prompt: "calm", style_ref: &spec, speaker_ref: &spec, style_label: 4, speaker_label: 0, gate: 1.0 };
        assert!(matches!(enc.frontend_losses(ctx, &[item]), Err(Error::LabelOutOfRange { label: 4, classes: 4 })));
    }

    #[test]
    fn combine_dimension_mismatch() {
        let tape = Tape::<f64>::new();
        assert!(combine_style(tape.constant(Mat::zeros(1, 3)), tape.constant(Mat::zeros(1, 4)), 1.0).is_err());
        assert!(combine_style_values(&[1.0f32], &[1.0, 2.0], 0.0).is_err());
    }
}
