//! Conditional-VAE backbone: control-conditioned text encoder, flow-based
//! duration predictor, coupling flow between acoustic latents and the text
//! prior, posterior encoder, spectrogram decoder and monotonic alignment.

pub mod align;
pub mod flow;
pub mod kl;
pub mod posterior;

use stylefusion_autodiff::{Mat, Scalar, Var};

pub use align::{best_path, log_likelihoods, monotonic_align, Alignment};
pub use flow::{AcousticFlow, CouplingLayer, CouplingOutput, DurationFlow};
pub use kl::{flow_kl, gaussian_kl, gaussian_kl_var};
pub use posterior::{Decoder, PosteriorEncoder, PosteriorSample, LOG_FLOOR};

use crate::config::FusionVariant;
use crate::error::{Error, Result};
use crate::fusion::{FusionBlock, FusionDims};
use crate::nn::{Builder, Ctx, Init, Linear};
use crate::text;

/// Upper bound on predicted frames per token.
pub const MAX_TOKEN_FRAMES: usize = 48;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-token content features and the Gaussian prior they parameterize.
#[derive(Clone, Copy, Debug)]
pub struct ContentFrames<'t, T: Scalar> {
    pub h: Var<'t, T>,
    pub prior_mean: Var<'t, T>,
    pub prior_logstd: Var<'t, T>,
}

impl<T: Scalar> ContentFrames<'_, T> {
    pub fn tokens(&self) -> usize {
        self.h.rows()
    }
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub embed: stylefusion_autodiff::ParamId,
    pub blocks: Vec<FusionBlock>,
    pub head: Linear,
    pub channels: usize,
    pub max_len: usize,
    pub logstd_min: f64,
    pub logstd_max: f64,
}

impl TextEncoder {
    /// `b` is the root builder; fusion blocks go under `fusion/text<i>`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        layers: usize,
        variant: FusionVariant,
        dims: FusionDims,
        channels: usize,
        max_len: usize,
        logstd_bounds: (f64, f64),
    ) -> Result<Self> {
        let embed = b.sub("text_encoder").param("embed", text::vocab_size(), dims.d_model, Init::Normal(0.5))?;
        let blocks =
            (0..layers).map(|i| FusionBlock::new(&mut b.sub("fusion"), &format!("text{i}"), variant, dims)).collect::<Result<Vec<_>>>()?;
        let head = Linear::new(&mut b.sub("text_encoder"), "head", dims.d_model, 2 * channels)?;
        Ok(Self { embed, blocks, head, channels, max_len, logstd_min: logstd_bounds.0, logstd_max: logstd_bounds.1 })
    }

    pub fn encode<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        text: &str,
        style: Var<'t, T>,
        speaker: Var<'t, T>,
    ) -> Result<ContentFrames<'t, T>> {
        let ids = text::encode(text)?;
        if ids.is_empty() {
            return Err(Error::Empty("text"));
        }
        if ids.len() > self.max_len {
            return Err(Error::TooLong { what: "text", len: ids.len(), max: self.max_len });
        }
        let mut h = ctx.p(self.embed).gather_rows(&ids);
        for block in &self.blocks {
            h = block.forward(ctx, h, style, speaker)?;
        }
        let stats = self.head.forward(ctx, h);
        let c = self.channels;
        let prior_logstd = stats.slice_cols(c, 2 * c).clamp(T::lit(self.logstd_min), T::lit(self.logstd_max));
        Ok(ContentFrames { h, prior_mean: stats.slice_cols(0, c), prior_logstd })
    }
}

/// Fusion block on the (gradient-stopped) content features followed by
/// the duration flow.
#[derive(Debug, Clone)]
pub struct DurationPredictor {
    pub fusion: FusionBlock,
    pub proj: Linear,
    pub flow: DurationFlow,
}

impl DurationPredictor {
    /// `b` is the root builder; the fusion block goes under `fusion/dur`.
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, variant: FusionVariant, dims: FusionDims, hidden: usize) -> Result<Self> {
        let fusion = FusionBlock::new(&mut b.sub("fusion"), "dur", variant, dims)?;
        let proj = Linear::new(&mut b.sub("duration_flow"), "proj", dims.d_model, hidden)?;
        let flow = DurationFlow::new(b, hidden, hidden, 2)?;
        Ok(Self { fusion, proj, flow })
    }

    /// Per-token conditioning of the duration flow.
    pub fn condition<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, h: Var<'t, T>, style: Var<'t, T>, speaker: Var<'t, T>) -> Result<Var<'t, T>> {
        let h_dur = self.fusion.forward(ctx, h.detach(), style, speaker)?;
        Ok(self.proj.forward(ctx, h_dur))
    }

    /// Flow input for integer durations: `[ln(d - 0.5), aux]`. The half-frame
    /// offset makes `ceil(exp(.))` recover `d` exactly.
    pub fn targets<T: Scalar>(durations: &[usize], aux: &Mat<T>) -> Mat<T> {
        Mat::from_fn(durations.len(), 2, |r, c| if c == 0 { T::lit((durations[r] as f64 - 0.5).ln()) } else { aux.get(r, 0) })
    }

    /// Mean negative log-likelihood per token of the durations, with the
    /// auxiliary channel's standard-normal density divided out.
    pub fn nll<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, g: Var<'t, T>, durations: &[usize], aux: &Mat<T>) -> Result<Var<'t, T>> {
        if durations.len() != g.rows() || aux.rows() != g.rows() {
            return Err(Error::Dimension { sublayer: "duration targets".into(), expected: g.rows(), got: durations.len() });
        }
        let n = durations.len() as f64;
        let x = ctx.constant(Self::targets(durations, aux));
        let (e, logdet) = self.flow.forward(ctx, x, g);
        let aux_nll: f64 = aux.data().iter().map(|u| 0.5 * u.as_f64().powi(2) + 0.5 * LN_2PI).sum();
        let joint = e.square().sum().scale(T::lit(0.5)).add_scalar(T::lit(n * LN_2PI)) - logdet;
        Ok(joint.add_scalar(T::lit(-aux_nll)).scale(T::lit(1.0 / n)))
    }

    /// Inverts the flow on `eps` (tokens x 2) and rounds up.
    pub fn sample<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, g: Var<'t, T>, eps: Mat<T>) -> Vec<usize> {
        let x = self.flow.inverse(ctx, ctx.constant(eps), g).value();
        (0..x.rows()).map(|r| durations_from_log(x.get(r, 0).as_f64())).collect()
    }
}

/// `ceil(exp(logd))` limited to `[1, MAX_TOKEN_FRAMES]`.
pub fn durations_from_log(logd: f64) -> usize {
    let d = logd.min((MAX_TOKEN_FRAMES as f64).ln()).exp().ceil();
    if d.is_finite() {
        (d as usize).clamp(1, MAX_TOKEN_FRAMES)
    } else {
        1
    }
}

/// Repeats token rows according to an alignment path.
pub fn expand<'t, T: Scalar>(token_rows: Var<'t, T>, alignment: &Alignment) -> Var<'t, T> {
    token_rows.gather_rows(&alignment.path)
}
