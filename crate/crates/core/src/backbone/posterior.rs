//! Posterior encoder and spectrogram decoder.

use stylefusion_autodiff::{Mat, Scalar, Var};

use crate::error::{Error, Result};
use crate::nn::{log_spectrum, swish, Builder, Conv1d, Ctx, Init, Linear};

/// Diagonal Gaussian over latent frames given a spectrogram and the
/// controls.
#[derive(Debug, Clone)]
pub struct PosteriorEncoder {
    pub input: Linear,
    pub control: Linear,
    pub conv: Conv1d,
    pub head: Linear,
    pub n_bins: usize,
    pub channels: usize,
    pub logstd_min: f64,
    pub logstd_max: f64,
}

/// Posterior statistics and a reparameterized sample.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorSample<'t, T: Scalar> {
    pub z: Var<'t, T>,
    pub mean: Var<'t, T>,
    pub logstd: Var<'t, T>,
}

impl PosteriorEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        n_bins: usize,
        hidden: usize,
        control_dim: usize,
        channels: usize,
        kernel: usize,
        logstd_min: f64,
        logstd_max: f64,
    ) -> Result<Self> {
        let mut s = b.sub("posterior");
        Ok(Self {
            input: Linear::new(&mut s, "input", n_bins, hidden)?,
            control: Linear::with_init(&mut s, "control", control_dim, hidden, Init::FanIn(1.0), false)?,
            conv: Conv1d::new(&mut s, "conv", hidden, hidden, kernel)?,
            head: Linear::new(&mut s, "head", hidden, 2 * channels)?,
            n_bins,
            channels,
            logstd_min,
            logstd_max,
        })
    }

    /// Mean and clamped log standard deviation per frame.
    pub fn stats<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, spec: &Mat<f32>, control: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        if spec.cols() != self.n_bins {
            return Err(Error::BinMismatch { expected: self.n_bins, got: spec.cols() });
        }
        if spec.rows() == 0 {
            return Err(Error::Empty("spectrogram"));
        }
        let x = ctx.constant(log_spectrum::<T>(spec));
        let h = swish(self.input.forward(ctx, x)).add_row(self.control.forward(ctx, control));
        let h = h + swish(self.conv.forward(ctx, h));
        let out = self.head.forward(ctx, h);
        let c = self.channels;
        let logstd = out.slice_cols(c, 2 * c).clamp(T::lit(self.logstd_min), T::lit(self.logstd_max));
        Ok((out.slice_cols(0, c), logstd))
    }

    /// `z = mean + exp(logstd) * eps` with `eps` supplied (frames x C).
    pub fn encode<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        spec: &Mat<f32>,
        control: Var<'t, T>,
        eps: Mat<T>,
    ) -> Result<PosteriorSample<'t, T>> {
        let (mean, logstd) = self.stats(ctx, spec, control)?;
        if eps.shape() != mean.shape() {
            return Err(Error::Dimension { sublayer: "posterior noise".into(), expected: mean.rows() * mean.cols(), got: eps.len() });
        }
        let z = mean + logstd.exp() * ctx.constant(eps);
        Ok(PosteriorSample { z, mean, logstd })
    }
}

/// Offset added before taking logs of magnitudes, shared with the
/// posterior input compression.
pub const LOG_FLOOR: f64 = 1e-3;

/// Initial decoder output, the log magnitude of a quiet bin.
const OUTPUT_BIAS: f64 = -6.0;

/// Bounds of the decoder's log magnitudes. Corpus magnitudes sit well inside;
/// the bounds keep `exp` finite while early updates are still large.
pub const LOG_MAG_RANGE: (f64, f64) = (-30.0, 10.0);

/// Convolutional decoder `frames x C -> frames x bins` emitting natural-log
/// linear magnitudes. It is trained through a mel projection, so that the
/// loss compares band energies and not individual harmonic bins.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub out: Linear,
    /// `bins x n_mels`.
    pub mel: Mat<f32>,
}

impl Decoder {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, channels: usize, hidden: usize, mel: Mat<f32>, kernel: usize) -> Result<Self> {
        let n_bins = mel.rows();
        let mut s = b.sub("decoder");
        let conv1 = Conv1d::new(&mut s, "conv1", channels, hidden, kernel)?;
        let conv2 = Conv1d::new(&mut s, "conv2", hidden, hidden, kernel)?;
        let out = Linear::new(&mut s, "out", hidden, n_bins)?;
        let bias = s.store_mut().get_mut(out.b.expect("decoder output has a bias"));
        *bias = Mat::filled(1, n_bins, T::lit(OUTPUT_BIAS));
        Ok(Self { conv1, conv2, out, mel })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, z: Var<'t, T>) -> Var<'t, T> {
        let h = swish(self.conv1.forward(ctx, z));
        let h = h + swish(self.conv2.forward(ctx, h));
        self.out.forward(ctx, h).clamp(T::lit(LOG_MAG_RANGE.0), T::lit(LOG_MAG_RANGE.1))
    }

    /// `ln(mel(exp(log_mag)) + LOG_FLOOR)`, differentiable.
    pub fn log_mel<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, log_mag: Var<'t, T>) -> Var<'t, T> {
        log_mag.exp().matmul(ctx.constant(self.mel.cast())).add_scalar(T::lit(LOG_FLOOR)).ln()
    }

    /// [`Decoder::log_mel`] of a given linear spectrogram.
    pub fn log_mel_of<T: Scalar>(&self, spec: &Mat<f32>) -> Mat<T> {
        let mel = spec.matmul(&self.mel).expect("spectrogram bins match the filterbank");
        Mat::from_vec(mel.rows(), mel.cols(), mel.data().iter().map(|&x| T::lit((x as f64 + LOG_FLOOR).ln())).collect())
            .expect("same shape")
    }

    /// Linear magnitudes from decoder output.
    pub fn magnitude<T: Scalar>(log_mag: &Mat<T>) -> Mat<f32> {
        let data = log_mag.data().iter().map(|v| v.as_f64().exp() as f32).collect();
        Mat::from_vec(log_mag.rows(), log_mag.cols(), data).expect("same shape")
    }
}
