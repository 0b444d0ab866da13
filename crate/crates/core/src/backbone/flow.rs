//! Affine coupling flows.
//!
//! A coupling layer splits the channels into halves `a = x[:, ..c]` and
//! `b = x[:, c..]`, predicts `(m, logs)` from `a` and the conditioning, and
//! maps `b -> m + exp(logs) * b`. `a` passes through unchanged. The halves
//! then swap places so the next layer transforms the other half. The
//! log-determinant of each layer is the sum of its `logs`.

use stylefusion_autodiff::{Scalar, Var};

use crate::config::FusionVariant;
use crate::error::{Error, Result};
use crate::fusion::{FusionBlock, FusionDims, FusionTrace};
use crate::nn::{swish, Builder, Ctx, Init, Linear};

/// One acoustic coupling layer: `pre` lifts the pass-through half to the
/// model width, a fusion block renders the controls onto it, and `post`
/// (zero-initialized) emits `m` and `logs`.
#[derive(Debug, Clone)]
pub struct CouplingLayer {
    pub pre: Linear,
    pub fusion: FusionBlock,
    pub post: Linear,
    pub half: usize,
}

#[derive(Debug, Clone)]
pub struct AcousticFlow {
    pub layers: Vec<CouplingLayer>,
    pub channels: usize,
}

/// Output of a coupling layer before the halves are swapped.
pub struct CouplingOutput<'t, T: Scalar> {
    /// `[a, b']`.
    pub unpermuted: Var<'t, T>,
    /// `[b', a]`, the input of the next layer.
    pub output: Var<'t, T>,
    pub logdet: Var<'t, T>,
    pub trace: FusionTrace<'t, T>,
}

impl CouplingLayer {
    fn params<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        a: Var<'t, T>,
        style: Var<'t, T>,
        speaker: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>, FusionTrace<'t, T>)> {
        let h = self.pre.forward(ctx, a);
        let tr = self.fusion.trace(ctx, h, style, speaker)?;
        let stats = self.post.forward(ctx, tr.post_style);
        let width = stats.cols() / 2;
        Ok((stats.slice_cols(0, width), stats.slice_cols(width, 2 * width), tr))
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        x: Var<'t, T>,
        style: Var<'t, T>,
        speaker: Var<'t, T>,
    ) -> Result<CouplingOutput<'t, T>> {
        let c = self.half;
        let a = x.slice_cols(0, c);
        let b = x.slice_cols(c, x.cols());
        let (m, logs, trace) = self.params(ctx, a, style, speaker)?;
        let b2 = m + logs.exp() * b;
        Ok(CouplingOutput { unpermuted: ctx.tape.concat_cols(&[a, b2]), output: ctx.tape.concat_cols(&[b2, a]), logdet: logs.sum(), trace })
    }

    pub fn inverse<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, y: Var<'t, T>, style: Var<'t, T>, speaker: Var<'t, T>) -> Result<Var<'t, T>> {
        let width = y.cols() - self.half;
        let b2 = y.slice_cols(0, width);
        let a = y.slice_cols(width, y.cols());
        let (m, logs, _) = self.params(ctx, a, style, speaker)?;
        let b = (b2 - m) * logs.scale(T::lit(-1.0)).exp();
        Ok(ctx.tape.concat_cols(&[a, b]))
    }
}

impl AcousticFlow {
    /// Registers parameters under `acoustic_flow/` and the fusion blocks
    /// under `fusion/flow<i>`; `b` is the root builder.
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        channels: usize,
        layers: usize,
        variant: FusionVariant,
        dims: FusionDims,
    ) -> Result<Self> {
        if channels < 2 || !channels.is_multiple_of(2) {
            return Err(Error::Config(format!("acoustic flow needs an even channel count, got {channels}")));
        }
        let half = channels / 2;
        let layers = (0..layers)
            .map(|i| {
                let prefix = format!("l{i}");
                let pre = Linear::new(&mut b.sub("acoustic_flow").sub(&prefix), "pre", half, dims.d_model)?;
                let fusion = FusionBlock::new(&mut b.sub("fusion"), &format!("flow{i}"), variant, dims)?;
                let post = Linear::with_init(
                    &mut b.sub("acoustic_flow").sub(&prefix),
                    "post",
                    dims.d_model,
                    2 * (channels - half),
                    Init::Zeros,
                    true,
                )?;
                Ok(CouplingLayer { pre, fusion, post, half })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, channels })
    }

    fn check<T: Scalar>(&self, x: Var<'_, T>) -> Result<()> {
        if x.cols() != self.channels {
            return Err(Error::Dimension { sublayer: "acoustic flow input".into(), expected: self.channels, got: x.cols() });
        }
        Ok(())
    }

    /// `z -> f(z)` with the total log-determinant and each layer's fusion
    /// trace.
    pub fn forward_traced<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        z: Var<'t, T>,
        style: Var<'t, T>,
        speaker: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>, Vec<FusionTrace<'t, T>>)> {
        self.check(z)?;
        let mut x = z;
        let mut logdet: Option<Var<'t, T>> = None;
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let out = layer.forward(ctx, x, style, speaker)?;
            x = out.output;
            logdet = Some(match logdet {
                Some(l) => l + out.logdet,
                None => out.logdet,
            });
            traces.push(out.trace);
        }
        let logdet = logdet.unwrap_or_else(|| ctx.zeros(1, 1));
        Ok((x, logdet, traces))
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        z: Var<'t, T>,
        style: Var<'t, T>,
        speaker: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let (fz, logdet, _) = self.forward_traced(ctx, z, style, speaker)?;
        Ok((fz, logdet))
    }

    pub fn inverse<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, fz: Var<'t, T>, style: Var<'t, T>, speaker: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check(fz)?;
        let mut x = fz;
        for layer in self.layers.iter().rev() {
            x = layer.inverse(ctx, x, style, speaker)?;
        }
        Ok(x)
    }
}

/// Elementwise affine map `y = m + exp(logs) * x` with per-channel
/// parameters.
#[derive(Debug, Clone)]
pub struct ElementwiseAffine {
    pub m: stylefusion_autodiff::ParamId,
    pub logs: stylefusion_autodiff::ParamId,
}

/// Coupling layer of the duration flow: a small MLP on the pass-through
/// channel and the per-token conditioning.
#[derive(Debug, Clone)]
pub struct DurationCoupling {
    pub l1: Linear,
    pub l2: Linear,
    pub out: Linear,
    /// Channel that is transformed (the other one conditions).
    pub target: usize,
}

/// Flow over `[log duration, auxiliary]` per token, conditioned on a
/// `tokens x hidden` matrix. Forward maps data to noise.
#[derive(Debug, Clone)]
pub struct DurationFlow {
    pub affine: ElementwiseAffine,
    pub couplings: Vec<DurationCoupling>,
    pub hidden: usize,
}

impl DurationCoupling {
    fn stats<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, x: Var<'t, T>, g: Var<'t, T>) -> (Var<'t, T>, Var<'t, T>) {
        let other = x.slice_cols(1 - self.target, 2 - self.target);
        let h = swish(self.l1.forward(ctx, ctx.tape.concat_cols(&[other, g])));
        let h = swish(self.l2.forward(ctx, h));
        let s = self.out.forward(ctx, h);
        (s.slice_cols(0, 1), s.slice_cols(1, 2))
    }

    fn place<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, x: Var<'t, T>, new: Var<'t, T>) -> Var<'t, T> {
        let keep = x.slice_cols(1 - self.target, 2 - self.target);
        if self.target == 0 {
            ctx.tape.concat_cols(&[new, keep])
        } else {
            ctx.tape.concat_cols(&[keep, new])
        }
    }
}

impl DurationFlow {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cond_dim: usize, hidden: usize, layers: usize) -> Result<Self> {
        let mut s = b.sub("duration_flow");
        let affine = ElementwiseAffine { m: s.param("affine/m", 1, 2, Init::Zeros)?, logs: s.param("affine/logs", 1, 2, Init::Zeros)? };
        let couplings = (0..layers)
            .map(|i| {
                let mut l = s.sub(&format!("c{i}"));
                Ok(DurationCoupling {
                    l1: Linear::new(&mut l, "l1", 1 + cond_dim, hidden)?,
                    l2: Linear::new(&mut l, "l2", hidden, hidden)?,
                    out: Linear::with_init(&mut l, "out", hidden, 2, Init::Zeros, true)?,
                    target: if i % 2 == 0 { 0 } else { 1 },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { affine, couplings, hidden })
    }

    /// `[log d, u] -> e` and the log-determinant summed over tokens.
    pub fn forward<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, x: Var<'t, T>, g: Var<'t, T>) -> (Var<'t, T>, Var<'t, T>) {
        let logs = ctx.p(self.affine.logs);
        let mut y = x.mul_row(logs.exp()).add_row(ctx.p(self.affine.m));
        let mut logdet = logs.sum().scale(T::lit(x.rows() as f64));
        for c in &self.couplings {
            let (m, ls) = c.stats(ctx, y, g);
            let target = y.slice_cols(c.target, c.target + 1);
            y = c.place(ctx, y, m + ls.exp() * target);
            logdet = logdet + ls.sum();
        }
        (y, logdet)
    }

    pub fn inverse<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, e: Var<'t, T>, g: Var<'t, T>) -> Var<'t, T> {
        let mut y = e;
        for c in self.couplings.iter().rev() {
            let (m, ls) = c.stats(ctx, y, g);
            let target = y.slice_cols(c.target, c.target + 1);
            y = c.place(ctx, y, (target - m) * ls.scale(T::lit(-1.0)).exp());
        }
        let logs = ctx.p(self.affine.logs);
        let m = ctx.p(self.affine.m);
        y.add_row(m.scale(T::lit(-1.0))).mul_row(logs.scale(T::lit(-1.0)).exp())
    }
}
