//! Conformer-style fusion blocks that render control embeddings onto
//! frame-level features.
//!
//! Every variant shares the same sub-layer stack:
//!
//! ```text
//! w     = MSA(FFN1(w_in + a1))
//! w     = GRU(w + a2; h0 = a3) + DepthwiseConv(w)
//! w_out = LN(FFN2(w + a4))
//! ```
//!
//! and differs only in where the addends `a*` come from. The hierarchical
//! block projects the speaker embedding into `a1`, the sum of speaker and
//! style into `a2`/`a3`, and the style embedding into `a4`. The single-vector
//! block projects the concatenated pair into all four. The concatenation
//! baseline adds one projection of the pair to `w_in` and leaves the rest
//! unconditioned (`h0 = 0`).
//!
//! Attention is unmasked; the GRU runs left to right.

use stylefusion_autodiff::{Scalar, Var};

use crate::config::FusionVariant;
use crate::error::{Error, Result};
use crate::nn::{swish, Builder, Ctx, DepthwiseConv, Init, Linear};

/// Sizes shared by every block of one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionDims {
    pub d_model: usize,
    pub d_style: usize,
    pub d_spk: usize,
    pub heads: usize,
    pub kernel: usize,
}

/// `x + W2 swish(W1 x)`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, dim: usize) -> Result<Self> {
        let mut s = b.sub(name);
        Ok(Self { w1: Linear::new(&mut s, "w1", dim, 2 * dim)?, w2: Linear::new(&mut s, "w2", 2 * dim, dim)? })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x + self.w2.forward(ctx, swish(self.w1.forward(ctx, x)))
    }
}

/// Residual multi-head self-attention without a mask.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, dim: usize, heads: usize) -> Result<Self> {
        let mut s = b.sub(name);
        Ok(Self { qkv: Linear::new(&mut s, "qkv", dim, 3 * dim)?, out: Linear::new(&mut s, "out", dim, dim)?, heads })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let d = x.cols();
        let dh = d / self.heads;
        let qkv = self.qkv.forward(ctx, x);
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let heads: Vec<_> = (0..self.heads)
            .map(|h| {
                let q = qkv.slice_cols(h * dh, (h + 1) * dh);
                let k = qkv.slice_cols(d + h * dh, d + (h + 1) * dh);
                let v = qkv.slice_cols(2 * d + h * dh, 2 * d + (h + 1) * dh);
                q.matmul_t(k).scale(scale).softmax_rows().matmul(v)
            })
            .collect();
        let merged = if heads.len() == 1 { heads[0] } else { ctx.tape.concat_cols(&heads) };
        x + self.out.forward(ctx, merged)
    }
}

/// Single-layer unidirectional GRU, gate layout `[r | z | n]`.
#[derive(Debug, Clone)]
pub struct Gru {
    pub input: Linear,
    pub hidden: Linear,
    pub dim: usize,
}

impl Gru {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, dim: usize) -> Result<Self> {
        let mut s = b.sub(name);
        Ok(Self { input: Linear::new(&mut s, "input", dim, 3 * dim)?, hidden: Linear::new(&mut s, "hidden", dim, 3 * dim)?, dim })
    }

    /// Runs over the rows of `x` from `h0` (`1 x dim`), returning every
    /// hidden state.
    pub fn forward<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, x: Var<'t, T>, h0: Var<'t, T>) -> Var<'t, T> {
        let d = self.dim;
        let gi = self.input.forward(ctx, x);
        let mut h = h0;
        let mut outs = Vec::with_capacity(x.rows());
        for t in 0..x.rows() {
            let g = gi.slice_rows(t, t + 1);
            let gh = self.hidden.forward(ctx, h);
            let r = (g.slice_cols(0, d) + gh.slice_cols(0, d)).sigmoid();
            let z = (g.slice_cols(d, 2 * d) + gh.slice_cols(d, 2 * d)).sigmoid();
            let n = (g.slice_cols(2 * d, 3 * d) + r * gh.slice_cols(2 * d, 3 * d)).tanh();
            h = n + z * (h - n);
            outs.push(h);
        }
        ctx.tape.concat_rows(&outs)
    }
}

/// Conditioning projections for one block.
#[derive(Debug, Clone)]
pub enum Conditioning {
    Hierarchical { ffn1: Linear, gru_in: Linear, gru_h0: Linear, ffn2: Linear },
    Shared { ffn1: Linear, gru_in: Linear, gru_h0: Linear, ffn2: Linear },
    Input { proj: Linear },
}

impl Conditioning {
    pub fn projections(&self) -> Vec<&Linear> {
        match self {
            Conditioning::Hierarchical { ffn1, gru_in, gru_h0, ffn2 } | Conditioning::Shared { ffn1, gru_in, gru_h0, ffn2 } => {
                vec![ffn1, gru_in, gru_h0, ffn2]
            }
            Conditioning::Input { proj } => vec![proj],
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionBlock {
    pub variant: FusionVariant,
    pub dims: FusionDims,
    pub cond: Conditioning,
    pub ffn1: FeedForward,
    pub attn: SelfAttention,
    pub gru: Gru,
    pub conv: DepthwiseConv,
    pub ffn2: FeedForward,
    pub ln_gamma: stylefusion_autodiff::ParamId,
    pub ln_beta: stylefusion_autodiff::ParamId,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Copy)]
pub struct FusionTrace<'t, T: Scalar> {
    pub input: Var<'t, T>,
    /// Input of FFN1, conditioning included.
    pub ffn1_input: Var<'t, T>,
    /// After FFN1 and MSA.
    pub post_speaker: Var<'t, T>,
    pub gru_path: Var<'t, T>,
    pub conv_path: Var<'t, T>,
    /// The per-frame vector added before FFN2, if any.
    pub ffn2_addend: Option<Var<'t, T>>,
    /// Block output.
    pub post_style: Var<'t, T>,
}

fn no_bias<T: Scalar>(b: &mut Builder<'_, T>, name: &str, i: usize, o: usize) -> Result<Linear> {
    Linear::with_init(b, name, i, o, Init::FanIn(1.0), false)
}

fn check(sublayer: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { sublayer: sublayer.to_string(), expected, got })
    }
}

impl FusionBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, variant: FusionVariant, dims: FusionDims) -> Result<Self> {
        let d = dims.d_model;
        if dims.heads == 0 || !d.is_multiple_of(dims.heads) {
            return Err(Error::Config(format!("d_model {d} not divisible by {} heads", dims.heads)));
        }
        if variant == FusionVariant::Hctscm && dims.d_style != dims.d_spk {
            return Err(Error::Dimension { sublayer: "gru conditioning".into(), expected: dims.d_spk, got: dims.d_style });
        }
        let mut s = b.sub(name);
        let pair = dims.d_style + dims.d_spk;
        let cond = {
            let mut c = s.sub("cond");
            match variant {
                FusionVariant::Hctscm => Conditioning::Hierarchical {
                    ffn1: no_bias(&mut c, "ffn1", dims.d_spk, d)?,
                    gru_in: no_bias(&mut c, "gru_in", dims.d_spk, d)?,
                    gru_h0: no_bias(&mut c, "gru_h0", dims.d_spk, d)?,
                    ffn2: no_bias(&mut c, "ffn2", dims.d_style, d)?,
                },
                FusionVariant::Tscm => Conditioning::Shared {
                    ffn1: no_bias(&mut c, "ffn1", pair, d)?,
                    gru_in: no_bias(&mut c, "gru_in", pair, d)?,
                    gru_h0: no_bias(&mut c, "gru_h0", pair, d)?,
                    ffn2: no_bias(&mut c, "ffn2", pair, d)?,
                },
                FusionVariant::Concat => Conditioning::Input { proj: no_bias(&mut c, "input", pair, d)? },
            }
        };
        Ok(Self {
            variant,
            dims,
            cond,
            ffn1: FeedForward::new(&mut s, "ffn1", d)?,
            attn: SelfAttention::new(&mut s, "msa", d, dims.heads)?,
            gru: Gru::new(&mut s, "gru", d)?,
            conv: DepthwiseConv::new(&mut s, "conv", d, dims.kernel)?,
            ffn2: FeedForward::new(&mut s, "ffn2", d)?,
            ln_gamma: s.param("ln/gamma", 1, d, Init::Ones)?,
            ln_beta: s.param("ln/beta", 1, d, Init::Zeros)?,
        })
    }

    /// Applies the block with the control pair routed according to the
    /// block's variant.
    pub fn forward<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, w_in: Var<'t, T>, style: Var<'t, T>, speaker: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.trace(ctx, w_in, style, speaker)?.post_style)
    }

    pub fn trace<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        w_in: Var<'t, T>,
        style: Var<'t, T>,
        speaker: Var<'t, T>,
    ) -> Result<FusionTrace<'t, T>> {
        match self.variant {
            FusionVariant::Hctscm => self.hctscm_trace(ctx, w_in, style, speaker),
            FusionVariant::Tscm | FusionVariant::Concat => {
                check("style embedding", self.dims.d_style, style.cols())?;
                check("speaker embedding", self.dims.d_spk, speaker.cols())?;
                let control = ctx.tape.concat_cols(&[style, speaker]);
                self.single_trace(ctx, w_in, control)
            }
        }
    }

    /// Hierarchical fusion: speaker at FFN1, their sum at the GRU, style at
    /// FFN2.
    pub fn hctscm_forward<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        w_in: Var<'t, T>,
        style: Var<'t, T>,
        speaker: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        Ok(self.hctscm_trace(ctx, w_in, style, speaker)?.post_style)
    }

    /// One control vector at every conditioning site.
    pub fn tscm_forward<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, w_in: Var<'t, T>, control: Var<'t, T>) -> Result<Var<'t, T>> {
        if self.variant != FusionVariant::Tscm {
            return Err(Error::Config(format!("tscm_forward on a {} block", self.variant)));
        }
        Ok(self.single_trace(ctx, w_in, control)?.post_style)
    }

    /// Concatenated control added to every input frame, then the plain
    /// block.
    pub fn concat_forward<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, w_in: Var<'t, T>, control: Var<'t, T>) -> Result<Var<'t, T>> {
        if self.variant != FusionVariant::Concat {
            return Err(Error::Config(format!("concat_forward on a {} block", self.variant)));
        }
        Ok(self.single_trace(ctx, w_in, control)?.post_style)
    }

    fn hctscm_trace<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        w_in: Var<'t, T>,
        style: Var<'t, T>,
        speaker: Var<'t, T>,
    ) -> Result<FusionTrace<'t, T>> {
        let Conditioning::Hierarchical { ffn1, gru_in, gru_h0, ffn2 } = &self.cond else {
            return Err(Error::Config(format!("hctscm_forward on a {} block", self.variant)));
        };
        check("input frames", self.dims.d_model, w_in.cols())?;
        check("ffn1 conditioning (speaker)", self.dims.d_spk, speaker.cols())?;
        check("ffn2 conditioning (style)", self.dims.d_style, style.cols())?;
        let joint = speaker + style;
        self.stack(
            ctx,
            w_in,
            Some(ffn1.forward(ctx, speaker)),
            Some(gru_in.forward(ctx, joint)),
            Some(gru_h0.forward(ctx, joint)),
            Some(ffn2.forward(ctx, style)),
        )
    }

    fn single_trace<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, w_in: Var<'t, T>, control: Var<'t, T>) -> Result<FusionTrace<'t, T>> {
        check("input frames", self.dims.d_model, w_in.cols())?;
        let pair = self.dims.d_style + self.dims.d_spk;
        match &self.cond {
            Conditioning::Shared { ffn1, gru_in, gru_h0, ffn2 } => {
                check("tscm conditioning", pair, control.cols())?;
                self.stack(
                    ctx,
                    w_in,
                    Some(ffn1.forward(ctx, control)),
                    Some(gru_in.forward(ctx, control)),
                    Some(gru_h0.forward(ctx, control)),
                    Some(ffn2.forward(ctx, control)),
                )
            }
            Conditioning::Input { proj } => {
                check("concat projection", pair, control.cols())?;
                self.stack(ctx, w_in, Some(proj.forward(ctx, control)), None, None, None)
            }
            Conditioning::Hierarchical { .. } => {
                Err(Error::Config("a hierarchical block needs separate style and speaker embeddings".into()))
            }
        }
    }

    fn stack<'t, T: Scalar>(
        &self,
        ctx: Ctx<'t, T>,
        w_in: Var<'t, T>,
        a1: Option<Var<'t, T>>,
        a2: Option<Var<'t, T>>,
        h0: Option<Var<'t, T>>,
        a4: Option<Var<'t, T>>,
    ) -> Result<FusionTrace<'t, T>> {
        if w_in.rows() == 0 {
            return Err(Error::Empty("frame sequence"));
        }
        let add = |x: Var<'t, T>, a: Option<Var<'t, T>>| match a {
            Some(a) => x.add_row(a),
            None => x,
        };
        let ffn1_input = add(w_in, a1);
        let post_speaker = self.attn.forward(ctx, self.ffn1.forward(ctx, ffn1_input));
        let h0 = h0.unwrap_or_else(|| ctx.zeros(1, self.dims.d_model));
        let gru_path = self.gru.forward(ctx, add(post_speaker, a2), h0);
        let conv_path = self.conv.forward(ctx, post_speaker);
        let branch = gru_path + conv_path;
        let pre_ln = self.ffn2.forward(ctx, add(branch, a4));
        let post_style = pre_ln.layer_norm(T::lit(1e-5)).mul_row(ctx.p(self.ln_gamma)).add_row(ctx.p(self.ln_beta));
        Ok(FusionTrace { input: w_in, ffn1_input, post_speaker, gru_path, conv_path, ffn2_addend: a4, post_style })
    }
}

#[cfg(test)]
mod tests {
    use stylefusion_autodiff::{Mat, ParamStore, Tape};

    use super::*;
    use crate::nn::seeded_rng;

    fn dims() -> FusionDims {
        FusionDims { d_model: 8, d_style: 4, d_spk: 4, heads: 2, kernel: 5 }
    }

    fn block(variant: FusionVariant, seed: u64) -> (ParamStore<f64>, FusionBlock) {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let b = FusionBlock::new(&mut Builder::new(&mut store, &mut rng), "blk", variant, dims()).unwrap();
        (store, b)
    }

    fn frames(t: usize, seed: u64) -> Mat<f64> {
        Mat::from_fn(t, 8, |r, c| ((r * 31 + c * 7 + seed as usize) as f64 * 0.37).sin())
    }

    #[test]
    fn wrong_speaker_width_names_sublayer() {
        let (store, b) = block(FusionVariant::Hctscm, 1);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let err = b
            .hctscm_forward(ctx, tape.constant(frames(3, 0)), tape.constant(Mat::zeros(1, 4)), tape.constant(Mat::zeros(1, 5)))
            .unwrap_err();
        assert!(err.to_string().contains("ffn1"), "{err}");
    }

    #[test]
    fn single_frame_is_valid() {
        for v in FusionVariant::ALL {
            let (store, b) = block(v, 2);
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &store);
            let out = b
                .forward(ctx, tape.constant(frames(1, 0)), tape.constant(Mat::filled(1, 4, 0.3)), tape.constant(Mat::filled(1, 4, -0.2)))
                .unwrap();
            assert_eq!(out.shape(), (1, 8));
            assert!(out.value().is_finite());
        }
    }

    #[test]
    fn variant_entry_points_reject_other_blocks() {
        let (store, b) = block(FusionVariant::Hctscm, 3);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        assert!(b.tscm_forward(ctx, tape.constant(frames(2, 0)), tape.constant(Mat::zeros(1, 8))).is_err());
    }
}
