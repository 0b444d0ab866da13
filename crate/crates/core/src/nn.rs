//! Parameter construction and the small layer vocabulary the models share.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stylefusion_autodiff::{Mat, ParamId, ParamStore, Scalar, Tape, Var};

use crate::error::Result;

/// A tape together with the parameters it reads.
#[derive(Clone, Copy)]
pub struct Ctx<'t, T: Scalar> {
    pub tape: &'t Tape<T>,
    pub store: &'t ParamStore<T>,
}

impl<'t, T: Scalar> Ctx<'t, T> {
    pub fn new(tape: &'t Tape<T>, store: &'t ParamStore<T>) -> Self {
        Self { tape, store }
    }

    pub fn p(&self, id: ParamId) -> Var<'t, T> {
        self.tape.param(self.store, id)
    }

    pub fn constant(&self, m: Mat<T>) -> Var<'t, T> {
        self.tape.constant(m)
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Var<'t, T> {
        self.tape.constant(Mat::zeros(rows, cols))
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±scale / sqrt(fan_in)`, fan-in being the row count.
    FanIn(f64),
    Normal(f64),
}

/// Registers parameters under a name prefix, drawing initial values from a
/// seeded generator.
pub struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    pub fn sub(&mut self, name: &str) -> Builder<'_, T> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}/{name}", self.prefix) };
        Builder { store: self.store, rng: self.rng, prefix }
    }

    pub fn param(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<ParamId> {
        let value = match init {
            Init::Zeros => Mat::zeros(rows, cols),
            Init::Ones => Mat::filled(rows, cols, T::one()),
            Init::FanIn(scale) => {
                let a = scale / (rows.max(1) as f64).sqrt();
                Mat::from_fn(rows, cols, |_, _| T::lit(self.rng.random_range(-a..=a)))
            }
            Init::Normal(std) => Mat::from_fn(rows, cols, |_, _| {
                let z: f64 = StandardNormal.sample(&mut *self.rng);
                T::lit(std * z)
            }),
        };
        let full = if self.prefix.is_empty() { name.to_string() } else { format!("{}/{name}", self.prefix) };
        Ok(self.store.add(full, value)?)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        self.store
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_init(b, name, in_dim, out_dim, Init::FanIn(1.0), true)
    }

    pub fn with_init<T: Scalar>(b: &mut Builder<'_, T>, name: &str, in_dim: usize, out_dim: usize, init: Init, bias: bool) -> Result<Self> {
        let mut s = b.sub(name);
        let w = s.param("w", in_dim, out_dim, init)?;
        let bias = if bias { Some(s.param("b", 1, out_dim, Init::Zeros)?) } else { None };
        Ok(Self { w, b: bias, in_dim, out_dim })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let y = x.matmul(ctx.p(self.w));
        match self.b {
            Some(b) => y.add_row(ctx.p(b)),
            None => y,
        }
    }
}

/// Same-padded 1-D convolution over frames (rows), kernel size odd.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub proj: Linear,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, in_dim: usize, out_dim: usize, kernel: usize) -> Result<Self> {
        debug_assert!(kernel % 2 == 1);
        Ok(Self { proj: Linear::new(b, name, in_dim * kernel, out_dim)?, kernel })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let half = (self.kernel / 2) as isize;
        let taps: Vec<_> = (-half..=half).map(|o| if o == 0 { x } else { x.shift_rows(o) }).collect();
        self.proj.forward(ctx, ctx.tape.concat_cols(&taps))
    }
}

/// Per-channel same-padded convolution over frames.
#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
}

impl DepthwiseConv {
    /// Starts near the identity: unit center tap plus small noise.
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, dim: usize, kernel: usize) -> Result<Self> {
        let mut s = b.sub(name);
        let w = s.param("w", kernel, dim, Init::Normal(0.05))?;
        let center = kernel / 2;
        {
            let m = s.store.get_mut(w);
            for c in 0..dim {
                let v = m.get(center, c);
                m.set(center, c, v + T::one());
            }
        }
        let bias = s.param("b", 1, dim, Init::Zeros)?;
        Ok(Self { w, b: bias, kernel })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: Ctx<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let w = ctx.p(self.w);
        let half = (self.kernel / 2) as isize;
        let mut acc: Option<Var<'t, T>> = None;
        for (j, o) in (-half..=half).enumerate() {
            let shifted = if o == 0 { x } else { x.shift_rows(o) };
            let term = shifted.mul_row(w.slice_rows(j, j + 1));
            acc = Some(match acc {
                Some(a) => a + term,
                None => term,
            });
        }
        acc.expect("kernel is nonempty").add_row(ctx.p(self.b))
    }
}

pub fn swish<'t, T: Scalar>(x: Var<'t, T>) -> Var<'t, T> {
    x * x.sigmoid()
}

/// Negative log-likelihood of `label` under softmax of a `1 x K` logit row.
pub fn cross_entropy<'t, T: Scalar>(logits: Var<'t, T>, label: usize) -> Var<'t, T> {
    let k = logits.cols();
    let mut onehot = Mat::zeros(1, k);
    onehot.set(0, label, T::one());
    -(logits.log_softmax_rows() * logits.tape().constant(onehot)).sum()
}

/// Natural-log compression used for every spectrogram front end.
pub fn log_spectrum<T: Scalar>(spec: &Mat<f32>) -> Mat<T> {
    Mat::from_vec(spec.rows(), spec.cols(), spec.data().iter().map(|&x| T::lit((x as f64 + crate::backbone::LOG_FLOOR).ln())).collect())
        .expect("same shape")
}
