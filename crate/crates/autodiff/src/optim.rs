use crate::mat::Mat;
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Adam with optional global gradient-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub clip_norm: Option<T>,
    pub step: u64,
    pub m: Vec<Mat<T>>,
    pub v: Vec<Mat<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: T) -> Self {
        let m: Vec<Mat<T>> = store.iter().map(|(_, p)| Mat::zeros(p.rows(), p.cols())).collect();
        Self { lr, beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8), clip_norm: None, step: 0, v: m.clone(), m }
    }

    /// Global L2 norm of a gradient set.
    pub fn grad_norm(grads: &[Option<Mat<T>>]) -> T {
        grads.iter().flatten().map(|g| g.data().iter().map(|&x| x * x).sum::<T>()).sum::<T>().sqrt()
    }

    /// Applies one update. Missing gradients count as zero.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Option<Mat<T>>]) {
        assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
        self.step += 1;
        let mut scale = T::one();
        if let Some(max) = self.clip_norm {
            let norm = Self::grad_norm(grads);
            if norm > max && norm.is_finite() {
                scale = max / norm;
            }
        }
        let t = T::lit(self.step as f64);
        let bc1 = T::one() - self.beta1.powf(t);
        let bc2 = T::one() - self.beta2.powf(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(id);
            match &grads[i] {
                Some(g) => {
                    for (((pv, mv), vv), &gv) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                        let gv = gv * scale;
                        *mv = flush(b1 * *mv + (T::one() - b1) * gv);
                        *vv = flush(b2 * *vv + (T::one() - b2) * gv * gv);
                        let mh = *mv / bc1;
                        let vh = *vv / bc2;
                        *pv -= self.lr * mh / (vh.sqrt() + self.eps);
                    }
                }
                None => {
                    for ((pv, mv), vv) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()) {
                        *mv = flush(*mv * b1);
                        *vv = flush(*vv * b2);
                        let mh = *mv / bc1;
                        let vh = *vv / bc2;
                        *pv -= self.lr * mh / (vh.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

/// Subnormal moments are set to zero: they carry no useful update and
/// subnormal arithmetic is slow on common CPUs.
#[inline]
fn flush<T: Scalar>(x: T) -> T {
    if x.is_normal() {
        x
    } else {
        T::zero()
    }
}

/// Elementwise sum of two gradient sets, in place.
pub fn accumulate<T: Scalar>(into: &mut [Option<Mat<T>>], from: Vec<Option<Mat<T>>>) {
    for (dst, src) in into.iter_mut().zip(from) {
        match (dst.as_mut(), src) {
            (Some(d), Some(s)) => d.axpy(T::one(), &s),
            (None, Some(s)) => *dst = Some(s),
            _ => {}
        }
    }
}
