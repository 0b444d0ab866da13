//! Maximum-likelihood monotonic alignment between text tokens and acoustic
//! frames.

use stylefusion_autodiff::{Mat, Scalar};

use crate::error::{Error, Result};

/// Token-to-frame assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    /// Frames per token.
    pub durations: Vec<usize>,
    /// Token index of every frame, non-decreasing.
    pub path: Vec<usize>,
}

impl Alignment {
    pub fn from_durations(durations: Vec<usize>) -> Self {
        let path = durations.iter().enumerate().flat_map(|(i, &d)| std::iter::repeat_n(i, d)).collect();
        Self { durations, path }
    }

    pub fn frames(&self) -> usize {
        self.path.len()
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `ll[i][t] = sum_c log N(fz[t, c]; mean[i, c], exp(logstd[i, c]))`.
pub fn log_likelihoods<T: Scalar>(mean: &Mat<T>, logstd: &Mat<T>, fz: &Mat<T>) -> Mat<f64> {
    let (n, c) = mean.shape();
    let t = fz.rows();
    let mut ll = Mat::zeros(n, t);
    for i in 0..n {
        for f in 0..t {
            let mut s = 0.0;
            for k in 0..c {
                let ls = logstd.get(i, k).as_f64();
                let d = fz.get(f, k).as_f64() - mean.get(i, k).as_f64();
                s += -ls - 0.5 * LN_2PI - 0.5 * d * d * (-2.0 * ls).exp();
            }
            ll.set(i, f, s);
        }
    }
    ll
}

/// Best monotonic complete path through a `tokens x frames` score matrix:
/// starts at (0, 0), ends at (N-1, T-1), and each frame either stays on the
/// current token or advances by one.
pub fn best_path(ll: &Mat<f64>) -> Result<Alignment> {
    let (n, t) = ll.shape();
    if n == 0 || t < n {
        return Err(Error::Alignment { tokens: n, frames: t });
    }
    let neg = f64::NEG_INFINITY;
    let mut q = Mat::filled(n, t, neg);
    q.set(0, 0, ll.get(0, 0));
    for f in 1..t {
        // Token i is reachable at frame f only if i <= f and the remaining
        // frames can still cover the remaining tokens.
        let lo = (n + f).saturating_sub(t);
        for i in lo..n.min(f + 1) {
            let stay = q.get(i, f - 1);
            let advance = if i > 0 { q.get(i - 1, f - 1) } else { neg };
            q.set(i, f, ll.get(i, f) + stay.max(advance));
        }
    }
    let mut path = vec![0; t];
    let mut i = n - 1;
    for f in (0..t).rev() {
        path[f] = i;
        if f > 0 && i > 0 && (i == f || q.get(i - 1, f - 1) > q.get(i, f - 1)) {
            i -= 1;
        }
    }
    let mut durations = vec![0; n];
    for &p in &path {
        durations[p] += 1;
    }
    Ok(Alignment { durations, path })
}

/// Alignment of flow-space latents `fz` (frames x C) to the token-level
/// prior.
pub fn monotonic_align<T: Scalar>(prior_mean: &Mat<T>, prior_logstd: &Mat<T>, fz: &Mat<T>) -> Result<Alignment> {
    if fz.rows() < prior_mean.rows() {
        return Err(Error::Alignment { tokens: prior_mean.rows(), frames: fz.rows() });
    }
    best_path(&log_likelihoods(prior_mean, prior_logstd, fz))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_takes_all_frames() {
        let a = best_path(&Mat::from_fn(1, 6, |_, t| t as f64)).unwrap();
        assert_eq!(a.durations, vec![6]);
        assert_eq!(a.path, vec![0; 6]);
    }

    #[test]
    fn too_few_frames() {
        assert!(matches!(best_path(&Mat::zeros(4, 3)), Err(Error::Alignment { tokens: 4, frames: 3 })));
    }

    #[test]
    fn square_is_diagonal() {
        let a = best_path(&Mat::from_fn(4, 4, |i, t| if i == t { 0.0 } else { 5.0 })).unwrap();
        assert_eq!(a.durations, vec![1; 4]);
    }
}
