//! Linear probes and nearest-centroid classification on fixed features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multinomial logistic regression on standardized features, fit by
/// full-batch gradient descent. Deterministic: weights start at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `classes x (dim + 1)`, bias last.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { iterations: 400, learning_rate: 0.5, l2: 1e-3 }
    }
}

fn check_features(x: &[Vec<f64>]) -> Result<usize> {
    let dim = x.first().map(Vec::len).ok_or(Error::Empty("probe features"))?;
    if let Some(bad) = x.iter().find(|v| v.len() != dim) {
        return Err(Error::Dimension { sublayer: "probe features".into(), expected: dim, got: bad.len() });
    }
    Ok(dim)
}

fn softmax(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
}

impl LinearProbe {
    pub fn fit(x: &[Vec<f64>], labels: &[usize], classes: usize, opts: ProbeOptions) -> Result<Self> {
        let dim = check_features(x)?;
        if x.len() != labels.len() {
            return Err(Error::Dimension { sublayer: "probe labels".into(), expected: x.len(), got: labels.len() });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        let n = x.len() as f64;
        let mut mean = vec![0.0; dim];
        for v in x {
            for (m, a) in mean.iter_mut().zip(v) {
                *m += a / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for v in x {
            for ((s, a), m) in scale.iter_mut().zip(v).zip(&mean) {
                *s += (a - m).powi(2) / n;
            }
        }
        for s in scale.iter_mut() {
            *s = if *s > 1e-12 { 1.0 / s.sqrt() } else { 0.0 };
        }
        let mut probe = Self { mean, scale, weights: vec![vec![0.0; dim + 1]; classes] };
        let z: Vec<Vec<f64>> = x.iter().map(|v| probe.standardize(v)).collect();
        for _ in 0..opts.iterations {
            let mut grad = vec![vec![0.0; dim + 1]; classes];
            for (zi, &y) in z.iter().zip(labels) {
                let mut p = probe.logits_std(zi);
                softmax(&mut p);
                for (k, gk) in grad.iter_mut().enumerate() {
                    let d = (p[k] - if k == y { 1.0 } else { 0.0 }) / n;
                    for (g, a) in gk.iter_mut().zip(zi) {
                        *g += d * a;
                    }
                    gk[dim] += d;
                }
            }
            for (wk, gk) in probe.weights.iter_mut().zip(&grad) {
                for (i, (w, g)) in wk.iter_mut().zip(gk).enumerate() {
                    let reg = if i < dim { opts.l2 * *w } else { 0.0 };
                    *w -= opts.learning_rate * (g + reg);
                }
            }
        }
        Ok(probe)
    }

    fn standardize(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(&self.scale).map(|((a, m), s)| (a - m) * s).collect()
    }

    fn logits_std(&self, z: &[f64]) -> Vec<f64> {
        let dim = z.len();
        self.weights.iter().map(|w| w[..dim].iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + w[dim]).collect()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn predict(&self, v: &[f64]) -> Result<usize> {
        if v.len() != self.dim() {
            return Err(Error::Dimension { sublayer: "probe input".into(), expected: self.dim(), got: v.len() });
        }
        let logits = self.logits_std(&self.standardize(v));
        Ok(argmax(&logits))
    }

    /// Percentage of correct predictions.
    pub fn accuracy(&self, x: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        let preds = x.iter().map(|v| self.predict(v)).collect::<Result<Vec<_>>>()?;
        Ok(percent_correct(&preds, labels))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `100 * matches / len`; 0 for an empty set.
pub fn percent_correct(predicted: &[usize], intended: &[usize]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(intended).filter(|(a, b)| a == b).count();
    100.0 * hits as f64 / predicted.len() as f64
}

/// Classifies each test vector by the nearest class mean of the training
/// vectors (Euclidean) and returns the percentage correct.
pub fn nearest_centroid_accuracy(
    train: &[Vec<f64>],
    train_labels: &[usize],
    test: &[Vec<f64>],
    test_labels: &[usize],
    classes: usize,
) -> Result<f64> {
    let dim = check_features(train)?;
    let mut centroids = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (v, &l) in train.iter().zip(train_labels) {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        counts[l] += 1;
        for (c, a) in centroids[l].iter_mut().zip(v) {
            *c += a;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        for x in c.iter_mut() {
            *x /= n.max(1) as f64;
        }
    }
    let preds: Vec<usize> = test
        .iter()
        .map(|v| {
            let d: Vec<f64> = centroids
                .iter()
                .zip(&counts)
                .map(|(c, &n)| if n == 0 { f64::NEG_INFINITY } else { -c.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>() })
                .collect();
            argmax(&d)
        })
        .collect();
    Ok(percent_correct(&preds, test_labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (Vec<Vec<f64>>, Vec<usize>) {
        let centers = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for i in 0..10 {
                let t = i as f64 * 0.7;
                x.push(vec![c[0] + 0.3 * t.sin(), c[1] + 0.3 * t.cos()]);
                y.push(k);
            }
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs();
        let p = LinearProbe::fit(&x, &y, 3, ProbeOptions::default()).unwrap();
        assert_eq!(p.accuracy(&x, &y).unwrap(), 100.0);
        assert_eq!(nearest_centroid_accuracy(&x, &y, &x, &y, 3).unwrap(), 100.0);
    }

    #[test]
    fn constant_features_do_not_produce_nan() {
        let x = vec![vec![1.0, 2.0]; 4];
        let p = LinearProbe::fit(&x, &[0, 1, 0, 1], 2, ProbeOptions::default()).unwrap();
        assert!(p.weights.iter().flatten().all(|w| w.is_finite()));
    }

    #[test]
    fn percent_correct_hand_values() {
        assert_eq!(percent_correct(&[0, 1, 2, 3], &[0, 1, 2, 3]), 100.0);
        assert_eq!(percent_correct(&[0, 1, 2, 3], &[0, 0, 2, 2]), 50.0);
    }
}
