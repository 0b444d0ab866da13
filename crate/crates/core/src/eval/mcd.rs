//! Cepstral distortion between spectrograms with dynamic time warping.

use crate::error::{Error, Result};
use crate::spectrogram::Spectrogram;

/// Cepstral coefficients kept, excluding the 0th (energy) coefficient.
pub const N_CEPS: usize = 13;

const LOG_FLOOR: f64 = 1e-5;

/// `(10 / ln 10) * sqrt(2)`.
pub const MCD_SCALE: f64 = std::f64::consts::SQRT_2 * 10.0 / std::f64::consts::LN_10;

/// Coefficients 1..=13 of the orthonormal DCT-II of the log magnitude
/// frame.
pub fn cepstrum(frame: &[f32]) -> [f64; N_CEPS] {
    let n = frame.len() as f64;
    let logs: Vec<f64> = frame.iter().map(|&x| (x as f64 + LOG_FLOOR).ln()).collect();
    let mut out = [0.0; N_CEPS];
    for (k, c) in out.iter_mut().enumerate() {
        let k = (k + 1) as f64;
        let s: f64 = logs.iter().enumerate().map(|(i, l)| l * (std::f64::consts::PI * k * (i as f64 + 0.5) / n).cos()).sum();
        *c = s * (2.0 / n).sqrt();
    }
    out
}

fn euclid(a: &[f64; N_CEPS], b: &[f64; N_CEPS]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Minimum-cost monotonic path with the symmetric step set
/// `{(1,0), (0,1), (1,1)}`. Returns the matched index pairs from start to end.
pub fn dtw_path(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    let m = cost[0].len();
    let mut acc = vec![vec![f64::INFINITY; m]; n];
    for i in 0..n {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut b = f64::INFINITY;
                if i > 0 {
                    b = b.min(acc[i - 1][j]);
                }
                if j > 0 {
                    b = b.min(acc[i][j - 1]);
                }
                if i > 0 && j > 0 {
                    b = b.min(acc[i - 1][j - 1]);
                }
                b
            };
            acc[i][j] = best + cost[i][j];
        }
    }
    let (mut i, mut j) = (n - 1, m - 1);
    let mut path = vec![(i, j)];
    while i > 0 || j > 0 {
        // Prefer the diagonal on ties.
        let mut next = (usize::MAX, usize::MAX);
        let mut best = f64::INFINITY;
        if i > 0 && j > 0 {
            best = acc[i - 1][j - 1];
            next = (i - 1, j - 1);
        }
        if i > 0 && acc[i - 1][j] < best {
            best = acc[i - 1][j];
            next = (i - 1, j);
        }
        if j > 0 && acc[i][j - 1] < best {
            next = (i, j - 1);
        }
        (i, j) = next;
        path.push((i, j));
    }
    path.reverse();
    path
}

/// Distortion between a reference and a hypothesis spectrogram, in dB.
pub fn mcd(reference: &Spectrogram, hypothesis: &Spectrogram) -> Result<f64> {
    if reference.rows() == 0 || hypothesis.rows() == 0 {
        return Err(Error::Empty("spectrogram"));
    }
    if reference.cols() != hypothesis.cols() {
        return Err(Error::BinMismatch { expected: reference.cols(), got: hypothesis.cols() });
    }
    let cr: Vec<_> = (0..reference.rows()).map(|r| cepstrum(reference.row(r))).collect();
    let ch: Vec<_> = (0..hypothesis.rows()).map(|r| cepstrum(hypothesis.row(r))).collect();
    let cost: Vec<Vec<f64>> = cr.iter().map(|a| ch.iter().map(|b| euclid(a, b)).collect()).collect();
    let path = dtw_path(&cost);
    let mean = path.iter().map(|&(i, j)| cost[i][j]).sum::<f64>() / path.len() as f64;
    Ok(MCD_SCALE * mean)
}
