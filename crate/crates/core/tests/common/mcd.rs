use stylefusion::eval::{mcd, N_CEPS};
use stylefusion_autodiff::Mat;

pub fn spec(frames: usize, bins: usize, values: &[f32]) -> Mat<f32> {
    Mat::from_fn(frames, bins, |r, c| values[(r * bins + c) % values.len()])
}

/// Cepstrum by the textbook orthonormal DCT-II written out independently.
pub fn oracle_cepstrum(frame: &[f32]) -> Vec<f64> {
    let n = frame.len();
    (1..=N_CEPS)
        .map(|k| {
            let mut s = 0.0;
            for (i, &x) in frame.iter().enumerate() {
                let angle = std::f64::consts::PI * (k * (2 * i + 1)) as f64 / (2 * n) as f64;
                s += ((x as f64) + 1e-5).ln() * angle.cos();
            }
            s * (2.0 / n as f64).sqrt()
        })
        .collect()
}

/// Minimum-sum monotonic path by exhaustive recursion, returned as (sum,
/// length); distortion is the mean over the path.
pub fn oracle_dtw(cost: &[Vec<f64>], i: usize, j: usize) -> (f64, usize) {
    if i == 0 && j == 0 {
        return (cost[0][0], 1);
    }
    let mut best: Option<(f64, usize)> = None;
    let mut consider = |c: (f64, usize)| {
        if best.is_none_or(|b| c.0 < b.0) {
            best = Some(c);
        }
    };
    if i > 0 && j > 0 {
        consider(oracle_dtw(cost, i - 1, j - 1));
    }
    if i > 0 {
        consider(oracle_dtw(cost, i - 1, j));
    }
    if j > 0 {
        consider(oracle_dtw(cost, i, j - 1));
    }
    let (s, l) = best.unwrap();
    (s + cost[i][j], l + 1)
}

pub fn oracle_mcd(a: &Mat<f32>, b: &Mat<f32>) -> f64 {
    let ca: Vec<_> = (0..a.rows()).map(|r| oracle_cepstrum(a.row(r))).collect();
    let cb: Vec<_> = (0..b.rows()).map(|r| oracle_cepstrum(b.row(r))).collect();
    let cost: Vec<Vec<f64>> =
        ca.iter().map(|x| cb.iter().map(|y| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()).collect()).collect();
    let (sum, len) = oracle_dtw(&cost, a.rows() - 1, b.rows() - 1);
    10.0 / std::f64::consts::LN_10 * std::f64::consts::SQRT_2 * sum / len as f64
}

/// Library MCD against the oracle to 1e-9.
pub fn check_mcd(a: &Mat<f32>, b: &Mat<f32>) {
    let got = mcd(a, b).unwrap();
    let want = oracle_mcd(a, b);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}
