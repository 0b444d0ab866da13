//! Linear-magnitude spectrograms and their on-disk cache format.
//!
//! File layout: `rows: u32 LE`, `cols: u32 LE`, then `rows * cols`
//! little-endian `f32` values in row-major order (frames x bins).

use std::io::{Read, Write};
use std::path::Path;

use stylefusion_autodiff::Mat;

use crate::error::{Error, Result};

/// `frames x bins`, nonnegative.
pub type Spectrogram = Mat<f32>;

pub fn to_bytes(spec: &Spectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + spec.len() * 4);
    out.extend_from_slice(&(spec.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(spec.cols() as u32).to_le_bytes());
    for &x in spec.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Spectrogram> {
    if bytes.len() < 8 {
        return Err(Error::Parse { line: 0, message: "spectrogram file shorter than its header".into() });
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != rows * cols * 4 {
        return Err(Error::Parse { line: 0, message: format!("spectrogram header says {rows}x{cols} but body has {} bytes", body.len()) });
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Mat::from_vec(rows, cols, data)?)
}

pub fn write(path: &Path, spec: &Spectrogram) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&to_bytes(spec)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Spectrogram> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Repeats every frame `times` times.
pub fn repeat_frames(spec: &Spectrogram, times: usize) -> Spectrogram {
    let mut data = Vec::with_capacity(spec.len() * times);
    for r in 0..spec.rows() {
        for _ in 0..times {
            data.extend_from_slice(spec.row(r));
        }
    }
    Mat::from_vec(spec.rows() * times, spec.cols(), data).expect("repeat shape")
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_bins x n_mels` triangular filters on the HTK mel scale, spanning
/// 0 Hz to Nyquist, unnormalized. Every filter has at least one nonzero
/// weight as long as `n_mels` does not exceed the bin count.
pub fn mel_filterbank(n_bins: usize, sample_rate: u32, n_mels: usize) -> Mat<f32> {
    let nyquist = sample_rate as f64 / 2.0;
    let bin_hz = nyquist / (n_bins - 1).max(1) as f64;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let mut fb = Mat::from_fn(n_bins, n_mels, |k, m| {
        let f = k as f64 * bin_hz;
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let w = if f <= mid { (f - lo) / (mid - lo) } else { (hi - f) / (hi - mid) };
        w.max(0.0) as f32
    });
    // Narrow low bands can fall between bin centers; give them the nearest bin.
    for m in 0..n_mels {
        if (0..n_bins).all(|k| fb.get(k, m) == 0.0) {
            let k = ((edges[m + 1] / bin_hz).round() as usize).min(n_bins - 1);
            fb.set(k, m, 1.0);
        }
    }
    fb
}
