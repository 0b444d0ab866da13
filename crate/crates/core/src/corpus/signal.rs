//! Parametric spectrogram renderer.
//!
//! Each frame is a sum of harmonics of an instantaneous f0, drawn with the
//! magnitude response of a Hann analysis window, weighted by the speaker's
//! formant envelope and spectral tilt. The style scales durations, applies
//! a slowly varying gain envelope and a sinusoidal f0 modulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use stylefusion_autodiff::Mat;

use super::{SpeakerSpec, StyleSpec};
use crate::spectrogram::Spectrogram;
use crate::text::is_vowel;

/// Short-time analysis settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalParams {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for SignalParams {
    fn default() -> Self {
        Self { sample_rate: 16_000, n_fft: 1024, hop: 256 }
    }
}

impl SignalParams {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.n_fft as f64
    }
}

const FORMANT_GAINS: [f64; 3] = [1.0, 0.7, 0.4];
const FORMANT_BANDWIDTHS: [f64; 3] = [90.0, 120.0, 160.0];
const KERNEL_HALF_WIDTH: f64 = 3.0;

/// Nominal length of a character at rate 1.0, in frames.
fn base_frames(c: char) -> f64 {
    if is_vowel(c) {
        3.0
    } else if c.is_ascii_alphabetic() || c == ' ' {
        2.0
    } else {
        3.0
    }
}

fn char_amplitude(c: char) -> f64 {
    if is_vowel(c) {
        1.0
    } else if c.is_ascii_alphabetic() {
        0.6
    } else if c == ' ' {
        0.12
    } else {
        0.08
    }
}

/// Per-character formant scaling in [0.85, 1.15].
fn char_formant_shift(c: char) -> f64 {
    0.85 + 0.3 * ((c as u32 * 37) % 17) as f64 / 16.0
}

/// Magnitude of the Hann window's transform at `delta` bins, normalized to 1 at 0.
pub(crate) fn hann_kernel(delta: f64) -> f64 {
    let d = delta.abs();
    if d < 1e-9 {
        return 1.0;
    }
    if (d - 1.0).abs() < 1e-9 {
        return 0.5;
    }
    let sinc = (std::f64::consts::PI * d).sin() / (std::f64::consts::PI * d);
    (sinc / (1.0 - d * d)).abs()
}

fn interpolate(envelope: &[f64], progress: f64) -> f64 {
    match envelope.len() {
        0 => 1.0,
        1 => envelope[0],
        n => {
            let x = progress.clamp(0.0, 1.0) * (n - 1) as f64;
            let i = (x.floor() as usize).min(n - 2);
            let t = x - i as f64;
            envelope[i] * (1.0 - t) + envelope[i + 1] * t
        }
    }
}

/// Sample length of each character, with a small seeded jitter.
pub fn char_samples(text: &str, style: &StyleSpec, params: &SignalParams, rng: &mut impl Rng) -> Vec<usize> {
    text.chars()
        .map(|c| {
            let jitter: f64 = rng.random_range(0.9..1.1);
            let frames = base_frames(c) * style.rate_factor * jitter;
            ((frames * params.hop as f64).round() as usize).max(params.hop)
        })
        .collect()
}

/// Renders one utterance. Deterministic in `seed`.
pub fn render(text: &str, speaker: &SpeakerSpec, style: &StyleSpec, seed: u64, params: &SignalParams) -> Spectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chars: Vec<char> = text.chars().collect();
    let lengths = char_samples(text, style, params, &mut rng);
    let total: usize = lengths.iter().sum();
    let n_frames = total / params.hop + 1;
    let n_bins = params.n_bins();
    let sr = params.sample_rate as f64;
    let nyquist = sr / 2.0;
    let bin_hz = params.bin_hz();
    let phase0: f64 = rng.random_range(0.0..std::f64::consts::TAU);

    let mut boundaries = Vec::with_capacity(lengths.len());
    let mut acc = 0;
    for &l in &lengths {
        acc += l;
        boundaries.push(acc);
    }

    let mut out = Mat::zeros(n_frames, n_bins);
    for j in 0..n_frames {
        let t = j * params.hop;
        let ci = boundaries.iter().position(|&b| t < b).unwrap_or(chars.len().saturating_sub(1));
        let c = chars.get(ci).copied().unwrap_or(' ');
        let progress = t as f64 / total.max(1) as f64;
        let gain = interpolate(&style.energy_envelope, progress) * char_amplitude(c);
        let tsec = t as f64 / sr;
        let f0 = speaker.f0_base
            * (1.0 + style.f0_mod_depth * (std::f64::consts::TAU * style.f0_mod_rate * tsec + phase0).sin())
            * (1.04 - 0.08 * progress);
        let shift = char_formant_shift(c);

        let row = out.row_mut(j);
        let mut k = 1;
        loop {
            let freq = k as f64 * f0;
            if freq >= nyquist {
                break;
            }
            let mut env = 0.03;
            for ((&fc, &g), &bw) in speaker.formants.iter().zip(&FORMANT_GAINS).zip(&FORMANT_BANDWIDTHS) {
                let d = (freq - fc * shift) / bw;
                env += g * (-0.5 * d * d).exp();
            }
            let tilt = (1.0 + freq / 1000.0).powf(-speaker.timbre_tilt);
            let amp = 0.5 * gain * env * tilt;
            let center = freq / bin_hz;
            let lo = (center - KERNEL_HALF_WIDTH).ceil().max(0.0) as usize;
            let hi = ((center + KERNEL_HALF_WIDTH).floor() as usize).min(n_bins - 1);
            for (b, slot) in row.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *slot += (amp * hann_kernel(b as f64 - center)) as f32;
            }
            k += 1;
        }
        // breath noise proportional to the frame level
        for slot in row.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *slot += (0.004 * gain * n.abs()) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_kernel_shape() {
        assert_eq!(hann_kernel(0.0), 1.0);
        assert_eq!(hann_kernel(1.0), 0.5);
        assert!(hann_kernel(2.0) < 1e-12);
        assert!((hann_kernel(0.5) - hann_kernel(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn interpolation_endpoints() {
        let env = [1.0, 3.0, 2.0];
        assert_eq!(interpolate(&env, 0.0), 1.0);
        assert_eq!(interpolate(&env, 0.5), 3.0);
        assert_eq!(interpolate(&env, 1.0), 2.0);
        assert_eq!(interpolate(&env, 0.25), 2.0);
    }
}
