//! Synthetic speech corpus with known speaker and style factors.
//!
//! Speakers fix pitch, formants and spectral tilt; styles fix speaking rate,
//! a gain envelope and f0 vibrato. The two factor sets are rendered
//! independently, so a model's ability to separate them can be measured
//! exactly.

mod lexicon;
mod manifest;
mod signal;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use lexicon::{augment_prompt, fill_template, PromptLexicon, PromptStrategy, StylePrompts, SLOT};
pub use manifest::{load_manifest, write_manifest, Manifest, ManifestRecord, Registry, SynthParams, MANIFEST_FILE, REGISTRY_FILE};
pub use signal::{char_samples, render, SignalParams};

use crate::error::{Error, Result};
use crate::spectrogram::Spectrogram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSpec {
    pub speaker_id: u32,
    /// Hz, in [80, 400].
    pub f0_base: f64,
    /// Three strictly increasing formant centers, Hz.
    pub formants: [f64; 3],
    pub timbre_tilt: f64,
}

impl SpeakerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(80.0..=400.0).contains(&self.f0_base) {
            return Err(Error::Config(format!("speaker {} f0_base {} outside [80, 400]", self.speaker_id, self.f0_base)));
        }
        if !(self.formants[0] < self.formants[1] && self.formants[1] < self.formants[2]) {
            return Err(Error::Config(format!("speaker {} formants not increasing", self.speaker_id)));
        }
        Ok(())
    }
}

/// Emotional valence, used to build agreeing and contradicting prompt pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Valence {
    Neutral,
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub style_id: u32,
    pub style_name: String,
    /// Duration multiplier in [0.5, 2.0].
    pub rate_factor: f64,
    /// Per-segment gains, linearly interpolated over the utterance.
    pub energy_envelope: Vec<f64>,
    pub f0_mod_depth: f64,
    /// Hz.
    pub f0_mod_rate: f64,
    pub valence: Valence,
}

impl StyleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.style_name.is_empty() {
            return Err(Error::Config(format!("style {} has an empty name", self.style_id)));
        }
        if !(0.5..=2.0).contains(&self.rate_factor) {
            return Err(Error::Config(format!("style {} rate_factor {} outside [0.5, 2.0]", self.style_id, self.rate_factor)));
        }
        Ok(())
    }
}

/// Built-in style table: (name, rate, envelope, vibrato depth, vibrato rate, valence).
const STYLE_TABLE: &[(&str, f64, [f64; 4], f64, f64, Valence)] = &[
    ("neutral", 1.0, [1.0, 1.0, 1.0, 1.0], 0.02, 3.0, Valence::Neutral),
    ("happy", 0.85, [1.6, 2.2, 1.8, 2.4], 0.10, 6.0, Valence::Positive),
    ("sad", 1.35, [0.5, 0.45, 0.4, 0.3], 0.03, 2.0, Valence::Negative),
    ("angry", 0.9, [2.8, 3.2, 2.6, 3.4], 0.06, 8.0, Valence::Negative),
    ("surprise", 0.85, [1.2, 2.8, 1.5, 3.0], 0.14, 4.0, Valence::Positive),
    ("fear", 1.1, [0.7, 1.0, 0.6, 0.9], 0.12, 9.0, Valence::Negative),
    ("disgust", 1.2, [1.0, 0.7, 1.1, 0.6], 0.05, 2.5, Valence::Negative),
    ("calm", 1.15, [0.8, 0.8, 0.8, 0.8], 0.01, 1.5, Valence::Neutral),
];

pub const MAX_STYLES: usize = 8;
pub const MAX_SPEAKERS: usize = 64;
pub const MAX_UTTERANCES_PER_CELL: usize = 1000;

/// Fixed phrase bank the corpus text is drawn from.
pub const PHRASES: [&str; 50] = [
    "the cat sat down",
    "open the window",
    "it is raining again",
    "we met at noon",
    "bring me the map",
    "the road is long",
    "she sold the boat",
    "turn off the lamp",
    "a bird on the wire",
    "read it out loud",
    "the soup is warm",
    "my train is late",
    "call me tomorrow",
    "the door was open",
    "pass the salt",
    "they won the game",
    "look at the moon",
    "he lost his keys",
    "the tea is ready",
    "walk to the park",
    "hold on a minute",
    "the sky is grey",
    "paint the fence",
    "we need more time",
    "close your eyes",
    "the clock stopped",
    "leave it on the desk",
    "a dog barked twice",
    "the bus is here",
    "plant the seeds",
    "i found a coin",
    "wash the dishes",
    "the lake froze",
    "write it down",
    "the music is loud",
    "fold the letter",
    "it was a good day",
    "set the table",
    "the light is green",
    "follow the river",
    "my hands are cold",
    "feed the horses",
    "the shop is closed",
    "count to ten",
    "the bell rang",
    "pick up the phone",
    "a storm is coming",
    "the milk is fresh",
    "sing me a song",
    "we are home now",
];

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent per-record seed derived from a corpus seed and record index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

/// `n` speakers spread over pitch, formant and tilt space, with seeded jitter.
/// Ids start at `first_id`.
pub fn speaker_bank(n: usize, first_id: u32, seed: u64) -> Vec<SpeakerSpec> {
    (0..n)
        .map(|i| {
            let id = first_id + i as u32;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0x5EED_5EED, id as u64));
            let g = id as f64;
            let f0 = (95.0 + 170.0 * frac(g * 0.4142 + 0.05) + rng.random_range(-4.0..4.0)).clamp(80.0, 400.0);
            SpeakerSpec {
                speaker_id: id,
                f0_base: f0,
                formants: [
                    350.0 + 400.0 * frac(g * 0.618 + 0.1) + rng.random_range(-20.0..20.0),
                    1000.0 + 1200.0 * frac(g * 0.382 + 0.3) + rng.random_range(-40.0..40.0),
                    2400.0 + 700.0 * frac(g * 0.71 + 0.5) + rng.random_range(-40.0..40.0),
                ],
                timbre_tilt: 0.4 + 0.8 * frac(g * 0.45 + 0.2),
            }
        })
        .collect()
}

/// The first `n` built-in styles.
pub fn style_bank(n: usize) -> Vec<StyleSpec> {
    STYLE_TABLE
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, (name, rate, env, depth, mod_rate, valence))| StyleSpec {
            style_id: i as u32,
            style_name: name.to_string(),
            rate_factor: *rate,
            energy_envelope: env.to_vec(),
            f0_mod_depth: *depth,
            f0_mod_rate: *mod_rate,
            valence: *valence,
        })
        .collect()
}

/// One materialized corpus item.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub spectrogram: Spectrogram,
    pub speaker_id: u32,
    pub style_id: u32,
    pub prompt: String,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusParams {
    pub speakers: usize,
    pub styles: usize,
    pub utterances_per_cell: usize,
    pub seed: u64,
    pub signal: SignalParams,
}

impl CorpusParams {
    pub fn new(speakers: usize, styles: usize, utterances_per_cell: usize, seed: u64) -> Self {
        Self { speakers, styles, utterances_per_cell, seed, signal: SignalParams::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: Manifest,
    pub utterances: Vec<Utterance>,
    /// Parameter clamping notes.
    pub warnings: Vec<String>,
}

impl Corpus {
    pub fn speakers(&self) -> &[SpeakerSpec] {
        &self.manifest.registry.speakers
    }

    pub fn styles(&self) -> &[StyleSpec] {
        &self.manifest.registry.styles
    }

    pub fn style(&self, id: u32) -> Result<&StyleSpec> {
        self.manifest.registry.style(id)
    }

    /// Splits utterance indices into (train, held-out): within every
    /// (speaker, style) cell the last `heldout_per_cell` items are held out.
    pub fn split(&self, heldout_per_cell: usize) -> (Vec<usize>, Vec<usize>) {
        split_cells(&self.utterances, heldout_per_cell)
    }
}

pub fn split_cells(utterances: &[Utterance], heldout_per_cell: usize) -> (Vec<usize>, Vec<usize>) {
    use std::collections::HashMap;
    let mut cells: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (i, u) in utterances.iter().enumerate() {
        cells.entry((u.speaker_id, u.style_id)).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut held = Vec::new();
    for idx in cells.values() {
        let cut = idx.len().saturating_sub(heldout_per_cell);
        train.extend_from_slice(&idx[..cut]);
        held.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

fn clamp_count(name: &str, v: usize, max: usize, warnings: &mut Vec<String>) -> usize {
    let c = v.clamp(1, max);
    if c != v {
        warnings.push(format!("{name}={v} clamped to {c}"));
    }
    c
}

/// Generates the corpus. Pure in its arguments; each record carries an
/// independent seed derived from `(seed, record index)` and is rendered in
/// parallel.
pub fn generate_corpus(params: &CorpusParams) -> Corpus {
    let mut warnings = Vec::new();
    let n_spk = clamp_count("speakers", params.speakers, MAX_SPEAKERS, &mut warnings);
    let n_sty = clamp_count("styles", params.styles, MAX_STYLES, &mut warnings);
    let n_utt = clamp_count("utterances_per_cell", params.utterances_per_cell, MAX_UTTERANCES_PER_CELL, &mut warnings);
    for w in &warnings {
        log::warn!("{w}");
    }

    let registry = Registry { speakers: speaker_bank(n_spk, 0, params.seed), styles: style_bank(n_sty) };
    let lexicon = PromptLexicon::builtin();

    let mut records = Vec::with_capacity(n_spk * n_sty * n_utt);
    for spk in &registry.speakers {
        for sty in &registry.styles {
            for k in 0..n_utt {
                let index = records.len() as u64;
                let useed = derive_seed(params.seed, index);
                let mut rng = ChaCha8Rng::seed_from_u64(useed);
                let text = PHRASES[rng.random_range(0..PHRASES.len())].to_string();
                let strategy = PromptStrategy::ALL[rng.random_range(0..3)];
                let prompt =
                    augment_prompt(&sty.style_name, &lexicon, strategy, rng.random()).expect("built-in lexicon covers built-in styles");
                records.push(ManifestRecord {
                    id: format!("spk{:02}_{}_{:03}", spk.speaker_id, sty.style_name, k),
                    text,
                    speaker_id: spk.speaker_id,
                    style_id: sty.style_id,
                    prompt,
                    audio: None,
                    synth: Some(SynthParams { seed: rng.random(), signal: params.signal }),
                });
            }
        }
    }
    let manifest = Manifest { records, registry };
    let utterances =
        manifest.records.par_iter().map(|r| manifest.synthesize_record(r)).collect::<Result<Vec<_>>>().expect("generated records resolve");
    Corpus { manifest, utterances, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_banks_are_valid() {
        for s in speaker_bank(12, 0, 3) {
            s.validate().unwrap();
        }
        for s in style_bank(MAX_STYLES) {
            s.validate().unwrap();
        }
        assert_eq!(style_bank(100).len(), MAX_STYLES);
    }

    #[test]
    fn phrases_are_encodable() {
        for p in PHRASES {
            crate::text::encode(p).unwrap();
        }
    }

    #[test]
    fn counts_are_clamped_with_warning() {
        let c = generate_corpus(&CorpusParams::new(1, 20, 1, 0));
        assert_eq!(c.styles().len(), MAX_STYLES);
        assert_eq!(c.warnings.len(), 1);
        assert!(c.warnings[0].contains("styles"));
    }

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(5, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(a.len(), b.len());
    }
}
