//! Line-oriented corpus manifest.
//!
//! `manifest.jsonl` holds one self-contained JSON object per line with keys
//! `id, text, speaker_id, style_id, prompt` and optionally `audio` (a cached
//! spectrogram path relative to the manifest directory) and `synth` (the
//! parameters needed to re-render the item). `registry.json`, next to it,
//! lists the speaker and style definitions the ids refer to.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::signal::{render, SignalParams};
use super::{SpeakerSpec, StyleSpec, Utterance};
use crate::error::{Error, Result};
use crate::spectrogram;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const REGISTRY_FILE: &str = "registry.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    #[serde(flatten)]
    pub signal: SignalParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub text: String,
    pub speaker_id: u32,
    pub style_id: u32,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthParams>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub speakers: Vec<SpeakerSpec>,
    pub styles: Vec<StyleSpec>,
}

impl Registry {
    pub fn speaker(&self, id: u32) -> Result<&SpeakerSpec> {
        self.speakers.iter().find(|s| s.speaker_id == id).ok_or(Error::UnknownSpeakerId(id))
    }

    pub fn style(&self, id: u32) -> Result<&StyleSpec> {
        self.styles.iter().find(|s| s.style_id == id).ok_or(Error::UnknownStyleId(id))
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.speakers.iter().enumerate() {
            s.validate()?;
            if self.speakers[..i].iter().any(|o| o.speaker_id == s.speaker_id) {
                return Err(Error::Config(format!("speaker id {} defined twice", s.speaker_id)));
            }
        }
        for (i, s) in self.styles.iter().enumerate() {
            s.validate()?;
            if self.styles[..i].iter().any(|o| o.style_id == s.style_id) {
                return Err(Error::Config(format!("style id {} defined twice", s.style_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub registry: Registry,
}

impl Manifest {
    /// Renders a record from its `synth` parameters.
    pub fn synthesize_record(&self, r: &ManifestRecord) -> Result<Utterance> {
        let synth = r.synth.ok_or_else(|| Error::MissingInput(format!("record {} has neither audio nor synth", r.id)))?;
        let speaker = self.registry.speaker(r.speaker_id)?;
        let style = self.registry.style(r.style_id)?;
        Ok(Utterance {
            id: r.id.clone(),
            text: r.text.clone(),
            spectrogram: render(&r.text, speaker, style, synth.seed, &synth.signal),
            speaker_id: r.speaker_id,
            style_id: r.style_id,
            prompt: r.prompt.clone(),
            sample_rate: synth.signal.sample_rate,
        })
    }

    /// Loads each record's cached spectrogram, or renders it when only
    /// synthesis parameters are present.
    pub fn materialize(&self, base_dir: &Path) -> Result<Vec<Utterance>> {
        use rayon::prelude::*;
        self.records
            .par_iter()
            .map(|r| match &r.audio {
                Some(path) => Ok(Utterance {
                    id: r.id.clone(),
                    text: r.text.clone(),
                    spectrogram: spectrogram::read(&base_dir.join(path))?,
                    speaker_id: r.speaker_id,
                    style_id: r.style_id,
                    prompt: r.prompt.clone(),
                    sample_rate: r.synth.map_or(SignalParams::default().sample_rate, |s| s.signal.sample_rate),
                }),
                None => self.synthesize_record(r),
            })
            .collect()
    }

    fn check_ids(&self, r: &ManifestRecord) -> Result<()> {
        self.registry.speaker(r.speaker_id)?;
        self.registry.style(r.style_id)?;
        Ok(())
    }
}

/// Reads `manifest.jsonl` (or the given file) and the sibling registry.
///
/// Blank lines are skipped. Without a registry file the ids are treated as
/// plain labels and not resolved.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let registry_path = path.parent().unwrap_or(Path::new(".")).join(REGISTRY_FILE);
    let registry = if registry_path.exists() {
        let text = std::fs::read_to_string(&registry_path).map_err(|e| Error::io(&registry_path, e))?;
        let reg: Registry = serde_json::from_str(&text)?;
        reg.validate()?;
        Some(reg)
    } else {
        None
    };
    let mut manifest = Manifest { records: Vec::new(), registry: registry.clone().unwrap_or_default() };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        if registry.is_some() {
            manifest.check_ids(&record)?;
        }
        manifest.records.push(record);
    }
    Ok(manifest)
}

/// Writes the manifest, the registry, and (when given) one cached
/// spectrogram per utterance under `spec/`. Records gain an `audio` path
/// for every cached spectrogram.
pub fn write_manifest(dir: &Path, manifest: &Manifest, utterances: Option<&[Utterance]>) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = manifest.clone();
    if let Some(utts) = utterances {
        let spec_dir = dir.join("spec");
        std::fs::create_dir_all(&spec_dir).map_err(|e| Error::io(&spec_dir, e))?;
        for (rec, utt) in out.records.iter_mut().zip(utts) {
            let rel = PathBuf::from("spec").join(format!("{}.spec", rec.id));
            spectrogram::write(&dir.join(&rel), &utt.spectrogram)?;
            rec.audio = Some(rel.to_string_lossy().into_owned());
        }
    }
    let mpath = dir.join(MANIFEST_FILE);
    let mut f = std::io::BufWriter::new(std::fs::File::create(&mpath).map_err(|e| Error::io(&mpath, e))?);
    for r in &out.records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(&mpath, e))?;
    }
    f.flush().map_err(|e| Error::io(&mpath, e))?;
    let rpath = dir.join(REGISTRY_FILE);
    std::fs::write(&rpath, serde_json::to_string_pretty(&out.registry)?).map_err(|e| Error::io(&rpath, e))?;
    Ok(out)
}
