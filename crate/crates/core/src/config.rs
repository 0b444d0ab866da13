//! Run configuration: one flat, typed TOML table.
//!
//! Every key has a default, unknown keys are rejected, and the whole
//! configuration is validated on load. Command-line flags override file
//! values (see the CLI module for precedence).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which fusion block conditions the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionVariant {
    /// Hierarchical: speaker at FFN1, speaker+style at the GRU, style at FFN2.
    Hctscm,
    /// One concatenated control vector at every conditioning site.
    Tscm,
    /// Concatenated control added once to the input, unconditioned block.
    Concat,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 3] = [FusionVariant::Hctscm, FusionVariant::Tscm, FusionVariant::Concat];

    pub fn name(self) -> &'static str {
        match self {
            FusionVariant::Hctscm => "hctscm",
            FusionVariant::Tscm => "tscm",
            FusionVariant::Concat => "concat",
        }
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hctscm" => Ok(FusionVariant::Hctscm),
            "tscm" => Ok(FusionVariant::Tscm),
            "concat" => Ok(FusionVariant::Concat),
            other => Err(Error::Config(format!("unknown fusion variant `{other}` (hctscm|tscm|concat)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,

    pub d_model: usize,
    pub d_style: usize,
    pub d_spk: usize,
    pub latent_channels: usize,
    pub text_layers: usize,
    pub flow_layers: usize,
    pub attn_heads: usize,
    pub conv_kernel: usize,
    pub enc_hidden: usize,
    pub dur_hidden: usize,
    pub prompt_max_len: usize,
    pub text_max_len: usize,
    pub grl_lambda: f64,
    pub gate_prob: f64,
    pub logstd_min: f64,
    pub logstd_max: f64,
    pub temperature: f64,
    pub fusion: FusionVariant,

    pub speakers: usize,
    pub styles: usize,
    pub utterances_per_cell: usize,
    pub heldout_per_cell: usize,
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    /// Mel bands of the reconstruction loss.
    pub n_mels: usize,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub grad_clip: f64,
    pub recon_weight: f64,
    pub kl_weight: f64,
    pub dur_weight: f64,
    pub frontend_weight: f64,

    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            d_model: 96,
            d_style: 64,
            d_spk: 64,
            latent_channels: 16,
            text_layers: 4,
            flow_layers: 4,
            attn_heads: 2,
            conv_kernel: 5,
            enc_hidden: 128,
            dur_hidden: 64,
            prompt_max_len: 64,
            text_max_len: 128,
            grl_lambda: 1.0,
            gate_prob: 0.5,
            logstd_min: -7.0,
            logstd_max: 5.0,
            temperature: 0.667,
            fusion: FusionVariant::Hctscm,
            speakers: 6,
            styles: 4,
            utterances_per_cell: 10,
            heldout_per_cell: 2,
            sample_rate: 16_000,
            n_fft: 1024,
            hop: 256,
            n_mels: 40,
            learning_rate: 2e-3,
            batch_size: 8,
            steps: 2000,
            grad_clip: 5.0,
            recon_weight: 45.0,
            kl_weight: 1.0,
            dur_weight: 1.0,
            frontend_weight: 1.0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    /// The reduced model used by tests and examples: same architecture,
    /// smaller widths, so that training fits a few CPU minutes.
    pub fn desk() -> Self {
        Self {
            d_model: 32,
            d_style: 16,
            d_spk: 16,
            latent_channels: 8,
            text_layers: 2,
            flow_layers: 4,
            enc_hidden: 48,
            dur_hidden: 32,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Stable digest of the configuration, embedded in every artifact.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..8])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("d_model", self.d_model),
            ("d_style", self.d_style),
            ("d_spk", self.d_spk),
            ("latent_channels", self.latent_channels),
            ("flow_layers", self.flow_layers),
            ("attn_heads", self.attn_heads),
            ("enc_hidden", self.enc_hidden),
            ("dur_hidden", self.dur_hidden),
            ("prompt_max_len", self.prompt_max_len),
            ("text_max_len", self.text_max_len),
            ("speakers", self.speakers),
            ("styles", self.styles),
            ("utterances_per_cell", self.utterances_per_cell),
            ("n_fft", self.n_fft),
            ("hop", self.hop),
            ("n_mels", self.n_mels),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.latent_channels.is_multiple_of(2) {
            return bad(format!("latent_channels must be even, got {}", self.latent_channels));
        }
        if !self.d_model.is_multiple_of(self.attn_heads) {
            return bad(format!("d_model {} not divisible by attn_heads {}", self.d_model, self.attn_heads));
        }
        if self.d_style != self.d_spk {
            return bad(format!("d_style ({}) must equal d_spk ({}): the GRU stage is conditioned on their sum", self.d_style, self.d_spk));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return bad(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        if self.heldout_per_cell >= self.utterances_per_cell {
            return bad("heldout_per_cell must be smaller than utterances_per_cell".into());
        }
        if !(0.0..=1.0).contains(&self.gate_prob) {
            return bad(format!("gate_prob must be in [0, 1], got {}", self.gate_prob));
        }
        if self.logstd_min >= self.logstd_max {
            return bad("logstd_min must be below logstd_max".into());
        }
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return bad("temperature must be finite and nonnegative".into());
        }
        if self.n_mels > self.n_bins() {
            return bad(format!("n_mels ({}) exceeds the {} frequency bins", self.n_mels, self.n_bins()));
        }
        if self.n_fft < self.hop {
            return bad("n_fft must be at least hop".into());
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("grad_clip", self.grad_clip),
            ("grl_lambda", self.grl_lambda),
            ("recon_weight", self.recon_weight),
            ("kl_weight", self.kl_weight),
            ("dur_weight", self.dur_weight),
            ("frontend_weight", self.frontend_weight),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        assert_eq!(cfg.n_bins(), 513);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml_str("d_model = 32\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = RunConfig::from_toml_str("fusion = \"tscm\"\nsteps = 10\n").unwrap();
        assert_eq!(cfg.fusion, FusionVariant::Tscm);
        assert_eq!(cfg.steps, 10);
        assert_eq!(cfg.d_model, 96);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("latent_channels = 5").is_err());
        assert!(RunConfig::from_toml_str("d_style = 8\nd_spk = 16").is_err());
        assert!(RunConfig::from_toml_str("fusion = \"mlp\"").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 8, ..RunConfig::default() };
        assert_ne!(a.hash(), b.hash());
    }
}
