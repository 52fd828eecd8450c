//! Experiment manifest: every protocol knob of a run in one TOML document.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rvinr_core::geometry::{AcquisitionConfig, NoiseModel};
use rvinr_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::io::hash_hex;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    Gaussian,
    Rician,
}

impl From<NoiseKind> for NoiseModel {
    fn from(k: NoiseKind) -> Self {
        match k {
            NoiseKind::None => NoiseModel::None,
            NoiseKind::Gaussian => NoiseModel::Gaussian,
            NoiseKind::Rician => NoiseModel::Rician,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Caller-provided implementation tag.
    pub version: String,
    /// Phantom edge length in pixels.
    pub size: usize,
    pub directions: usize,
    pub train_directions: usize,
    /// s/mm^2.
    pub b_value: f64,
    pub thickness_factor: usize,
    /// Absolute noise level; the phantom S0 peaks at 1.
    pub noise_sigma: f64,
    pub noise_model: NoiseKind,
    /// Phantom layout, direction split and noise.
    pub seed_data: u64,
    /// Network initialisation and direction sampling.
    pub seed_train: u64,
    pub iterations: usize,
    pub directions_per_step: usize,
    pub learning_rate: f64,
    pub log_every: usize,
    pub use_prior: bool,
}

impl Default for Manifest {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            version: concat!("rvinr-", env!("CARGO_PKG_VERSION")).to_string(),
            size: 64,
            directions: 50,
            train_directions: 40,
            b_value: 1000.0,
            thickness_factor: 4,
            noise_sigma: 0.01,
            noise_model: NoiseKind::Gaussian,
            seed_data: 0,
            seed_train: 0,
            iterations: t.iterations,
            directions_per_step: t.directions_per_step,
            learning_rate: t.learning_rate,
            log_every: t.log_every,
            use_prior: t.use_prior,
        }
    }
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.version.is_empty() {
            return Err(PipelineError::manifest("version", "must not be empty"));
        }
        if self.size < 32 || self.size % 8 != 0 {
            return Err(PipelineError::manifest("size", format!("{} is not a multiple of 8 of at least 32", self.size)));
        }
        if self.directions == 0 {
            return Err(PipelineError::manifest("directions", "must be positive"));
        }
        if self.train_directions == 0 || self.train_directions > self.directions {
            return Err(PipelineError::manifest("train_directions", format!("must lie in 1..={}", self.directions)));
        }
        if !(self.b_value > 0.0 && self.b_value.is_finite()) {
            return Err(PipelineError::manifest("b_value", "must be positive and finite"));
        }
        if self.thickness_factor == 0 || self.size % self.thickness_factor != 0 {
            return Err(PipelineError::manifest("thickness_factor", format!("must be positive and divide {}", self.size)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(PipelineError::manifest("noise_sigma", "must be finite and nonnegative"));
        }
        if self.iterations == 0 {
            return Err(PipelineError::manifest("iterations", "must be positive"));
        }
        if self.directions_per_step == 0 || self.directions_per_step > self.train_directions {
            return Err(PipelineError::manifest(
                "directions_per_step",
                format!("must lie in 1..={}", self.train_directions),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PipelineError::manifest("learning_rate", "must be positive and finite"));
        }
        if self.log_every == 0 {
            return Err(PipelineError::manifest("log_every", "must be positive"));
        }
        Ok(())
    }

    pub fn acquisition(&self) -> AcquisitionConfig {
        AcquisitionConfig {
            thickness_factor: self.thickness_factor,
            noise_sigma: self.noise_sigma,
            noise_model: self.noise_model.into(),
            rng_seed: self.seed_data,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            directions_per_step: self.directions_per_step,
            learning_rate: self.learning_rate,
            seed: self.seed_train,
            log_every: self.log_every,
            use_prior: self.use_prior,
            ..TrainConfig::default()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    /// FNV-1a of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hash_hex(self.to_toml().as_bytes())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        fs::write(path, self.to_toml()).map_err(|e| PipelineError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let m: Manifest = text.parse().map_err(|e: PipelineError| match e {
            PipelineError::Invalid { message, .. } => PipelineError::invalid(path, message),
            other => other,
        })?;
        Ok(m)
    }
}

impl FromStr for Manifest {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(s).map_err(|e| PipelineError::invalid(Path::new("<manifest>"), e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let m = Manifest::default();
        let back: Manifest = m.to_toml().parse().unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_toml(), m.to_toml());
    }

    #[test]
    fn zero_thickness_rejected() {
        let m = Manifest { thickness_factor: 0, ..Manifest::default() };
        assert!(matches!(m.validate(), Err(PipelineError::Manifest { field: "thickness_factor", .. })));
    }

    #[test]
    fn unknown_field_rejected() {
        let text = Manifest::default().to_toml() + "extra = 1\n";
        let err = text.parse::<Manifest>().unwrap_err().to_string();
        assert!(err.contains("extra"), "{err}");
    }

    #[test]
    fn seed_changes_hash() {
        let a = Manifest::default();
        let b = Manifest { seed_data: 1, ..Manifest::default() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), Manifest::default().hash());
    }
}
