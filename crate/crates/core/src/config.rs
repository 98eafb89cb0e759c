//! Run configuration: one TOML file with `[env]`, `[codec]`, `[train]`,
//! `[eval]` and `[run]` sections. Missing keys take defaults; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{ObjectiveLevel, TrainConfig};
use crate::codec::{Level, MAX_LEVEL};
use crate::env::EnvConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    /// Number of quantizer levels V; level v spends v bits per feature.
    pub max_level: Level,
    /// Codeword dimension (1 = independent per-feature quantizers).
    pub dim: usize,
    /// Random-policy steps collected for codebook fitting.
    pub dataset_size: usize,
    /// Pooling factor of the pixel feature map.
    pub pixel_pool: usize,
    /// Principal components kept by the pixel feature map.
    pub pixel_components: usize,
    /// Dataset records used to fit the pixel projection.
    pub pixel_fit_samples: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            max_level: 6,
            dim: 1,
            dataset_size: 50_000,
            pixel_pool: 4,
            pixel_components: 8,
            pixel_fit_samples: 5_000,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_level == 0 || self.max_level > MAX_LEVEL {
            return Err(Error::invalid("codec.max_level", format!("must lie in 1..={MAX_LEVEL}")));
        }
        if self.dim == 0 {
            return Err(Error::invalid("codec.dim", "must be at least 1"));
        }
        if self.dataset_size == 0 {
            return Err(Error::invalid("codec.dataset_size", "must be at least 1"));
        }
        if self.pixel_pool == 0 || self.pixel_components == 0 || self.pixel_fit_samples == 0 {
            return Err(Error::invalid("codec.pixel_pool", "pixel settings must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Test episodes per scheme.
    pub episodes: usize,
    pub betas_a: Vec<f64>,
    pub betas_b: Vec<f64>,
    pub betas_c: Vec<f64>,
    /// Sample the observer's level choice instead of taking the argmax.
    pub observer_stochastic: bool,
    /// Trace steps kept per dynamic scheme for the state-space analyses.
    pub trace_steps: usize,
    pub grid_bins: usize,
    pub min_count: usize,
    pub entropy_bins: usize,
    pub aoi_values: usize,
    pub bootstrap_resamples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            betas_a: vec![1.0, 4.5, 6.0],
            betas_b: vec![0.001, 0.005, 0.01],
            betas_c: vec![0.01, 0.05, 0.15],
            observer_stochastic: true,
            trace_steps: 100_000,
            grid_bins: 20,
            min_count: crate::eval::DEFAULT_MIN_COUNT,
            entropy_bins: 5,
            aoi_values: 5,
            bootstrap_resamples: 1000,
        }
    }
}

impl EvalConfig {
    pub fn betas(&self, level: ObjectiveLevel) -> &[f64] {
        match level {
            ObjectiveLevel::A => &self.betas_a,
            ObjectiveLevel::B => &self.betas_b,
            ObjectiveLevel::C => &self.betas_c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::invalid("eval.episodes", "must be at least 1"));
        }
        for (name, betas) in [
            ("eval.betas_a", &self.betas_a),
            ("eval.betas_b", &self.betas_b),
            ("eval.betas_c", &self.betas_c),
        ] {
            if betas.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
                return Err(Error::invalid(name, "betas must be finite and non-negative"));
            }
        }
        if self.grid_bins == 0 || self.entropy_bins == 0 || self.aoi_values == 0 {
            return Err(Error::invalid("eval.grid_bins", "bin counts must be at least 1"));
        }
        if self.bootstrap_resamples == 0 {
            return Err(Error::invalid("eval.bootstrap_resamples", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub codec: CodecConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::invalid("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.codec.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
