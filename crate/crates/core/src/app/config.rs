//! Configuration files.
//!
//! The native format is TOML: top-level keys plus `[section]` tables of
//! `key = value` pairs. A file ending in `.json` is read as JSON with the
//! same structure. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::design::{Policy, SyntheticVolcano, WeightMode};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, DEFAULT_CHUNK_SIZE};
use crate::hyper::{reference_model, REFERENCE_NOISE_STD};
use crate::kernels::{Kernel, KernelFamily, PriorModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

pub fn parse<T: DeserializeOwned>(text: &str, format: ConfigFormat) -> Result<T> {
    match format {
        ConfigFormat::Toml => toml::from_str(text).map_err(|e| Error::Config(e.to_string())),
        ConfigFormat::Json => serde_json::from_str(text).map_err(|e| Error::Config(e.to_string())),
    }
}

pub fn to_string<T: Serialize>(value: &T, format: ConfigFormat) -> Result<String> {
    match format {
        ConfigFormat::Toml => toml::to_string_pretty(value).map_err(|e| Error::Config(e.to_string())),
        ConfigFormat::Json => serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string())),
    }
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, ConfigFormat::for_path(path))
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Prior specification as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub sigma0: f64,
    pub lambda0: f64,
    #[serde(default)]
    pub m0: f64,
}

impl KernelConfig {
    pub fn model(&self) -> Result<PriorModel> {
        let kernel = Kernel::new(self.family, self.sigma0, self.lambda0).map_err(to_config)?;
        if !self.m0.is_finite() {
            return Err(Error::Config("kernel.m0 must be finite".into()));
        }
        Ok(PriorModel::new(kernel, self.m0))
    }

    /// Matérn 3/2 card fitted to the Stromboli survey.
    pub fn reference() -> Self {
        let m = reference_model();
        KernelConfig {
            family: m.kernel.family,
            sigma0: m.kernel.sigma0,
            lambda0: m.kernel.lambda0,
            m0: m.m0,
        }
    }
}

pub(crate) fn to_config(e: Error) -> Error {
    match e {
        Error::InvalidInput(msg) => Error::Config(msg),
        other => other,
    }
}

pub(crate) fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg.to_string()))
    }
}

fn default_chunk_size() -> usize {
    DEFAULT_CHUNK_SIZE
}

// ---------------------------------------------------------------- fourier

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquareGridConfig {
    /// Nodes per side.
    pub m: usize,
    #[serde(default = "minus_one")]
    pub lo: f64,
    #[serde(default = "one")]
    pub hi: f64,
}

fn minus_one() -> f64 {
    -1.0
}

fn one() -> f64 {
    1.0
}

impl SquareGridConfig {
    /// Cell-centred `m x m` grid over `[lo, hi]^2`.
    pub fn spec(&self) -> GridSpec {
        let h = (self.hi - self.lo) / self.m as f64;
        GridSpec {
            dim: 2,
            shape: vec![self.m, self.m],
            spacing: vec![h, h],
            origin: vec![self.lo + 0.5 * h, self.lo + 0.5 * h],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierDesignConfig {
    /// Cumulative observation counts at which the posterior is reported.
    pub counts: Vec<usize>,
    #[serde(default)]
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierDemoConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: SquareGridConfig,
    pub kernel: KernelConfig,
    pub design: FourierDesignConfig,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    /// Validate the memory plan and stop before allocating.
    #[serde(default)]
    pub plan_only: bool,
}

impl Default for FourierDemoConfig {
    fn default() -> Self {
        FourierDemoConfig {
            seed: 1,
            grid: SquareGridConfig {
                m: 50,
                lo: -1.0,
                hi: 1.0,
            },
            kernel: KernelConfig {
                family: KernelFamily::Matern52,
                sigma0: 1.0,
                lambda0: 0.5,
                m0: 0.0,
            },
            design: FourierDesignConfig {
                counts: vec![10, 50, 100],
                noise_std: 0.0,
            },
            chunk_size: DEFAULT_CHUNK_SIZE,
            plan_only: false,
        }
    }
}

impl FourierDemoConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.grid.m >= 2, "grid.m must be at least 2")?;
        require(self.grid.lo < self.grid.hi, "grid.lo must be below grid.hi")?;
        require(!self.design.counts.is_empty(), "design.counts must not be empty")?;
        require(
            self.design.counts.windows(2).all(|w| w[0] < w[1]) && self.design.counts[0] > 0,
            "design.counts must be positive and strictly increasing",
        )?;
        require(
            self.design.noise_std >= 0.0 && self.design.noise_std.is_finite(),
            "design.noise_std must be >= 0",
        )?;
        let m = self.grid.m * self.grid.m;
        require(
            *self.design.counts.last().unwrap() <= m,
            "design.counts exceeds the number of grid nodes",
        )?;
        require(self.chunk_size > 0, "chunk_size must be positive")?;
        self.kernel.model()?;
        Ok(())
    }
}

// ---------------------------------------------------------------- campaign

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default = "default_scenario")]
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub volcano: SyntheticVolcano,
    /// CSV of `x,y,z` instrument sites replacing the synthetic lattice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites_file: Option<String>,
    #[serde(default = "KernelConfig::reference")]
    pub kernel: KernelConfig,
    /// Excursion threshold in field units.
    pub threshold: f64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_radius")]
    pub candidate_radius: f64,
    #[serde(default = "default_weight")]
    pub weight: WeightMode,
    #[serde(default = "default_policy")]
    pub policy: Policy,
    /// Start location; defaults to the first site.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<[f64; 3]>,
    /// Posterior samples for the excursion-volume distribution.
    #[serde(default = "default_volume_samples")]
    pub volume_samples: usize,
    #[serde(default = "default_limit_batch")]
    pub limiting_batch: usize,
    /// Fixed site indices replayed for comparison with the adaptive run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub static_design: Vec<usize>,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
}

fn default_scenario() -> String {
    "synthetic".into()
}

fn default_noise_std() -> f64 {
    REFERENCE_NOISE_STD
}

fn default_steps() -> usize {
    30
}

fn default_radius() -> f64 {
    150.0
}

fn default_weight() -> WeightMode {
    WeightMode::Coverage
}

fn default_policy() -> Policy {
    Policy::Wivr
}

fn default_volume_samples() -> usize {
    1000
}

fn default_limit_batch() -> usize {
    16
}

impl CampaignConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        CampaignConfig {
            scenario: default_scenario(),
            seed: 0,
            volcano: SyntheticVolcano::default(),
            sites_file: None,
            kernel: KernelConfig::reference(),
            threshold,
            noise_std: default_noise_std(),
            n_steps: default_steps(),
            candidate_radius: default_radius(),
            weight: default_weight(),
            policy: default_policy(),
            start: None,
            volume_samples: default_volume_samples(),
            limiting_batch: default_limit_batch(),
            static_design: Vec::new(),
            chunk_size: DEFAULT_CHUNK_SIZE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        require(self.threshold.is_finite(), "threshold must be finite")?;
        require(self.noise_std > 0.0 && self.noise_std.is_finite(), "noise_std must be positive")?;
        require(self.candidate_radius > 0.0, "candidate_radius must be positive")?;
        require(self.volume_samples > 0, "volume_samples must be positive")?;
        require(self.limiting_batch > 0, "limiting_batch must be positive")?;
        require(self.chunk_size > 0, "chunk_size must be positive")?;
        require(
            self.volcano.shape.iter().all(|n| *n > 0) && self.volcano.cell > 0.0,
            "volcano shape and cell size must be positive",
        )?;
        require(self.volcano.standoff > 0.0, "volcano.standoff must be positive")?;
        self.kernel.model()?;
        Ok(())
    }
}

// ---------------------------------------------------------------- fit

/// Pointwise observations of a prior draw, used when no data file is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub truth: KernelConfig,
    pub n_obs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    pub family: KernelFamily,
    pub lambda_grid: Vec<f64>,
    #[serde(default = "one")]
    pub sigma_init: f64,
    pub noise_std: f64,
    /// CSV of `index,value` pointwise observations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticData>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
}

fn default_max_iter() -> usize {
    200
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        require(!self.lambda_grid.is_empty(), "lambda_grid must not be empty")?;
        require(
            self.lambda_grid.iter().all(|l| *l > 0.0 && l.is_finite()),
            "lambda_grid entries must be positive",
        )?;
        require(self.sigma_init > 0.0, "sigma_init must be positive")?;
        require(self.noise_std >= 0.0 && self.noise_std.is_finite(), "noise_std must be >= 0")?;
        require(
            self.data_file.is_some() != self.synthetic.is_some(),
            "give exactly one of data_file or [synthetic]",
        )?;
        if let Some(s) = &self.synthetic {
            require(s.n_obs > 0, "synthetic.n_obs must be positive")?;
            s.truth.model()?;
        }
        require(self.chunk_size > 0, "chunk_size must be positive")?;
        Ok(())
    }
}

// ---------------------------------------------------------------- sample

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    pub kernel: KernelConfig,
    pub n_samples: usize,
    /// Threshold for excursion volumes and coverage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Pointwise observations of a prior draw to condition on.
    #[serde(default)]
    pub n_obs: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("ensemble size must be positive".into()));
        }
        require(self.noise_std >= 0.0 && self.noise_std.is_finite(), "noise_std must be >= 0")?;
        require(self.chunk_size > 0, "chunk_size must be positive")?;
        self.kernel.model()?;
        Ok(())
    }
}
