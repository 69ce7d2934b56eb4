//! Experiment configuration: one TOML file holding every module's settings.
//!
//! Every table is optional and falls back to the module defaults; unknown
//! keys are rejected. See the README for the full schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dcdi::locate_window;
use crate::error::{Error, Result};
use crate::forward::ForwardConfig;
use crate::model::CrystalSpec;
use crate::noise::NoiseSpec;
use crate::shrinkwrap::{SeedKind, ShrinkwrapParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Write object and intensity volumes next to the CSVs.
    pub dump_volumes: bool,
    /// Keep every n-th trace record in the trace CSV (the last is always kept).
    pub trace_every: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: PathBuf::from("out"),
            dump_volumes: false,
            trace_every: 1,
        }
    }
}

/// One refinement branch: a seed kind on clean or noisy data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub seed: SeedKind,
    pub noise: bool,
}

impl Variant {
    pub fn noise_tag(&self) -> &'static str {
        noise_tag(self.noise)
    }

    /// File stem shared by the trace CSV and volume dumps.
    pub fn name(&self) -> String {
        format!("{}_{}", self.seed.tag(), self.noise_tag())
    }
}

pub fn noise_tag(noisy: bool) -> &'static str {
    if noisy {
        "noisy"
    } else {
        "clean"
    }
}

/// The full matrix: both seeds on clean and on noisy data.
pub fn default_variants() -> Vec<Variant> {
    let mut v = Vec::new();
    for noise in [false, true] {
        for seed in [SeedKind::Dcdi, SeedKind::Autocorrelation] {
            v.push(Variant { seed, noise });
        }
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub crystal: CrystalSpec,
    pub forward: ForwardConfig,
    pub noise: NoiseSpec,
    pub shrinkwrap: ShrinkwrapParams,
    pub output: OutputSpec,
    pub variants: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            crystal: CrystalSpec::default(),
            forward: ForwardConfig::default(),
            noise: NoiseSpec::default(),
            shrinkwrap: ShrinkwrapParams::default(),
            output: OutputSpec::default(),
            variants: default_variants(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let ctx = |section: &str, e: Error| Error::Config(format!("[{section}] {e}"));
        self.crystal.validate().map_err(|e| ctx("crystal", e))?;
        locate_window(&self.crystal).map_err(|e| ctx("crystal", e))?;
        self.forward.validate().map_err(|e| ctx("forward", e))?;
        self.noise.validate().map_err(|e| ctx("noise", e))?;
        self.shrinkwrap.validate().map_err(|e| ctx("shrinkwrap", e))?;
        if self.output.trace_every == 0 {
            return Err(Error::Config("[output] trace_every must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("at least one variant is required".into()));
        }
        if !self.noise.enabled && self.variants.iter().any(|v| v.noise) {
            return Err(Error::Config(
                "a variant asks for noisy data but [noise] enabled = false".into(),
            ));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].contains(v) {
                return Err(Error::Config(format!("variant {} listed twice", v.name())));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_toml()?)?;
    Ok(())
}
