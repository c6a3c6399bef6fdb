//! JSON experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use wassdiff_core::target::TargetSpec;
use wassdiff_core::{Algorithm, TargetDistribution, TimeGrid};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Rates,
    BoundsCheck,
    InitAsymptotics,
    EarlyStopping,
    Explosion,
    W2Selftest,
}

impl Study {
    pub const ALL: [Study; 6] =
        [Study::Rates, Study::BoundsCheck, Study::InitAsymptotics, Study::EarlyStopping, Study::Explosion, Study::W2Selftest];

    pub fn name(self) -> &'static str {
        match self {
            Study::Rates => "rates",
            Study::BoundsCheck => "bounds-check",
            Study::InitAsymptotics => "init-asymptotics",
            Study::EarlyStopping => "early-stopping",
            Study::Explosion => "explosion",
            Study::W2Selftest => "w2-selftest",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Study::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Study::ALL.iter().map(|k| k.name()).collect();
            format!("unknown study {s:?}; expected one of {}", names.join(", "))
        })
    }
}

/// A target given inline or as a path to a JSON file (relative to the config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSource {
    Inline(TargetSpec),
    File { path: PathBuf },
}

impl TargetSource {
    pub fn load(&self) -> Result<TargetDistribution> {
        match self {
            TargetSource::Inline(spec) => Ok(spec.build()?),
            TargetSource::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let spec: TargetSpec = serde_json::from_str(&text).map_err(|e| json_error(path, &e))?;
                Ok(spec.build()?)
            }
        }
    }

    /// Inlines file targets so the resolved config is self-contained.
    fn resolve(&mut self, base: &Path) -> Result<()> {
        if let TargetSource::File { path } = self {
            let full = if path.is_absolute() { path.clone() } else { base.join(&*path) };
            if !full.is_file() {
                return Err(CliError::config(&full, "target file does not exist"));
            }
            let target = TargetSource::File { path: full }.load()?;
            *self = TargetSource::Inline(target.spec());
        }
        Ok(())
    }
}

/// Geometric step sweep `h_k = h0 * factor^k`, `k < count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub h0: f64,
    pub factor: f64,
    pub count: usize,
}

impl Sweep {
    pub fn steps(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.h0 * self.factor.powi(k as i32)).collect()
    }
}

/// Score corruption with pointwise norm `budget` and Lipschitz constant `lipschitz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    pub budget: f64,
    pub lipschitz: f64,
}

fn default_reference_log2() -> u32 {
    3
}

fn default_tolerance() -> f64 {
    1e-10
}

fn default_threshold() -> f64 {
    wassdiff_core::explosion::DEFAULT_THRESHOLD
}

fn default_max_refine() -> u32 {
    wassdiff_core::explosion::DEFAULT_MAX_REFINE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<Study>,
    pub seed: u64,
    pub target: TargetSource,
    /// Extra targets (early-stopping runs every target).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<TargetSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<TimeGrid>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// The strong-error reference is `2^reference_log2` times finer than the finest level.
    #[serde(default = "default_reference_log2")]
    pub reference_log2: u32,
    /// Sup-norm tolerance of the reference ODE solver.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<Corruption>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub horizons: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epsilons: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alphas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_max_refine")]
    pub max_refine: u32,
}

pub(crate) fn json_error(path: &Path, e: &serde_json::Error) -> CliError {
    CliError::Config { path: path.display().to_string(), line: e.line(), column: e.column(), message: e.to_string() }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| json_error(origin, &e))?;
        let base = origin.parent().unwrap_or(Path::new("."));
        cfg.target.resolve(base)?;
        for t in &mut cfg.targets {
            t.resolve(base)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json_str(&text, path)
    }

    pub fn grid(&self, origin: &Path) -> Result<TimeGrid> {
        self.grid.ok_or_else(|| CliError::config(origin, "missing \"grid\""))
    }

    pub fn sweep(&self, origin: &Path) -> Result<Sweep> {
        self.sweep.ok_or_else(|| CliError::config(origin, "missing \"sweep\""))
    }

    /// Checks the study-specific fields; `study` is the one requested on the command line.
    pub fn validate(&self, study: Study, origin: &Path) -> Result<()> {
        let err = |m: &str| Err(CliError::config(origin, m));
        if let Some(s) = self.study {
            if s != study {
                return err(&format!("config is for study {s}, not {study}"));
            }
        }
        if let Some(sw) = self.sweep {
            if sw.count == 0 || !(sw.h0 > 0.0) || !(sw.factor > 0.0 && sw.factor < 1.0) {
                return err("sweep needs h0 > 0, 0 < factor < 1 and count >= 1");
            }
        }
        if let Some(c) = self.corruption {
            if !(c.budget >= 0.0 && c.lipschitz >= 0.0) {
                return err("corruption budgets must be >= 0");
            }
        }
        match study {
            Study::Rates => {
                self.grid(origin)?;
                let sw = self.sweep(origin)?;
                if sw.factor != 0.5 {
                    return err("rates needs a dyadic sweep (factor 0.5)");
                }
                if sw.count < 3 {
                    return err("rates needs at least 3 step sizes");
                }
                if self.algorithms.is_empty() {
                    return err("rates needs at least one algorithm");
                }
                if self.replicates.is_none() {
                    return err("rates needs \"replicates\"");
                }
            }
            Study::BoundsCheck => {
                self.grid(origin)?;
                self.sweep(origin)?;
                if self.algorithms.is_empty() {
                    return err("bounds-check needs at least one algorithm");
                }
                if self.samples.is_none() {
                    return err("bounds-check needs \"samples\"");
                }
            }
            Study::InitAsymptotics => {
                if self.horizons.is_empty() || self.horizons.iter().any(|t| !(*t > 0.0)) {
                    return err("init-asymptotics needs positive \"horizons\"");
                }
                if self.samples.is_none() {
                    return err("init-asymptotics needs \"samples\"");
                }
            }
            Study::EarlyStopping => {
                if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e >= 0.0)) {
                    return err("early-stopping needs nonnegative \"epsilons\"");
                }
                if self.samples.is_none() {
                    return err("early-stopping needs \"samples\"");
                }
            }
            Study::Explosion => {
                self.grid(origin)?;
                if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a >= 0.0)) {
                    return err("explosion needs nonnegative \"alphas\"");
                }
                if self.deltas.is_empty() || self.deltas.iter().any(|d| !(*d > 0.0)) {
                    return err("explosion needs positive \"deltas\"");
                }
                if self.replicates.is_none_or(|m| m < 100) {
                    return err("explosion needs \"replicates\" >= 100");
                }
                if !(self.threshold >= 1e6) {
                    return err("explosion threshold must be >= 1e6");
                }
            }
            Study::W2Selftest => {
                if self.samples.is_none() {
                    return err("w2-selftest needs \"samples\"");
                }
            }
        }
        Ok(())
    }
}
