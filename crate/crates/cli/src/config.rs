//! Run configuration: flags over config file over defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use overlapscan::cart::Criterion;
use overlapscan::diagnostics::Mode;
use overlapscan::forest::Aggregation;
use overlapscan::pipeline::DetectOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    RotatedSquare,
    NullOverlap,
}

/// Generated input used in place of a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// Defaults to the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Every knob a detect run depends on, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    pub treatment_col: String,
    pub categorical: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<Criterion>,
    pub threshold: f64,
    pub mode: Mode,
    pub n_trees: usize,
    pub n_trials: usize,
    pub folds: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
    pub out: PathBuf,
    pub svg: PathBuf,
    pub emit_samples: bool,
    /// 0 lets the worker pool pick.
    pub threads: usize,
}

/// What a config file may set. Everything is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    pub treatment_col: Option<String>,
    pub categorical: Option<Vec<String>>,
    pub criterion: Option<Criterion>,
    pub threshold: Option<f64>,
    pub mode: Option<Mode>,
    pub n_trees: Option<usize>,
    pub n_trials: Option<usize>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub aggregation: Option<Aggregation>,
    pub out: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    pub emit_samples: Option<bool>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// The flag layer, same shape as [`FileConfig`].
pub type FlagConfig = FileConfig;

impl RunConfig {
    pub fn resolve(flags: FlagConfig, file: FileConfig) -> anyhow::Result<Self> {
        let defaults = DetectOptions::default();
        let synth = flags.synth.or(file.synth);
        let data = flags.data.or(file.data);
        if data.is_some() && synth.is_some() {
            bail!("give either a data file or a synthetic dataset, not both");
        }
        if data.is_none() && synth.is_none() {
            bail!("no input: pass --data <csv> or --synth <kind>");
        }
        let treatment_col = match flags.treatment_col.or(file.treatment_col) {
            Some(col) => col,
            None if synth.is_some() => "A".to_string(),
            None => bail!("--treatment-col is required with --data"),
        };
        let config = RunConfig {
            data,
            synth,
            treatment_col,
            categorical: flags.categorical.or(file.categorical).unwrap_or_default(),
            criterion: flags.criterion.or(file.criterion),
            threshold: flags.threshold.or(file.threshold).unwrap_or(defaults.threshold),
            mode: flags.mode.or(file.mode).unwrap_or(defaults.mode),
            n_trees: flags.n_trees.or(file.n_trees).unwrap_or(defaults.n_trees),
            n_trials: flags.n_trials.or(file.n_trials).unwrap_or(defaults.n_trials),
            folds: flags.folds.or(file.folds).unwrap_or(defaults.k_folds),
            seed: flags.seed.or(file.seed).unwrap_or(defaults.seed),
            aggregation: flags.aggregation.or(file.aggregation).unwrap_or(defaults.aggregation),
            out: flags.out.or(file.out).unwrap_or_else(|| "report.json".into()),
            svg: flags.svg.or(file.svg).unwrap_or_else(|| "report.svg".into()),
            emit_samples: flags.emit_samples.or(file.emit_samples).unwrap_or(false),
            threads: flags.threads.or(file.threads).unwrap_or(0),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            bail!("threshold must be a finite non-negative number, got {}", self.threshold);
        }
        if self.n_trees == 0 {
            bail!("n_trees must be at least 1");
        }
        if self.n_trials == 0 {
            bail!("n_trials must be at least 1");
        }
        if self.folds < 2 {
            bail!("folds must be at least 2, got {}", self.folds);
        }
        if let Some(synth) = &self.synth {
            if synth.n < 2 {
                bail!("synthetic n must be at least 2");
            }
            if synth.kind == SynthKind::NullOverlap && synth.d == Some(0) {
                bail!("synthetic d must be at least 1");
            }
        }
        Ok(())
    }

    pub fn detect_options(&self) -> DetectOptions {
        DetectOptions {
            criterion: self.criterion,
            threshold: self.threshold,
            mode: self.mode,
            n_trees: self.n_trees,
            n_trials: self.n_trials,
            k_folds: self.folds,
            seed: self.seed,
            aggregation: self.aggregation,
            emit_samples: self.emit_samples,
            ..DetectOptions::default()
        }
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}
