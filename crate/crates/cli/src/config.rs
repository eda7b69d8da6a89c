//! Flat key-value experiment configuration files.
//!
//! The format is one `key value` pair per line, `#` comments, units spelled
//! out in key names. Unknown keys are rejected so typos fail loudly.

use beamalign::neural::TrainConfig;
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected 'key value', got '{text}'")]
    Malformed {
        path: String,
        line: usize,
        text: String,
    },
    #[error("{key}: missing required key")]
    Missing { key: String },
    #[error("{key}: invalid value '{value}' ({expected})")]
    Invalid {
        key: String,
        value: String,
        expected: String,
    },
    #[error("{key}: unknown key")]
    Unknown { key: String },
    #[error("{key}: {message}")]
    Constraint { key: String, message: String },
}

/// Parsed key-value file with consumption tracking.
pub struct RawConfig {
    values: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
}

impl RawConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(char::is_whitespace).ok_or_else(|| {
                ConfigError::Malformed {
                    path: path.display().to_string(),
                    line: i + 1,
                    text: line.to_string(),
                }
            })?;
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self {
            values,
            consumed: BTreeSet::new(),
        })
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.consumed.insert(key.to_string());
        self.values.get(key).cloned()
    }

    pub fn require<T: std::str::FromStr>(&mut self, key: &str, expected: &str) -> Result<T, ConfigError> {
        let value = self.raw(key).ok_or_else(|| ConfigError::Missing {
            key: key.to_string(),
        })?;
        value.parse().map_err(|_| ConfigError::Invalid {
            key: key.to_string(),
            value,
            expected: expected.to_string(),
        })
    }

    pub fn optional<T: std::str::FromStr>(
        &mut self,
        key: &str,
        expected: &str,
    ) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(value) => value
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::Invalid {
                    key: key.to_string(),
                    value,
                    expected: expected.to_string(),
                }),
        }
    }

    pub fn optional_string(&mut self, key: &str) -> Option<String> {
        self.raw(key)
    }

    pub fn list_f64(&mut self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let value = self.raw(key).ok_or_else(|| ConfigError::Missing {
            key: key.to_string(),
        })?;
        value
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| ConfigError::Invalid {
                    key: key.to_string(),
                    value: s.to_string(),
                    expected: "comma-separated reals".into(),
                })
            })
            .collect()
    }

    pub fn list_usize(&mut self, key: &str) -> Result<Vec<usize>, ConfigError> {
        let value = self.raw(key).ok_or_else(|| ConfigError::Missing {
            key: key.to_string(),
        })?;
        value
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| ConfigError::Invalid {
                    key: key.to_string(),
                    value: s.to_string(),
                    expected: "comma-separated integers".into(),
                })
            })
            .collect()
    }

    /// Error on any key the consumer never asked about.
    pub fn finish(self) -> Result<(), ConfigError> {
        for key in self.values.keys() {
            if !self.consumed.contains(key) {
                return Err(ConfigError::Unknown { key: key.clone() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Los,
    Nlos,
    Imported,
}

impl Scenario {
    pub fn parse(key: &str, value: &str) -> Result<Self, ConfigError> {
        match value {
            "los" => Ok(Self::Los),
            "nlos" => Ok(Self::Nlos),
            "imported" => Ok(Self::Imported),
            other => Err(ConfigError::Invalid {
                key: key.to_string(),
                value: other.to_string(),
                expected: "one of: los, nlos, imported".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Exhaustive,
    Binary,
    Qssr,
    QssrNet,
    QssrNetImpair,
    Oracle,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Exhaustive => "exhaustive",
            Self::Binary => "binary",
            Self::Qssr => "qssr",
            Self::QssrNet => "qssr-net",
            Self::QssrNetImpair => "qssr-net-impair",
            Self::Oracle => "oracle",
        }
    }

    pub fn parse(key: &str, value: &str) -> Result<Self, ConfigError> {
        match value {
            "exhaustive" => Ok(Self::Exhaustive),
            "binary" => Ok(Self::Binary),
            "qssr" => Ok(Self::Qssr),
            "qssr-net" => Ok(Self::QssrNet),
            "qssr-net-impair" => Ok(Self::QssrNetImpair),
            "oracle" => Ok(Self::Oracle),
            other => Err(ConfigError::Invalid {
                key: key.to_string(),
                value: other.to_string(),
                expected: "one of: exhaustive, binary, qssr, qssr-net, qssr-net-impair, oracle"
                    .into(),
            }),
        }
    }

    pub fn needs_network(self) -> bool {
        matches!(self, Self::QssrNet | Self::QssrNetImpair)
    }
}

#[derive(Debug, Clone)]
pub struct ImpairmentSettings {
    pub sigma_d_wavelengths: f64,
    pub sigma_p_radians: f64,
    pub truncate: bool,
    /// Separate seed for the fixed hardware realization; defaults to the
    /// experiment seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct CalibrationSettings {
    pub epochs: usize,
    pub step_size: f64,
    pub update_period: usize,
    /// Calibration-time SNR; when absent each evaluation cell calibrates at
    /// its own SNR.
    pub snr_db: Option<f64>,
    pub fresh_channel_per_epoch: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub channel_file: Option<PathBuf>,
    pub strategies: Vec<Strategy>,
    pub n_tx: usize,
    pub n_rx: usize,
    pub snr_grid_db: Vec<f64>,
    pub n_trials: usize,
    pub seed: u64,
    pub pilots_per_measurement: u32,
    pub impairments: Option<ImpairmentSettings>,
    pub calibration: Option<CalibrationSettings>,
}

fn parse_strategies(raw: &mut RawConfig) -> Result<Vec<Strategy>, ConfigError> {
    let value = raw
        .optional_string("strategies")
        .ok_or_else(|| ConfigError::Missing {
            key: "strategies".into(),
        })?;
    let mut strategies = Vec::new();
    for part in value.split(',') {
        strategies.push(Strategy::parse("strategies", part.trim())?);
    }
    if strategies.is_empty() {
        return Err(ConfigError::Constraint {
            key: "strategies".into(),
            message: "at least one strategy required".into(),
        });
    }
    Ok(strategies)
}

fn parse_impairments(raw: &mut RawConfig) -> Result<Option<ImpairmentSettings>, ConfigError> {
    let sigma_d: Option<f64> = raw.optional("impair_sigma_d_wavelengths", "real >= 0")?;
    let sigma_p: Option<f64> = raw.optional("impair_sigma_p_radians", "real >= 0")?;
    let truncate: Option<bool> = raw.optional("impair_truncate", "true|false")?;
    let seed: Option<u64> = raw.optional("impair_seed", "unsigned integer")?;
    match (sigma_d, sigma_p) {
        (None, None) => {
            if truncate.is_some() || seed.is_some() {
                return Err(ConfigError::Constraint {
                    key: "impair_truncate".into(),
                    message: "impairment keys present without impair_sigma_* values".into(),
                });
            }
            Ok(None)
        }
        (Some(d), Some(p)) => {
            if d < 0.0 || p < 0.0 {
                return Err(ConfigError::Constraint {
                    key: "impair_sigma_d_wavelengths".into(),
                    message: "impairment sigmas must be non-negative".into(),
                });
            }
            Ok(Some(ImpairmentSettings {
                sigma_d_wavelengths: d,
                sigma_p_radians: p,
                truncate: truncate.unwrap_or(false),
                seed,
            }))
        }
        _ => Err(ConfigError::Constraint {
            key: "impair_sigma_d_wavelengths".into(),
            message: "both impair_sigma_d_wavelengths and impair_sigma_p_radians are required"
                .into(),
        }),
    }
}

fn parse_calibration(raw: &mut RawConfig) -> Result<Option<CalibrationSettings>, ConfigError> {
    let epochs: Option<usize> = raw.optional("cal_epochs", "positive integer")?;
    let step: Option<f64> = raw.optional("cal_step_size", "positive real")?;
    let period: Option<usize> = raw.optional("cal_update_period", "positive integer")?;
    let snr: Option<f64> = raw.optional("cal_snr_db", "real")?;
    let fresh: Option<bool> = raw.optional("cal_fresh_channel_per_epoch", "true|false")?;
    if epochs.is_none() && step.is_none() && period.is_none() && snr.is_none() && fresh.is_none() {
        return Ok(None);
    }
    let epochs = epochs.unwrap_or(300);
    if epochs == 0 {
        return Err(ConfigError::Constraint {
            key: "cal_epochs".into(),
            message: "must be at least 1".into(),
        });
    }
    Ok(Some(CalibrationSettings {
        epochs,
        step_size: step.unwrap_or(1e-2),
        update_period: period.unwrap_or(1).max(1),
        snr_db: snr,
        fresh_channel_per_epoch: fresh.unwrap_or(true),
    }))
}

fn check_common(
    n_tx: usize,
    n_rx: usize,
    n_trials: usize,
    snr_grid: &[f64],
) -> Result<(), ConfigError> {
    if n_tx < 2 || n_rx < 2 {
        return Err(ConfigError::Constraint {
            key: "n_tx".into(),
            message: "array sizes must be at least 2".into(),
        });
    }
    if n_trials == 0 {
        return Err(ConfigError::Constraint {
            key: "n_trials".into(),
            message: "must be at least 1".into(),
        });
    }
    if snr_grid.is_empty() {
        return Err(ConfigError::Constraint {
            key: "snr_grid_db".into(),
            message: "must not be empty".into(),
        });
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::load(path)?;
        let scenario_str = raw
            .optional_string("scenario")
            .ok_or_else(|| ConfigError::Missing {
                key: "scenario".into(),
            })?;
        let scenario = Scenario::parse("scenario", &scenario_str)?;
        let channel_file: Option<PathBuf> = raw.optional_string("channel_file").map(PathBuf::from);
        let strategies = parse_strategies(&mut raw)?;
        let n_tx: usize = raw.require("n_tx", "positive integer")?;
        let n_rx: usize = raw.require("n_rx", "positive integer")?;
        let snr_grid_db = raw.list_f64("snr_grid_db")?;
        let n_trials: usize = raw.require("n_trials", "positive integer")?;
        let seed: u64 = raw.require("seed", "unsigned integer")?;
        let pilots: u32 = raw
            .optional("pilots_per_measurement", "positive integer")?
            .unwrap_or(beamalign::neural::DEFAULT_PILOTS);
        let impairments = parse_impairments(&mut raw)?;
        let calibration = parse_calibration(&mut raw)?;
        raw.finish()?;

        check_common(n_tx, n_rx, n_trials, &snr_grid_db)?;
        if scenario == Scenario::Imported && channel_file.is_none() {
            return Err(ConfigError::Missing {
                key: "channel_file".into(),
            });
        }
        if scenario == Scenario::Imported {
            if strategies.contains(&Strategy::Oracle) {
                return Err(ConfigError::Constraint {
                    key: "strategies".into(),
                    message: "oracle needs path metadata; imported channels have none".into(),
                });
            }
            if impairments.is_some() {
                return Err(ConfigError::Constraint {
                    key: "impair_sigma_d_wavelengths".into(),
                    message: "impairments need path metadata; imported channels have none".into(),
                });
            }
        }
        if strategies.contains(&Strategy::QssrNetImpair) {
            if impairments.is_none() {
                return Err(ConfigError::Constraint {
                    key: "strategies".into(),
                    message: "qssr-net-impair requires impair_sigma_* settings".into(),
                });
            }
            if calibration.is_none() {
                return Err(ConfigError::Constraint {
                    key: "strategies".into(),
                    message: "qssr-net-impair requires cal_* settings".into(),
                });
            }
        }
        Ok(Self {
            scenario,
            channel_file,
            strategies,
            n_tx,
            n_rx,
            snr_grid_db,
            n_trials,
            seed: seed_override.unwrap_or(seed),
            pilots_per_measurement: pilots.max(1),
            impairments,
            calibration,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub scenario: Scenario,
    pub strategies: Vec<Strategy>,
    pub n_tx_list: Vec<usize>,
    pub n_rx: usize,
    pub snr_db: f64,
    pub n_trials: usize,
    pub seed: u64,
    pub pilots_per_measurement: u32,
}

impl SweepConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::load(path)?;
        let scenario_str = raw
            .optional_string("scenario")
            .ok_or_else(|| ConfigError::Missing {
                key: "scenario".into(),
            })?;
        let scenario = Scenario::parse("scenario", &scenario_str)?;
        if scenario == Scenario::Imported {
            return Err(ConfigError::Constraint {
                key: "scenario".into(),
                message: "antenna sweeps need generated channels".into(),
            });
        }
        let strategies = parse_strategies(&mut raw)?;
        let n_tx_list = raw.list_usize("n_tx_list")?;
        let n_rx: usize = raw.require("n_rx", "positive integer")?;
        let snr_db: f64 = raw.require("snr_db", "real")?;
        let n_trials: usize = raw.require("n_trials", "positive integer")?;
        let seed: u64 = raw.require("seed", "unsigned integer")?;
        let pilots: u32 = raw
            .optional("pilots_per_measurement", "positive integer")?
            .unwrap_or(beamalign::neural::DEFAULT_PILOTS);
        raw.finish()?;
        if n_tx_list.is_empty() {
            return Err(ConfigError::Constraint {
                key: "n_tx_list".into(),
                message: "must not be empty".into(),
            });
        }
        check_common(n_tx_list[0], n_rx, n_trials, &[snr_db])?;
        Ok(Self {
            scenario,
            strategies,
            n_tx_list,
            n_rx,
            snr_db,
            n_trials,
            seed: seed_override.unwrap_or(seed),
            pilots_per_measurement: pilots.max(1),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScatterConfig {
    pub scenario: Scenario,
    pub strategies: Vec<Strategy>,
    pub n_tx: usize,
    pub n_rx: usize,
    pub snr_db: f64,
    pub n_trials: usize,
    pub seed: u64,
    pub pilots_per_measurement: u32,
}

impl ScatterConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::load(path)?;
        let scenario_str = raw
            .optional_string("scenario")
            .ok_or_else(|| ConfigError::Missing {
                key: "scenario".into(),
            })?;
        let scenario = Scenario::parse("scenario", &scenario_str)?;
        if scenario == Scenario::Imported {
            return Err(ConfigError::Constraint {
                key: "scenario".into(),
                message: "scatter plots need true angles; imported channels have none".into(),
            });
        }
        let strategies = parse_strategies(&mut raw)?;
        let n_tx: usize = raw.require("n_tx", "positive integer")?;
        let n_rx: usize = raw.require("n_rx", "positive integer")?;
        let snr_db: f64 = raw.optional("snr_db", "real")?.unwrap_or(25.0);
        let n_trials: usize = raw.require("n_trials", "positive integer")?;
        let seed: u64 = raw.require("seed", "unsigned integer")?;
        let pilots: u32 = raw
            .optional("pilots_per_measurement", "positive integer")?
            .unwrap_or(beamalign::neural::DEFAULT_PILOTS);
        raw.finish()?;
        check_common(n_tx, n_rx, n_trials, &[snr_db])?;
        Ok(Self {
            scenario,
            strategies,
            n_tx,
            n_rx,
            snr_db,
            n_trials,
            seed: seed_override.unwrap_or(seed),
            pilots_per_measurement: pilots.max(1),
        })
    }
}

pub fn load_train_config(
    path: &Path,
    seed_override: Option<u64>,
    workers: usize,
) -> Result<TrainConfig, ConfigError> {
    let mut raw = RawConfig::load(path)?;
    let n_tx: usize = raw.require("n_tx", "positive integer")?;
    let n_rx: usize = raw.require("n_rx", "positive integer")?;
    let seed: u64 = raw.require("seed", "unsigned integer")?;
    let mut cfg = TrainConfig::desk_default(n_tx, n_rx, seed_override.unwrap_or(seed));
    if let Some(v) = raw.optional("dataset_size", "positive integer")? {
        cfg.dataset_size = v;
    }
    if let Some(v) = raw.optional("epochs", "positive integer")? {
        cfg.epochs = v;
    }
    if let Some(v) = raw.optional("batch_size", "positive integer")? {
        cfg.batch_size = v;
    }
    if let Some(v) = raw.optional("lr_initial", "positive real")? {
        cfg.lr_initial = v;
    }
    if let Some(v) = raw.optional("lr_decay", "real in (0, 1]")? {
        cfg.lr_decay = v;
    }
    if let Some(v) = raw.optional("lr_decay_every_epochs", "positive integer")? {
        cfg.lr_decay_every = v;
    }
    if let Some(v) = raw.optional("snr_min_db", "real")? {
        cfg.snr_min_db = v;
    }
    if let Some(v) = raw.optional("snr_max_db", "real")? {
        cfg.snr_max_db = v;
    }
    if let Some(v) = raw.optional("aperture_stage_epochs", "integer >= 0")? {
        cfg.aperture_stage_epochs = v;
    }
    if let Some(v) = raw.optional("pilots_per_measurement", "positive integer")? {
        cfg.pilots_per_measurement = v;
    }
    raw.finish()?;
    cfg.workers = workers.max(1);
    if cfg.batch_size == 0 || cfg.dataset_size == 0 {
        return Err(ConfigError::Constraint {
            key: "batch_size".into(),
            message: "dataset_size and batch_size must be positive".into(),
        });
    }
    if !cfg.n_tx.is_power_of_two()
        || !cfg.n_rx.is_power_of_two()
        || cfg.n_tx.trailing_zeros() % 2 != 0
        || cfg.n_rx.trailing_zeros() % 2 != 0
    {
        return Err(ConfigError::Constraint {
            key: "n_tx".into(),
            message: "training needs power-of-4 array sizes".into(),
        });
    }
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct CalibrateConfig {
    pub scenario: Scenario,
    pub n_tx: usize,
    pub n_rx: usize,
    pub snr_db: f64,
    pub epochs: usize,
    pub step_size: f64,
    pub update_period: usize,
    pub fresh_channel_per_epoch: bool,
    pub pilots_per_measurement: u32,
    pub impairments: ImpairmentSettings,
    pub seed: u64,
    pub state_out: Option<PathBuf>,
}

impl CalibrateConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::load(path)?;
        let scenario_str = raw.optional_string("scenario").unwrap_or_else(|| "los".into());
        let scenario = Scenario::parse("scenario", &scenario_str)?;
        if scenario == Scenario::Imported {
            return Err(ConfigError::Constraint {
                key: "scenario".into(),
                message: "calibration needs generated channels with path metadata".into(),
            });
        }
        let n_tx: usize = raw.require("n_tx", "positive integer")?;
        let n_rx: usize = raw.require("n_rx", "positive integer")?;
        let snr_db: f64 = raw.require("snr_db", "real")?;
        let epochs: usize = raw.optional("epochs", "positive integer")?.unwrap_or(300);
        let step_size: f64 = raw.optional("step_size", "positive real")?.unwrap_or(1e-2);
        let update_period: usize = raw
            .optional("update_period", "positive integer")?
            .unwrap_or(1)
            .max(1);
        let fresh: bool = raw
            .optional("fresh_channel_per_epoch", "true|false")?
            .unwrap_or(true);
        let seed: u64 = raw.require("seed", "unsigned integer")?;
        let state_out = raw.optional_string("state_out").map(PathBuf::from);
        let pilots: u32 = raw
            .optional("pilots_per_measurement", "positive integer")?
            .unwrap_or(beamalign::neural::DEFAULT_PILOTS);
        let impairments = parse_impairments(&mut raw)?.ok_or_else(|| ConfigError::Missing {
            key: "impair_sigma_d_wavelengths".into(),
        })?;
        raw.finish()?;
        if epochs == 0 {
            return Err(ConfigError::Constraint {
                key: "epochs".into(),
                message: "must be at least 1".into(),
            });
        }
        Ok(Self {
            scenario,
            n_tx,
            n_rx,
            snr_db,
            epochs,
            step_size,
            update_period,
            fresh_channel_per_epoch: fresh,
            pilots_per_measurement: pilots.max(1),
            impairments,
            seed: seed_override.unwrap_or(seed),
            state_out,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExportConfig {
    pub scenario: Scenario,
    pub n_tx: usize,
    pub n_rx: usize,
    pub count: usize,
    pub seed: u64,
}

impl ExportConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::load(path)?;
        let scenario_str = raw.optional_string("scenario").unwrap_or_else(|| "los".into());
        let scenario = Scenario::parse("scenario", &scenario_str)?;
        if scenario == Scenario::Imported {
            return Err(ConfigError::Constraint {
                key: "scenario".into(),
                message: "export generates channels; scenario must be los or nlos".into(),
            });
        }
        let n_tx: usize = raw.require("n_tx", "positive integer")?;
        let n_rx: usize = raw.require("n_rx", "positive integer")?;
        let count: usize = raw.require("count", "positive integer")?;
        let seed: u64 = raw.require("seed", "unsigned integer")?;
        raw.finish()?;
        if count == 0 {
            return Err(ConfigError::Constraint {
                key: "count".into(),
                message: "must be at least 1".into(),
            });
        }
        Ok(Self {
            scenario,
            n_tx,
            n_rx,
            count,
            seed: seed_override.unwrap_or(seed),
        })
    }
}
