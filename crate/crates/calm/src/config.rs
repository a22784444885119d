use std::path::{Path, PathBuf};

use calm_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming the default report directory.
pub const REPORT_DIR_ENV: &str = "CALM_REPORT_DIR";

pub const DEFAULT_N_VALUES: [usize; 7] = [1, 5, 20, 75, 150, 300, 600];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub test_dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

/// Everything a command needs, read from one JSON document and overridden
/// by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub paths: Paths,
    /// References retrieved at inference.
    pub n: usize,
    pub n_values: Vec<usize>,
    pub allow_self_match: bool,
    pub grad_check: bool,
    /// Write the checkpoint every this many steps; 0 writes it only at the end.
    pub checkpoint_every: usize,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            paths: Paths::default(),
            n: 20,
            n_values: DEFAULT_N_VALUES.to_vec(),
            allow_self_match: false,
            grad_check: false,
            checkpoint_every: 0,
            threads: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.n_values.is_empty() || self.n_values.windows(2).any(|w| w[0] >= w[1]) || self.n_values[0] == 0 {
            return Err(Error::Config("n_values must be positive and strictly increasing".into()));
        }
        Ok(())
    }

    pub fn report_dir(&self) -> PathBuf {
        self.paths
            .report_dir
            .clone()
            .or_else(|| std::env::var_os(REPORT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("reports"))
    }
}

/// The path, or a config error naming the missing setting.
pub fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| Error::Config(format!("no {what} path given")))
}

/// Fails before any compute when an input file is missing.
pub fn existing<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    let p = required(path, what)?;
    if !p.is_file() {
        return Err(Error::Io {
            path: p.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found")),
        });
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_partial_documents() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        let partial: RunConfig = serde_json::from_str(r#"{"n": 5, "train": {"k": 3}}"#).unwrap();
        assert_eq!(partial.n, 5);
        assert_eq!(partial.train.k, 3);
        assert_eq!(partial.train.lambda, 1.0);
        assert!(serde_json::from_str::<RunConfig>(r#"{"nn": 5}"#).is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        for bad in [
            RunConfig { n: 0, ..RunConfig::default() },
            RunConfig { threads: 0, ..RunConfig::default() },
            RunConfig { n_values: vec![5, 5], ..RunConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        let mut bad = RunConfig::default();
        bad.train.k = 0;
        assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
    }
}
