//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key may appear
//! at most once; unknown keys are rejected.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stv_core::eval::CvConfig;
use stv_core::{Boundary, EnsembleConfig, FlowConfig, Mode};

use crate::error::{CliError, CliResult};

/// Recognised keys, in the order they are echoed.
pub const KEYS: [&str; 17] = [
    "dt",
    "n_components",
    "inner_tol",
    "inner_max_iter",
    "boundary",
    "scales_per_band",
    "overlapping",
    "mode",
    "forest_size",
    "cutoff",
    "p_enh",
    "seed",
    "folds",
    "duplicate_lu",
    "manifest",
    "model",
    "out",
];

/// File name of the echoed configuration inside every output directory.
pub const ECHO_FILE: &str = "run_config.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub flow: FlowConfig,
    pub ensemble: EnsembleConfig,
    pub seed: u64,
    pub folds: usize,
    pub duplicate_lu: bool,
    pub manifest: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            flow: FlowConfig::default(),
            ensemble: EnsembleConfig::default(),
            seed: 0,
            folds: stv_core::eval::DEFAULT_FOLDS,
            duplicate_lu: true,
            manifest: None,
            model: None,
            out: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| CliError::ConfigValue {
        key: key.to_string(),
        value: value.to_string(),
        message: e.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::ConfigValue {
            key: key.to_string(),
            value: value.to_string(),
            message: "expected true or false".into(),
        }),
    }
}

impl RunConfig {
    /// Applies one setting. `n_components` sets both the flow length and the
    /// number of components seen by the bands.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        match key {
            "dt" => self.flow.dt = parse(key, value)?,
            "n_components" => {
                let n = parse(key, value)?;
                self.flow.n_components = n;
                self.ensemble.bands.n_components = n;
            }
            "inner_tol" => self.flow.inner_tol = parse(key, value)?,
            "inner_max_iter" => self.flow.inner_max_iter = parse(key, value)?,
            "boundary" => self.flow.boundary = parse::<Boundary>(key, value)?,
            "scales_per_band" => self.ensemble.bands.scales_per_band = parse(key, value)?,
            "overlapping" => self.ensemble.bands.overlapping = parse_bool(key, value)?,
            "mode" => self.ensemble.mode = parse::<Mode>(key, value)?,
            "forest_size" => self.ensemble.forest_size = parse(key, value)?,
            "cutoff" => self.ensemble.cutoff = parse(key, value)?,
            "p_enh" => self.ensemble.p_enh = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "duplicate_lu" => self.duplicate_lu = parse_bool(key, value)?,
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "model" => self.model = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            other => return Err(CliError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parses configuration text on top of the defaults.
    pub fn parse_text(text: &str, origin: &Path) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at_line = |message: String| CliError::ConfigLine {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at_line(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(at_line(format!("duplicate key {key:?}")));
            }
            cfg.set(key, value).map_err(|e| at_line(e.to_string()))?;
            seen.push(key.to_string());
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse_text(&text, path)
    }

    fn value_of(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        Some(match key {
            "dt" => self.flow.dt.to_string(),
            "n_components" => self.flow.n_components.to_string(),
            "inner_tol" => self.flow.inner_tol.to_string(),
            "inner_max_iter" => self.flow.inner_max_iter.to_string(),
            "boundary" => self.flow.boundary.as_str().to_string(),
            "scales_per_band" => self.ensemble.bands.scales_per_band.to_string(),
            "overlapping" => self.ensemble.bands.overlapping.to_string(),
            "mode" => self.ensemble.mode.to_string(),
            "forest_size" => self.ensemble.forest_size.to_string(),
            "cutoff" => self.ensemble.cutoff.to_string(),
            "p_enh" => self.ensemble.p_enh.to_string(),
            "seed" => self.seed.to_string(),
            "folds" => self.folds.to_string(),
            "duplicate_lu" => self.duplicate_lu.to_string(),
            "manifest" => return path(&self.manifest),
            "model" => return path(&self.model),
            "out" => return path(&self.out),
            _ => return None,
        })
    }

    /// The effective configuration in the file format, one key per line in
    /// [`KEYS`] order; unset paths are omitted.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .filter_map(|k| self.value_of(k).map(|v| format!("{k} = {v}\n")))
            .collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        self.flow.validate()?;
        Ok(())
    }

    /// Checks the band layout, mode and cutoff used by the learning commands.
    pub fn validate_ensemble(&self) -> CliResult<()> {
        self.ensemble.validate()?;
        Ok(())
    }

    pub fn cv(&self) -> CvConfig {
        CvConfig {
            ensemble: self.ensemble,
            folds: self.folds,
            seed: self.seed,
            duplicate_lu: self.duplicate_lu,
        }
    }

    pub fn require_out(&self) -> CliResult<&Path> {
        self.out.as_deref().ok_or(CliError::Missing("out"))
    }

    pub fn require_manifest(&self) -> CliResult<&Path> {
        self.manifest.as_deref().ok_or(CliError::Missing("manifest"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_echoes() {
        let text = "# run\n dt = 0.5\nmode=forest\n\nscales_per_band = 8\nout = runs/a\n";
        let cfg = RunConfig::parse_text(text, Path::new("cfg.txt")).unwrap();
        assert_eq!(cfg.flow.dt, 0.5);
        assert_eq!(cfg.ensemble.mode, Mode::Forest);
        assert_eq!(cfg.ensemble.bands.scales_per_band, 8);
        let echoed = cfg.to_text();
        assert!(echoed.starts_with("dt = 0.5\nn_components = 120\n"));
        assert!(!echoed.contains("manifest"));
        assert_eq!(RunConfig::parse_text(&echoed, Path::new("echo")).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let err = RunConfig::parse_text("dt = 1\nspeed = 3\n", Path::new("c")).unwrap_err();
        assert!(err.to_string().contains("c:2"));
        assert!(err.to_string().contains("speed"));
        assert!(RunConfig::parse_text("dt = 1\ndt = 2\n", Path::new("c")).is_err());
        assert!(RunConfig::parse_text("dt 1\n", Path::new("c")).is_err());
        assert!(RunConfig::parse_text("overlapping = maybe\n", Path::new("c")).is_err());
        assert!(RunConfig::parse_text("mode = bush\n", Path::new("c")).is_err());
    }

    #[test]
    fn float_values_round_trip_exactly() {
        let mut cfg = RunConfig::default();
        cfg.set("cutoff", "0.1").unwrap();
        cfg.set("inner_tol", "3e-7").unwrap();
        let back = RunConfig::parse_text(&cfg.to_text(), Path::new("echo")).unwrap();
        assert_eq!(back.ensemble.cutoff.to_bits(), 0.1f64.to_bits());
        assert_eq!(back.flow.inner_tol, 3e-7);
    }
}
