//! Run configuration: a TOML file plus dotted `key=value` overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use reneus_core::forge::SceneSpec;
use reneus_core::render::TraceConfig;
use reneus_core::train::TrainConfig;

use crate::error::{Error, Result};

/// File name of the snapshot written beside every run's outputs.
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    /// Write a checkpoint every this many iterations (0 disables all but the
    /// final one).
    pub checkpoint_every: u64,
    /// Render a validation view every this many iterations (0 disables).
    pub validate_every: u64,
    pub validation_view: usize,
    /// Log to stderr every this many iterations.
    pub log_every: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            checkpoint_every: 5000,
            validate_every: 5000,
            validation_view: 0,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractConfig {
    /// Marching cubes cells per axis over the box bounds.
    pub resolution: usize,
    /// Keep only the largest connected component.
    pub largest_component: bool,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            largest_component: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Marching cubes resolution of the analytic ground truth.
    pub gt_resolution: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gt_resolution: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub scene: SceneSpec,
    /// Trace settings of the dataset renderer.
    pub oracle: TraceConfig,
    pub train: TrainConfig,
    pub schedule: Schedule,
    pub extract: ExtractConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Reads `path` (or the defaults when `None`) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |what: &str, e: reneus_core::error::Error| Error::Config(format!("{what}: {e}"));
        self.scene.validate().map_err(|e| wrap("scene", e))?;
        self.oracle.validate().map_err(|e| wrap("oracle", e))?;
        self.train.validate().map_err(|e| wrap("train", e))?;
        if self.extract.resolution < 8 {
            return Err(Error::Config("extract.resolution must be at least 8".into()));
        }
        if self.eval.gt_resolution < 8 {
            return Err(Error::Config("eval.gt_resolution must be at least 8".into()));
        }
        if self.schedule.validation_view >= self.scene.num_views {
            return Err(Error::Config("schedule.validation_view exceeds scene.num_views".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()).map_err(Error::io(path))
    }

    pub fn thread_count(&self) -> usize {
        if self.threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.threads
        }
    }
}

/// Sets `a.b.c=value` in `table`. The value is read as a TOML literal, or as
/// a bare string when it does not parse as one.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
