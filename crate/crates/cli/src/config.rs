//! Config file handling. The file is flat TOML (`key = value` lines); every
//! key mirrors a flag and flags always win.

use std::path::Path;

use anyhow::{Context, Result};
use daid_core::DecodeConfig;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub alpha: Option<f32>,
    pub beta: Option<f32>,
    pub gamma: Option<f32>,
    pub preset: Option<String>,
    pub no_shadow_constraint: Option<bool>,
    pub strategy: Option<String>,
    pub max_new_tokens: Option<usize>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Decode-setting flags as typed on the command line.
#[derive(Debug, Default, Clone)]
pub struct DecodeOverrides {
    pub alpha: Option<f32>,
    pub beta: Option<f32>,
    pub gamma: Option<f32>,
    pub preset: Option<String>,
    pub no_shadow_constraint: bool,
}

fn preset(name: &str) -> Result<DecodeConfig> {
    match name {
        "default" => Ok(DecodeConfig::default()),
        "pope" => Ok(DecodeConfig::pope()),
        other => anyhow::bail!("unknown preset '{other}' (expected default or pope)"),
    }
}

/// Preset first, then file keys, then flags.
pub fn resolve(file: &FileConfig, flags: &DecodeOverrides) -> Result<DecodeConfig> {
    let name = flags
        .preset
        .as_deref()
        .or(file.preset.as_deref())
        .unwrap_or("default");
    let mut cfg = preset(name)?;
    for (slot, from_file, from_flag) in [
        (&mut cfg.alpha, file.alpha, flags.alpha),
        (&mut cfg.beta, file.beta, flags.beta),
        (&mut cfg.gamma, file.gamma, flags.gamma),
    ] {
        if let Some(v) = from_flag.or(from_file) {
            *slot = v;
        }
    }
    if flags.no_shadow_constraint || file.no_shadow_constraint == Some(true) {
        cfg.enforce_shadow_before_spotlight = false;
    }
    cfg.validate()?;
    Ok(cfg)
}
