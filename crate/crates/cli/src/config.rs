//! Experiment configuration files.
//!
//! A file is either a complete experiment description or names a preset
//! and overrides parts of it:
//!
//! ```toml
//! preset = "paper-linear-16qam"
//! seed = 7
//!
//! [sweep]
//! axis = "snr_db"
//! values = [18.0, 21.0]
//! ```
//!
//! Tables are merged key by key; arrays (such as `equalizers`) replace the
//! preset's value. Unknown keys are rejected.

use std::path::Path;

use blindeq::experiments::{preset, ExperimentConfig, Profile, PRESETS};
use blindeq::{Error, Result};
use serde::Deserialize;

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Best-effort location of the key named in a deserialization message.
fn line_of_key(text: &str, msg: &str) -> usize {
    let key = msg.split('`').nth(1).unwrap_or("");
    if key.is_empty() {
        return 0;
    }
    text.lines()
        .position(|l| {
            let t = l.trim_start();
            t.starts_with(key) && t[key.len()..].trim_start().starts_with('=')
        })
        .map(|i| i + 1)
        .unwrap_or(0)
}

fn parse_error(text: &str, e: toml::de::Error) -> Error {
    let msg = e.message().trim().to_string();
    // spans of tagged tables point at the header, not the offending key
    let keyed = if msg.starts_with("unknown field") { line_of_key(text, &msg) } else { 0 };
    let line = match e.span() {
        _ if keyed > 0 => keyed,
        Some(s) => line_of(text, s.start),
        None => line_of_key(text, &msg),
    };
    Error::Parse { line, msg }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses configuration text; `profile` scales a referenced preset.
pub fn parse_config(text: &str, profile: Profile) -> Result<ExperimentConfig> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    let cfg = match table.remove("preset") {
        None => toml::from_str::<ExperimentConfig>(text).map_err(|e| parse_error(text, e))?,
        Some(toml::Value::String(name)) => {
            let base = preset(&name, profile)?;
            let mut merged = toml::Table::try_from(&base).map_err(|e| Error::InvalidArgument(format!("preset '{name}': {e}")))?;
            merge(&mut merged, table);
            ExperimentConfig::deserialize(merged).map_err(|e| {
                let msg = e.message().trim().to_string();
                Error::Parse { line: line_of_key(text, &msg), msg }
            })?
        }
        Some(_) => return Err(Error::Parse { line: line_of_key(text, "`preset`"), msg: "preset must be a string".into() }),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Loads `source`, which is a file path or the name of a preset.
pub fn load_config(source: &str, profile: Profile) -> Result<ExperimentConfig> {
    let path = Path::new(source);
    if !path.exists() && PRESETS.contains(&source) {
        return preset(source, profile);
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read config '{source}': {e} (presets: {})", PRESETS.join(", "))))?;
    parse_config(&text, profile)
}
