use std::path::Path;

use anyhow::{bail, Context, Result};
use fusion_policy::model::DEFAULT_HEADS;
use fusion_policy::synth::SynthSpec;
use fusion_policy::train::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Every tunable value, grouped by section. Missing keys keep their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub synth: SynthSpec,
    pub train: TrainConfig,
    pub model: ModelOptions,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub heads: usize,
    /// Speech layers averaged by `a2`; empty picks the best single layer on dev.
    pub selected_speech_layers: Vec<usize>,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            heads: DEFAULT_HEADS,
            selected_speech_layers: Vec::new(),
        }
    }
}

impl AppConfig {
    /// Defaults, then the TOML file, then `section.key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: AppConfig = Value::Table(table).try_into().context("invalid configuration")?;
        Ok(config)
    }
}

fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!("override {spec:?} is not key=value");
    };
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override key {key:?} is malformed");
    }
    // bare words that are not TOML literals are taken as strings
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for p in parents {
        node = match node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => bail!("override {key:?} descends into a non-table value"),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}
