use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use vaegan_core::data::CorpusConfig;
use vaegan_core::pipeline::{Preset, TrainConfig};

/// Everything a run can be configured with. Built from a preset, then the
/// config file, then `--set` overrides, in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        Self {
            corpus: CorpusConfig::toy(),
            train: TrainConfig::preset(p),
        }
    }

    pub fn resolve(preset: Preset, file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut doc = Value::try_from(Self::preset(preset)).context("serialising preset")?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let user: Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
            merge(&mut doc, Value::Table(user));
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig = doc.try_into().map_err(|e| anyhow!("invalid config: {e}"))?;
        if let Some(s) = seed {
            cfg.corpus.seed = s;
            cfg.train.seed = s;
        }
        cfg.corpus.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML literal, falling back
/// to a bare string; `none` removes an optional key.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{spec}' is not key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override '{spec}' has an empty key segment");
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v"),
        Err(_) => Some(Value::String(raw.to_string())),
    };
    let value = if raw == "none" { None } else { value };

    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = doc;
    for p in parents {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| anyhow!("'{key}': '{p}' is not a table"))?;
        cur = table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| anyhow!("'{key}' does not address a table entry"))?;
    match value {
        Some(v) => {
            table.insert(last.to_string(), v);
        }
        None => {
            table.remove(*last);
        }
    }
    Ok(())
}
