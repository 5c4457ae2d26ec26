//! Run configuration: defaults, then a config file, then command-line overrides.

use std::path::Path;

use anyhow::{Context, Result};
use oat_core::baselines::BaselineConfig;
use oat_core::datasets::SynthConfig;
use oat_core::generation::Mode;
use oat_core::model::OatConfig;
use oat_core::pe::PeConfig;
use oat_core::training::TrainConfig;
use oat_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialSet {
    /// Held-out trials recorded in the checkpoint (all trials without one).
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub mode: Mode,
    pub n: usize,
    pub max_len: usize,
    pub trials: TrialSet,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            mode: Mode::Sample,
            n: 100,
            max_len: 30,
            trials: TrialSet::Test,
            seed: 0,
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> oat_core::Result<()> {
        if self.n == 0 {
            return Err(Error::config("generate.n", "must be positive"));
        }
        if self.max_len == 0 {
            return Err(Error::config("generate.max_len", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: OatConfig,
    pub pe: PeConfig,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
    pub baseline: BaselineConfig,
    pub data: SynthConfig,
}

impl RunConfig {
    pub fn preset(name: &str) -> oat_core::Result<Self> {
        match name {
            "paper" => Ok(RunConfig::default()),
            "desk" => Ok(RunConfig {
                model: OatConfig::desk(),
                train: TrainConfig::desk(),
                ..RunConfig::default()
            }),
            other => Err(Error::config(
                "preset",
                format!("unknown preset `{other}` (paper, desk)"),
            )),
        }
    }

    pub fn validate(&self) -> oat_core::Result<()> {
        self.model.validate()?;
        self.pe.validate()?;
        self.train.validate()?;
        self.generate.validate()?;
        self.baseline.validate()?;
        self.data.validate()
    }

    /// Uses one seed for data, training, generation and baselines.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.train.seed = seed;
        self.generate.seed = seed;
        self.baseline.seed = seed;
        self
    }

    /// Applies a config file: dotted-key TOML, or a JSON run manifest.
    pub fn merge_file(self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let overlay: Value = if path.extension().is_some_and(|e| e == "json") {
            let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            v.get("config").cloned().unwrap_or(v)
        } else {
            let t: toml::Table = toml::from_str(&text).map_err(|e| {
                Error::config(
                    path.display().to_string(),
                    format!("not valid dotted-key text: {}", e.message()),
                )
            })?;
            serde_json::to_value(t)?
        };
        self.merge_value(&overlay)
    }

    /// Applies `key=value` overrides such as `model.h=96`.
    pub fn merge_sets(self, sets: &[String]) -> Result<Self> {
        let mut overlay = Value::Object(Default::default());
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::config(s.clone(), "expected key=value"))?;
            let key = key.trim();
            let value: Value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
                Ok(mut t) => serde_json::to_value(t.remove("v").expect("parsed key"))?,
                Err(_) => Value::String(raw.trim().to_string()),
            };
            let mut parts: Vec<&str> = key.split('.').collect();
            let last = parts.pop().expect("split yields one part");
            let mut node = &mut overlay;
            for part in parts {
                node = node
                    .as_object_mut()
                    .ok_or_else(|| Error::config(key, "mixes a value and a table"))?
                    .entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()));
            }
            node.as_object_mut()
                .ok_or_else(|| Error::config(key, "mixes a value and a table"))?
                .insert(last.to_string(), value);
        }
        self.merge_value(&overlay)
    }

    fn merge_value(self, overlay: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(&self)?;
        merge(&mut base, overlay, "")?;
        let merged: RunConfig = serde_json::from_value(base)
            .map_err(|e| Error::config("config", format!("does not fit the schema: {e}")))?;
        Ok(merged)
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "table",
    }
}

fn merge(base: &mut Value, overlay: &Value, prefix: &str) -> oat_core::Result<()> {
    let Value::Object(over) = overlay else {
        return Ok(());
    };
    let Value::Object(obj) = base else {
        return Err(Error::config(prefix, "is not a table"));
    };
    for (k, v) in over {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let Some(slot) = obj.get_mut(k) else {
            return Err(Error::config(key, "unknown key"));
        };
        match (&*slot, v) {
            (Value::Object(_), Value::Object(_)) => merge(slot, v, &key)?,
            (Value::Object(_), _) => return Err(Error::config(key, "expects a table of keys")),
            (Value::Null, _) => *slot = v.clone(),
            (Value::Number(old), Value::Number(new)) if !old.is_f64() && !(new.is_u64() || new.is_i64()) => {
                return Err(Error::config(key, "expects an integer"));
            }
            (Value::Number(_), Value::Number(_))
            | (Value::Bool(_), Value::Bool(_))
            | (Value::String(_), Value::String(_))
            | (Value::Array(_), Value::Array(_)) => *slot = v.clone(),
            (old, new) => {
                return Err(Error::config(
                    key,
                    format!("expects a {}, got a {}", kind(old), kind(new)),
                ));
            }
        }
    }
    Ok(())
}
