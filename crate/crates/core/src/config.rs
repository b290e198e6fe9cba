//! Run configuration: presets, TOML files with dotted sections, and `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Limits;
use crate::encoder::StrategyRegistry;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub variant: String,
    pub hidden: usize,
    pub forget_bias: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub esn_spectral_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub coverage: bool,
    pub coverage_weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_pgen: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub emb_dim: usize,
    pub attn_dim: usize,
    pub attention_score: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub beam: usize,
    pub max_tokens: usize,
    pub bootstrap_resamples: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    #[serde(default)]
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

pub const PRESETS: [&str; 2] = ["full", "desk"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let full = Self {
            preset: "full".into(),
            data: DataConfig::default(),
            encoder: EncoderConfig {
                variant: "trained".into(),
                hidden: 256,
                forget_bias: 1.0,
                esn_spectral_radius: None,
            },
            decoder: DecoderConfig {
                hidden: 256,
                coverage: true,
                coverage_weight: 1.0,
                force_pgen: None,
            },
            model: ModelSection {
                emb_dim: 128,
                attn_dim: 256,
                attention_score: "additive".into(),
            },
            train: TrainConfig::default(),
            eval: EvalConfig {
                beam: 4,
                max_tokens: 120,
                bootstrap_resamples: 1000,
                confidence: 0.95,
            },
        };
        match name {
            "full" => Ok(full),
            "desk" => {
                let mut c = full;
                c.preset = "desk".into();
                c.encoder.hidden = 32;
                c.decoder.hidden = 32;
                c.model.emb_dim = 32;
                c.model.attn_dim = 32;
                c.train.vocab_size = 500;
                c.train.epochs = 2;
                Ok(c)
            }
            other => Err(Error::Config(format!("unknown preset {other:?} (known: {})", PRESETS.join(", ")))),
        }
    }

    /// Preset (from `preset = …` in the file or overrides, default `full`),
    /// then the file's keys, then `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let file: toml::Table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse()
                    .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        let parsed: Vec<(String, toml::Value)> = overrides.iter().map(|o| parse_override(o)).collect::<Result<_>>()?;
        let preset = parsed
            .iter()
            .rev()
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| v.clone())
            .or_else(|| file.get("preset").cloned())
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::Config("preset must be a string".into()))
            })
            .transpose()?
            .unwrap_or_else(|| "full".into());
        let base = Self::preset(&preset)?;
        let mut table = match toml::Value::try_from(&base).expect("presets serialize") {
            toml::Value::Table(t) => t,
            _ => unreachable!("a struct serializes to a table"),
        };
        merge(&mut table, file);
        for (k, v) in parsed {
            set_dotted(&mut table, &k, v)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        StrategyRegistry::builtin().resolve(&self.encoder.variant)?;
        for (k, v) in [
            ("encoder.hidden", self.encoder.hidden),
            ("decoder.hidden", self.decoder.hidden),
            ("model.emb_dim", self.model.emb_dim),
            ("model.attn_dim", self.model.attn_dim),
            ("eval.beam", self.eval.beam),
            ("eval.max_tokens", self.eval.max_tokens),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.model.attention_score != "additive" {
            return Err(Error::Config(format!(
                "model.attention_score {:?} unsupported (only \"additive\")",
                self.model.attention_score
            )));
        }
        if let Some(p) = self.decoder.force_pgen {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("decoder.force_pgen must lie in [0, 1], got {p}")));
            }
        }
        if !(self.decoder.coverage_weight >= 0.0) {
            return Err(Error::Config("decoder.coverage_weight must be nonnegative".into()));
        }
        if !(self.eval.confidence > 0.0 && self.eval.confidence < 1.0) {
            return Err(Error::Config("eval.confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            variant: self.encoder.variant.clone(),
            vocab_size,
            emb_dim: self.model.emb_dim,
            enc_hidden: self.encoder.hidden,
            dec_hidden: self.decoder.hidden,
            attn_dim: self.model.attn_dim,
            coverage: self.decoder.coverage,
            coverage_weight: self.decoder.coverage_weight,
            forget_bias: self.encoder.forget_bias,
            esn_spectral_radius: self.encoder.esn_spectral_radius,
            force_pgen: self.decoder.force_pgen,
            seed: self.train.seed,
        }
    }

    pub fn limits(&self) -> Limits {
        Limits {
            max_doc_tokens: self.train.max_doc_tokens,
            max_summary_tokens: self.train.max_summary_tokens,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Checkpoint(format!("embedded config unreadable: {e}")))
    }

    /// First line of every CSV this run writes.
    pub fn header(&self) -> String {
        format!("# config: {}\n", self.to_json())
    }
}

fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
    let k = k.trim().to_string();
    let v = v.trim();
    let value = format!("v = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k, value))
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

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Config(format!("empty key in {key:?}")))?;
    let mut t = table;
    for p in parts {
        let entry = t.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {p} is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}
