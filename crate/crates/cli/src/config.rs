//! Config files: TOML when the extension says so, JSON otherwise.

use std::path::Path;

use anyhow::{Context, Result};
use cal_core::{ModelDims, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    let parsed = if is_toml {
        toml::from_str(&text).map_err(anyhow::Error::from)
    } else {
        serde_json::from_str(&text).map_err(anyhow::Error::from)
    };
    parsed.with_context(|| format!("parsing {}", path.display()))
}

/// Hidden sizes; input widths come from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_mlp: usize,
    pub embed: usize,
    pub hidden_lstm: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let full = ModelDims::full(1, 1);
        Self {
            hidden_mlp: full.hidden_mlp,
            embed: full.embed,
            hidden_lstm: full.hidden_lstm,
        }
    }
}

impl ModelSection {
    pub fn dims(&self, visual_in: usize, word_in: usize) -> ModelDims {
        ModelDims {
            visual_in,
            word_in,
            hidden_mlp: self.hidden_mlp,
            embed: self.embed,
            hidden_lstm: self.hidden_lstm,
            use_tef: false,
            tef_only: false,
        }
    }
}

/// Training config file with `[train]` and `[model]` sections.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub train: TrainConfig,
    pub model: ModelSection,
}
