//! The TOML run configuration. Every key has a matching command-line flag;
//! flags win over the file, the file wins over built-in defaults.
//!
//! ```toml
//! seed = 1
//! threads = 4
//! params = "nn_params.txt"
//!
//! [dataset]          # see hybseq::dataset::DatasetConfig
//! target_size = 50000
//!
//! [split]
//! fractions = [0.8, 0.1, 0.1]
//! bins = 10
//!
//! [train]
//! model = "cnn-lite"
//! lr = 1e-4
//! batch_size = 256
//! patience = 3
//! max_epochs = 40
//! encoding = "rc-second"
//! both_orders = true
//! mask = "all"
//!
//! [design]
//! k = 5
//! threshold = 0.2
//! min_score = 40
//! prune = true
//!
//! [bench]
//! n = 255701
//! batch = 512
//! trials = 10
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use hybseq::dataset::DatasetConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub params: Option<PathBuf>,
    pub dataset: Option<DatasetConfig>,
    pub split: SplitSection,
    pub train: TrainSection,
    pub design: DesignSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub fractions: [f64; 3],
    pub bins: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            fractions: [0.8, 0.1, 0.1],
            bins: 10,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub model: Option<String>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub encoding: Option<String>,
    pub both_orders: Option<bool>,
    pub mask: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    pub k: Option<usize>,
    pub threshold: Option<f64>,
    pub min_score: Option<i32>,
    pub prune: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub n: Option<usize>,
    pub batch: Option<usize>,
    pub trials: Option<usize>,
}

impl Config {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_doc_example_parses() {
        let doc = include_str!("config.rs");
        let body: String = doc
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start_matches(' '))
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = Config::parse(&body).unwrap();
        assert_eq!(cfg.seed, Some(1));
        assert_eq!(cfg.dataset.unwrap().target_size, 50000);
        assert_eq!(cfg.design.min_score, Some(40));
        assert_eq!(cfg.split.bins, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::parse("sede = 1").is_err());
        assert!(Config::parse("[train]\nrate = 1").is_err());
    }
}
