//! Experiment configuration: corpus, model and training keys in one
//! `key = value` file. Every key is optional; unknown keys are rejected.
//!
//! | key | default |
//! |---|---|
//! | `seed` | 42 (corpus seed; `--seed` also sets `init_seed` and `train_seed`) |
//! | `mono_counts`, `cs_counts` | `300,50,100`, `400,50,100` (train, val, test) |
//! | `tokens_per_utterance` | `6,12` |
//! | `p_to_embedded`, `p_to_matrix` | 0.15, 0.4 |
//! | `switching` | `markov` or `midpoint` |
//! | `frames_per_token` | `2,4` |
//! | `noise_sigma`, `language_offset` | 0.3, 1.0 |
//! | `d_feature`, `matrix_symbols` | 32, 20 |
//! | `n_blocks`, `d_model`, `n_heads`, `d_ff`, `adapter_bottleneck` | 4, 64, 4, 128, 16 |
//! | `layer_norm_eps`, `tcs_blocks`, `init_seed` | 1e-5, 1, 42 |
//! | `gate_train_mode` | `straight_through` or `soft` |
//! | `pretrain_lr`, `finetune_lr`, `warmup_steps`, `power` | 1e-3, 1e-3, 100, 1 |
//! | `accumulation`, `pretrain_epochs`, `finetune_epochs`, `patience` | 8, 30, 20, 10 |
//! | `clip_norm`, `zero_infinity`, `train_seed` | 1.0, true, 42 |

use std::fs;
use std::path::Path;

use crate::backbone::ModelConfig;
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::synth::CorpusConfig;
use crate::training::TrainConfig;

pub const ECHO_NAME: &str = "effective_config.txt";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        if self.corpus.apply(key, value)? || self.model.apply(key, value)? || self.train.apply(key, value)? {
            return Ok(());
        }
        Err(Error::Config(format!("unknown key {key}")))
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in doc.entries() {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvDoc::parse(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// One seed for corpus, initialization and data order.
    pub fn set_seed(&mut self, seed: u64) {
        self.corpus.seed = seed;
        self.model.init_seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        let m = ModelConfig { d_feature: self.corpus.d_feature, ..self.model.clone() };
        m.validate()?;
        self.train.validate()
    }

    /// Every key with its resolved value.
    pub fn to_kv(&self) -> KvDoc {
        let mut d = self.corpus.to_kv();
        d.extend(&self.model.to_kv());
        d.extend(&self.train.to_kv());
        d
    }

    pub fn write_echo(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(ECHO_NAME);
        fs::write(&path, self.to_kv().render()).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply("d_model", "32").unwrap();
        cfg.apply("finetune_lr", "1e-5").unwrap();
        cfg.set_seed(9);
        let back = ExperimentConfig::parse(&cfg.to_kv().render()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn keys_are_disjoint() {
        let cfg = ExperimentConfig::default();
        let mut keys: Vec<String> = cfg.to_kv().entries().iter().map(|(k, _)| k.clone()).collect();
        let n = keys.len();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n);
        assert_eq!(
            n,
            cfg.corpus.to_kv().entries().len() + cfg.model.to_kv().entries().len() + cfg.train.to_kv().entries().len()
        );
    }

    #[test]
    fn unknown_key_is_named() {
        match ExperimentConfig::parse("seed = 1\nlearning_rate = 3\n") {
            Err(Error::Config(m)) => assert!(m.contains("learning_rate")),
            other => panic!("{other:?}"),
        }
        assert!(ExperimentConfig::parse("n_heads = 5\n").is_err());
    }
}
