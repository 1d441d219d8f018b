//! A backbone plus optional switcher, owning its parameters, and the
//! checkpoint format.
//!
//! ```text
//! <dir>/checkpoint.txt   format tag, model.* config, vocab.*, meta.*,
//!                        blob name, param.<path> = <shape> <offset> <count>
//! <dir>/params-N.f64     parameter values, little-endian f64, sorted paths
//! ```
//!
//! Saving writes a new blob, then replaces the manifest by rename, then
//! removes the previous blob, so an interrupted save leaves the last
//! complete checkpoint readable.

use std::fs;
use std::path::Path;

use crate::backbone::{freeze_backbone, Backbone, Mode, ModelConfig};
use crate::error::{Error, Result};
use crate::kv::{parse_value, KvDoc};
use crate::rng::SplitMix64;
use crate::switching::{build_merged_head, CsNetwork, MergedLmHead, Switcher};
use crate::synth::io::{decode_tokens, encode_tokens, f64s_to_bytes, read_f64s};
use crate::synth::{merged_token_table, Lang};
use crate::tensor::{ParamSet, Tensor};
use crate::vocab::Vocab;

pub const CHECKPOINT_FORMAT: &str = "codeswitch-checkpoint-1";
pub const MANIFEST_NAME: &str = "checkpoint.txt";

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    /// Matrix then embedded token tables.
    pub vocabs: [Vocab; 2],
}

impl Model {
    /// Freshly initialized backbone, then switcher parameters and the
    /// freeze partition for `config.mode`.
    pub fn new(config: ModelConfig, vocabs: [Vocab; 2]) -> Result<Self> {
        let mode = config.mode;
        let mut model = Self {
            config: ModelConfig { mode: Mode::Single, ..config },
            params: ParamSet::new(),
            vocabs,
        };
        Backbone::init(&mut model.params, &model.config, &model.vocabs)?;
        model.prepare(mode)?;
        Ok(model)
    }

    /// Moves a pretrained (single-mode) model into a fine-tuning mode:
    /// registers switcher and merged-head parameters where needed and
    /// applies the freeze partition.
    pub fn prepare(&mut self, mode: Mode) -> Result<()> {
        if mode == self.config.mode {
            freeze_backbone(&mut self.params, mode, self.config.n_blocks);
            return Ok(());
        }
        if self.config.mode != Mode::Single {
            return Err(Error::Usage(format!(
                "cannot move a {} model to {}; start from a pretrained checkpoint",
                self.config.mode, mode
            )));
        }
        // fresh parameters must not inherit the previous partition
        self.params.set_frozen(Vec::<String>::new());
        let mut rng = SplitMix64::new(self.config.init_seed).fork(mode as u64 + 1);
        if mode.is_switching() {
            let backbone = self.backbone()?;
            match mode {
                Mode::Pacs => Switcher::init_pacs(&mut self.params, &self.config, &mut rng)?,
                _ => Switcher::init_tcs(&mut self.params, &self.config, &mut rng)?,
            };
            build_merged_head(&mut self.params, &backbone.heads)?;
        }
        self.config.mode = mode;
        freeze_backbone(&mut self.params, mode, self.config.n_blocks);
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn backbone(&self) -> Result<Backbone> {
        Backbone::load(&self.params, &self.config, &self.vocabs)
    }

    pub fn cs_network(&self) -> Result<CsNetwork> {
        let backbone = self.backbone()?;
        let switcher = match self.config.mode {
            Mode::Pacs => Switcher::load_pacs(&self.params, &self.config)?,
            Mode::Tcs => Switcher::load_tcs(&self.params, &self.config)?,
            m => return Err(Error::Config(format!("mode {m} has no switcher"))),
        };
        let head = MergedLmHead::load(&self.params, &backbone.heads)?;
        Ok(CsNetwork { backbone, switcher, head, gate_train_mode: self.config.gate_train_mode })
    }

    pub fn merged_vocab(&self) -> Vocab {
        merged_token_table(&self.vocabs[0], &self.vocabs[1])
    }

    /// The table hypotheses are decoded with when scoring code-switched
    /// data: the merged table for PACS/TCS, the matrix table otherwise.
    pub fn cs_vocab(&self) -> Vocab {
        if self.config.mode.is_switching() {
            self.merged_vocab()
        } else {
            self.vocabs[Lang::Matrix.index()].clone()
        }
    }

    /// Writes the checkpoint into `dir`. `meta` entries are stored under
    /// `meta.*` and returned by [`Model::load_with_meta`].
    pub fn save(&self, dir: impl AsRef<Path>, meta: &KvDoc) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join(MANIFEST_NAME);
        let previous_blob = fs::read_to_string(&manifest_path)
            .ok()
            .and_then(|t| KvDoc::parse(&t).ok())
            .and_then(|d| d.get("blob").map(str::to_string));
        let generation = previous_blob
            .as_deref()
            .and_then(|b| b.strip_prefix("params-")?.strip_suffix(".f64")?.parse::<u64>().ok())
            .map_or(0, |g| g + 1);
        let blob_name = format!("params-{generation}.f64");

        let mut doc = KvDoc::new();
        doc.set("format", CHECKPOINT_FORMAT);
        for (k, v) in self.config.to_full_kv().entries() {
            doc.set(&format!("model.{k}"), v);
        }
        doc.set("vocab.matrix", encode_tokens(self.vocabs[0].tokens()));
        doc.set("vocab.embedded", encode_tokens(self.vocabs[1].tokens()));
        for (k, v) in meta.entries() {
            doc.set(&format!("meta.{k}"), v);
        }
        doc.set("blob", &blob_name);
        let mut values = Vec::with_capacity(self.params.num_params());
        for (path, t) in self.params.iter() {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            doc.set(
                &format!("param.{path}"),
                format!("{} {} {}", shape.join("x"), values.len() * 8, t.numel()),
            );
            values.extend_from_slice(&t.data());
        }

        let write_atomic = |name: &str, bytes: &[u8]| -> Result<()> {
            let tmp = dir.join(format!("{name}.tmp"));
            fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
            let dst = dir.join(name);
            fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))
        };
        write_atomic(&blob_name, &f64s_to_bytes(&values))?;
        write_atomic(MANIFEST_NAME, doc.render().as_bytes())?;
        if let Some(old) = previous_blob.filter(|b| *b != blob_name) {
            let _ = fs::remove_file(dir.join(old));
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::load_with_meta(dir)?.0)
    }

    pub fn load_with_meta(dir: impl AsRef<Path>) -> Result<(Self, KvDoc)> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let doc = KvDoc::parse(&text)?;
        let require = |k: &str| {
            doc.get(k)
                .ok_or_else(|| Error::Format(format!("{} lacks {k}", manifest_path.display())))
        };
        if require("format")? != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("{} is not a checkpoint manifest", manifest_path.display())));
        }
        let mut model_kv = KvDoc::new();
        let mut meta = KvDoc::new();
        let mut entries = Vec::new();
        for (k, v) in doc.entries() {
            if let Some(k) = k.strip_prefix("model.") {
                model_kv.set(k, v);
            } else if let Some(k) = k.strip_prefix("meta.") {
                meta.set(k, v);
            } else if let Some(p) = k.strip_prefix("param.") {
                entries.push((p.to_string(), v.clone()));
            }
        }
        let config = ModelConfig::from_full_kv(&model_kv)?;
        let vocabs = [
            Vocab::new(decode_tokens(require("vocab.matrix")?)?)?,
            Vocab::new(decode_tokens(require("vocab.embedded")?)?)?,
        ];
        let model = Model::new(config, vocabs)?;

        let blob_path = dir.join(require("blob")?);
        let total: usize = model.params.num_params();
        let values = read_f64s(&blob_path, total)?;
        if entries.len() != model.params.len() {
            return Err(Error::Format(format!(
                "checkpoint lists {} parameters, model has {}",
                entries.len(),
                model.params.len()
            )));
        }
        for (path, spec) in &entries {
            let t = model
                .params
                .get(path)
                .map_err(|_| Error::Format(format!("checkpoint parameter {path} is not part of the model")))?;
            let parts: Vec<&str> = spec.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Format(format!("malformed entry for {path}")));
            }
            let shape: Vec<usize> = parts[0]
                .split('x')
                .map(|s| parse_value(path, s))
                .collect::<Result<_>>()?;
            if shape != t.shape() {
                return Err(Error::Format(format!(
                    "{path}: checkpoint shape {shape:?}, model shape {:?}",
                    t.shape()
                )));
            }
            let offset: usize = parse_value(path, parts[1])?;
            let count: usize = parse_value(path, parts[2])?;
            if offset % 8 != 0 || count != t.numel() || offset / 8 + count > values.len() {
                return Err(Error::Format(format!("{path}: bad offset or count")));
            }
            t.set_data(&values[offset / 8..offset / 8 + count]);
        }
        Ok((model, meta))
    }

    /// Logits under this model's decoding route for a code-switched input.
    pub fn cs_logits(&self, features: &Tensor) -> Result<Tensor> {
        if self.config.mode.is_switching() {
            Ok(self.cs_network()?.encode_cs(features, &crate::switching::GateControl::Eval)?.logits)
        } else {
            self.backbone()?.encode_single(features, Lang::Matrix)
        }
    }
}


/// Two blocks of width 8 over 5-dim features, for unit tests.
#[cfg(test)]
pub(crate) fn tiny_model(mode: Mode) -> Model {
    let vocabs = [crate::synth::matrix_token_table(4), crate::synth::embedded_token_table()];
    let cfg = ModelConfig {
        n_blocks: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        adapter_bottleneck: 3,
        d_feature: 5,
        vocab_sizes: [vocabs[0].len(), vocabs[1].len()],
        mode,
        ..ModelConfig::default()
    };
    Model::new(cfg, vocabs).unwrap()
}
