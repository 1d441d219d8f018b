//! Toy-scale speech encoder: a feature projector, post-LN transformer
//! blocks each followed by a per-language residual adapter, and one LM head
//! per language.

pub mod layers;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{parse_value, KvDoc};
use crate::rng::SplitMix64;
use crate::synth::Lang;
use crate::tensor::{ParamSet, Tensor};
use crate::vocab::Vocab;

pub use layers::{sinusoidal_positions, Adapter, Bottleneck, LayerNorm, Linear, TransformerBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Monolingual routing: each utterance through its own adapters and head.
    Single,
    /// Fine-tune the matrix adapters and matrix head on code-switched data.
    MatrixFt,
    Pacs,
    Tcs,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::MatrixFt => "matrix-ft",
            Mode::Pacs => "pacs",
            Mode::Tcs => "tcs",
        }
    }

    /// Whether the model decodes through the merged head.
    pub fn is_switching(self) -> bool {
        matches!(self, Mode::Pacs | Mode::Tcs)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Mode::Single),
            "matrix-ft" => Ok(Mode::MatrixFt),
            "pacs" => Ok(Mode::Pacs),
            "tcs" => Ok(Mode::Tcs),
            _ => Err(Error::Config(format!("unknown mode {s:?} (single, matrix-ft, pacs, tcs)"))),
        }
    }
}

/// How the TCS gate passes gradient during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateTrainMode {
    /// Hard gate forward, identity backward onto the soft gate.
    StraightThrough,
    /// Soft gate during training, hard gate at evaluation.
    Soft,
}

impl GateTrainMode {
    pub fn name(self) -> &'static str {
        match self {
            GateTrainMode::StraightThrough => "straight_through",
            GateTrainMode::Soft => "soft",
        }
    }
}

impl FromStr for GateTrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight_through" => Ok(GateTrainMode::StraightThrough),
            "soft" => Ok(GateTrainMode::Soft),
            _ => Err(Error::Config(format!("gate_train_mode must be straight_through or soft, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub adapter_bottleneck: usize,
    pub d_feature: usize,
    /// Matrix then embedded.
    pub vocab_sizes: [usize; 2],
    pub layer_norm_eps: f64,
    pub mode: Mode,
    pub gate_train_mode: GateTrainMode,
    /// Transformer blocks inside the TCS gate network.
    pub tcs_blocks: usize,
    pub init_seed: u64,
}

pub const GATE_THRESHOLD: f64 = 0.5;

/// Standard deviation of freshly initialized switcher down-projections.
pub const SWITCHER_INIT_STD: f64 = 0.02;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_blocks: 4,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            adapter_bottleneck: 16,
            d_feature: 32,
            vocab_sizes: [62, 43],
            layer_norm_eps: 1e-5,
            mode: Mode::Single,
            gate_train_mode: GateTrainMode::StraightThrough,
            tcs_blocks: 1,
            init_seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_blocks == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.d_feature == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.adapter_bottleneck == 0 || self.adapter_bottleneck >= self.d_model {
            return bad(format!(
                "adapter_bottleneck {} must lie in [1, d_model)",
                self.adapter_bottleneck
            ));
        }
        if self.vocab_sizes.iter().any(|&v| v < 2) {
            return bad("vocab sizes must be at least 2".into());
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive".into());
        }
        if self.tcs_blocks == 0 {
            return bad("tcs_blocks must be positive".into());
        }
        Ok(())
    }

    /// Keys a user may set. `d_feature` and vocab sizes follow the corpus.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "n_blocks" => self.n_blocks = parse_value(key, value)?,
            "d_model" => self.d_model = parse_value(key, value)?,
            "n_heads" => self.n_heads = parse_value(key, value)?,
            "d_ff" => self.d_ff = parse_value(key, value)?,
            "adapter_bottleneck" => self.adapter_bottleneck = parse_value(key, value)?,
            "layer_norm_eps" => self.layer_norm_eps = parse_value(key, value)?,
            "gate_train_mode" => self.gate_train_mode = value.parse()?,
            "tcs_blocks" => self.tcs_blocks = parse_value(key, value)?,
            "init_seed" => self.init_seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// User-settable keys only.
    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        d.set("n_blocks", self.n_blocks);
        d.set("d_model", self.d_model);
        d.set("n_heads", self.n_heads);
        d.set("d_ff", self.d_ff);
        d.set("adapter_bottleneck", self.adapter_bottleneck);
        d.set("layer_norm_eps", self.layer_norm_eps);
        d.set("gate_train_mode", self.gate_train_mode.name());
        d.set("tcs_blocks", self.tcs_blocks);
        d.set("init_seed", self.init_seed);
        d
    }

    /// Every field, for checkpoints.
    pub fn to_full_kv(&self) -> KvDoc {
        let mut d = self.to_kv();
        d.set("d_feature", self.d_feature);
        d.set("vocab_sizes", format!("{},{}", self.vocab_sizes[0], self.vocab_sizes[1]));
        d.set("mode", self.mode);
        d
    }

    pub fn from_full_kv(doc: &KvDoc) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in doc.entries() {
            match k.as_str() {
                "d_feature" => cfg.d_feature = parse_value(k, v)?,
                "vocab_sizes" => {
                    let (a, b) = crate::kv::parse_pair(k, v)?;
                    cfg.vocab_sizes = [a, b];
                }
                "mode" => cfg.mode = v.parse()?,
                _ => {
                    if !cfg.apply(k, v)? {
                        return Err(Error::Format(format!("unknown model key {k}")));
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct LmHead {
    pub linear: Linear,
    pub vocab: Vocab,
}

impl LmHead {
    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        self.linear.forward(h)
    }
}

/// Typed view over the backbone entries of a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Backbone {
    pub projector: Linear,
    pub blocks: Vec<TransformerBlock>,
    /// `adapters[lang][block]`.
    pub adapters: [Vec<Adapter>; 2],
    pub heads: [LmHead; 2],
}

fn lang_tag(lang: usize) -> &'static str {
    ["lang0", "lang1"][lang]
}

pub fn adapter_prefix(block: usize, lang: usize) -> String {
    format!("block.{block}.adapter.{}", lang_tag(lang))
}

impl Backbone {
    /// Registers freshly initialized backbone parameters.
    pub fn init(params: &mut ParamSet, cfg: &ModelConfig, vocabs: &[Vocab; 2]) -> Result<Self> {
        cfg.validate()?;
        check_vocabs(cfg, vocabs)?;
        let mut rng = SplitMix64::new(cfg.init_seed);
        let d = cfg.d_model;
        let eps = cfg.layer_norm_eps;
        let projector = Linear::init(params, "projector", cfg.d_feature, d, 1.0 / (cfg.d_feature as f64).sqrt(), &mut rng)?;
        let mut blocks = Vec::new();
        let mut adapters: [Vec<Adapter>; 2] = [Vec::new(), Vec::new()];
        for n in 0..cfg.n_blocks {
            blocks.push(TransformerBlock::init(
                params,
                &format!("block.{n}"),
                d,
                cfg.d_ff,
                cfg.n_heads,
                eps,
                None,
                &mut rng,
            )?);
            for (lang, stack) in adapters.iter_mut().enumerate() {
                stack.push(Adapter(Bottleneck::init(
                    params,
                    &adapter_prefix(n, lang),
                    d,
                    cfg.adapter_bottleneck,
                    d,
                    eps,
                    1.0 / (d as f64).sqrt(),
                    1.0 / (cfg.adapter_bottleneck as f64).sqrt(),
                    &mut rng,
                )?));
            }
        }
        let mut head = |lang: usize| -> Result<LmHead> {
            Ok(LmHead {
                linear: Linear::init(
                    params,
                    &format!("head.{}", lang_tag(lang)),
                    d,
                    cfg.vocab_sizes[lang],
                    1.0 / (d as f64).sqrt(),
                    &mut rng,
                )?,
                vocab: vocabs[lang].clone(),
            })
        };
        let heads = [head(0)?, head(1)?];
        Ok(Self { projector, blocks, adapters, heads })
    }

    pub fn load(params: &ParamSet, cfg: &ModelConfig, vocabs: &[Vocab; 2]) -> Result<Self> {
        check_vocabs(cfg, vocabs)?;
        let eps = cfg.layer_norm_eps;
        let projector = Linear::load(params, "projector")?;
        let mut blocks = Vec::new();
        let mut adapters: [Vec<Adapter>; 2] = [Vec::new(), Vec::new()];
        for n in 0..cfg.n_blocks {
            blocks.push(TransformerBlock::load(params, &format!("block.{n}"), cfg.n_heads, eps)?);
            for (lang, stack) in adapters.iter_mut().enumerate() {
                stack.push(Adapter(Bottleneck::load(params, &adapter_prefix(n, lang), eps)?));
            }
        }
        let head = |lang: usize| -> Result<LmHead> {
            Ok(LmHead {
                linear: Linear::load(params, &format!("head.{}", lang_tag(lang)))?,
                vocab: vocabs[lang].clone(),
            })
        };
        Ok(Self { projector, blocks, adapters, heads: [head(0)?, head(1)?] })
    }

    /// Per-frame affine map of the features, before positions are added.
    pub fn projector_forward(&self, features: &Tensor) -> Result<Tensor> {
        features.dims2("projector_forward")?;
        let (d_in, d) = self.projector.weight.dims2("projector_forward")?;
        if features.shape()[1] != d_in {
            return Err(Error::dim("projector_forward", features.shape(), &[d_in, d]));
        }
        self.projector.forward(features)
    }

    /// Adds sinusoidal positions to a projector output: the input to block 0.
    pub fn add_positions(&self, projected: &Tensor) -> Result<Tensor> {
        let (t, d) = projected.dims2("add_positions")?;
        projected.add(&sinusoidal_positions(t, d))
    }

    pub fn project(&self, features: &Tensor) -> Result<Tensor> {
        self.add_positions(&self.projector_forward(features)?)
    }

    /// Hidden states after the last adapter, routed through one language.
    pub fn hidden_single(&self, features: &Tensor, lang: Lang) -> Result<Tensor> {
        let l = lang.index();
        let mut h = self.project(features)?;
        for (block, adapter) in self.blocks.iter().zip(&self.adapters[l]) {
            h = adapter.forward(&block.forward(&h)?)?;
        }
        Ok(h)
    }

    /// `[T, V_lang]` logits of the plain single-language path.
    pub fn encode_single(&self, features: &Tensor, lang: Lang) -> Result<Tensor> {
        self.heads[lang.index()].forward(&self.hidden_single(features, lang)?)
    }
}

fn check_vocabs(cfg: &ModelConfig, vocabs: &[Vocab; 2]) -> Result<()> {
    for (lang, v) in vocabs.iter().enumerate() {
        if v.len() != cfg.vocab_sizes[lang] {
            return Err(Error::Format(format!(
                "token table for {} has {} entries, model expects {}",
                lang_tag(lang),
                v.len(),
                cfg.vocab_sizes[lang]
            )));
        }
    }
    Ok(())
}

/// Path prefixes excluded from optimization in `mode`.
///
/// Single: nothing. MatrixFt: everything but the matrix adapters and matrix
/// head. Pacs and Tcs: the whole backbone, including both adapter stacks.
pub fn frozen_prefixes(mode: Mode, n_blocks: usize) -> Vec<String> {
    match mode {
        Mode::Single => Vec::new(),
        Mode::MatrixFt => {
            let mut out = vec!["projector.".to_string(), "head.lang1.".to_string()];
            for n in 0..n_blocks {
                for part in ["attn", "ln1", "ffn", "ln2"] {
                    out.push(format!("block.{n}.{part}."));
                }
                out.push(format!("{}.", adapter_prefix(n, 1)));
            }
            out
        }
        Mode::Pacs | Mode::Tcs => vec!["projector.".into(), "block.".into(), "head.".into()],
    }
}

/// Applies the frozen/trainable partition for `mode`.
pub fn freeze_backbone(params: &mut ParamSet, mode: Mode, n_blocks: usize) {
    params.set_frozen(frozen_prefixes(mode, n_blocks));
}
