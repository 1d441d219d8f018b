//! Two-phase protocol: monolingual pretraining of the whole backbone, then
//! fine-tuning of one mode's trainable set on code-switched data.
//!
//! A "batch" is a window of single utterances whose CTC losses are averaged
//! before one optimizer step. Validation loss is computed after every epoch
//! and the best parameters are kept.

mod optim;

use std::time::Instant;

pub use optim::{lr_at, AdamHyper, OptimState, Schedule};

use crate::backbone::{Backbone, Mode, ModelConfig};
use crate::ctc::{ctc_loss, greedy_decode, CtcTarget};
use crate::error::{Error, Result};
use crate::kv::{parse_value, KvDoc};
use crate::metrics::{gate_quality, Metric, Report};
use crate::model::Model;
use crate::rng::SplitMix64;
use crate::switching::{CsNetwork, GateControl};
use crate::synth::{target_for, Condition, Corpus, Lang, Split, Utterance};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    pub warmup_steps: u64,
    pub power: f64,
    /// Utterances per optimizer step.
    pub accumulation: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub zero_infinity: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_lr: 1e-3,
            finetune_lr: 1e-3,
            warmup_steps: 100,
            power: 1.0,
            accumulation: 8,
            pretrain_epochs: 30,
            finetune_epochs: 20,
            patience: 10,
            clip_norm: 1.0,
            zero_infinity: true,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.accumulation == 0 {
            return Err(Error::Config("accumulation must be positive".into()));
        }
        if self.pretrain_epochs == 0 || self.finetune_epochs == 0 {
            return Err(Error::Config("epoch counts must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be positive".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "pretrain_lr" => self.pretrain_lr = parse_value(key, value)?,
            "finetune_lr" => self.finetune_lr = parse_value(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_value(key, value)?,
            "power" => self.power = parse_value(key, value)?,
            "accumulation" => self.accumulation = parse_value(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_value(key, value)?,
            "finetune_epochs" => self.finetune_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "zero_infinity" => self.zero_infinity = parse_value(key, value)?,
            "train_seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        d.set("pretrain_lr", self.pretrain_lr);
        d.set("finetune_lr", self.finetune_lr);
        d.set("warmup_steps", self.warmup_steps);
        d.set("power", self.power);
        d.set("accumulation", self.accumulation);
        d.set("pretrain_epochs", self.pretrain_epochs);
        d.set("finetune_epochs", self.finetune_epochs);
        d.set("patience", self.patience);
        d.set("clip_norm", self.clip_norm);
        d.set("zero_infinity", self.zero_infinity);
        d.set("train_seed", self.seed);
        d
    }

    fn clip(&self) -> Option<f64> {
        (self.clip_norm > 0.0).then_some(self.clip_norm)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
    pub wall_seconds: f64,
    pub improved: bool,
}

impl EpochRecord {
    pub const HEADER: &'static str = "# epoch train_loss val_loss lr wall_s";

    pub fn line(&self) -> String {
        format!(
            "{} {:.6} {:.6} {:.6e} {:.6}",
            self.epoch, self.train_loss, self.val_loss, self.lr, self.wall_seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation loss before the first step.
    pub initial_val_loss: f64,
    pub steps: u64,
}

/// Called after every epoch with the record and the current parameters.
pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochRecord, &Model) -> Result<()>;

/// A prepared training example.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub features: Tensor,
    pub target: CtcTarget,
    /// Route for single-path models.
    pub lang: Lang,
}

/// Which forward a model runs.
#[derive(Debug, Clone)]
pub enum Network {
    Single(Backbone),
    Cs(CsNetwork),
}

impl Network {
    pub fn for_model(model: &Model) -> Result<Self> {
        if model.mode().is_switching() {
            Ok(Network::Cs(model.cs_network()?))
        } else {
            Ok(Network::Single(model.backbone()?))
        }
    }

    /// Logits and, for TCS, the hard gates.
    pub fn logits(&self, features: &Tensor, lang: Lang, gate: &GateControl) -> Result<(Tensor, Option<Vec<u8>>)> {
        match self {
            Network::Single(b) => Ok((b.encode_single(features, lang)?, None)),
            Network::Cs(n) => {
                let out = n.encode_cs(features, gate)?;
                Ok((out.logits, out.gate.map(|g| g.hard_values())))
            }
        }
    }

    pub fn loss(&self, s: &Sample, gate: &GateControl, zero_infinity: bool) -> Result<Tensor> {
        let (logits, _) = self.logits(&s.features, s.lang, gate)?;
        ctc_loss(&logits.log_softmax(), &s.target, zero_infinity)
    }
}

fn condition_lang(c: Condition) -> Lang {
    match c {
        Condition::MonoEmbedded => Lang::Embedded,
        _ => Lang::Matrix,
    }
}

/// Samples for `model`'s mode: native tables for monolingual data under
/// single-path models, the matrix table for code-switched data under
/// matrix-path models, the merged table under switching models.
pub fn samples_for(model: &Model, utts: &[&Utterance]) -> Result<Vec<Sample>> {
    let merged = model.merged_vocab();
    utts.iter()
        .map(|u| {
            let lang = condition_lang(u.condition);
            let vocab = if model.mode().is_switching() { &merged } else { &model.vocabs[lang.index()] };
            Ok(Sample {
                id: u.id.clone(),
                features: u.features_tensor(),
                target: target_for(&u.transcript, vocab)?,
                lang,
            })
        })
        .collect()
}

/// Mean CTC loss with gates in evaluation mode.
pub fn validation_loss(net: &Network, samples: &[Sample], zero_infinity: bool) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Usage("validation set is empty".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += net.loss(s, &GateControl::Eval, zero_infinity)?.item();
    }
    Ok(total / samples.len() as f64)
}

/// Optimizes `model`'s trainable set; on return `model` holds the
/// parameters of the best validation epoch.
pub fn train_loop(
    model: &mut Model,
    train: &[Sample],
    val: &[Sample],
    order: &mut dyn FnMut(&mut SplitMix64) -> Vec<usize>,
    base_lr: f64,
    epochs: usize,
    cfg: &TrainConfig,
    hook: EpochHook<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let net = Network::for_model(model)?;
    let mut rng = SplitMix64::new(cfg.seed).fork(0x7472_6169_6e00 + model.mode() as u64);
    let epoch_len = order(&mut rng.clone()).len();
    let steps_per_epoch = epoch_len.div_ceil(cfg.accumulation) as u64;
    let schedule = Schedule {
        base_lr,
        warmup_steps: cfg.warmup_steps,
        total_steps: steps_per_epoch * epochs as u64,
        power: cfg.power,
    };
    schedule.validate()?;
    let mut opt = OptimState::new(&model.params, AdamHyper::default());
    model.params.zero_grads();

    let initial_val_loss = validation_loss(&net, val, cfg.zero_infinity)?;
    let mut best = (0usize, initial_val_loss, model.params.snapshot());
    let mut log = Vec::new();
    let mut lr = 0.0;
    for epoch in 1..=epochs {
        let started = Instant::now();
        let idx = order(&mut rng);
        let mut train_total = 0.0;
        for window in idx.chunks(cfg.accumulation) {
            for &i in window {
                let loss = net.loss(&train[i], &GateControl::Train, cfg.zero_infinity)?;
                let value = loss.item();
                if !value.is_finite() {
                    return Err(Error::Training(format!("non-finite loss {value} on {}", train[i].id)));
                }
                train_total += value;
                loss.affine(1.0 / window.len() as f64, 0.0).backward()?;
            }
            lr = lr_at(opt.step_count() + 1, &schedule);
            opt.step(&model.params, lr, cfg.clip())?;
        }
        if let Some(path) = opt.untouched().first() {
            return Err(Error::Training(format!("trainable parameter {path} received no gradient in epoch {epoch}")));
        }
        let val_loss = validation_loss(&net, val, cfg.zero_infinity)?;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        let improved = val_loss < best.1;
        if improved {
            best = (epoch, val_loss, model.params.snapshot());
        }
        let record = EpochRecord {
            epoch,
            train_loss: train_total / idx.len() as f64,
            val_loss,
            lr,
            wall_seconds: started.elapsed().as_secs_f64(),
            improved,
        };
        hook(&record, model)?;
        log.push(record);
        if epoch - best.0 >= cfg.patience {
            break;
        }
    }
    model.params.restore(&best.2)?;
    Ok(TrainOutcome {
        log,
        best_epoch: best.0,
        best_val_loss: best.1,
        initial_val_loss,
        steps: opt.step_count(),
    })
}

/// Model geometry that fits `corpus`.
pub fn model_config_for(corpus: &Corpus, base: &ModelConfig) -> ModelConfig {
    ModelConfig {
        d_feature: corpus.config.d_feature,
        vocab_sizes: [corpus.languages[0].token_table.len(), corpus.languages[1].token_table.len()],
        mode: Mode::Single,
        ..base.clone()
    }
}

/// Alternates matrix and embedded utterances, each list shuffled and the
/// shorter one cycled, so every window sees both languages.
fn interleave(rng: &mut SplitMix64, a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    rng.shuffle(&mut a);
    rng.shuffle(&mut b);
    let n = a.len().max(b.len());
    (0..n).flat_map(|i| [a[i % a.len()], b[i % b.len()]]).collect()
}

/// Trains projector, blocks, both adapter stacks and both heads from
/// scratch on the monolingual training splits.
pub fn pretrain(corpus: &Corpus, base: &ModelConfig, cfg: &TrainConfig, hook: EpochHook<'_>) -> Result<(Model, TrainOutcome)> {
    let mut model = Model::new(model_config_for(corpus, base), [
        corpus.languages[0].token_table.clone(),
        corpus.languages[1].token_table.clone(),
    ])?;
    let a = corpus.select(Condition::MonoMatrix, Split::Train);
    let b = corpus.select(Condition::MonoEmbedded, Split::Train);
    if a.is_empty() || b.is_empty() {
        return Err(Error::Usage("pretraining needs monolingual training data in both languages".into()));
    }
    let train = samples_for(&model, &[a.as_slice(), b.as_slice()].concat())?;
    let mut val_utts = corpus.select(Condition::MonoMatrix, Split::Val);
    val_utts.extend(corpus.select(Condition::MonoEmbedded, Split::Val));
    let val = samples_for(&model, &val_utts)?;
    let ia: Vec<usize> = (0..a.len()).collect();
    let ib: Vec<usize> = (a.len()..a.len() + b.len()).collect();
    let mut order = |rng: &mut SplitMix64| interleave(rng, &ia, &ib);
    let outcome = train_loop(&mut model, &train, &val, &mut order, cfg.pretrain_lr, cfg.pretrain_epochs, cfg, hook)?;
    Ok((model, outcome))
}

/// Copies `pretrained`, moves it to `mode` and trains that mode's
/// trainable set on the code-switched training split.
pub fn finetune(
    pretrained: &Model,
    corpus: &Corpus,
    mode: Mode,
    cfg: &TrainConfig,
    hook: EpochHook<'_>,
) -> Result<(Model, TrainOutcome)> {
    if mode == Mode::Single {
        return Err(Error::Usage("fine-tuning needs matrix-ft, pacs or tcs".into()));
    }
    let mut model = Model {
        config: pretrained.config.clone(),
        params: pretrained.params.duplicate(),
        vocabs: pretrained.vocabs.clone(),
    };
    model.prepare(mode)?;
    let train_utts = corpus.select(Condition::CodeSwitched, Split::Train);
    let val_utts = corpus.select(Condition::CodeSwitched, Split::Val);
    let train = samples_for(&model, &train_utts)?;
    let val = samples_for(&model, &val_utts)?;
    let n = train.len();
    let mut order = |rng: &mut SplitMix64| {
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        idx
    };
    let outcome = train_loop(&mut model, &train, &val, &mut order, cfg.finetune_lr, cfg.finetune_epochs, cfg, hook)?;
    Ok((model, outcome))
}

/// Greedy transcription of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcription {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    /// Hard gates, for TCS models.
    pub gates: Option<Vec<u8>>,
    pub frame_lang: Vec<u8>,
}

/// Decodes every utterance. Single-path models route monolingual input
/// through its own language and code-switched input through the matrix
/// path; switching models decode everything through the merged head.
pub fn transcribe(model: &Model, utts: &[&Utterance], gate: &GateControl) -> Result<Vec<Transcription>> {
    let net = Network::for_model(model)?;
    let merged = model.merged_vocab();
    utts.iter()
        .map(|u| {
            let lang = condition_lang(u.condition);
            let vocab = if model.mode().is_switching() { &merged } else { &model.vocabs[lang.index()] };
            let (logits, gates) = net.logits(&u.features_tensor(), lang, gate)?;
            let decoded = greedy_decode(&logits.log_softmax(), vocab)?;
            Ok(Transcription {
                id: u.id.clone(),
                reference: u.transcript.clone(),
                hypothesis: decoded.text,
                gates,
                frame_lang: u.frame_lang.clone(),
            })
        })
        .collect()
}

/// Scores transcriptions; gate accuracy is included when gates exist.
pub fn score(transcripts: &[Transcription], metrics: &[Metric]) -> Result<Report> {
    let with_gates = transcripts.iter().any(|t| t.gates.is_some());
    let mut report = Report::new(metrics, with_gates);
    for t in transcripts {
        let gq = match &t.gates {
            Some(g) => Some(gate_quality(g, &t.frame_lang)?),
            None => None,
        };
        report.add(&t.id, &t.reference, &t.hypothesis, gq.as_ref());
    }
    Ok(report)
}

pub fn evaluate(model: &Model, utts: &[&Utterance], metrics: &[Metric]) -> Result<Report> {
    score(&transcribe(model, utts, &GateControl::Eval)?, metrics)
}

#[cfg(test)]
mod tests;
