//! Subcommands of the `codeswitch` binary. Every command writes the
//! effective configuration into its output directory.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 I/O or
//! malformed input file, 4 training divergence, 1 anything else.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::backbone::Mode;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::metrics::{GateQuality, Metric};
use crate::model::Model;
use crate::switching::{write_gate_line, GateControl};
use crate::synth::{generate_corpus, read_corpus, write_corpus, Condition, Corpus, Split};
use crate::training::{finetune, pretrain, score, transcribe, EpochRecord, TrainOutcome};

pub const LOG_NAME: &str = "train_log.txt";
pub const REPORT_NAME: &str = "report.txt";
pub const TRANSCRIPT_NAME: &str = "transcripts.tsv";
pub const GATE_QUALITY_NAME: &str = "gate_quality.txt";
pub const GATE_DUMP_NAME: &str = "gates.txt";

#[derive(Debug, Parser)]
#[command(name = "codeswitch", about = "Adapter-switching code-switched ASR on a synthetic corpus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// `key = value` experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the corpus, initialization and training seeds.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct Selection {
    /// Corpus directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// `cs`, `mono-a` or `mono-b`.
    #[arg(long, default_value = "cs")]
    pub condition: String,
    /// Forces every frame's gate to this value (TCS checkpoints only).
    #[arg(long)]
    pub override_gate: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train the backbone on the monolingual splits.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Fine-tune a pretrained checkpoint on the code-switched split.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Pretrained checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// `matrix-ft`, `pacs` or `tcs`.
        #[arg(long)]
        mode: String,
    },
    /// Decode a split and score it.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sel: Selection,
        #[arg(long, default_value = "cer,wer,mer")]
        metrics: String,
    },
    /// Dump the TCS gate sequences of a split.
    Gates {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sel: Selection,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Usage(_) => 2,
        Error::Io { .. } | Error::Format(_) => 3,
        Error::Training(_) => 4,
        _ => 1,
    }
}

/// Runs one command; `out` receives the lines meant for stdout.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth { common } => cmd_synth(&common, out),
        Command::Pretrain { common, data } => cmd_pretrain(&common, &data, out),
        Command::Finetune { common, data, checkpoint, mode } => cmd_finetune(&common, &data, &checkpoint, &mode, out),
        Command::Eval { common, sel, metrics } => cmd_eval(&common, &sel, &metrics, out),
        Command::Gates { common, sel } => cmd_gates(&common, &sel, out),
    }
}

fn effective_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    cfg.write_echo(&common.out)?;
    Ok(cfg)
}

fn say(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(common: &Common, out: &mut dyn Write) -> Result<()> {
    let cfg = effective_config(common)?;
    let corpus = generate_corpus(&cfg.corpus)?;
    write_corpus(&corpus, &common.out)?;
    say(out, &format!("wrote {} utterances to {}", corpus.utterances.len(), common.out.display()))
}

/// Appends each epoch to the log and re-saves the checkpoint whenever
/// validation improves.
fn run_logged(
    out_dir: &Path,
    stage: &str,
    out: &mut dyn Write,
    train: impl FnOnce(&mut dyn FnMut(&EpochRecord, &Model) -> Result<()>) -> Result<(Model, TrainOutcome)>,
) -> Result<()> {
    let log_path = out_dir.join(LOG_NAME);
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "{}", EpochRecord::HEADER).map_err(|e| Error::io(&log_path, e))?;
    let meta_for = |epoch: usize, val: f64| {
        let mut m = KvDoc::new();
        m.set("stage", stage);
        m.set("best_epoch", epoch);
        m.set("best_val_loss", format!("{val:.6}"));
        m
    };
    let mut hook = |r: &EpochRecord, model: &Model| -> Result<()> {
        writeln!(log, "{}", r.line()).map_err(|e| Error::io(&log_path, e))?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        let _ = writeln!(out, "{stage} {}", r.line());
        if r.improved {
            model.save(out_dir, &meta_for(r.epoch, r.val_loss))?;
        }
        Ok(())
    };
    let (model, outcome) = train(&mut hook)?;
    model.save(out_dir, &meta_for(outcome.best_epoch, outcome.best_val_loss))?;
    say(out, &format!("best epoch {} val_loss {:.6}", outcome.best_epoch, outcome.best_val_loss))
}

fn cmd_pretrain(common: &Common, data: &Path, out: &mut dyn Write) -> Result<()> {
    let cfg = effective_config(common)?;
    let corpus = read_corpus(data)?;
    run_logged(&common.out, "pretrain", out, |hook| pretrain(&corpus, &cfg.model, &cfg.train, hook))
}

fn cmd_finetune(common: &Common, data: &Path, checkpoint: &Path, mode: &str, out: &mut dyn Write) -> Result<()> {
    let mode: Mode = mode.parse().map_err(|_| Error::Usage(format!("--mode must be matrix-ft, pacs or tcs, got {mode:?}")))?;
    if mode == Mode::Single {
        return Err(Error::Usage("--mode must be matrix-ft, pacs or tcs".into()));
    }
    let cfg = effective_config(common)?;
    let corpus = read_corpus(data)?;
    let mut pre = Model::load(checkpoint)?;
    check_vocabs(&pre, &corpus)?;
    if pre.mode() != Mode::Single {
        return Err(Error::Usage(format!("{} is already fine-tuned ({})", checkpoint.display(), pre.mode())));
    }
    pre.config.gate_train_mode = cfg.model.gate_train_mode;
    pre.config.tcs_blocks = cfg.model.tcs_blocks;
    run_logged(&common.out, mode.name(), out, |hook| finetune(&pre, &corpus, mode, &cfg.train, hook))
}

fn check_vocabs(model: &Model, corpus: &Corpus) -> Result<()> {
    for (i, name) in ["matrix", "embedded"].iter().enumerate() {
        if model.vocabs[i].tokens() != corpus.languages[i].token_table.tokens() {
            return Err(Error::Format(format!("{name} token table of the checkpoint differs from the corpus")));
        }
    }
    Ok(())
}

struct Loaded {
    model: Model,
    corpus: Corpus,
    condition: Condition,
    split: Split,
    gate: GateControl,
}

fn load_selection(sel: &Selection) -> Result<Loaded> {
    let split: Split = sel.split.parse().map_err(|_| Error::Usage(format!("unknown split {:?}", sel.split)))?;
    let condition: Condition =
        sel.condition.parse().map_err(|_| Error::Usage(format!("unknown condition {:?}", sel.condition)))?;
    let model = Model::load(&sel.checkpoint)?;
    let corpus = read_corpus(&sel.data)?;
    check_vocabs(&model, &corpus)?;
    let gate = match sel.override_gate {
        None => GateControl::Eval,
        Some(_) if model.mode() != Mode::Tcs => {
            return Err(Error::Usage("--override-gate needs a TCS checkpoint".into()));
        }
        Some(g) if (0.0..=1.0).contains(&g) => GateControl::Forced(g),
        Some(g) => return Err(Error::Usage(format!("--override-gate must lie in [0, 1], got {g}"))),
    };
    Ok(Loaded { model, corpus, condition, split, gate })
}

fn render_gate_quality(g: &GateQuality) -> String {
    format!(
        "accuracy = {:.6}\nprecision = {:.6}\nrecall = {:.6}\ntrue_pos = {}\nfalse_pos = {}\nfalse_neg = {}\ntrue_neg = {}\n",
        g.accuracy, g.precision, g.recall, g.true_pos, g.false_pos, g.false_neg, g.true_neg
    )
}

fn cmd_eval(common: &Common, sel: &Selection, metrics: &str, out: &mut dyn Write) -> Result<()> {
    let metrics = Metric::parse_list(metrics).map_err(|e| Error::Usage(e.to_string()))?;
    effective_config(common)?;
    let l = load_selection(sel)?;
    let utts = l.corpus.select(l.condition, l.split);
    let transcripts = transcribe(&l.model, &utts, &l.gate)?;
    let report = score(&transcripts, &metrics)?;
    write_text(&common.out.join(REPORT_NAME), &report.render())?;
    let mut side = String::from("# id\treference\thypothesis\n");
    for t in &transcripts {
        side.push_str(&format!("{}\t{}\t{}\n", t.id, t.reference, t.hypothesis));
    }
    write_text(&common.out.join(TRANSCRIPT_NAME), &side)?;
    if let Some(g) = report.gate_quality() {
        write_text(&common.out.join(GATE_QUALITY_NAME), &render_gate_quality(&g))?;
    }
    say(out, &report.summary_line())
}

fn cmd_gates(common: &Common, sel: &Selection, out: &mut dyn Write) -> Result<()> {
    effective_config(common)?;
    let l = load_selection(sel)?;
    if l.model.mode() != Mode::Tcs {
        return Err(Error::Usage(format!("gates needs a TCS checkpoint, found {}", l.model.mode())));
    }
    let utts = l.corpus.select(l.condition, l.split);
    let transcripts = transcribe(&l.model, &utts, &l.gate)?;
    let mut dump = Vec::new();
    let mut pooled = GateQuality::default();
    for t in &transcripts {
        let gates = t.gates.as_deref().expect("TCS transcriptions carry gates");
        write_gate_line(&mut dump, &t.id, gates).map_err(|e| Error::io(GATE_DUMP_NAME, e))?;
        pooled = pooled.merge(&crate::metrics::gate_quality(gates, &t.frame_lang)?);
    }
    let path = common.out.join(GATE_DUMP_NAME);
    fs::write(&path, dump).map_err(|e| Error::io(&path, e))?;
    write_text(&common.out.join(GATE_QUALITY_NAME), &render_gate_quality(&pooled))?;
    say(out, &format!("{} utterances gate_acc={:.6}", transcripts.len(), pooled.accuracy))
}
