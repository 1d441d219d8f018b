//! The full experiment in memory: generate, pretrain, fine-tune in every
//! mode, score the code-switched test split.

use std::time::Instant;

use crate::backbone::Mode;
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::metrics::{Metric, Report};
use crate::model::Model;
use crate::synth::{generate_corpus, Condition, Corpus, Split};
use crate::training::{evaluate, finetune, pretrain, TrainOutcome};

#[derive(Debug, Clone)]
pub struct SystemResult {
    /// `baseline`, `matrix-ft`, `pacs` or `tcs`.
    pub name: String,
    pub model: Model,
    pub outcome: Option<TrainOutcome>,
    pub cs_test: Report,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub corpus: Corpus,
    pub pretrain: TrainOutcome,
    pub mono_test: [Report; 2],
    /// Baseline, MATRIX_FT, PACS, TCS, in that order.
    pub systems: Vec<SystemResult>,
    pub seconds: f64,
}

impl PipelineResult {
    pub fn system(&self, name: &str) -> Option<&SystemResult> {
        self.systems.iter().find(|s| s.name == name)
    }

    /// One summary line per scored system, stable across identical runs.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (name, r) in [("mono-a", &self.mono_test[0]), ("mono-b", &self.mono_test[1])] {
            out.push_str(&format!("{name} {}\n", r.summary_line()));
        }
        for s in &self.systems {
            out.push_str(&format!("{} {}\n", s.name, s.cs_test.summary_line()));
        }
        out
    }
}

/// Runs everything; `log` receives progress lines.
pub fn run_pipeline(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<PipelineResult> {
    let started = Instant::now();
    cfg.validate()?;
    let corpus = generate_corpus(&cfg.corpus)?;
    log(&format!("corpus: {} utterances", corpus.utterances.len()));

    let (pre, pre_out) = pretrain(&corpus, &cfg.model, &cfg.train, &mut |r, _| {
        log(&format!("pretrain {}", r.line()));
        Ok(())
    })?;
    let mono_test = [
        evaluate(&pre, &corpus.select(Condition::MonoMatrix, Split::Test), &Metric::ALL)?,
        evaluate(&pre, &corpus.select(Condition::MonoEmbedded, Split::Test), &Metric::ALL)?,
    ];
    log(&format!("mono-a {}", mono_test[0].summary_line()));
    log(&format!("mono-b {}", mono_test[1].summary_line()));

    let cs_test = corpus.select(Condition::CodeSwitched, Split::Test);
    let mut systems = vec![SystemResult {
        name: "baseline".into(),
        cs_test: evaluate(&pre, &cs_test, &Metric::ALL)?,
        model: pre.clone(),
        outcome: None,
    }];
    log(&format!("baseline {}", systems[0].cs_test.summary_line()));
    for mode in [Mode::MatrixFt, Mode::Pacs, Mode::Tcs] {
        let (model, outcome) = finetune(&pre, &corpus, mode, &cfg.train, &mut |r, _| {
            log(&format!("{mode} {}", r.line()));
            Ok(())
        })?;
        let report = evaluate(&model, &cs_test, &Metric::ALL)?;
        log(&format!("{mode} {}", report.summary_line()));
        systems.push(SystemResult { name: mode.name().into(), model, outcome: Some(outcome), cs_test: report });
    }
    Ok(PipelineResult {
        corpus,
        pretrain: pre_out,
        mono_test,
        systems,
        seconds: started.elapsed().as_secs_f64(),
    })
}
