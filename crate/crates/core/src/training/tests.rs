use super::*;
use crate::synth::{generate_corpus, CorpusConfig};

fn corpus() -> Corpus {
    generate_corpus(&CorpusConfig {
        mono_counts: [12, 4, 4],
        cs_counts: [12, 4, 4],
        tokens_per_utterance: (3, 5),
        d_feature: 8,
        matrix_symbols: 4,
        ..CorpusConfig::default()
    })
    .unwrap()
}

fn model_cfg() -> ModelConfig {
    ModelConfig { n_blocks: 2, d_model: 8, n_heads: 2, d_ff: 16, adapter_bottleneck: 4, ..ModelConfig::default() }
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        warmup_steps: 2,
        accumulation: 4,
        pretrain_epochs: 3,
        finetune_epochs: 2,
        finetune_lr: 1e-2,
        pretrain_lr: 1e-2,
        ..TrainConfig::default()
    }
}

fn no_hook() -> impl FnMut(&EpochRecord, &Model) -> Result<()> {
    |_, _| Ok(())
}

#[test]
fn interleave_alternates_and_cycles() {
    let mut rng = SplitMix64::new(1);
    let out = interleave(&mut rng, &[0, 1, 2], &[10]);
    assert_eq!(out.len(), 6);
    assert!(out.iter().skip(1).step_by(2).all(|&i| i == 10));
    let mut firsts: Vec<usize> = out.iter().step_by(2).copied().collect();
    firsts.sort_unstable();
    assert_eq!(firsts, vec![0, 1, 2]);
}

#[test]
fn pretraining_runs_logs_and_keeps_best() {
    let c = corpus();
    let mut lines = Vec::new();
    let mut hook = |r: &EpochRecord, _: &Model| {
        lines.push(r.line());
        Ok(())
    };
    let (model, out) = pretrain(&c, &model_cfg(), &train_cfg(), &mut hook).unwrap();
    assert_eq!(out.log.len(), 3);
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0].split(' ').count(), 5);
    assert!(out.best_val_loss < out.initial_val_loss);
    let best = out.log.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(best, out.best_val_loss);
    let val = samples_for(&model, &c.select(Condition::MonoMatrix, Split::Val)).unwrap();
    assert!(validation_loss(&Network::for_model(&model).unwrap(), &val, true).unwrap().is_finite());
    assert_eq!(out.steps, 3 * 6);
}

#[test]
fn training_is_deterministic() {
    let c = corpus();
    let (m1, o1) = pretrain(&c, &model_cfg(), &train_cfg(), &mut no_hook()).unwrap();
    let (m2, o2) = pretrain(&c, &model_cfg(), &train_cfg(), &mut no_hook()).unwrap();
    assert_eq!(m1.params.snapshot(), m2.params.snapshot());
    assert_eq!(o1.best_val_loss, o2.best_val_loss);
}

#[test]
fn each_mode_mutates_exactly_its_trainable_set() {
    let c = corpus();
    let (pre, _) = pretrain(&c, &model_cfg(), &TrainConfig { pretrain_epochs: 1, ..train_cfg() }, &mut no_hook()).unwrap();
    for mode in [Mode::MatrixFt, Mode::Pacs, Mode::Tcs] {
        let mut shadow = Model { config: pre.config.clone(), params: pre.params.duplicate(), vocabs: pre.vocabs.clone() };
        shadow.prepare(mode).unwrap();
        let before = shadow.params.snapshot();
        let (tuned, _) = finetune(&pre, &c, mode, &TrainConfig { patience: 100, ..train_cfg() }, &mut no_hook()).unwrap();
        let after = tuned.params.snapshot();
        assert_eq!(before.keys().collect::<Vec<_>>(), after.keys().collect::<Vec<_>>());
        for (path, v) in &after {
            let trainable = match mode {
                Mode::MatrixFt => path.starts_with("head.lang0.") || path.contains(".adapter.lang0."),
                Mode::Pacs => path.starts_with("pacs.") || path.starts_with("merged_head."),
                _ => path.starts_with("tcs.") || path.starts_with("merged_head."),
            };
            assert_eq!(tuned.params.get(path).unwrap().requires_grad(), trainable, "{mode} {path}");
            if !trainable {
                assert_eq!(v, &before[path], "{mode} changed frozen {path}");
            }
        }
        // the pretrained model itself is untouched
        assert_eq!(pre.mode(), Mode::Single);
    }
}

#[test]
fn pacs_starts_at_matrix_baseline_loss() {
    let c = corpus();
    let (pre, _) = pretrain(&c, &model_cfg(), &TrainConfig { pretrain_epochs: 1, ..train_cfg() }, &mut no_hook()).unwrap();
    let utts = c.select(Condition::CodeSwitched, Split::Val);
    let mut pacs = Model { config: pre.config.clone(), params: pre.params.duplicate(), vocabs: pre.vocabs.clone() };
    pacs.prepare(Mode::Pacs).unwrap();
    let net = Network::for_model(&pacs).unwrap();
    let base = pre.backbone().unwrap();
    for u in utts {
        let x = u.features_tensor();
        let cs = net.logits(&x, Lang::Matrix, &GateControl::Eval).unwrap().0;
        let single = base.encode_single(&x, Lang::Matrix).unwrap();
        let v1 = pre.vocabs[0].len();
        let merged = pacs.merged_vocab();
        for t in 0..u.n_frames {
            for j in (0..v1).filter(|&j| !merged.is_blocked(j)) {
                assert_eq!(cs.row(t)[j], single.row(t)[j]);
            }
        }
    }
}

#[test]
fn masked_tokens_stay_impossible_after_training() {
    let c = corpus();
    let (pre, _) = pretrain(&c, &model_cfg(), &TrainConfig { pretrain_epochs: 1, ..train_cfg() }, &mut no_hook()).unwrap();
    let (tcs, _) = finetune(&pre, &c, Mode::Tcs, &train_cfg(), &mut no_hook()).unwrap();
    let net = Network::for_model(&tcs).unwrap();
    let merged = tcs.merged_vocab();
    for u in c.select(Condition::CodeSwitched, Split::Test) {
        let (logits, gates) = net.logits(&u.features_tensor(), Lang::Matrix, &GateControl::Eval).unwrap();
        assert_eq!(gates.unwrap().len(), u.n_frames);
        let p = logits.softmax();
        for t in 0..u.n_frames {
            for j in (0..merged.len()).filter(|&j| merged.is_blocked(j)) {
                assert_eq!(p.row(t)[j], 0.0);
            }
        }
    }
    let report = evaluate(&tcs, &c.select(Condition::CodeSwitched, Split::Test), &Metric::ALL).unwrap();
    assert!(report.gate_quality().is_some());
    assert!(report.summary_line().starts_with("SUMMARY n=4 "));
}

#[test]
fn checkpoint_round_trip_preserves_validation_loss() {
    let c = corpus();
    let (pre, _) = pretrain(&c, &model_cfg(), &TrainConfig { pretrain_epochs: 1, ..train_cfg() }, &mut no_hook()).unwrap();
    let (pacs, out) = finetune(&pre, &c, Mode::Pacs, &train_cfg(), &mut no_hook()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    pacs.save(dir.path(), &KvDoc::new()).unwrap();
    let back = Model::load(dir.path()).unwrap();
    let val = samples_for(&back, &c.select(Condition::CodeSwitched, Split::Val)).unwrap();
    let loss = validation_loss(&Network::for_model(&back).unwrap(), &val, true).unwrap();
    assert_eq!(loss, out.best_val_loss.min(out.initial_val_loss));
}

#[test]
fn single_mode_finetune_is_rejected() {
    let c = corpus();
    let pre = Model::new(model_config_for(&c, &model_cfg()), [c.languages[0].token_table.clone(), c.languages[1].token_table.clone()]).unwrap();
    assert!(matches!(finetune(&pre, &c, Mode::Single, &train_cfg(), &mut no_hook()), Err(Error::Usage(_))));
}

#[test]
fn train_config_keys_round_trip() {
    let cfg = TrainConfig { finetune_lr: 1e-5, clip_norm: 0.0, ..TrainConfig::default() };
    let mut back = TrainConfig::default();
    for (k, v) in cfg.to_kv().entries() {
        assert!(back.apply(k, v).unwrap(), "{k}");
    }
    assert_eq!(back, cfg);
    assert!(!back.apply("nope", "1").unwrap());
}
