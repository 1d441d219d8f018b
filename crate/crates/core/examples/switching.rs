//! Pretrain a small backbone, then fine-tune PACS and TCS on the
//! code-switched split and show a few decoded utterances with the TCS gate
//! next to the true frame languages.
//!
//! ```text
//! cargo run --release --example switching
//! ```

use codeswitch::backbone::Mode;
use codeswitch::config::ExperimentConfig;
use codeswitch::metrics::Metric;
use codeswitch::switching::GateControl;
use codeswitch::synth::{generate_corpus, Condition, Split};
use codeswitch::training::{evaluate, finetune, pretrain, transcribe};

const SMALL: &str = "
mono_counts = 120,20,20
cs_counts = 120,20,40
d_model = 32
d_ff = 64
adapter_bottleneck = 8
n_blocks = 2
pretrain_epochs = 12
finetune_epochs = 8
warmup_steps = 20
";

fn main() -> codeswitch::Result<()> {
    let cfg = ExperimentConfig::parse(SMALL)?;
    let corpus = generate_corpus(&cfg.corpus)?;
    let (pre, out) = pretrain(&corpus, &cfg.model, &cfg.train, &mut |r, _| {
        println!("pretrain {}", r.line());
        Ok(())
    })?;
    println!("pretrained: best epoch {}", out.best_epoch);
    let test = corpus.select(Condition::CodeSwitched, Split::Test);
    println!("frozen matrix path   {}", evaluate(&pre, &test, &Metric::ALL)?.summary_line());

    for mode in [Mode::Pacs, Mode::Tcs] {
        let (model, _) = finetune(&pre, &corpus, mode, &cfg.train, &mut |_, _| Ok(()))?;
        println!("{:<20} {}", mode.name(), evaluate(&model, &test, &Metric::ALL)?.summary_line());
        if mode == Mode::Tcs {
            for t in transcribe(&model, &test[..3], &GateControl::Eval)? {
                let show = |v: &[u8]| v.iter().map(|&g| if g == 0 { 'a' } else { 'B' }).collect::<String>();
                println!("  {} ref {:?} hyp {:?}", t.id, t.reference, t.hypothesis);
                println!("    truth {}", show(&t.frame_lang));
                println!("    gate  {}", show(t.gates.as_deref().unwrap_or_default()));
            }
        }
    }
    Ok(())
}
