//! Synthesize a corpus, pretrain, fine-tune in every mode and compare
//! code-switched test CER.
//!
//! ```text
//! cargo run --release --example pipeline [config.cfg]
//! ```

use codeswitch::config::ExperimentConfig;
use codeswitch::metrics::Metric;
use codeswitch::pipeline::run_pipeline;

fn main() -> codeswitch::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let result = run_pipeline(&cfg, &mut |line| println!("{line}"))?;
    println!();
    for s in &result.systems {
        let cer = s.cs_test.rate(Metric::Cer).unwrap_or(f64::NAN);
        match s.cs_test.gate_quality() {
            Some(g) => println!("{:<10} cs-test cer {cer:.6} gate_acc {:.6}", s.name, g.accuracy),
            None => println!("{:<10} cs-test cer {cer:.6}", s.name),
        }
    }
    println!("total {:.1}s", result.seconds);
    Ok(())
}
