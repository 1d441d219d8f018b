//! CTC loss against exhaustive path enumeration, then greedy decoding.
//!
//! ```text
//! cargo run --release --example ctc
//! ```

use codeswitch::ctc::{ctc_brute_force, ctc_loss, greedy_decode, CtcTarget};
use codeswitch::rng::SplitMix64;
use codeswitch::tensor::Tensor;
use codeswitch::vocab::{Unknown, Vocab};

fn main() -> codeswitch::Result<()> {
    let vocab = Vocab::new(["<blank>", "a", "b", "c"].map(String::from).to_vec())?;
    let mut rng = SplitMix64::new(3);
    let logits = Tensor::new(vec![6, 4], (0..24).map(|_| 2.0 * rng.normal()).collect())?;
    let log_probs = logits.log_softmax();

    let target = CtcTarget::new(vocab.encode("abb", Unknown::Reject)?, vocab.len())?;
    let loss = ctc_loss(&log_probs, &target, false)?.item();
    let brute = ctc_brute_force(&log_probs, &target)?;
    println!("target \"abb\" over 6 frames: dynamic programming {loss:.9}, enumeration {brute:.9}");

    // "abb" needs a blank between the two b's: four frames at minimum
    let tiny = Tensor::new(vec![2, 4], log_probs.to_vec()[..8].to_vec())?;
    let inf = ctc_loss(&tiny, &target, false)?.item();
    let zeroed = ctc_loss(&tiny, &target, true)?.item();
    println!("same target over 2 frames: {inf} (zero_infinity: {zeroed})");

    let decoded = greedy_decode(&log_probs, &vocab)?;
    println!("greedy decode of the random frames: {:?} -> {:?}", decoded.ids, decoded.text);
    Ok(())
}
