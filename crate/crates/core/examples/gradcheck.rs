//! Compare reverse-mode gradients against central differences for a few
//! primitives and for a CTC loss on top of a small linear layer.
//!
//! ```text
//! cargo run --release --example gradcheck
//! ```

use codeswitch::ctc::{ctc_loss, CtcTarget};
use codeswitch::rng::SplitMix64;
use codeswitch::tensor::{grad_check, Tensor};

fn random(rng: &mut SplitMix64, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

fn main() -> codeswitch::Result<()> {
    let mut rng = SplitMix64::new(7);
    let x = random(&mut rng, 4, 6);
    let w = random(&mut rng, 6, 5);
    let gain = Tensor::new(vec![6], random(&mut rng, 1, 6).to_vec())?;
    let bias = Tensor::new(vec![6], random(&mut rng, 1, 6).to_vec())?;
    let target = CtcTarget::new(vec![1, 3, 3], 5)?;

    let checks: Vec<(&str, Box<dyn Fn(&Tensor) -> codeswitch::Result<Tensor>>)> = vec![
        ("matmul", Box::new(|x| Ok(x.matmul(&w)?.sum()))),
        ("layer_norm", Box::new(|x| Ok(x.layer_norm(&gain, &bias, 1e-5)?.mul(x)?.sum()))),
        ("log_softmax", Box::new(|x| Ok(x.log_softmax().mul(x)?.sum()))),
        ("gelu", Box::new(|x| Ok(x.gelu().sum()))),
        ("ctc", Box::new(|x| ctc_loss(&x.matmul(&w)?.log_softmax(), &target, true))),
    ];
    for (name, f) in &checks {
        let err = grad_check(f, &x, 1e-5)?;
        println!("{name:<12} max rel err {err:.3e} {}", if err < 1e-4 { "ok" } else { "FAIL" });
    }
    Ok(())
}
