//! Central-difference gradient verification.

use super::Tensor;
use crate::error::{Error, Result};

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Maximum relative error between the reverse-mode gradient of `f` at `x`
/// and the central difference with step `h`, over all coordinates of `x`.
///
/// `x` only supplies values; `f` receives a fresh leaf that requires
/// gradient. The relative error of one coordinate is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if h <= 0.0 {
        return Err(Error::Usage("finite-difference step must be positive".into()));
    }
    let base = x.to_vec();
    let leaf = Tensor::param(x.shape().to_vec(), base.clone())?;
    let y = f(&leaf)?;
    if y.numel() != 1 {
        return Err(Error::Usage("grad_check needs a scalar-valued function".into()));
    }
    y.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; base.len()]);

    let eval = |v: &[f64]| -> Result<f64> {
        let c = Tensor::new(x.shape().to_vec(), v.to_vec())?;
        Ok(f(&c)?.item())
    };
    let y0 = eval(&base)?;
    if y0.to_bits() != eval(&base)?.to_bits() || y0.to_bits() != y.item().to_bits() {
        return Err(Error::Usage("function is not deterministic".into()));
    }

    let mut worst = 0.0f64;
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        let fp = eval(&probe)?;
        probe[i] = base[i] - h;
        let fm = eval(&probe)?;
        probe[i] = base[i];
        worst = worst.max(rel_err(analytic[i], (fp - fm) / (2.0 * h)));
    }
    Ok(worst)
}

/// Like [`grad_check`] but perturbs existing leaves in place, so it can check
/// gradients with respect to model parameters buried inside `loss`.
///
/// Every leaf is restored to its original values before returning. Leaves
/// with `requires_grad == false` are compared against a zero analytic
/// gradient.
pub fn grad_check_leaves<F>(loss: F, leaves: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn() -> Result<Tensor>,
{
    if h <= 0.0 {
        return Err(Error::Usage("finite-difference step must be positive".into()));
    }
    leaves.iter().for_each(Tensor::zero_grad);
    let y = loss()?;
    y.backward()?;
    let y0 = y.item();
    if loss()?.item().to_bits() != y0.to_bits() {
        return Err(Error::Usage("function is not deterministic".into()));
    }

    let mut worst = 0.0f64;
    for leaf in leaves {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let base = leaf.to_vec();
        let mut probe = base.clone();
        let mut outcome = Ok(());
        for i in 0..base.len() {
            probe[i] = base[i] + h;
            leaf.set_data(&probe);
            let fp = loss().map(|t| t.item());
            probe[i] = base[i] - h;
            leaf.set_data(&probe);
            let fm = loss().map(|t| t.item());
            probe[i] = base[i];
            match (fp, fm) {
                (Ok(fp), Ok(fm)) => {
                    worst = worst.max(rel_err(analytic[i], (fp - fm) / (2.0 * h)));
                }
                (Err(e), _) | (_, Err(e)) => {
                    outcome = Err(e);
                    break;
                }
            }
        }
        leaf.set_data(&base);
        leaf.zero_grad();
        outcome?;
    }
    Ok(worst)
}
