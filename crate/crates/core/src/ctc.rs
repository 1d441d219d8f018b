//! Connectionist temporal classification: log-space loss with zero-infinity
//! clamping, an exhaustive alignment oracle, and greedy decoding.
//!
//! The blank symbol is index 0 in every table.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vocab::{Vocab, BLANK};

/// Label sequence for CTC. Never contains the blank.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CtcTarget(Vec<usize>);

impl CtcTarget {
    pub fn new(ids: Vec<usize>, vocab_size: usize) -> Result<Self> {
        validate_target(&ids, vocab_size)?;
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn validate_target(ids: &[usize], vocab_size: usize) -> Result<()> {
    for &id in ids {
        if id == BLANK {
            return Err(Error::Usage("CTC target contains the blank".into()));
        }
        if id >= vocab_size {
            return Err(Error::Usage(format!(
                "CTC target id {id} out of range for vocabulary of {vocab_size}"
            )));
        }
    }
    Ok(())
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_sum_exp3(a: f64, b: f64, c: f64) -> f64 {
    let m = a.max(b).max(c);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp() + (c - m).exp()).ln()
}

/// Blank-interleaved label sequence `[_, l1, _, l2, ..., _]`.
fn extend(target: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &l in target {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

/// Whether state `s` may be entered from `s - 2` (skipping a blank).
fn can_skip(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

/// Forward variables `alpha[t][s]` (log space, emission at `t` included)
/// and the total log-probability.
fn forward(lp: &[f64], t_len: usize, v: usize, ext: &[usize]) -> (Vec<f64>, f64) {
    let s_len = ext.len();
    let mut alpha = vec![f64::NEG_INFINITY; t_len * s_len];
    alpha[0] = lp[ext[0]];
    if s_len > 1 {
        alpha[1] = lp[ext[1]];
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        let emit = &lp[t * v..(t + 1) * v];
        for s in 0..s_len {
            let stay = prev[s];
            let step = if s >= 1 { prev[s - 1] } else { f64::NEG_INFINITY };
            let skip = if can_skip(ext, s) { prev[s - 2] } else { f64::NEG_INFINITY };
            cur[s] = log_sum_exp3(stay, step, skip) + emit[ext[s]];
        }
    }
    let last = &alpha[(t_len - 1) * s_len..];
    let total = if s_len > 1 {
        log_sum_exp2(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    };
    (alpha, total)
}

/// Backward variables `beta[t][s]`: log-probability of emitting frames
/// `t+1..T` and finishing, given state `s` at frame `t`.
fn backward(lp: &[f64], t_len: usize, v: usize, ext: &[usize]) -> Vec<f64> {
    let s_len = ext.len();
    let mut beta = vec![f64::NEG_INFINITY; t_len * s_len];
    beta[(t_len - 1) * s_len + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[(t_len - 1) * s_len + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        let next = &next[..s_len];
        let emit = &lp[(t + 1) * v..(t + 2) * v];
        for s in 0..s_len {
            let stay = next[s] + emit[ext[s]];
            let step = if s + 1 < s_len {
                next[s + 1] + emit[ext[s + 1]]
            } else {
                f64::NEG_INFINITY
            };
            let skip = if s + 2 < s_len && can_skip(ext, s + 2) {
                next[s + 2] + emit[ext[s + 2]]
            } else {
                f64::NEG_INFINITY
            };
            cur[s] = log_sum_exp3(stay, step, skip);
        }
    }
    beta
}

/// Negative log-likelihood of `target` under per-frame log-probabilities
/// `log_probs[T, V]`, summed over the utterance.
///
/// Infeasible targets have loss `+inf`; with `zero_infinity` the loss and
/// its gradient are exactly zero instead.
pub fn ctc_loss(log_probs: &Tensor, target: &CtcTarget, zero_infinity: bool) -> Result<Tensor> {
    let (t_len, v) = log_probs.dims2("ctc_loss")?;
    if v < 2 {
        return Err(Error::Usage("CTC needs at least blank plus one symbol".into()));
    }
    validate_target(target.ids(), v)?;
    let lp = log_probs.to_vec();
    for t in 0..t_len {
        let mass: f64 = lp[t * v..(t + 1) * v].iter().map(|x| x.exp()).sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::Usage(format!(
                "frame {t} of log_probs is not normalized (mass {mass})"
            )));
        }
    }
    let ext = extend(target.ids());
    let (alpha, log_p) = forward(&lp, t_len, v, &ext);
    let infeasible = log_p == f64::NEG_INFINITY;
    let loss = if infeasible && zero_infinity { 0.0 } else { -log_p };
    Ok(Tensor::from_op(
        vec![1],
        vec![loss],
        "ctc_loss",
        vec![log_probs.clone()],
        Box::new(move |g, inp, _| {
            if infeasible {
                let fill = if zero_infinity { 0.0 } else { f64::NAN };
                return vec![Some(vec![fill; t_len * v])];
            }
            let lp = inp[0].data();
            let beta = backward(&lp, t_len, v, &ext);
            let s_len = ext.len();
            let mut grad = vec![0.0; t_len * v];
            for t in 0..t_len {
                for s in 0..s_len {
                    let a = alpha[t * s_len + s] + beta[t * s_len + s];
                    if a > f64::NEG_INFINITY {
                        grad[t * v + ext[s]] -= (a - log_p).exp();
                    }
                }
            }
            grad.iter_mut().for_each(|x| *x *= g[0]);
            vec![Some(grad)]
        }),
    ))
}

/// Exhaustive oracle: sums the probability of every frame labelling that
/// collapses (merge repeats, drop blanks) to `target`. Limited to
/// `V^T <= 10^7` labellings.
pub fn ctc_brute_force(log_probs: &Tensor, target: &CtcTarget) -> Result<f64> {
    let (t_len, v) = log_probs.dims2("ctc_brute_force")?;
    let count = (v as f64).powi(t_len as i32);
    if count > 1e7 {
        return Err(Error::Usage(format!("{v}^{t_len} labellings is too many to enumerate")));
    }
    validate_target(target.ids(), v)?;
    let lp = log_probs.to_vec();
    let mut digits = vec![0usize; t_len];
    let mut total = 0.0;
    let mut collapsed = Vec::with_capacity(t_len);
    loop {
        collapsed.clear();
        let mut prev = usize::MAX;
        for &d in &digits {
            if d != prev && d != BLANK {
                collapsed.push(d);
            }
            prev = d;
        }
        if collapsed == target.ids() {
            let log_path: f64 = digits.iter().enumerate().map(|(t, &d)| lp[t * v + d]).sum();
            total += log_path.exp();
        }
        // odometer increment
        let mut pos = t_len;
        loop {
            if pos == 0 {
                return Ok(if total > 0.0 { -total.ln() } else { f64::INFINITY });
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < v {
                break;
            }
            digits[pos] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub ids: Vec<usize>,
    pub text: String,
}

/// Frame-wise argmax (lowest index wins ties), merge repeats, drop blanks.
pub fn greedy_decode(log_probs: &Tensor, vocab: &Vocab) -> Result<Decoded> {
    let (t_len, v) = log_probs.dims2("greedy_decode")?;
    if v != vocab.len() {
        return Err(Error::dim("greedy_decode", log_probs.shape(), &[vocab.len()]));
    }
    let lp = log_probs.data();
    let mut ids = Vec::new();
    let mut prev = usize::MAX;
    for t in 0..t_len {
        let row = &lp[t * v..(t + 1) * v];
        let mut best = 0;
        for (k, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = k;
            }
        }
        if best != prev && best != BLANK {
            ids.push(best);
        }
        prev = best;
    }
    let text = vocab.decode(&ids);
    Ok(Decoded { ids, text })
}
