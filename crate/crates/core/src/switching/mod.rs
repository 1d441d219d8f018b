//! Code-switching heads on top of a frozen backbone.
//!
//! PACS mixes the two adapter outputs of every block through a bottleneck
//! over their concatenation. TCS computes one per-frame gate from the
//! projector output and routes each frame to one adapter per block:
//! `(1 - g) * O_a1 + g * O_a2`. Both decode through a merged LM head whose
//! duplicate entries are masked with `-inf`.

use std::io::Write;

use crate::backbone::{
    Adapter, Backbone, Bottleneck, GateTrainMode, LmHead, Linear, ModelConfig, TransformerBlock,
    GATE_THRESHOLD, SWITCHER_INIT_STD,
};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::synth::merged_token_table;
use crate::tensor::{ParamSet, Tensor};

/// One PACS mixer: `2d -> bottleneck -> d`, residual around `O_a1`.
#[derive(Debug, Clone)]
pub struct PacsBlock(pub Bottleneck);

impl PacsBlock {
    pub fn forward(&self, o_a1: &Tensor, o_a2: &Tensor) -> Result<Tensor> {
        o_a1.add(&self.0.branch(&o_a1.concat_last(o_a2)?)?)
    }
}

/// Runs both adapters on a block output and mixes them.
pub fn pacs_forward(h_block: &Tensor, a1: &Adapter, a2: &Adapter, p: &PacsBlock) -> Result<Tensor> {
    p.forward(&a1.forward(h_block)?, &a2.forward(h_block)?)
}

/// Gate network: transformer block(s), a linear map to one unit, sigmoid.
#[derive(Debug, Clone)]
pub struct TcsGate {
    pub blocks: Vec<TransformerBlock>,
    pub out: Linear,
    pub threshold: f64,
}

impl TcsGate {
    /// Soft gate `[T, 1]` in (0, 1).
    pub fn soft(&self, projector_out: &Tensor) -> Result<Tensor> {
        let mut h = projector_out.clone();
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        Ok(self.out.forward(&h)?.sigmoid())
    }
}

/// How the TCS gate is produced for one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum GateControl {
    /// Hard gate, no gradient into the gate network.
    Eval,
    /// Training forward as configured by [`GateTrainMode`].
    Train,
    /// Every frame routed with this constant gate value.
    Forced(f64),
    /// Per-frame gate values, for example ground-truth language labels.
    Fixed(Vec<f64>),
    /// `soft + offset[t]` with constant offsets. With offsets taken as
    /// `hard - soft` at a reference point this is a smooth surrogate whose
    /// value and gradient match the straight-through forward there, which
    /// makes the straight-through path finite-difference checkable.
    Anchored(Vec<f64>),
}

/// Per-frame gate: soft values, their binarization, and the tensor actually
/// used for routing in this pass.
#[derive(Debug, Clone)]
pub struct GateSequence {
    pub soft: Tensor,
    pub hard: Tensor,
    pub routing: Tensor,
}

impl GateSequence {
    pub fn from_soft(soft: Tensor, control: &GateControl, train_mode: GateTrainMode, threshold: f64) -> Result<Self> {
        let t = soft.shape()[0];
        let binarize = |v: &[f64]| -> Vec<f64> { v.iter().map(|&x| if x > threshold { 1.0 } else { 0.0 }).collect() };
        let hard_of_soft = Tensor::new(vec![t, 1], binarize(&soft.data()))?;
        let (hard, routing) = match control {
            GateControl::Eval => (hard_of_soft.clone(), hard_of_soft),
            GateControl::Train => match train_mode {
                GateTrainMode::StraightThrough => {
                    let st = soft.straight_through_step(threshold);
                    (hard_of_soft, st)
                }
                GateTrainMode::Soft => (hard_of_soft, soft.clone()),
            },
            GateControl::Forced(v) => {
                let hard = Tensor::new(vec![t, 1], binarize(&vec![*v; t]))?;
                (hard, Tensor::new(vec![t, 1], vec![*v; t])?)
            }
            GateControl::Fixed(values) => {
                if values.len() != t {
                    return Err(Error::dim("gate_fixed", &[t, 1], &[values.len()]));
                }
                let hard = Tensor::new(vec![t, 1], binarize(values))?;
                (hard, Tensor::new(vec![t, 1], values.clone())?)
            }
            GateControl::Anchored(offsets) => {
                if offsets.len() != t {
                    return Err(Error::dim("gate_anchor", &[t, 1], &[offsets.len()]));
                }
                let routing = soft.add(&Tensor::new(vec![t, 1], offsets.clone())?)?;
                (hard_of_soft, routing)
            }
        };
        Ok(Self { soft, hard, routing })
    }

    pub fn len(&self) -> usize {
        self.soft.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hard_values(&self) -> Vec<u8> {
        self.hard.data().iter().map(|&v| u8::from(v > 0.5)).collect()
    }
}

/// `(1 - g) * o_a1 + g * o_a2` with `g: [T, 1]` repeated across features.
pub fn tcs_mix(o_a1: &Tensor, o_a2: &Tensor, gate: &Tensor) -> Result<Tensor> {
    if o_a1.shape() != o_a2.shape() {
        return Err(Error::dim("tcs_mix", o_a1.shape(), o_a2.shape()));
    }
    let (t, _) = o_a1.dims2("tcs_mix")?;
    if gate.shape() != [t, 1] {
        return Err(Error::dim("tcs_mix", o_a1.shape(), gate.shape()));
    }
    o_a1.mul(&gate.affine(-1.0, 1.0))?.add(&o_a2.mul(gate)?)
}

/// Concatenated heads with an additive `{0, -inf}` mask.
#[derive(Debug, Clone)]
pub struct MergedLmHead {
    pub linear: Linear,
    pub mask: Tensor,
    pub vocab: crate::vocab::Vocab,
}

impl MergedLmHead {
    pub const PREFIX: &'static str = "merged_head";

    fn mask_for(vocab: &crate::vocab::Vocab) -> Tensor {
        let m = (0..vocab.len())
            .map(|i| if vocab.is_blocked(i) { f64::NEG_INFINITY } else { 0.0 })
            .collect();
        Tensor::new(vec![vocab.len()], m).expect("non-empty vocabulary")
    }

    pub fn load(params: &ParamSet, heads: &[LmHead; 2]) -> Result<Self> {
        let vocab = merged_token_table(&heads[0].vocab, &heads[1].vocab);
        let linear = Linear::load(params, Self::PREFIX)?;
        if linear.bias.numel() != vocab.len() {
            return Err(Error::Format(format!(
                "merged head has {} outputs, token tables give {}",
                linear.bias.numel(),
                vocab.len()
            )));
        }
        Ok(Self { mask: Self::mask_for(&vocab), linear, vocab })
    }

    /// Logits with blocked entries at `-inf`.
    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        self.linear.forward(h)?.add_row(&self.mask)
    }
}

/// Registers `merged_head.*` as copies of the two heads, side by side.
pub fn build_merged_head(params: &mut ParamSet, heads: &[LmHead; 2]) -> Result<MergedLmHead> {
    let (d1, v1) = heads[0].linear.weight.dims2("build_merged_head")?;
    let (d2, v2) = heads[1].linear.weight.dims2("build_merged_head")?;
    if d1 != d2 {
        return Err(Error::dim("build_merged_head", heads[0].linear.weight.shape(), heads[1].linear.weight.shape()));
    }
    let (w1, w2) = (heads[0].linear.weight.data(), heads[1].linear.weight.data());
    let mut w = Vec::with_capacity(d1 * (v1 + v2));
    for r in 0..d1 {
        w.extend_from_slice(&w1[r * v1..(r + 1) * v1]);
        w.extend_from_slice(&w2[r * v2..(r + 1) * v2]);
    }
    let mut b = heads[0].linear.bias.to_vec();
    b.extend(heads[1].linear.bias.to_vec());
    let weight = params.insert(format!("{}.weight", MergedLmHead::PREFIX), Tensor::new(vec![d1, v1 + v2], w)?)?;
    let bias = params.insert(format!("{}.bias", MergedLmHead::PREFIX), Tensor::new(vec![v1 + v2], b)?)?;
    let vocab = merged_token_table(&heads[0].vocab, &heads[1].vocab);
    Ok(MergedLmHead { mask: MergedLmHead::mask_for(&vocab), linear: Linear { weight, bias }, vocab })
}

#[derive(Debug, Clone)]
pub enum Switcher {
    Pacs(Vec<PacsBlock>),
    Tcs(TcsGate),
}

fn pacs_prefix(n: usize) -> String {
    format!("pacs.block.{n}")
}

impl Switcher {
    /// Fresh PACS mixers: down-projections `N(0, 0.02^2)`, up-projections
    /// zero, so the first forward equals the matrix path.
    pub fn init_pacs(params: &mut ParamSet, cfg: &ModelConfig, rng: &mut SplitMix64) -> Result<Self> {
        let d = cfg.d_model;
        let blocks = (0..cfg.n_blocks)
            .map(|n| {
                Bottleneck::init(
                    params,
                    &pacs_prefix(n),
                    2 * d,
                    cfg.adapter_bottleneck,
                    d,
                    cfg.layer_norm_eps,
                    SWITCHER_INIT_STD,
                    0.0,
                    rng,
                )
                .map(PacsBlock)
            })
            .collect::<Result<_>>()?;
        Ok(Switcher::Pacs(blocks))
    }

    /// Fresh TCS gate: small Gaussian block weights and a zero output
    /// layer, so the initial soft gate is 0.5 and every frame is routed to
    /// the matrix adapter.
    pub fn init_tcs(params: &mut ParamSet, cfg: &ModelConfig, rng: &mut SplitMix64) -> Result<Self> {
        let blocks = (0..cfg.tcs_blocks)
            .map(|n| {
                TransformerBlock::init(
                    params,
                    &format!("tcs.block.{n}"),
                    cfg.d_model,
                    cfg.d_ff,
                    cfg.n_heads,
                    cfg.layer_norm_eps,
                    Some(SWITCHER_INIT_STD),
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let out = Linear::init(params, "tcs.out", cfg.d_model, 1, 0.0, rng)?;
        Ok(Switcher::Tcs(TcsGate { blocks, out, threshold: GATE_THRESHOLD }))
    }

    pub fn load_pacs(params: &ParamSet, cfg: &ModelConfig) -> Result<Self> {
        let blocks = (0..cfg.n_blocks)
            .map(|n| Bottleneck::load(params, &pacs_prefix(n), cfg.layer_norm_eps).map(PacsBlock))
            .collect::<Result<_>>()
            .map_err(missing_switcher)?;
        Ok(Switcher::Pacs(blocks))
    }

    pub fn load_tcs(params: &ParamSet, cfg: &ModelConfig) -> Result<Self> {
        let blocks = (0..cfg.tcs_blocks)
            .map(|n| TransformerBlock::load(params, &format!("tcs.block.{n}"), cfg.n_heads, cfg.layer_norm_eps))
            .collect::<Result<_>>()
            .map_err(missing_switcher)?;
        let out = Linear::load(params, "tcs.out").map_err(missing_switcher)?;
        Ok(Switcher::Tcs(TcsGate { blocks, out, threshold: GATE_THRESHOLD }))
    }
}

fn missing_switcher(e: Error) -> Error {
    match e {
        Error::Lookup(m) => Error::Config(format!("switcher parameters missing: {m}")),
        other => other,
    }
}

/// Everything one code-switched forward needs.
#[derive(Debug, Clone)]
pub struct CsNetwork {
    pub backbone: Backbone,
    pub switcher: Switcher,
    pub head: MergedLmHead,
    pub gate_train_mode: GateTrainMode,
}

#[derive(Debug, Clone)]
pub struct CsOutput {
    /// `[T, V1 + V2]`, masked.
    pub logits: Tensor,
    /// Hidden states after the last block, before the head.
    pub hidden: Tensor,
    /// Present for TCS.
    pub gate: Option<GateSequence>,
}

impl CsNetwork {
    pub fn gate(&self, projector_out: &Tensor, control: &GateControl) -> Result<Option<GateSequence>> {
        match &self.switcher {
            Switcher::Pacs(_) => Ok(None),
            Switcher::Tcs(g) => {
                let soft = g.soft(projector_out)?;
                GateSequence::from_soft(soft, control, self.gate_train_mode, g.threshold).map(Some)
            }
        }
    }

    pub fn encode_cs(&self, features: &Tensor, control: &GateControl) -> Result<CsOutput> {
        let bb = &self.backbone;
        let projected = bb.projector_forward(features)?;
        let gate = self.gate(&projected, control)?;
        let mut h = bb.add_positions(&projected)?;
        for (n, block) in bb.blocks.iter().enumerate() {
            let b = block.forward(&h)?;
            let o1 = bb.adapters[0][n].forward(&b)?;
            let o2 = bb.adapters[1][n].forward(&b)?;
            h = match (&self.switcher, &gate) {
                (Switcher::Pacs(p), _) => p[n].forward(&o1, &o2)?,
                (Switcher::Tcs(_), Some(g)) => tcs_mix(&o1, &o2, &g.routing)?,
                (Switcher::Tcs(_), None) => unreachable!("tcs always yields a gate"),
            };
        }
        Ok(CsOutput { logits: self.head.forward(&h)?, hidden: h, gate })
    }

    /// `hard - soft` per frame at the current parameters, for
    /// [`GateControl::Anchored`].
    pub fn gate_anchor(&self, features: &Tensor) -> Result<Vec<f64>> {
        let p = self.backbone.projector_forward(features)?;
        match self.gate(&p, &GateControl::Eval)? {
            Some(g) => Ok(g.hard.data().iter().zip(g.soft.data().iter()).map(|(h, s)| h - s).collect()),
            None => Err(Error::Usage("gate_anchor needs a TCS switcher".into())),
        }
    }
}

/// Writes one gate-dump line: the utterance id then `T` hard values.
pub fn write_gate_line(out: &mut impl Write, id: &str, gates: &[u8]) -> std::io::Result<()> {
    write!(out, "{id}")?;
    for g in gates {
        write!(out, " {g}")?;
    }
    writeln!(out)
}

/// Parses a gate dump into `(id, gates)` pairs.
pub fn parse_gate_dump(text: &str) -> Result<Vec<(String, Vec<u8>)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut it = line.split_whitespace();
            let id = it.next().expect("non-empty line").to_string();
            let gates = it
                .map(|g| match g {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(Error::Format(format!("gate value {g:?} in line for {id}"))),
                })
                .collect::<Result<_>>()?;
            Ok((id, gates))
        })
        .collect()
}

#[cfg(test)]
mod tests;
