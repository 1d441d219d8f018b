//! Parameter views for the building blocks. Each view holds shared handles
//! to tensors owned by a [`ParamSet`], so optimizer updates show through.

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::{ParamSet, Tensor};

fn gaussian(rng: &mut SplitMix64, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.normal()).collect()
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Registers `{prefix}.weight [d_in, d_out]` and `{prefix}.bias [d_out]`.
    /// `std == 0` gives an all-zero weight.
    pub fn init(
        params: &mut ParamSet,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        std: f64,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let w = if std == 0.0 {
            vec![0.0; d_in * d_out]
        } else {
            gaussian(rng, d_in * d_out, std)
        };
        let weight = params.insert(format!("{prefix}.weight"), Tensor::new(vec![d_in, d_out], w)?)?;
        let bias = params.insert(format!("{prefix}.bias"), Tensor::zeros(vec![d_out]))?;
        Ok(Self { weight, bias })
    }

    pub fn load(params: &ParamSet, prefix: &str) -> Result<Self> {
        Ok(Self {
            weight: params.get(&format!("{prefix}.weight"))?.clone(),
            bias: params.get(&format!("{prefix}.bias"))?.clone(),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_row(&self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn init(params: &mut ParamSet, prefix: &str, d: usize, eps: f64) -> Result<Self> {
        let gain = params.insert(format!("{prefix}.gain"), Tensor::new(vec![d], vec![1.0; d])?)?;
        let bias = params.insert(format!("{prefix}.bias"), Tensor::zeros(vec![d]))?;
        Ok(Self { gain, bias, eps })
    }

    pub fn load(params: &ParamSet, prefix: &str, eps: f64) -> Result<Self> {
        Ok(Self {
            gain: params.get(&format!("{prefix}.gain"))?.clone(),
            bias: params.get(&format!("{prefix}.bias"))?.clone(),
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gain, &self.bias, self.eps)
    }
}

/// LayerNorm, down-projection, ReLU, up-projection. Used both for the
/// per-language adapters (width `d -> d`) and for PACS mixers
/// (`2d -> d`). The residual connection is added by the caller.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub norm: LayerNorm,
    pub down: Linear,
    pub up: Linear,
}

impl Bottleneck {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        params: &mut ParamSet,
        prefix: &str,
        d_in: usize,
        bottleneck: usize,
        d_out: usize,
        eps: f64,
        down_std: f64,
        up_std: f64,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::init(params, &format!("{prefix}.norm"), d_in, eps)?,
            down: Linear::init(params, &format!("{prefix}.down"), d_in, bottleneck, down_std, rng)?,
            up: Linear::init(params, &format!("{prefix}.up"), bottleneck, d_out, up_std, rng)?,
        })
    }

    pub fn load(params: &ParamSet, prefix: &str, eps: f64) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::load(params, &format!("{prefix}.norm"), eps)?,
            down: Linear::load(params, &format!("{prefix}.down"))?,
            up: Linear::load(params, &format!("{prefix}.up"))?,
        })
    }

    /// The bottleneck branch only, without residual.
    pub fn branch(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.down.forward(&self.norm.forward(x)?)?.relu();
        self.up.forward(&h)
    }
}

/// A language adapter: `h + up(relu(down(norm(h))))`.
#[derive(Debug, Clone)]
pub struct Adapter(pub Bottleneck);

impl Adapter {
    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        h.add(&self.0.branch(h)?)
    }
}

/// BERT-style post-LN encoder block: `x1 = LN(x + MHA(x))`,
/// `out = LN(x1 + FFN(x1))`, GELU inside the FFN. No positional term.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln1: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ln2: LayerNorm,
    pub n_heads: usize,
}

impl TransformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        params: &mut ParamSet,
        prefix: &str,
        d_model: usize,
        d_ff: usize,
        n_heads: usize,
        eps: f64,
        std: Option<f64>,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        // default: 1/sqrt(fan_in)
        let s = |fan_in: usize| std.unwrap_or(1.0 / (fan_in as f64).sqrt());
        Ok(Self {
            q: Linear::init(params, &format!("{prefix}.attn.q"), d_model, d_model, s(d_model), rng)?,
            k: Linear::init(params, &format!("{prefix}.attn.k"), d_model, d_model, s(d_model), rng)?,
            v: Linear::init(params, &format!("{prefix}.attn.v"), d_model, d_model, s(d_model), rng)?,
            o: Linear::init(params, &format!("{prefix}.attn.o"), d_model, d_model, s(d_model), rng)?,
            ln1: LayerNorm::init(params, &format!("{prefix}.ln1"), d_model, eps)?,
            ffn_in: Linear::init(params, &format!("{prefix}.ffn.in"), d_model, d_ff, s(d_model), rng)?,
            ffn_out: Linear::init(params, &format!("{prefix}.ffn.out"), d_ff, d_model, s(d_ff), rng)?,
            ln2: LayerNorm::init(params, &format!("{prefix}.ln2"), d_model, eps)?,
            n_heads,
        })
    }

    pub fn load(params: &ParamSet, prefix: &str, n_heads: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            q: Linear::load(params, &format!("{prefix}.attn.q"))?,
            k: Linear::load(params, &format!("{prefix}.attn.k"))?,
            v: Linear::load(params, &format!("{prefix}.attn.v"))?,
            o: Linear::load(params, &format!("{prefix}.attn.o"))?,
            ln1: LayerNorm::load(params, &format!("{prefix}.ln1"), eps)?,
            ffn_in: Linear::load(params, &format!("{prefix}.ffn.in"))?,
            ffn_out: Linear::load(params, &format!("{prefix}.ffn.out"))?,
            ln2: LayerNorm::load(params, &format!("{prefix}.ln2"), eps)?,
            n_heads,
        })
    }

    /// Output plus the per-head attention matrices `[T, T]`.
    pub fn forward_with_attention(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (_, d) = x.dims2("transformer_block")?;
        let dh = d / self.n_heads;
        let q = self.q.forward(x)?;
        let k = self.k.forward(x)?;
        let v = self.v.forward(x)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx: Option<Tensor> = None;
        let mut maps = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = q.slice_last(h * dh, dh)?;
            let kh = k.slice_last(h * dh, dh)?;
            let vh = v.slice_last(h * dh, dh)?;
            let attn = qh.matmul(&kh.transpose()?)?.affine(scale, 0.0).softmax();
            let oh = attn.matmul(&vh)?;
            maps.push(attn);
            ctx = Some(match ctx {
                None => oh,
                Some(c) => c.concat_last(&oh)?,
            });
        }
        let attn_out = self.o.forward(&ctx.expect("at least one head"))?;
        let x1 = self.ln1.forward(&x.add(&attn_out)?)?;
        let ff = self.ffn_out.forward(&self.ffn_in.forward(&x1)?.gelu())?;
        let out = self.ln2.forward(&x1.add(&ff)?)?;
        Ok((out, maps))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_attention(x)?.0)
    }
}

/// `PE[t, 2i] = sin(t / 10000^(2i/d))`, `PE[t, 2i+1] = cos(t / 10000^(2i/d))`.
pub fn sinusoidal_positions(t_len: usize, d: usize) -> Tensor {
    let mut out = vec![0.0; t_len * d];
    for t in 0..t_len {
        for j in 0..d {
            let i2 = (j / 2 * 2) as f64;
            let angle = t as f64 / 10_000f64.powf(i2 / d as f64);
            out[t * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![t_len, d], out).expect("positive dimensions")
}
