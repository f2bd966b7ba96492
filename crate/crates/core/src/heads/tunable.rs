//! BERT forward pass built only from differentiable tensor ops.
//!
//! Reads the same parameter names as candle's `BertModel` and computes the
//! same function, with layer norm written out so gradients reach every weight.

use candle_core::{Device, Module, Result, Tensor, D};
use candle_nn::{embedding, linear, Embedding, Linear, VarBuilder};
use candle_transformers::models::bert::{Config, HiddenAct};

use crate::encoder::TokenSequence;

struct Norm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl Norm {
    fn load(size: usize, eps: f64, vb: VarBuilder) -> Result<Norm> {
        Ok(Norm { weight: vb.get(size, "weight")?, bias: vb.get(size, "bias")?, eps })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let centered = x.broadcast_sub(&x.mean_keepdim(D::Minus1)?)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

struct Layer {
    query: Linear,
    key: Linear,
    value: Linear,
    attention_out: Linear,
    attention_norm: Norm,
    intermediate: Linear,
    output: Linear,
    output_norm: Norm,
    heads: usize,
    head_dim: usize,
    act: HiddenAct,
}

impl Layer {
    fn load(vb: VarBuilder, c: &Config) -> Result<Layer> {
        let h = c.hidden_size;
        let attn = vb.pp("attention");
        Ok(Layer {
            query: linear(h, h, attn.pp("self").pp("query"))?,
            key: linear(h, h, attn.pp("self").pp("key"))?,
            value: linear(h, h, attn.pp("self").pp("value"))?,
            attention_out: linear(h, h, attn.pp("output").pp("dense"))?,
            attention_norm: Norm::load(h, c.layer_norm_eps, attn.pp("output").pp("LayerNorm"))?,
            intermediate: linear(h, c.intermediate_size, vb.pp("intermediate").pp("dense"))?,
            output: linear(c.intermediate_size, h, vb.pp("output").pp("dense"))?,
            output_norm: Norm::load(h, c.layer_norm_eps, vb.pp("output").pp("LayerNorm"))?,
            heads: c.num_attention_heads,
            head_dim: h / c.num_attention_heads,
            act: c.hidden_act,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        x.reshape((b, t, self.heads, self.head_dim))?.transpose(1, 2)?.contiguous()
    }

    fn forward(&self, x: &Tensor, mask_bias: &Tensor) -> Result<Tensor> {
        let q = self.split_heads(&self.query.forward(x)?)?;
        let k = self.split_heads(&self.key.forward(x)?)?;
        let v = self.split_heads(&self.value.forward(x)?)?;
        let scores = (q.matmul(&k.t()?)? / (self.head_dim as f64).sqrt())?.broadcast_add(mask_bias)?;
        let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let context = probs.matmul(&v)?.transpose(1, 2)?.contiguous()?.flatten_from(D::Minus2)?;
        let attended = self.attention_norm.forward(&(self.attention_out.forward(&context)? + x)?)?;
        let inner = self.intermediate.forward(&attended)?;
        let inner = match self.act {
            HiddenAct::Gelu => inner.gelu_erf()?,
            HiddenAct::GeluApproximate => inner.gelu()?,
            HiddenAct::Relu => inner.relu()?,
        };
        self.output_norm.forward(&(self.output.forward(&inner)? + attended)?)
    }
}

pub(crate) struct TunableBert {
    word: Embedding,
    position: Embedding,
    token_type: Embedding,
    embedding_norm: Norm,
    layers: Vec<Layer>,
}

impl TunableBert {
    /// Expects `embeddings.*` and `encoder.layer.N.*` parameter names.
    pub(crate) fn load(vb: VarBuilder, c: &Config) -> Result<TunableBert> {
        let e = vb.pp("embeddings");
        Ok(TunableBert {
            word: embedding(c.vocab_size, c.hidden_size, e.pp("word_embeddings"))?,
            position: embedding(c.max_position_embeddings, c.hidden_size, e.pp("position_embeddings"))?,
            token_type: embedding(c.type_vocab_size, c.hidden_size, e.pp("token_type_embeddings"))?,
            embedding_norm: Norm::load(c.hidden_size, c.layer_norm_eps, e.pp("LayerNorm"))?,
            layers: (0..c.num_hidden_layers)
                .map(|i| Layer::load(vb.pp("encoder").pp(format!("layer.{i}")), c))
                .collect::<Result<_>>()?,
        })
    }

    /// Final hidden state at the CLS position, one row per sequence.
    pub(crate) fn cls(&self, batch: &[TokenSequence]) -> Result<Tensor> {
        let device = Device::Cpu;
        let rows = batch.len();
        let len = batch.first().map(TokenSequence::max_len).unwrap_or(0);
        let ids: Vec<u32> = batch.iter().flat_map(|s| s.ids().iter().copied()).collect();
        let keep: Vec<f32> = batch.iter().flat_map(|s| s.mask().iter().map(|&m| m as f32)).collect();
        let ids = Tensor::from_vec(ids, (rows, len), &device)?;
        let positions = Tensor::arange(0u32, len as u32, &device)?;

        let x = self.word.forward(&ids)?.add(&self.token_type.forward(&ids.zeros_like()?)?)?;
        let x = x.broadcast_add(&self.position.forward(&positions)?)?;
        let mut x = self.embedding_norm.forward(&x)?;

        let keep = Tensor::from_vec(keep, (rows, 1, 1, len), &device)?;
        let mask_bias = keep.affine(-(f32::MIN as f64), f32::MIN as f64)?;
        for layer in &self.layers {
            x = layer.forward(&x, &mask_bias)?;
        }
        x.narrow(1, 0, 1)?.squeeze(1)
    }
}
