//! Transformer encoder with a confidence channel in the input embedding.
//!
//! The input embedding for position i is the sum of four parts: token,
//! position, and segment table rows plus `f(confidence)`, where `f` is a
//! learned affine map from the scalar confidence to a hidden-size vector.
//! Non-candidate positions embed `f(0)` — the bias vector, not zero. The
//! stack itself is a standard post-layer-norm encoder: multi-head
//! self-attention with a padding mask, add & norm, GELU feed-forward,
//! add & norm.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::input::EncoderInput;
use crate::rng::stream;
use crate::tensor::{NodeId, Tape, Tensor, TensorError};

pub const LN_EPS: f64 = 1e-12;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 64,
            layers: 2,
            heads: 4,
            ffn: 256,
            vocab_size: 2000,
            max_len: 128,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden == 0 || self.hidden % self.heads != 0 {
            return Err(format!(
                "hidden size {} must be a positive multiple of {} heads",
                self.hidden, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size <= crate::data::SPECIAL_TOKENS.len() {
            return Err("vocab_size must exceed the special tokens".into());
        }
        if self.max_len < 8 {
            return Err("max_len must be at least 8".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub token_table: Tensor,
    pub position_table: Tensor,
    pub segment_table: Tensor,
    /// The confidence embedder f: scalar -> hidden vector.
    pub conf_weight: Tensor,
    pub conf_bias: Tensor,
    pub layers: Vec<LayerWeights>,
}

fn randn(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::from_shape(shape, data)
}

impl EncoderWeights {
    /// Seeded initialization: N(0, 0.02) matrices and tables, zero biases,
    /// unit layer-norm gains.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> EncoderWeights {
        let d = cfg.hidden;
        let mut rng = stream(seed, &["encoder-init"]);
        let layer = |rng: &mut ChaCha8Rng| LayerWeights {
            wq: randn(rng, vec![d, d], INIT_STD),
            bq: Tensor::zeros(vec![d]),
            wk: randn(rng, vec![d, d], INIT_STD),
            bk: Tensor::zeros(vec![d]),
            wv: randn(rng, vec![d, d], INIT_STD),
            bv: Tensor::zeros(vec![d]),
            wo: randn(rng, vec![d, d], INIT_STD),
            bo: Tensor::zeros(vec![d]),
            ln1_gamma: Tensor::from_shape(vec![d], vec![1.0; d]),
            ln1_beta: Tensor::zeros(vec![d]),
            w1: randn(rng, vec![d, cfg.ffn], INIT_STD),
            b1: Tensor::zeros(vec![cfg.ffn]),
            w2: randn(rng, vec![cfg.ffn, d], INIT_STD),
            b2: Tensor::zeros(vec![d]),
            ln2_gamma: Tensor::from_shape(vec![d], vec![1.0; d]),
            ln2_beta: Tensor::zeros(vec![d]),
        };
        EncoderWeights {
            token_table: randn(&mut rng, vec![cfg.vocab_size, d], INIT_STD),
            position_table: randn(&mut rng, vec![cfg.max_len, d], INIT_STD),
            segment_table: randn(&mut rng, vec![2, d], INIT_STD),
            conf_weight: randn(&mut rng, vec![1, d], INIT_STD),
            conf_bias: Tensor::zeros(vec![d]),
            layers: (0..cfg.layers).map(|_| layer(&mut rng)).collect(),
        }
    }

    pub fn for_each(&self, mut f: impl FnMut(String, &Tensor)) {
        f("embed.token".into(), &self.token_table);
        f("embed.position".into(), &self.position_table);
        f("embed.segment".into(), &self.segment_table);
        f("conf.weight".into(), &self.conf_weight);
        f("conf.bias".into(), &self.conf_bias);
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in [
                ("attn.wq", &l.wq),
                ("attn.bq", &l.bq),
                ("attn.wk", &l.wk),
                ("attn.bk", &l.bk),
                ("attn.wv", &l.wv),
                ("attn.bv", &l.bv),
                ("attn.wo", &l.wo),
                ("attn.bo", &l.bo),
                ("ln1.gamma", &l.ln1_gamma),
                ("ln1.beta", &l.ln1_beta),
                ("ffn.w1", &l.w1),
                ("ffn.b1", &l.b1),
                ("ffn.w2", &l.w2),
                ("ffn.b2", &l.b2),
                ("ln2.gamma", &l.ln2_gamma),
                ("ln2.beta", &l.ln2_beta),
            ] {
                f(format!("layer{i}.{name}"), t);
            }
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(String, &mut Tensor)) {
        f("embed.token".into(), &mut self.token_table);
        f("embed.position".into(), &mut self.position_table);
        f("embed.segment".into(), &mut self.segment_table);
        f("conf.weight".into(), &mut self.conf_weight);
        f("conf.bias".into(), &mut self.conf_bias);
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (name, t) in [
                ("attn.wq", &mut l.wq),
                ("attn.bq", &mut l.bq),
                ("attn.wk", &mut l.wk),
                ("attn.bk", &mut l.bk),
                ("attn.wv", &mut l.wv),
                ("attn.bv", &mut l.bv),
                ("attn.wo", &mut l.wo),
                ("attn.bo", &mut l.bo),
                ("ln1.gamma", &mut l.ln1_gamma),
                ("ln1.beta", &mut l.ln1_beta),
                ("ffn.w1", &mut l.w1),
                ("ffn.b1", &mut l.b1),
                ("ffn.w2", &mut l.w2),
                ("ffn.b2", &mut l.b2),
                ("ln2.gamma", &mut l.ln2_gamma),
                ("ln2.beta", &mut l.ln2_beta),
            ] {
                f(format!("layer{i}.{name}"), t);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLayer {
    pub wq: NodeId,
    pub bq: NodeId,
    pub wk: NodeId,
    pub bk: NodeId,
    pub wv: NodeId,
    pub bv: NodeId,
    pub wo: NodeId,
    pub bo: NodeId,
    pub ln1_gamma: NodeId,
    pub ln1_beta: NodeId,
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub ln2_gamma: NodeId,
    pub ln2_beta: NodeId,
}

#[derive(Debug, Clone)]
pub struct BoundEncoder {
    pub token_table: NodeId,
    pub position_table: NodeId,
    pub segment_table: NodeId,
    pub conf_weight: NodeId,
    pub conf_bias: NodeId,
    pub layers: Vec<BoundLayer>,
}

impl BoundEncoder {
    /// Register every weight tensor as a gradient-tracked leaf.
    pub fn bind(tape: &mut Tape, w: &EncoderWeights) -> BoundEncoder {
        let mut leaf = |t: &Tensor| tape.leaf(t.clone().with_grad());
        BoundEncoder {
            token_table: leaf(&w.token_table),
            position_table: leaf(&w.position_table),
            segment_table: leaf(&w.segment_table),
            conf_weight: leaf(&w.conf_weight),
            conf_bias: leaf(&w.conf_bias),
            layers: w
                .layers
                .iter()
                .map(|l| BoundLayer {
                    wq: leaf(&l.wq),
                    bq: leaf(&l.bq),
                    wk: leaf(&l.wk),
                    bk: leaf(&l.bk),
                    wv: leaf(&l.wv),
                    bv: leaf(&l.bv),
                    wo: leaf(&l.wo),
                    bo: leaf(&l.bo),
                    ln1_gamma: leaf(&l.ln1_gamma),
                    ln1_beta: leaf(&l.ln1_beta),
                    w1: leaf(&l.w1),
                    b1: leaf(&l.b1),
                    w2: leaf(&l.w2),
                    b2: leaf(&l.b2),
                    ln2_gamma: leaf(&l.ln2_gamma),
                    ln2_beta: leaf(&l.ln2_beta),
                })
                .collect(),
        }
    }
}

/// Dropout stream for training-mode forward passes. Evaluation never
/// constructs one, so evaluation is dropout-free and deterministic.
pub struct DropoutState<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

fn apply_dropout(
    tape: &mut Tape,
    h: NodeId,
    dropout: &mut Option<&mut DropoutState>,
) -> Result<NodeId, TensorError> {
    let Some(state) = dropout else { return Ok(h) };
    if state.rate == 0.0 {
        return Ok(h);
    }
    use rand::Rng;
    let shape = tape.value(h).shape().to_vec();
    let keep = 1.0 - state.rate;
    let numel: usize = shape.iter().product();
    let mask: Vec<f64> = (0..numel)
        .map(|_| {
            if state.rng.gen::<f64>() < state.rate {
                0.0
            } else {
                1.0 / keep
            }
        })
        .collect();
    let mask = tape.constant(Tensor::from_shape(shape, mask));
    tape.mul(h, mask)
}

/// The input embedding of Eq-style four-way sum:
/// token + position + segment + f(confidence).
///
/// `disable_conf` replaces every confidence with the constant 0, making the
/// model provably blind to the supplied scores (the ablation switch).
pub fn embed(
    tape: &mut Tape,
    bound: &BoundEncoder,
    input: &EncoderInput,
    disable_conf: bool,
) -> Result<NodeId, TensorError> {
    let tok = tape.gather_rows(bound.token_table, &input.token_ids)?;
    let pos = tape.gather_rows(bound.position_table, &input.position_ids)?;
    let seg = tape.gather_rows(bound.segment_table, &input.segment_ids)?;
    let conf_col = if disable_conf {
        vec![0.0; input.max_len]
    } else {
        input.confidence_values.clone()
    };
    let conf = tape.constant(Tensor::from_shape(vec![input.max_len, 1], conf_col));
    let scaled = tape.matmul(conf, bound.conf_weight)?;
    let conf_emb = tape.add_row(scaled, bound.conf_bias)?;
    let tp = tape.add(tok, pos)?;
    let tps = tape.add(tp, seg)?;
    tape.add(tps, conf_emb)
}

/// Additive attention mask: 0 on live key columns, -inf on padding.
pub fn mask_bias(tape: &mut Tape, attention_mask: &[f64]) -> NodeId {
    let t = attention_mask.len();
    let mut data = vec![0.0; t * t];
    for (j, &m) in attention_mask.iter().enumerate() {
        if m == 0.0 {
            for r in 0..t {
                data[r * t + j] = f64::NEG_INFINITY;
            }
        }
    }
    tape.constant(Tensor::from_shape(vec![t, t], data))
}

fn attention(
    tape: &mut Tape,
    layer: &BoundLayer,
    x: NodeId,
    mask: NodeId,
    heads: usize,
    dropout: &mut Option<&mut DropoutState>,
) -> Result<NodeId, TensorError> {
    let (_, d) = tape.value(x).dims2();
    let dh = d / heads;
    let q = tape.matmul(x, layer.wq)?;
    let q = tape.add_row(q, layer.bq)?;
    let k = tape.matmul(x, layer.wk)?;
    let k = tape.add_row(k, layer.bk)?;
    let v = tape.matmul(x, layer.wv)?;
    let v = tape.add_row(v, layer.bv)?;

    let mut contexts = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, (h + 1) * dh)?;
        let kh = tape.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vh = tape.slice_cols(v, h * dh, (h + 1) * dh)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let masked = tape.add(scores, mask)?;
        let probs = tape.softmax_rows(masked)?;
        contexts.push(tape.matmul(probs, vh)?);
    }
    let ctx = tape.concat_cols(&contexts)?;
    let out = tape.matmul(ctx, layer.wo)?;
    let out = tape.add_row(out, layer.bo)?;
    apply_dropout(tape, out, dropout)
}

/// Run the L-block encoder stack over an embedded input.
pub fn encode(
    tape: &mut Tape,
    h0: NodeId,
    input: &EncoderInput,
    bound: &BoundEncoder,
    heads: usize,
    mut dropout: Option<&mut DropoutState>,
) -> Result<NodeId, TensorError> {
    let mask = mask_bias(tape, &input.attention_mask);
    let mut h = apply_dropout(tape, h0, &mut dropout)?;
    for layer in &bound.layers {
        let attn = attention(tape, layer, h, mask, heads, &mut dropout)?;
        let res = tape.add(h, attn)?;
        h = tape.layer_norm(res, layer.ln1_gamma, layer.ln1_beta, LN_EPS)?;

        let mid = tape.matmul(h, layer.w1)?;
        let mid = tape.add_row(mid, layer.b1)?;
        let mid = tape.gelu(mid);
        let out = tape.matmul(mid, layer.w2)?;
        let out = tape.add_row(out, layer.b2)?;
        let out = apply_dropout(tape, out, &mut dropout)?;
        let res = tape.add(h, out)?;
        h = tape.layer_norm(res, layer.ln2_gamma, layer.ln2_beta, LN_EPS)?;
    }
    Ok(h)
}

/// Pull the `[CLS]` state and each present candidate's `[ANS]` state.
pub fn extract(
    tape: &mut Tape,
    hl: NodeId,
    input: &EncoderInput,
) -> Result<(NodeId, Vec<(usize, NodeId)>), TensorError> {
    let cls = tape.gather_rows(hl, &[input.cls_index])?;
    let mut ans = Vec::new();
    for (slot, span) in input.ans_spans.iter().enumerate() {
        if let Some(span) = span {
            ans.push((slot, tape.gather_rows(hl, &[span.start])?));
        }
    }
    Ok((cls, ans))
}
