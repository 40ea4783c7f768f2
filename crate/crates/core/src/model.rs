//! The complete model: encoder plus task heads, with named-parameter
//! plumbing shared by the optimizer, checkpoints, and the gradient checker.

use serde::{Deserialize, Serialize};

use crate::data::AgentRef;
use crate::encoder::{
    self, BoundEncoder, DropoutState, EncoderConfig, EncoderWeights,
};
use crate::heads::{self, BoundHeads, HeadsError, HeadsWeights};
use crate::input::EncoderInput;
use crate::tensor::{NodeId, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Registered agents in slot order; fixes k and the AgSeN label mapping.
    pub agents: Vec<AgentRef>,
    /// Ablation switch: embed a constant zero confidence everywhere.
    pub disable_conf_emb: bool,
}

impl ModelConfig {
    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        self.encoder.validate()?;
        if self.agents.is_empty() {
            return Err("at least one agent must be registered".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub encoder: EncoderWeights,
    pub heads: HeadsWeights,
}

impl ModelWeights {
    pub fn init(cfg: &ModelConfig, seed: u64) -> ModelWeights {
        ModelWeights {
            encoder: EncoderWeights::init(&cfg.encoder, seed),
            heads: HeadsWeights::init(cfg.encoder.hidden, cfg.agent_count(), seed),
        }
    }

    pub fn for_each(&self, mut f: impl FnMut(String, &Tensor)) {
        self.encoder.for_each(&mut f);
        self.heads.for_each(&mut f);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(String, &mut Tensor)) {
        self.encoder.for_each_mut(&mut f);
        self.heads.for_each_mut(&mut f);
    }

    /// Canonical (name, tensor) list; the manifest order everywhere.
    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.for_each(|name, t| out.push((name, t.clone())));
        out
    }

    /// Rebuild from a named list, checking coverage and shapes.
    pub fn from_named(cfg: &ModelConfig, named: &[(String, Tensor)]) -> Result<Self, String> {
        use std::collections::HashMap;
        let map: HashMap<&str, &Tensor> =
            named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut weights = ModelWeights::init(cfg, 0);
        let mut missing = Vec::new();
        let mut bad_shape = Vec::new();
        weights.for_each_mut(|name, slot| match map.get(name.as_str()) {
            Some(t) if t.shape() == slot.shape() => *slot = (*t).clone(),
            Some(t) => bad_shape.push(format!(
                "{name}: expected {:?}, got {:?}",
                slot.shape(),
                t.shape()
            )),
            None => missing.push(name),
        });
        if !missing.is_empty() {
            return Err(format!("missing parameters: {}", missing.join(", ")));
        }
        if !bad_shape.is_empty() {
            return Err(format!("shape mismatches: {}", bad_shape.join("; ")));
        }
        if named.len() != weights.to_named().len() {
            return Err("named list carries unknown parameters".into());
        }
        Ok(weights)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        BoundModel {
            encoder: BoundEncoder::bind(tape, &self.encoder),
            heads: BoundHeads::bind(tape, &self.heads),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: BoundEncoder,
    pub heads: BoundHeads,
}

impl BoundModel {
    /// (name, node) pairs in the same canonical order as
    /// [`ModelWeights::to_named`].
    pub fn named_nodes(&self, weights: &ModelWeights) -> Vec<(String, NodeId)> {
        let mut names = Vec::new();
        weights.for_each(|name, _| names.push(name));
        let mut ids = vec![
            self.encoder.token_table,
            self.encoder.position_table,
            self.encoder.segment_table,
            self.encoder.conf_weight,
            self.encoder.conf_bias,
        ];
        for l in &self.encoder.layers {
            ids.extend([
                l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln1_gamma, l.ln1_beta,
                l.w1, l.b1, l.w2, l.b2, l.ln2_gamma, l.ln2_beta,
            ]);
        }
        for (w, b) in &self.heads.agsen {
            ids.extend([*w, *b]);
        }
        ids.extend([self.heads.anssel_w, self.heads.anssel_b]);
        assert_eq!(names.len(), ids.len(), "naming walk and bind walk diverged");
        names.into_iter().zip(ids).collect()
    }
}

impl BoundModel {
    /// Reassemble a bound view from a name-to-node map (the shape the
    /// gradient checker hands its forward closure).
    pub fn from_param_map(
        cfg: &ModelConfig,
        map: &std::collections::BTreeMap<String, NodeId>,
    ) -> BoundModel {
        let g = |name: String| {
            *map.get(&name)
                .unwrap_or_else(|| panic!("missing parameter {name}"))
        };
        BoundModel {
            encoder: crate::encoder::BoundEncoder {
                token_table: g("embed.token".into()),
                position_table: g("embed.position".into()),
                segment_table: g("embed.segment".into()),
                conf_weight: g("conf.weight".into()),
                conf_bias: g("conf.bias".into()),
                layers: (0..cfg.encoder.layers)
                    .map(|i| crate::encoder::BoundLayer {
                        wq: g(format!("layer{i}.attn.wq")),
                        bq: g(format!("layer{i}.attn.bq")),
                        wk: g(format!("layer{i}.attn.wk")),
                        bk: g(format!("layer{i}.attn.bk")),
                        wv: g(format!("layer{i}.attn.wv")),
                        bv: g(format!("layer{i}.attn.bv")),
                        wo: g(format!("layer{i}.attn.wo")),
                        bo: g(format!("layer{i}.attn.bo")),
                        ln1_gamma: g(format!("layer{i}.ln1.gamma")),
                        ln1_beta: g(format!("layer{i}.ln1.beta")),
                        w1: g(format!("layer{i}.ffn.w1")),
                        b1: g(format!("layer{i}.ffn.b1")),
                        w2: g(format!("layer{i}.ffn.w2")),
                        b2: g(format!("layer{i}.ffn.b2")),
                        ln2_gamma: g(format!("layer{i}.ln2.gamma")),
                        ln2_beta: g(format!("layer{i}.ln2.beta")),
                    })
                    .collect(),
            },
            heads: crate::heads::BoundHeads {
                agsen: (0..cfg.agent_count())
                    .map(|j| (g(format!("agsen.{j}.w")), g(format!("agsen.{j}.b"))))
                    .collect(),
                anssel_w: g("anssel.w".into()),
                anssel_b: g("anssel.b".into()),
            },
        }
    }
}

pub struct ForwardOutput {
    /// One sigmoid score node per agent slot.
    pub agsen_probs: Vec<NodeId>,
    /// Masked answer-selection logits, one per slot.
    pub anssel_logits: NodeId,
}

/// Run the whole model for one assembled example on an existing tape.
///
/// `detach_scores` severs the gradient path from the answer-selection input
/// back into the AgSeN heads; the trainer sets it when alpha1 = 0 so the
/// heads stay untouched by training.
pub fn forward_example(
    tape: &mut Tape,
    bound: &BoundModel,
    cfg: &ModelConfig,
    input: &EncoderInput,
    detach_scores: bool,
    dropout: Option<&mut DropoutState>,
) -> Result<ForwardOutput, HeadsError> {
    let h0 = encoder::embed(tape, &bound.encoder, input, cfg.disable_conf_emb)?;
    let hl = encoder::encode(tape, h0, input, &bound.encoder, cfg.encoder.heads, dropout)?;
    let (cls, ans_vecs) = encoder::extract(tape, hl, input)?;
    let agsen_probs = heads::agsen_scores(tape, &bound.heads, cls)?;
    let present: Vec<bool> = input.ans_spans.iter().map(|s| s.is_some()).collect();
    let anssel_logits = heads::anssel_logits(
        tape,
        &bound.heads,
        cfg.encoder.hidden,
        &ans_vecs,
        &agsen_probs,
        &present,
        detach_scores,
    )?;
    Ok(ForwardOutput {
        agsen_probs,
        anssel_logits,
    })
}

/// Evaluation-mode forward pass on a fresh tape, returning plain values:
/// per-slot agent-selection probabilities and masked selection logits.
pub fn run_example(
    weights: &ModelWeights,
    cfg: &ModelConfig,
    input: &EncoderInput,
) -> Result<(Vec<f64>, Vec<f64>), HeadsError> {
    let mut tape = Tape::new();
    let bound = weights.bind(&mut tape);
    let out = forward_example(&mut tape, &bound, cfg, input, false, None)?;
    let probs = out
        .agsen_probs
        .iter()
        .map(|p| tape.scalar_value(*p))
        .collect();
    let logits = tape.value(out.anssel_logits).data().to_vec();
    Ok((probs, logits))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{AnswerCandidate, Example, Vocab};
    use crate::input::assemble;

    pub(crate) fn toy_model_cfg(k: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                hidden: 16,
                layers: 1,
                heads: 2,
                ffn: 24,
                vocab_size: 64,
                max_len: 24,
                dropout: 0.0,
                seed: 0,
            },
            agents: (0..k)
                .map(|i| AgentRef {
                    id: format!("a{i}"),
                    domain: format!("d{i}"),
                })
                .collect(),
            disable_conf_emb: false,
        }
    }

    fn toy_example(k: usize) -> (EncoderInput, Vocab) {
        let vocab = Vocab::build(["who won rocky apollo creed"], 64);
        let ex = Example {
            qid: "q".into(),
            question: "who won".into(),
            dataset_id: "d0".into(),
            gold_answers: vec!["rocky".into()],
            candidates: (0..k)
                .map(|i| AnswerCandidate::new(format!("a{i}"), "rocky", 0.2 * i as f64))
                .collect(),
        };
        (assemble(&ex, &vocab, 24).unwrap(), vocab)
    }

    #[test]
    fn named_nodes_align_with_manifest_order() {
        let cfg = toy_model_cfg(3);
        let w = ModelWeights::init(&cfg, 7);
        let mut tape = Tape::new();
        let bound = w.bind(&mut tape);
        let named = bound.named_nodes(&w);
        let manifest = w.to_named();
        assert_eq!(named.len(), manifest.len());
        for ((bn, id), (mn, t)) in named.iter().zip(&manifest) {
            assert_eq!(bn, mn);
            assert_eq!(tape.value(*id).shape(), t.shape(), "{bn}");
            assert_eq!(tape.value(*id).data(), t.data(), "{bn}");
        }
    }

    #[test]
    fn named_round_trip_preserves_weights() {
        let cfg = toy_model_cfg(2);
        let w = ModelWeights::init(&cfg, 3);
        let named = w.to_named();
        let back = ModelWeights::from_named(&cfg, &named).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn from_named_rejects_missing_and_misshapen() {
        let cfg = toy_model_cfg(2);
        let w = ModelWeights::init(&cfg, 3);
        let mut named = w.to_named();
        named.pop();
        assert!(ModelWeights::from_named(&cfg, &named).is_err());

        let mut named = w.to_named();
        named[0].1 = Tensor::zeros(vec![1, 1]);
        assert!(ModelWeights::from_named(&cfg, &named)
            .unwrap_err()
            .contains("shape"));
    }

    #[test]
    fn forward_produces_k_probs_and_masked_logits() {
        let cfg = toy_model_cfg(3);
        let w = ModelWeights::init(&cfg, 11);
        let (input, _) = toy_example(3);
        let (probs, logits) = run_example(&w, &cfg, &input).unwrap();
        assert_eq!(probs.len(), 3);
        assert_eq!(logits.len(), 3);
        assert!(probs.iter().all(|p| (0.0..1.0).contains(p)));
        assert!(logits.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let cfg = toy_model_cfg(2);
        let w = ModelWeights::init(&cfg, 19);
        let (input, _) = toy_example(2);
        let a = run_example(&w, &cfg, &input).unwrap();
        let b = run_example(&w, &cfg, &input).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disable_conf_emb_ignores_confidences() {
        let mut cfg = toy_model_cfg(2);
        cfg.disable_conf_emb = true;
        let w = ModelWeights::init(&cfg, 23);
        let (mut input, _) = toy_example(2);
        let before = run_example(&w, &cfg, &input).unwrap();
        // Permute/alter the confidence channel arbitrarily.
        for v in input.confidence_values.iter_mut() {
            *v = 1.0 - *v;
        }
        let after = run_example(&w, &cfg, &input).unwrap();
        assert_eq!(before, after);
    }
}
