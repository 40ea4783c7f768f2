//! Full-model gradient checking: the joint loss over a small synthetic
//! batch, differentiated analytically and by central differences.

use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use super::TrainError;
use crate::data::Vocab;
use crate::encoder::EncoderConfig;
use crate::heads::{make_labels, total_loss, HeadsError, LabelConfig, LossConfig};
use crate::input::assemble;
use crate::model::{forward_example, BoundModel, ModelConfig, ModelWeights};
use crate::simulator::generate_benchmark;
use crate::tensor::{grad_check, GradCheckConfig, GradReport, NodeId};

fn default_agents() -> usize {
    3
}
fn default_examples() -> usize {
    4
}
fn default_step() -> f64 {
    1e-5
}
fn default_tolerance() -> f64 {
    1e-4
}
fn default_samples() -> usize {
    200
}
fn default_warm_steps() -> usize {
    120
}
fn default_warm_lr() -> f64 {
    1e-3
}
fn default_alpha1() -> f64 {
    0.5
}
fn default_alpha2() -> f64 {
    1.0
}
fn default_theta() -> f64 {
    0.7
}

/// What to gradient-check: model shape, probe batch, and tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRunConfig {
    #[serde(default = "default_gradcheck_encoder")]
    pub encoder: EncoderConfig,
    /// Number of simulated agents in the probe batch.
    #[serde(default = "default_agents")]
    pub agents: usize,
    /// Batch size of the probe loss.
    #[serde(default = "default_examples")]
    pub examples: usize,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha1")]
    pub alpha1: f64,
    #[serde(default = "default_alpha2")]
    pub alpha2: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Brief warmup before checking. At raw initialization the attention is
    /// uniform and many gradients sit below the relative-error floor, where
    /// finite-difference roundoff dominates; a few training steps move the
    /// check to a representative point.
    #[serde(default = "default_warm_steps")]
    pub warm_steps: usize,
    #[serde(default = "default_warm_lr")]
    pub warm_lr: f64,
    /// Test hook: offset added to one analytic gradient so the failure path
    /// can be driven end to end. Never read from configuration files.
    #[serde(skip)]
    pub tamper: Option<f64>,
}

fn default_gradcheck_encoder() -> EncoderConfig {
    EncoderConfig {
        hidden: 32,
        layers: 2,
        heads: 2,
        ffn: 128,
        vocab_size: 200,
        max_len: 64,
        dropout: 0.0,
        seed: 0,
    }
}

impl Default for GradCheckRunConfig {
    fn default() -> Self {
        GradCheckRunConfig {
            encoder: default_gradcheck_encoder(),
            agents: default_agents(),
            examples: default_examples(),
            step: default_step(),
            tolerance: default_tolerance(),
            samples: default_samples(),
            seed: 0,
            alpha1: default_alpha1(),
            alpha2: default_alpha2(),
            theta: default_theta(),
            warm_steps: default_warm_steps(),
            warm_lr: default_warm_lr(),
            tamper: None,
        }
    }
}

/// One perfect agent per domain with clean binary confidences: the probe
/// task is fully learnable, so a short warmup reaches a low-loss,
/// well-conditioned check point.
fn separable_probe_spec(agents: usize, per_domain: usize, seed: u64) -> crate::simulator::BenchmarkSpec {
    use crate::simulator::{AgentProfile, BenchmarkSpec, Calibration, DomainSpec, TemplateFamily};
    use std::collections::BTreeMap;
    let families = [
        TemplateFamily::KeyEarly,
        TemplateFamily::KeyMiddle,
        TemplateFamily::KeyLate,
    ];
    let domains: Vec<DomainSpec> = (0..agents)
        .map(|i| DomainSpec {
            id: format!("d{i}"),
            template_family: families[i % families.len()],
            vocab_seed: seed.wrapping_add(i as u64),
            answer_len_min: 1,
            answer_len_max: 3,
            train_size: per_domain,
            dev_size: 0,
            test_size: 0,
        })
        .collect();
    let profiles = (0..agents)
        .map(|i| AgentProfile {
            id: format!("a{i}"),
            home_domain: format!("d{i}"),
            accuracy: (0..agents)
                .map(|d| (format!("d{d}"), if d == i { 1.0 } else { 0.0 }))
                .collect::<BTreeMap<_, _>>(),
            boundary_noise: 0.0,
            calibration: Calibration {
                slope: 12.0,
                bias: 0.0,
                jitter: 0.0,
            },
        })
        .collect();
    BenchmarkSpec {
        domains,
        agents: profiles,
        metrics: BTreeMap::new(),
        seed,
    }
}

/// Check the full joint loss (encoder, confidence embedder, both heads)
/// against central finite differences on sampled parameters.
pub fn run_gradcheck(cfg: &GradCheckRunConfig) -> Result<GradReport, TrainError> {
    let mut encoder = cfg.encoder.clone();
    encoder.dropout = 0.0; // the probe loss must be deterministic
    encoder.validate().map_err(TrainError::BadConfig)?;

    // A small separable pool with one perfect agent per domain. The warmup
    // drives the probe loss close to zero, which matters numerically: the
    // finite-difference noise scales with the loss magnitude, and the
    // relative-error floor of 1e-8 does not.
    let agents = cfg.agents.clamp(2, 8);
    let examples = cfg.examples.max(1);
    let warm_examples = cfg.warm_steps * 6;
    let per_domain = warm_examples.div_ceil(agents).max(examples).max(2);
    let spec = separable_probe_spec(agents, per_domain, cfg.seed);
    let bench = generate_benchmark(&spec).map_err(|e| TrainError::BadConfig(e.to_string()))?;
    let data = bench.train;

    let (weights, vocab, model_cfg) = if cfg.warm_steps > 0 {
        let warm_cfg = TrainConfig {
            learning_rate: cfg.warm_lr,
            batch_size: 6,
            warmup_steps: 0,
            epochs: 1,
            seed: cfg.seed,
            alpha1: cfg.alpha1,
            alpha2: cfg.alpha2,
            theta: cfg.theta,
            encoder: encoder.clone(),
            ..TrainConfig::default()
        };
        let mut warm = data.clone();
        warm.examples.truncate(warm_examples);
        let ckpt = super::train::train(&warm, None, &warm_cfg)?;
        (ckpt.weights, ckpt.vocab, ckpt.model_cfg)
    } else {
        let corpus = data.examples.iter().flat_map(|ex| {
            std::iter::once(ex.question.as_str())
                .chain(ex.candidates.iter().map(|c| c.answer.as_str()))
        });
        let vocab = Vocab::build(corpus, encoder.vocab_size);
        let model_cfg = ModelConfig {
            encoder,
            agents: data.agents.clone(),
            disable_conf_emb: false,
        };
        let weights = ModelWeights::init(&model_cfg, cfg.seed);
        (weights, vocab, model_cfg)
    };

    // Probe on examples spread evenly over the domains.
    let mut data = data;
    let stride = (data.len() / examples).max(1);
    let probe: Vec<_> = (0..examples)
        .map(|i| data.examples[(i * stride) % data.len()].clone())
        .collect();
    data.examples = probe;

    let agent_domains: Vec<&str> = data.agents.iter().map(|a| a.domain.as_str()).collect();
    let label_cfg = LabelConfig { theta: cfg.theta };
    let labels: Vec<_> = data
        .examples
        .iter()
        .map(|ex| make_labels(ex, &agent_domains, &label_cfg))
        .collect();
    let inputs: Vec<_> = data
        .examples
        .iter()
        .map(|ex| {
            assemble(ex, &vocab, model_cfg.encoder.max_len)
                .map(|input| input.shrunk(input.length))
                .map_err(|source| TrainError::Assembly {
                    qid: ex.qid.clone(),
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let loss_cfg = LossConfig {
        alpha1: cfg.alpha1,
        alpha2: cfg.alpha2,
    };
    let check = GradCheckConfig {
        step: cfg.step,
        tolerance: cfg.tolerance,
        samples: cfg.samples,
        seed: cfg.seed,
        tamper: cfg.tamper,
    };
    let report = grad_check(
        &weights.to_named(),
        |tape, params| {
            let bound = BoundModel::from_param_map(&model_cfg, params);
            let mut total: Option<NodeId> = None;
            for (input, label) in inputs.iter().zip(&labels) {
                let fwd = forward_example(tape, &bound, &model_cfg, input, false, None)
                    .map_err(|e| match e {
                        HeadsError::Tensor(t) => t,
                        HeadsError::NoSelectableSlot => {
                            unreachable!("generated examples always carry candidates")
                        }
                    })?;
                let (loss, _) =
                    total_loss(tape, &fwd.agsen_probs, fwd.anssel_logits, label, &loss_cfg)?;
                total = Some(match total {
                    Some(acc) => tape.add(acc, loss)?,
                    None => loss,
                });
            }
            Ok(tape.scale(total.expect("nonempty batch"), 1.0 / inputs.len() as f64))
        },
        &check,
    )?;
    Ok(report)
}
