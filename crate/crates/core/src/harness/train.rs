//! The training loop: joint loss over shuffled mini-batches with AdamW and
//! a linear warmup/decay schedule.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::{Checkpoint, TrainMeta, CHECKPOINT_VERSION};
use super::optim::AdamW;
use super::TrainError;
use crate::data::{Dataset, Vocab};
use crate::encoder::{DropoutState, EncoderConfig};
use crate::heads::{make_labels, total_loss, LabelConfig, LossConfig};
use crate::input::assemble;
use crate::model::{forward_example, ModelConfig, ModelWeights};
use crate::rng::{stream, substream};
use crate::tensor::Tape;

fn default_lr() -> f64 {
    5e-5
}
fn default_batch() -> usize {
    6
}
fn default_decay() -> f64 {
    0.01
}
fn default_warmup() -> usize {
    500
}
fn default_epochs() -> usize {
    1
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha1")]
    pub alpha1: f64,
    #[serde(default = "default_alpha2")]
    pub alpha2: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub disable_conf_emb: bool,
    #[serde(default)]
    pub disable_agsen_loss: bool,
    /// Evaluate on dev every this many steps (0 = only implicit logging off).
    #[serde(default)]
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            weight_decay: default_decay(),
            warmup_steps: default_warmup(),
            epochs: default_epochs(),
            seed: 0,
            alpha1: default_alpha1(),
            alpha2: default_alpha2(),
            theta: default_theta(),
            encoder: EncoderConfig::default(),
            disable_conf_emb: false,
            disable_agsen_loss: false,
            eval_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::BadConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be at least 1".into()));
        }
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 {
            return Err(TrainError::BadConfig("loss weights must be nonnegative".into()));
        }
        if !(0.0 < self.theta && self.theta <= 1.0) {
            return Err(TrainError::BadConfig("theta must sit in (0, 1]".into()));
        }
        self.encoder
            .validate()
            .map_err(TrainError::BadConfig)?;
        Ok(())
    }

    /// The AgSeN loss weight after ablation flags.
    pub fn effective_alpha1(&self) -> f64 {
        if self.disable_agsen_loss {
            0.0
        } else {
            self.alpha1
        }
    }

    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        format!("{:x}", h.finalize())
    }
}

/// Train a model on `train_set`, optionally reporting dev metrics along the
/// way, and package the result as a checkpoint. Deterministic for a fixed
/// (config, data) pair.
pub fn train(
    train_set: &Dataset,
    dev_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<Checkpoint, TrainError> {
    cfg.validate()?;
    if let Some(dev) = dev_set {
        if dev.agents != train_set.agents {
            return Err(TrainError::RegistryMismatch);
        }
    }
    if train_set.is_empty() {
        return Err(TrainError::BadConfig("training set is empty".into()));
    }

    let corpus = train_set.examples.iter().flat_map(|ex| {
        std::iter::once(ex.question.as_str())
            .chain(ex.candidates.iter().map(|c| c.answer.as_str()))
    });
    let vocab = Vocab::build(corpus, cfg.encoder.vocab_size);

    let model_cfg = ModelConfig {
        encoder: cfg.encoder.clone(),
        agents: train_set.agents.clone(),
        disable_conf_emb: cfg.disable_conf_emb,
    };
    model_cfg
        .validate()
        .map_err(TrainError::BadConfig)?;

    let init_seed = substream(cfg.seed, &["init"]);
    let mut weights = ModelWeights::init(&model_cfg, init_seed);

    let n = train_set.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut optimizer = AdamW::new(
        &weights,
        cfg.learning_rate,
        cfg.weight_decay,
        cfg.warmup_steps,
        total_steps,
    );

    let agent_domains: Vec<&str> = train_set.agents.iter().map(|a| a.domain.as_str()).collect();
    let label_cfg = LabelConfig { theta: cfg.theta };
    let labels: Vec<_> = train_set
        .examples
        .iter()
        .map(|ex| make_labels(ex, &agent_domains, &label_cfg))
        .collect();

    let loss_cfg = LossConfig {
        alpha1: cfg.effective_alpha1(),
        alpha2: cfg.alpha2,
    };
    let detach_scores = loss_cfg.alpha1 == 0.0;

    let mut dropout_rng = stream(cfg.seed, &["dropout"]);
    let mut loss_curve = Vec::with_capacity(total_steps);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = stream(cfg.seed, &["shuffle", &epoch.to_string()]);
        order.shuffle(&mut shuffle_rng);

        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = weights.bind(&mut tape);

            // Assemble at the full max length, then trim the batch to its
            // longest live sequence.
            let mut inputs = Vec::with_capacity(batch.len());
            for &i in batch {
                let input = assemble(&train_set.examples[i], &vocab, cfg.encoder.max_len)
                    .map_err(|source| TrainError::Assembly {
                        qid: train_set.examples[i].qid.clone(),
                        source,
                    })?;
                inputs.push(input);
            }
            let batch_len = inputs.iter().map(|i| i.length).max().unwrap();
            let mut total: Option<crate::tensor::NodeId> = None;
            for (input, &i) in inputs.iter().zip(batch) {
                let input = input.shrunk(batch_len);
                let mut dropout_state;
                let dropout = if cfg.encoder.dropout > 0.0 {
                    dropout_state = DropoutState {
                        rate: cfg.encoder.dropout,
                        rng: &mut dropout_rng,
                    };
                    Some(&mut dropout_state)
                } else {
                    None
                };
                let fwd = forward_example(
                    &mut tape,
                    &bound,
                    &model_cfg,
                    &input,
                    detach_scores,
                    dropout,
                )
                .map_err(|source| TrainError::Forward {
                    qid: train_set.examples[i].qid.clone(),
                    source,
                })?;
                let (loss, _) = total_loss(
                    &mut tape,
                    &fwd.agsen_probs,
                    fwd.anssel_logits,
                    &labels[i],
                    &loss_cfg,
                )?;
                total = Some(match total {
                    Some(acc) => tape.add(acc, loss)?,
                    None => loss,
                });
            }
            let batch_loss = tape.scale(total.expect("nonempty batch"), 1.0 / batch.len() as f64);
            let loss_value = tape.scalar_value(batch_loss);
            if !loss_value.is_finite() {
                return Err(TrainError::NanLoss {
                    step,
                    lr: optimizer.current_lr(),
                    qids: batch
                        .iter()
                        .map(|&i| train_set.examples[i].qid.clone())
                        .collect(),
                });
            }
            tape.backward(batch_loss)?;

            let named = bound.named_nodes(&weights);
            let grads: Vec<Vec<f64>> = named
                .iter()
                .map(|(_, id)| tape.grad(*id).expect("bound leaf has grad").to_vec())
                .collect();
            optimizer.apply(&mut weights, &grads);
            loss_curve.push(loss_value);
            step += 1;

            if cfg.eval_interval > 0 && step % cfg.eval_interval == 0 {
                if let Some(dev) = dev_set {
                    let report = super::eval::quick_metrics(
                        &weights, &model_cfg, &vocab, dev, cfg.theta,
                    )?;
                    eprintln!(
                        "step {step}/{total_steps} loss {loss_value:.4} dev-acc {:.4} dev-f1 {:.4}",
                        report.overall.accuracy, report.overall.token_f1
                    );
                }
            }
        }
    }

    let mut substreams = BTreeMap::new();
    for label in ["init", "shuffle", "dropout", "simulator"] {
        substreams.insert(label.to_string(), substream(cfg.seed, &[label]));
    }
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION.to_string(),
        model_cfg,
        vocab,
        weights,
        meta: TrainMeta {
            seed: cfg.seed,
            steps: step,
            config_hash: cfg.config_hash(),
            train_config: cfg.clone(),
            loss_curve,
            substreams,
        },
    })
}
